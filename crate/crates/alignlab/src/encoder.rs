//! Frozen speech encoder: a small pre-norm transformer over synthetic
//! frames, pretrained with frame-level token classification and then
//! frozen for every alignment experiment.

use crate::corpus::{FrameMatrix, Task, TaskSample, BASE_TOKENS};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, Block, LayerNorm, Linear};
use crate::rng::{derive_seed, Stream};
use crate::tensor::{Adam, Tensor};
use crate::weights;

#[derive(Clone, Copy, Debug)]
pub struct EncoderConfig {
    pub d_feat: usize,
    pub d_enc: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_frames: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f32,
    pub batch: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_feat: 16,
            d_enc: 64,
            layers: 2,
            heads: 4,
            max_frames: 128,
            pretrain_steps: 300,
            pretrain_lr: 1e-3,
            batch: 4,
        }
    }
}

pub struct Encoder {
    pub config: EncoderConfig,
    input_proj: Linear,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    pub frozen: bool,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Encoder {
        assert_eq!(config.d_enc % config.heads, 0);
        let mut rng = Stream::new(derive_seed(seed, "encoder-init"));
        let input_proj = Linear::new(config.d_feat, config.d_enc, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| Block::new(config.d_enc, config.heads, false, &mut rng))
            .collect();
        Encoder {
            config,
            input_proj,
            blocks,
            final_ln: LayerNorm::new(config.d_enc),
            frozen: false,
        }
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.input_proj.params("encoder.input", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("encoder.block{i}"), &mut out);
        }
        self.final_ln.params("encoder.final_ln", &mut out);
        out
    }

    pub fn freeze(&mut self) {
        for (_, p) in self.params() {
            p.set_requires_grad(false);
        }
        self.frozen = true;
    }

    pub fn checksum(&self) -> String {
        weights::checksum(&self.params())
    }

    /// Forward over a raw frame tensor (T x d_feat) -> (T x d_enc).
    pub fn forward(&self, frames: &Tensor) -> Result<Tensor> {
        let t = frames.shape()[0];
        if t > self.config.max_frames {
            return Err(Error::Length(format!(
                "{} frames exceeds max_frames {}",
                t, self.config.max_frames
            )));
        }
        let pos = sinusoidal_positions(t, self.config.d_enc);
        let mut x = self.input_proj.forward(frames)?.add(&pos)?;
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        self.final_ln.forward(&x)
    }

    pub fn encode(&self, fm: &FrameMatrix) -> Result<Tensor> {
        if fm.d_feat != self.config.d_feat {
            return Err(Error::Shape(format!(
                "frame width {} vs d_feat {}",
                fm.d_feat, self.config.d_feat
            )));
        }
        let frames = Tensor::from_vec(fm.frames.clone(), &[fm.t, fm.d_feat])?;
        self.forward(&frames)
    }
}

/// Train encoder + a temporary frame-classification head, report held-out
/// frame accuracy, discard the head, and return the frozen encoder.
pub fn pretrain_encoder(
    samples: &[TaskSample],
    config: EncoderConfig,
    seed: u64,
) -> Result<(Encoder, f32)> {
    let asr: Vec<&TaskSample> = samples
        .iter()
        .filter(|s| s.task == Task::Asr && s.audio.is_some())
        .collect();
    if asr.is_empty() {
        return Err(Error::Config("encoder pretraining corpus has no ASR samples".into()));
    }
    if asr.len() < 500 {
        return Err(Error::Config(format!(
            "encoder pretraining needs >= 500 ASR samples, got {}",
            asr.len()
        )));
    }
    let held_out = 50.min(asr.len() / 10);
    let (train, test) = asr.split_at(asr.len() - held_out);

    let mut encoder = Encoder::new(config, seed);
    let mut rng = Stream::new(derive_seed(seed, "encoder-head"));
    let head = Linear::new(config.d_enc, BASE_TOKENS, &mut rng);
    let mut params = encoder.params();
    head.params("head", &mut params);
    let mut opt = Adam::new(params, config.pretrain_lr);

    for step in 0..config.pretrain_steps {
        opt.zero_grad();
        for i in 0..config.batch {
            let s = train[(step * config.batch + i) % train.len()];
            let fm = s.audio.as_ref().unwrap();
            let frames = Tensor::from_vec(fm.frames.clone(), &[fm.t, fm.d_feat])?;
            let feats = encoder.forward(&frames)?;
            let logits = head.forward(&feats)?;
            let labels: Vec<usize> = fm.frame_labels().iter().map(|&t| t as usize).collect();
            let mask = vec![true; labels.len()];
            let loss = logits.cross_entropy(&labels, &mask)?.scale(1.0 / config.batch as f32);
            loss.backward()?;
        }
        opt.step()?;
    }

    let mut correct = 0usize;
    let mut total = 0usize;
    for s in test {
        let fm = s.audio.as_ref().unwrap();
        let feats = encoder.encode(fm)?;
        let logits = head.forward(&feats)?;
        let data = logits.to_vec();
        for (row, &label) in fm.frame_labels().iter().enumerate() {
            let slice = &data[row * BASE_TOKENS..(row + 1) * BASE_TOKENS];
            let argmax = slice
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            if argmax == label as usize {
                correct += 1;
            }
            total += 1;
        }
    }
    let accuracy = correct as f32 / total as f32;

    encoder.freeze();
    Ok((encoder, accuracy))
}

pub fn save_encoder(path: &std::path::Path, enc: &Encoder) -> Result<()> {
    weights::save(path, &enc.params())
}

pub fn load_encoder(path: &std::path::Path, config: EncoderConfig) -> Result<Encoder> {
    let entries = weights::load(path)?;
    let mut enc = Encoder::new(config, 0);
    crate::nn::load_named(&enc.params(), &entries)?;
    enc.freeze();
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ToyWorld;

    fn asr_corpus(n: usize, seed: u64) -> Vec<TaskSample> {
        let world = ToyWorld::new(77, 16);
        (0..n)
            .map(|i| world.make_task_sample(Task::Asr, seed + i as u64, i as u64).unwrap())
            .collect()
    }

    fn tiny_config(steps: usize) -> EncoderConfig {
        EncoderConfig {
            pretrain_steps: steps,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn encode_shape_contract() {
        let world = ToyWorld::new(77, 16);
        let enc = Encoder::new(EncoderConfig::default(), 1);
        let fm = world.synth_speech(&[1, 2, 3], 0, 5).unwrap();
        let out = enc.encode(&fm).unwrap();
        assert_eq!(out.shape(), &[fm.t, 64]);
    }

    #[test]
    fn encode_is_deterministic() {
        let world = ToyWorld::new(77, 16);
        let enc = Encoder::new(EncoderConfig::default(), 1);
        let fm = world.synth_speech(&[5, 6], 2, 8).unwrap();
        let a: Vec<u32> = enc.encode(&fm).unwrap().to_vec().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = enc.encode(&fm).unwrap().to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_frames_is_length_error() {
        let enc = Encoder::new(EncoderConfig::default(), 1);
        let frames = Tensor::from_vec(vec![0.0; 129 * 16], &[129, 16]).unwrap();
        assert!(matches!(enc.forward(&frames), Err(Error::Length(_))));
    }

    #[test]
    fn encode_uses_positional_information() {
        let world = ToyWorld::new(77, 16);
        let enc = Encoder::new(EncoderConfig::default(), 1);
        let fm = world.synth_speech(&[1, 2, 3, 4], 0, 5).unwrap();
        let mut swapped = fm.clone();
        // swap the first two frames
        for j in 0..16 {
            swapped.frames.swap(j, 16 + j);
        }
        let a = enc.encode(&fm).unwrap().to_vec();
        let b = enc.encode(&swapped).unwrap().to_vec();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_steps_gives_chance_accuracy() {
        let corpus = asr_corpus(500, 1000);
        let (_, acc) = pretrain_encoder(&corpus, tiny_config(0), 3).unwrap();
        assert!(acc < 0.10, "untrained accuracy {acc} not near chance");
    }

    #[test]
    fn pretrain_same_seed_is_bitwise_identical() {
        let corpus = asr_corpus(500, 2000);
        let (a, _) = pretrain_encoder(&corpus, tiny_config(2), 9).unwrap();
        let (b, _) = pretrain_encoder(&corpus, tiny_config(2), 9).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let (c, _) = pretrain_encoder(&corpus, tiny_config(2), 10).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn missing_asr_samples_is_config_error() {
        let world = ToyWorld::new(77, 16);
        let qa: Vec<TaskSample> = (0..600)
            .map(|i| world.make_task_sample(Task::Qa, i, i).unwrap())
            .collect();
        assert!(matches!(
            pretrain_encoder(&qa, tiny_config(1), 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let world = ToyWorld::new(77, 16);
        let mut enc = Encoder::new(EncoderConfig::default(), 5);
        enc.freeze();
        let dir = std::env::temp_dir().join("alignlab_encoder_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("enc.mbw");
        save_encoder(&path, &enc).unwrap();
        let back = load_encoder(&path, EncoderConfig::default()).unwrap();
        assert_eq!(enc.checksum(), back.checksum());
        let fm = world.synth_speech(&[9, 10], 1, 4).unwrap();
        let a: Vec<u32> = enc.encode(&fm).unwrap().to_vec().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.encode(&fm).unwrap().to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}
