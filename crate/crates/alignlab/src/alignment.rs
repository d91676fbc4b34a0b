//! The alignment module: a single trainable affine map from encoder
//! feature space into LM embedding space, plus prompt assembly, the
//! frozen-backbone training loop, SVD truncation at inference, and LM
//! swapping.

use std::path::Path;

use crate::corpus::{TaskSample, Token, ASSISTANT, END_AUDIO, HUMAN, START_AUDIO};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::infer::CachedLm;
use crate::lm::{Lm, Lora};
use crate::rng::{derive_seed, Stream};
use crate::tensor::{svd, Adam, Tensor};
use crate::weights;

pub const MAX_NEW_TOKENS: usize = 64;

pub struct AlignmentModule {
    pub weight: Tensor, // d_enc x d_lm
    pub bias: Tensor,   // d_lm
    pub trainable_dim: usize,
}

impl AlignmentModule {
    /// Weight ~ uniform(+-1/sqrt(d_enc)) inside the trainable column
    /// region, exact zeros beyond; bias starts at zero.
    pub fn new(d_enc: usize, d_lm: usize, trainable_dim: usize, seed: u64) -> Result<AlignmentModule> {
        if trainable_dim < 1 || trainable_dim > d_lm {
            return Err(Error::Parameter(format!(
                "trainable_dim {trainable_dim} outside [1, {d_lm}]"
            )));
        }
        let mut rng = Stream::new(derive_seed(seed, "align-init"));
        let bound = 1.0 / (d_enc as f32).sqrt();
        let mut w = vec![0.0f32; d_enc * d_lm];
        for row in 0..d_enc {
            for col in 0..trainable_dim {
                w[row * d_lm + col] = rng.uniform(-bound, bound);
            }
        }
        Ok(AlignmentModule {
            weight: Tensor::param(w, &[d_enc, d_lm])?,
            bias: Tensor::param(vec![0.0; d_lm], &[d_lm])?,
            trainable_dim,
        })
    }

    pub fn d_enc(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_lm(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn map_features(&self, features: &Tensor) -> Result<Tensor> {
        if features.shape().len() != 2 || features.shape()[1] != self.d_enc() {
            return Err(Error::Shape(format!(
                "feature shape {:?} does not match d_enc {}",
                features.shape(),
                self.d_enc()
            )));
        }
        features.matmul(&self.weight)?.add_bias(&self.bias)
    }

    /// True when every weight/bias entry in columns >= trainable_dim is
    /// exactly zero.
    pub fn zero_region_intact(&self) -> bool {
        let d_lm = self.d_lm();
        let w = self.weight.data();
        for row in 0..self.d_enc() {
            for col in self.trainable_dim..d_lm {
                if w[row * d_lm + col] != 0.0 {
                    return false;
                }
            }
        }
        let b = self.bias.data();
        b[self.trainable_dim..].iter().all(|&x| x == 0.0)
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("align.weight".to_string(), self.weight.clone()),
            ("align.bias".to_string(), self.bias.clone()),
        ]
    }

    pub fn freeze(&self) {
        self.weight.set_requires_grad(false);
        self.bias.set_requires_grad(false);
    }

    pub fn checksum(&self) -> String {
        weights::checksum(&self.params())
    }
}

/// Sidecar metadata written next to alignment weights.
pub struct AlignMeta {
    pub trainable_dim: usize,
    pub mix: String,
    pub seed: u64,
    pub lr: f32,
    pub batch: usize,
    pub steps: usize,
}

pub fn save_alignment(path: &Path, module: &AlignmentModule, meta: &AlignMeta) -> Result<()> {
    weights::save(path, &module.params())?;
    let sidecar = path.with_extension("meta");
    std::fs::write(
        &sidecar,
        format!(
            "trainable_dim={}\nmix={}\nseed={}\nlr={}\nbatch={}\nsteps={}\n",
            meta.trainable_dim, meta.mix, meta.seed, meta.lr, meta.batch, meta.steps
        ),
    )?;
    Ok(())
}

pub fn load_alignment(path: &Path) -> Result<(AlignmentModule, usize)> {
    let entries = weights::load(path)?;
    let sidecar = path.with_extension("meta");
    let text = std::fs::read_to_string(&sidecar)
        .map_err(|_| Error::Dependency(sidecar.display().to_string()))?;
    let mut trainable_dim = None;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("trainable_dim=") {
            trainable_dim = v.trim().parse::<usize>().ok();
        }
    }
    let trainable_dim =
        trainable_dim.ok_or_else(|| Error::WeightFormat("sidecar lacks trainable_dim".into()))?;
    let weight = &entries
        .iter()
        .find(|(n, _)| n == "align.weight")
        .ok_or_else(|| Error::WeightFormat("missing align.weight".into()))?
        .1;
    let bias = &entries
        .iter()
        .find(|(n, _)| n == "align.bias")
        .ok_or_else(|| Error::WeightFormat("missing align.bias".into()))?
        .1;
    let module = AlignmentModule {
        weight: Tensor::param(weight.to_vec(), weight.shape())?,
        bias: Tensor::param(bias.to_vec(), bias.shape())?,
        trainable_dim,
    };
    Ok((module, trainable_dim))
}

// ── prompt assembly ─────────────────────────────────────────────────────

/// Frozen per-sample pieces that do not depend on the alignment module:
/// encoder features plus the pre/post text-token embeddings.
pub struct PreparedSample {
    pub features: Option<Tensor>, // T x d_enc
    pre_emb: Tensor,              // [HUMAN, START_AUDIO]
    post_emb: Tensor,             // END_AUDIO .. answer .. EOT
    post_tokens: Vec<Token>,
    pub answer_len: usize,
    pub sample_id: u64,
}

pub fn prepare_sample(sample: &TaskSample, encoder: &Encoder, lm: &Lm) -> Result<PreparedSample> {
    let features = match &sample.audio {
        Some(fm) => Some(encoder.encode(fm)?),
        None => None,
    };
    let pre = vec![HUMAN, START_AUDIO];
    let mut post = vec![END_AUDIO, sample.task.token()];
    post.extend(&sample.prompt_tokens);
    post.push(ASSISTANT);
    post.extend(&sample.answer_tokens);
    let total = pre.len() + features.as_ref().map(|f| f.shape()[0]).unwrap_or(0) + post.len();
    if total > lm.config.max_seq {
        return Err(Error::Length(format!(
            "sample {} assembles to {total} positions, max_seq {}",
            sample.sample_id, lm.config.max_seq
        )));
    }
    Ok(PreparedSample {
        features,
        pre_emb: lm.embed(&pre)?,
        post_emb: lm.embed(&post)?,
        post_tokens: post,
        answer_len: sample.answer_tokens.len(),
        sample_id: sample.sample_id,
    })
}

pub struct AssembledPrompt {
    pub embeddings: Tensor,
    /// Token id targets for positions 0..len-1 (position i predicts
    /// targets[i]); 0 where masked out.
    pub targets: Vec<usize>,
    /// True exactly on answer-token targets (including END_OF_TEXT).
    pub target_mask: Vec<bool>,
    /// Rows up to and including the ASSISTANT marker — the decode prefix.
    pub prefix_len: usize,
    pub audio_len: usize,
}

pub fn assemble_from_prepared(
    ps: &PreparedSample,
    module: &AlignmentModule,
    svd_k: Option<usize>,
) -> Result<AssembledPrompt> {
    let mut parts = vec![ps.pre_emb.clone()];
    let audio_len = match &ps.features {
        Some(f) => {
            let mut mapped = module.map_features(f)?;
            if let Some(k) = svd_k {
                mapped = svd_truncate_features(&mapped, k)?;
            }
            let t = mapped.shape()[0];
            parts.push(mapped);
            t
        }
        None => 0,
    };
    parts.push(ps.post_emb.clone());
    let embeddings = Tensor::concat_rows(&parts)?;
    let len = embeddings.shape()[0];

    // token layout: [HUMAN, START_AUDIO] ++ audio ++ post_tokens
    let answer_start_in_post = ps.post_tokens.len() - ps.answer_len;
    let mut targets = vec![0usize; len - 1];
    let mut target_mask = vec![false; len - 1];
    for (j, &tok) in ps.post_tokens.iter().enumerate() {
        let pos = 2 + audio_len + j; // absolute row index of this token
        if pos == 0 {
            continue;
        }
        targets[pos - 1] = tok as usize;
        target_mask[pos - 1] = j >= answer_start_in_post;
    }
    let prefix_len = len - ps.answer_len;
    Ok(AssembledPrompt {
        embeddings,
        targets,
        target_mask,
        prefix_len,
        audio_len,
    })
}

pub fn assemble_prompt(
    sample: &TaskSample,
    module: &AlignmentModule,
    encoder: &Encoder,
    lm: &Lm,
) -> Result<AssembledPrompt> {
    let ps = prepare_sample(sample, encoder, lm)?;
    assemble_from_prepared(&ps, module, None)
}

/// Cross-entropy of an assembled prompt under the LM, averaged over the
/// answer positions.
pub fn prompt_loss(lm: &Lm, assembled: &AssembledPrompt, lora: Option<&Lora>) -> Result<Tensor> {
    let logits = lm.forward_lora(&assembled.embeddings, lora)?;
    let len = assembled.embeddings.shape()[0];
    let head: Vec<usize> = (0..len - 1).collect();
    let logits = logits.gather_rows(&head)?;
    logits.cross_entropy(&assembled.targets, &assembled.target_mask)
}

// ── training ────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct TrainHyper {
    pub lr: f32,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-3,
            batch: 8,
            steps: 250,
            seed: 0,
        }
    }
}

/// Train the alignment map against a frozen encoder and LM. Gradients in
/// columns >= trainable_dim are masked to zero before every optimizer
/// step, so the zero region is never touched. Returns the per-step mean
/// batch loss.
pub fn train_alignment(
    samples: &[TaskSample],
    module: &AlignmentModule,
    encoder: &Encoder,
    lm: &Lm,
    hyper: TrainHyper,
) -> Result<Vec<f32>> {
    if !encoder.frozen || !lm.frozen {
        return Err(Error::Integrity("alignment training requires frozen backbones".into()));
    }
    if samples.is_empty() {
        return Err(Error::Config("alignment training set is empty".into()));
    }
    let enc_sum_before = encoder.checksum();
    let lm_sum_before = lm.checksum();

    let prepared: Vec<PreparedSample> = samples
        .iter()
        .map(|s| prepare_sample(s, encoder, lm))
        .collect::<Result<_>>()?;

    let mut opt = Adam::new(module.params(), hyper.lr);
    let d_enc = module.d_enc();
    let d_lm = module.d_lm();
    let mut curve = Vec::with_capacity(hyper.steps);
    let integrity_every = (hyper.steps / 4).max(1);

    for step in 0..hyper.steps {
        opt.zero_grad();
        let mut batch_loss = 0.0f32;
        for i in 0..hyper.batch {
            let ps = &prepared[(step * hyper.batch + i) % prepared.len()];
            let assembled = assemble_from_prepared(ps, module, None)?;
            let loss = prompt_loss(lm, &assembled, None)?;
            let val = loss.item();
            if !val.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at step {step} on sample {}",
                    ps.sample_id
                )));
            }
            batch_loss += val / hyper.batch as f32;
            loss.scale(1.0 / hyper.batch as f32).backward()?;
        }
        mask_gradients(module, d_enc, d_lm)?;
        opt.step()?;
        curve.push(batch_loss);

        if (step + 1) % integrity_every == 0 {
            if encoder.checksum() != enc_sum_before {
                return Err(Error::Integrity("encoder weights changed during alignment training".into()));
            }
            if lm.checksum() != lm_sum_before {
                return Err(Error::Integrity("LM weights changed during alignment training".into()));
            }
        }
    }
    Ok(curve)
}

fn mask_gradients(module: &AlignmentModule, d_enc: usize, d_lm: usize) -> Result<()> {
    let dim = module.trainable_dim;
    if dim == d_lm {
        return Ok(());
    }
    let mut g = module
        .weight
        .grad()
        .ok_or_else(|| Error::UninitializedGradient("align.weight".into()))?;
    for row in 0..d_enc {
        for col in dim..d_lm {
            g[row * d_lm + col] = 0.0;
        }
    }
    module.weight.set_grad(g);
    let mut gb = module
        .bias
        .grad()
        .ok_or_else(|| Error::UninitializedGradient("align.bias".into()))?;
    for x in gb[dim..].iter_mut() {
        *x = 0.0;
    }
    module.bias.set_grad(gb);
    Ok(())
}

// ── SVD truncation ──────────────────────────────────────────────────────

/// Keep the top-k singular directions of a mapped feature matrix.
pub fn svd_truncate_features(features: &Tensor, k: usize) -> Result<Tensor> {
    if k < 1 {
        return Err(Error::Parameter(format!("svd truncation k={k} < 1")));
    }
    let decomp = svd(features)?;
    let data = decomp.reconstruct_rank(k);
    Tensor::from_vec(data, features.shape())
}

// ── composed inference system ───────────────────────────────────────────

pub struct System<'a> {
    pub encoder: &'a Encoder,
    pub module: &'a AlignmentModule,
    pub lm: &'a Lm,
    pub lora: Option<&'a Lora>,
    pub svd_k: Option<usize>,
    pub max_new: usize,
}

impl<'a> System<'a> {
    pub fn new(encoder: &'a Encoder, module: &'a AlignmentModule, lm: &'a Lm) -> System<'a> {
        System {
            encoder,
            module,
            lm,
            lora: None,
            svd_k: None,
            max_new: MAX_NEW_TOKENS,
        }
    }

    /// Swap in a homologous LM; every component stays untouched.
    pub fn swap_lm(&self, new_lm: &'a Lm) -> Result<System<'a>> {
        if new_lm.config.d_lm != self.lm.config.d_lm
            || new_lm.config.vocab_size != self.lm.config.vocab_size
        {
            return Err(Error::Compatibility(format!(
                "LM (d_lm {}, vocab {}) is not homologous with (d_lm {}, vocab {})",
                new_lm.config.d_lm,
                new_lm.config.vocab_size,
                self.lm.config.d_lm,
                self.lm.config.vocab_size
            )));
        }
        Ok(System {
            encoder: self.encoder,
            module: self.module,
            lm: new_lm,
            lora: self.lora,
            svd_k: self.svd_k,
            max_new: self.max_new,
        })
    }

    /// Greedy-decode a sample's answer from its assembled prefix.
    pub fn decode(&self, sample: &TaskSample) -> Result<Vec<Token>> {
        let ps = prepare_sample(sample, self.encoder, self.lm)?;
        let assembled = assemble_from_prepared(&ps, self.module, self.svd_k)?;
        let prefix_data = assembled.embeddings.to_vec();
        let d = self.lm.config.d_lm;
        let prefix = Tensor::from_vec(
            prefix_data[..assembled.prefix_len * d].to_vec(),
            &[assembled.prefix_len, d],
        )?;
        let cached = match self.lora {
            Some(l) => CachedLm::with_lora(self.lm, l),
            None => CachedLm::new(self.lm),
        };
        cached.decode_greedy(&prefix, self.max_new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Task, ToyWorld, END_OF_TEXT};
    use crate::encoder::EncoderConfig;
    use crate::lm::LMConfig;

    fn fixtures() -> (ToyWorld, Encoder, Lm) {
        let world = ToyWorld::new(21, 16);
        let mut enc = Encoder::new(EncoderConfig::default(), 2);
        enc.freeze();
        let mut lm = Lm::new(LMConfig::default(), 3);
        lm.freeze();
        (world, enc, lm)
    }

    #[test]
    fn zero_map_gives_zero_output() {
        let module = AlignmentModule::new(64, 128, 1, 1).unwrap();
        module.weight.data_mut().iter_mut().for_each(|x| *x = 0.0);
        let f = Tensor::from_vec(vec![1.0; 3 * 64], &[3, 64]).unwrap();
        let out = module.map_features(&f).unwrap();
        assert!(out.to_vec().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_block_embeds_basis_vector() {
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        {
            let mut w = module.weight.data_mut();
            w.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..64 {
                w[i * 128 + i] = 1.0;
            }
        }
        let mut e3 = vec![0.0f32; 64];
        e3[3] = 1.0;
        let f = Tensor::from_vec(e3, &[1, 64]).unwrap();
        let out = module.map_features(&f).unwrap().to_vec();
        for (j, &x) in out.iter().enumerate() {
            assert_eq!(x, if j == 3 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn map_matches_rowwise_oracle() {
        let module = AlignmentModule::new(64, 128, 128, 7).unwrap();
        let mut rng = Stream::new(11);
        let f: Vec<f32> = (0..5 * 64).map(|_| rng.normal()).collect();
        let feat = Tensor::from_vec(f.clone(), &[5, 64]).unwrap();
        let out = module.map_features(&feat).unwrap().to_vec();
        let w = module.weight.to_vec();
        let b = module.bias.to_vec();
        for t in 0..5 {
            for j in 0..128 {
                let mut acc = 0.0f64;
                for i in 0..64 {
                    acc += f[t * 64 + i] as f64 * w[i * 128 + j] as f64;
                }
                acc += b[j] as f64;
                assert!(
                    (out[t * 128 + j] as f64 - acc).abs() < 1e-6,
                    "row {t} col {j}"
                );
            }
        }
    }

    #[test]
    fn trainable_dim_bounds_are_enforced() {
        assert!(matches!(
            AlignmentModule::new(64, 128, 0, 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            AlignmentModule::new(64, 128, 129, 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn qa_prompt_has_empty_audio_region() {
        let (world, enc, lm) = fixtures();
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        let s = world.make_task_sample(Task::Qa, 5, 0).unwrap();
        let a = assemble_prompt(&s, &module, &enc, &lm).unwrap();
        assert_eq!(a.audio_len, 0);
        let expected = 2 + 0 + 2 + s.prompt_tokens.len() + 1 + s.answer_tokens.len();
        assert_eq!(a.embeddings.shape()[0], expected);
    }

    #[test]
    fn asr_prompt_length_arithmetic() {
        let (world, enc, lm) = fixtures();
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        let s = world.make_task_sample(Task::Asr, 5, 0).unwrap();
        let t = s.audio.as_ref().unwrap().t;
        let a = assemble_prompt(&s, &module, &enc, &lm).unwrap();
        let expected = 2 + t + 2 + s.prompt_tokens.len() + 1 + s.answer_tokens.len();
        assert_eq!(a.embeddings.shape()[0], expected);
        assert_eq!(a.audio_len, t);
    }

    #[test]
    fn mask_sums_to_answer_len_over_sample_sweep() {
        let (world, enc, lm) = fixtures();
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        for seed in 0..100 {
            let task = match seed % 4 {
                0 => Task::Asr,
                1 => Task::St,
                2 => Task::Sqa,
                _ => Task::Qa,
            };
            let s = world.make_task_sample(task, seed, seed).unwrap();
            let a = assemble_prompt(&s, &module, &enc, &lm).unwrap();
            let count = a.target_mask.iter().filter(|&&m| m).count();
            // answer tokens already include END_OF_TEXT
            assert_eq!(count, s.answer_tokens.len(), "seed {seed}");
            // round trip: masked targets spell the answer
            let spelled: Vec<Token> = a
                .targets
                .iter()
                .zip(&a.target_mask)
                .filter(|(_, &m)| m)
                .map(|(&t, _)| t as Token)
                .collect();
            assert_eq!(spelled, s.answer_tokens);
            assert_eq!(a.prefix_len + s.answer_tokens.len(), a.embeddings.shape()[0]);
        }
    }

    #[test]
    fn lr_zero_step_leaves_module_unchanged() {
        let (world, enc, lm) = fixtures();
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        let before = module.checksum();
        let samples: Vec<TaskSample> = (0..4)
            .map(|i| world.make_task_sample(Task::Sqa, i, i).unwrap())
            .collect();
        let hyper = TrainHyper { lr: 0.0, batch: 2, steps: 1, seed: 0 };
        train_alignment(&samples, &module, &enc, &lm, hyper).unwrap();
        assert_eq!(module.checksum(), before);
    }

    #[test]
    fn training_preserves_zero_region_and_backbones() {
        let (world, enc, lm) = fixtures();
        let module = AlignmentModule::new(64, 128, 32, 1).unwrap();
        assert!(module.zero_region_intact());
        let samples: Vec<TaskSample> = (0..6)
            .map(|i| world.make_task_sample(Task::Sqa, i, i).unwrap())
            .collect();
        let enc_sum = enc.checksum();
        let lm_sum = lm.checksum();
        let hyper = TrainHyper { lr: 1e-3, batch: 2, steps: 3, seed: 0 };
        let curve = train_alignment(&samples, &module, &enc, &lm, hyper).unwrap();
        assert_eq!(curve.len(), 3);
        assert!(curve.iter().all(|l| l.is_finite()));
        assert!(module.zero_region_intact());
        // the trainable region did move
        assert_ne!(module.checksum(), AlignmentModule::new(64, 128, 32, 1).unwrap().checksum());
        assert_eq!(enc.checksum(), enc_sum);
        assert_eq!(lm.checksum(), lm_sum);
    }

    #[test]
    fn unfrozen_backbone_is_integrity_error() {
        let (world, enc, _) = fixtures();
        let lm = Lm::new(LMConfig::default(), 3); // not frozen
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        let samples = vec![world.make_task_sample(Task::Qa, 1, 0).unwrap()];
        let hyper = TrainHyper::default();
        assert!(matches!(
            train_alignment(&samples, &module, &enc, &lm, hyper),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn svd_truncation_full_rank_is_identity() {
        let mut rng = Stream::new(9);
        let a = Tensor::from_vec((0..6 * 4).map(|_| rng.normal()).collect(), &[6, 4]).unwrap();
        let out = svd_truncate_features(&a, 4).unwrap();
        let av = a.to_vec();
        let ov = out.to_vec();
        let num: f64 = av.iter().zip(&ov).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum();
        let den: f64 = av.iter().map(|&x| (x as f64).powi(2)).sum();
        assert!((num / den).sqrt() < 1e-5);
    }

    #[test]
    fn svd_truncation_error_matches_eckart_young() {
        let mut rng = Stream::new(4);
        let a = Tensor::from_vec((0..20 * 128).map(|_| rng.normal()).collect(), &[20, 128]).unwrap();
        let k = 8;
        let out = svd_truncate_features(&a, k).unwrap();
        let decomp = svd(&a).unwrap();
        let tail: f64 = decomp.sigma[k..].iter().map(|&s| (s as f64).powi(2)).sum();
        let want = tail.sqrt();
        let got: f64 = a
            .to_vec()
            .iter()
            .zip(out.to_vec().iter())
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((got - want).abs() < 1e-4, "got {got} want {want}");
    }

    #[test]
    fn svd_truncation_k_zero_is_parameter_error() {
        let a = Tensor::from_vec(vec![1.0; 4], &[2, 2]).unwrap();
        assert!(matches!(
            svd_truncate_features(&a, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn swap_base_to_base_is_identity() {
        let (world, enc, lm) = fixtures();
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        module.freeze();
        let sys = System::new(&enc, &module, &lm);
        let swapped = sys.swap_lm(&lm).unwrap();
        for seed in 0..10 {
            let s = world.make_task_sample(Task::Asr, seed, seed).unwrap();
            assert_eq!(sys.decode(&s).unwrap(), swapped.decode(&s).unwrap());
        }
    }

    #[test]
    fn swap_rejects_non_homologous_lm() {
        let (_, enc, lm) = fixtures();
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        let sys = System::new(&enc, &module, &lm);
        let other = Lm::new(
            LMConfig {
                d_lm: 64,
                heads: 4,
                ..LMConfig::default()
            },
            3,
        );
        assert!(matches!(sys.swap_lm(&other), Err(Error::Compatibility(_))));
    }

    #[test]
    fn decode_terminates_and_strips_nothing() {
        let (world, enc, lm) = fixtures();
        let module = AlignmentModule::new(64, 128, 128, 1).unwrap();
        module.freeze();
        let sys = System::new(&enc, &module, &lm);
        let s = world.make_task_sample(Task::Sqa, 3, 0).unwrap();
        let out = sys.decode(&s).unwrap();
        assert!(out.len() <= MAX_NEW_TOKENS);
        // decoded ids stay in vocabulary
        assert!(out.iter().all(|&t| (t as usize) < lm.config.vocab_size));
        let _ = END_OF_TEXT;
    }
}
