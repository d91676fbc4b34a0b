//! Frozen decoder-only language model, its homologous chat variant, and
//! LoRA adapters.
//!
//! A 4-layer causal transformer with tied input/output embeddings over
//! the 74-token toy vocabulary. Pretraining teaches the toy world's
//! rules (echo, translation, the key-value table) from text renderings
//! of the prompt format; the chat variant is a supervised fine-tune that
//! prefixes answers with a fixed acknowledgment.

use crate::corpus::{Token, ASSISTANT, END_OF_TEXT, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, Block, LayerNorm, LoraAdapter};
use crate::rng::{derive_seed, Stream};
use crate::tensor::{Adam, Tensor};
use crate::weights;

#[derive(Clone, Copy, Debug)]
pub struct LMConfig {
    pub vocab_size: usize,
    pub d_lm: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f32,
    pub chat_ft_steps: usize,
    pub chat_ft_lr: f32,
    pub batch: usize,
    /// Gaussian noise added to speech-slot input embeddings during
    /// training. Off by default: noise perturbs exactly the
    /// content-matching features the copy circuit forms on, and a real
    /// text-pretrained backbone is never noise-trained either.
    pub noise_std: f32,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig {
            vocab_size: VOCAB_SIZE,
            d_lm: 128,
            layers: 4,
            heads: 4,
            max_seq: 256,
            pretrain_steps: 1500,
            pretrain_lr: 1e-3,
            chat_ft_steps: 300,
            chat_ft_lr: 5e-4,
            batch: 4,
            noise_std: 0.0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Variant {
    Base,
    Chat,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Chat => "chat",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f32,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig { rank: 4, alpha: 8.0 }
    }
}

/// One (query, value) adapter pair per layer.
pub struct Lora {
    pub config: LoraConfig,
    pub adapters: Vec<(LoraAdapter, LoraAdapter)>,
}

impl Lora {
    pub fn new(lm_config: &LMConfig, config: LoraConfig, seed: u64) -> Result<Lora> {
        if config.rank < 1 {
            return Err(Error::Parameter(format!("lora rank {} < 1", config.rank)));
        }
        let mut rng = Stream::new(derive_seed(seed, "lora-init"));
        let adapters = (0..lm_config.layers)
            .map(|_| {
                (
                    LoraAdapter::new(lm_config.d_lm, config.rank, config.alpha, &mut rng),
                    LoraAdapter::new(lm_config.d_lm, config.rank, config.alpha, &mut rng),
                )
            })
            .collect();
        Ok(Lora { config, adapters })
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (q, v)) in self.adapters.iter().enumerate() {
            q.params(&format!("lm.lora.layer{i}.q"), &mut out);
            v.params(&format!("lm.lora.layer{i}.v"), &mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub struct Lm {
    pub config: LMConfig,
    pub variant: Variant,
    embedding: Tensor, // vocab x d_lm, tied with the output projection
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    pub frozen: bool,
}

impl Lm {
    pub fn new(config: LMConfig, seed: u64) -> Lm {
        assert_eq!(config.d_lm % config.heads, 0);
        let mut rng = Stream::new(derive_seed(seed, "lm-init"));
        let emb: Vec<f32> = (0..config.vocab_size * config.d_lm)
            .map(|_| rng.normal() * 0.3)
            .collect();
        let blocks = (0..config.layers)
            .map(|_| Block::new(config.d_lm, config.heads, true, &mut rng))
            .collect();
        Lm {
            config,
            variant: Variant::Base,
            embedding: Tensor::param(emb, &[config.vocab_size, config.d_lm]).unwrap(),
            blocks,
            final_ln: LayerNorm::new(config.d_lm),
            frozen: false,
        }
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        let prefix = format!("lm.{}", self.variant.as_str());
        let mut out = vec![(format!("{prefix}.embedding"), self.embedding.clone())];
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("{prefix}.block{i}"), &mut out);
        }
        self.final_ln.params(&format!("{prefix}.final_ln"), &mut out);
        out
    }

    /// Parameter list without the variant prefix, for cross-variant
    /// weight copying.
    fn bare_params(&self) -> Vec<(String, Tensor)> {
        self.params()
            .into_iter()
            .map(|(n, t)| (n.splitn(3, '.').nth(2).unwrap().to_string(), t))
            .collect()
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

    pub fn embedding_tensor(&self) -> &Tensor {
        &self.embedding
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn final_ln(&self) -> &LayerNorm {
        &self.final_ln
    }

    /// Deep copy with the given variant tag; the copy starts unfrozen.
    pub fn clone_as(&self, variant: Variant) -> Lm {
        let mut copy = Lm::new(self.config, 0);
        crate::nn::load_named(&copy.bare_params(), &self.bare_params()).unwrap();
        copy.variant = variant;
        copy
    }

    pub fn embed(&self, tokens: &[Token]) -> Result<Tensor> {
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(Error::Vocabulary(format!("token id {t} out of vocabulary")));
            }
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        self.embedding.gather_rows(&ids)
    }

    /// Causal forward over an embedding sequence -> (T x vocab) logits.
    pub fn forward(&self, embeddings: &Tensor) -> Result<Tensor> {
        self.forward_lora(embeddings, None)
    }

    pub fn forward_lora(&self, embeddings: &Tensor, lora: Option<&Lora>) -> Result<Tensor> {
        let t = embeddings.shape()[0];
        if t > self.config.max_seq {
            return Err(Error::Length(format!(
                "sequence of {t} exceeds max_seq {}",
                self.config.max_seq
            )));
        }
        if embeddings.shape()[1] != self.config.d_lm {
            return Err(Error::Shape(format!(
                "embedding width {} vs d_lm {}",
                embeddings.shape()[1],
                self.config.d_lm
            )));
        }
        let pos = sinusoidal_positions(t, self.config.d_lm);
        let mut x = embeddings.add(&pos)?;
        for (i, b) in self.blocks.iter().enumerate() {
            let (qa, va) = match lora {
                Some(l) => {
                    let (q, v) = &l.adapters[i];
                    (Some(q), Some(v))
                }
                None => (None, None),
            };
            x = b.forward_lora(&x, qa, va)?;
        }
        let x = self.final_ln.forward(&x)?;
        x.matmul_nt(&self.embedding)
    }

    /// Next-token cross-entropy over a token sequence. `target_mask[i]`
    /// gates the prediction of `tokens[i+1]`; it must have length T-1.
    pub fn sequence_loss(&self, tokens: &[Token], target_mask: &[bool], noise: Option<&mut Stream>) -> Result<Tensor> {
        let t = tokens.len();
        if t < 2 {
            return Err(Error::Length("sequence too short for next-token loss".into()));
        }
        let mut embs = self.embed(tokens)?;
        // Noise only inside the audio slot: at alignment time that is the
        // one region whose embeddings are approximate, while text-token
        // embeddings are exact table rows.
        if let Some(rng) = noise {
            let start = tokens.iter().position(|&x| x == crate::corpus::START_AUDIO);
            let end = tokens.iter().position(|&x| x == crate::corpus::END_AUDIO);
            if let (Some(start), Some(end)) = (start, end) {
                if end > start + 1 {
                    let std = self.config.noise_std;
                    let d = self.config.d_lm;
                    let mut noise = vec![0.0f32; t * d];
                    for row in (start + 1)..end {
                        for v in &mut noise[row * d..(row + 1) * d] {
                            *v = rng.normal() * std;
                        }
                    }
                    embs = embs.add(&Tensor::from_vec(noise, embs.shape())?)?;
                }
            }
        }
        let logits = self.forward(&embs)?;
        let head: Vec<usize> = (0..t - 1).collect();
        let logits = logits.gather_rows(&head)?;
        let targets: Vec<usize> = tokens[1..].iter().map(|&x| x as usize).collect();
        logits.cross_entropy(&targets, target_mask)
    }

    /// Reference greedy decoder: full re-forward per emitted token. The
    /// cached decoder in `infer` must match this bit for bit.
    pub fn decode_greedy(&self, prefix: &Tensor, max_new: usize) -> Result<Vec<Token>> {
        self.decode_greedy_lora(prefix, max_new, None)
    }

    pub fn decode_greedy_lora(
        &self,
        prefix: &Tensor,
        max_new: usize,
        lora: Option<&Lora>,
    ) -> Result<Vec<Token>> {
        let mut embs = prefix.clone();
        let mut out = Vec::new();
        for _ in 0..max_new {
            if embs.shape()[0] >= self.config.max_seq {
                break;
            }
            let logits = self.forward_lora(&embs, lora)?;
            let t = logits.shape()[0];
            let v = self.config.vocab_size;
            let data = logits.data();
            let row = &data[(t - 1) * v..t * v];
            let next = argmax_lowest(row) as Token;
            drop(data);
            out.push(next);
            if next == END_OF_TEXT {
                break;
            }
            let next_emb = self.embed(&[next])?;
            embs = Tensor::concat_rows(&[embs, next_emb])?;
        }
        Ok(out)
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_lowest(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_corpus(corpus: &[Vec<Token>], min_tokens: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Config("empty LM training corpus".into()));
    }
    let total: usize = corpus.iter().map(|s| s.len()).sum();
    if total < min_tokens {
        return Err(Error::Config(format!(
            "LM corpus has {total} tokens, need >= {min_tokens}"
        )));
    }
    Ok(())
}

/// Linear warmup over the first 200 steps, cosine decay to 10% of peak.
/// Linear warmup, then flat. Pretraining walks the corpus in order and
/// the corpus is a curriculum (clean copy items first, stuttered ones
/// later), so a decaying tail would starve exactly the phase that still
/// has the most to learn.
fn lr_schedule(peak: f32, step: usize, total: usize) -> f32 {
    let warmup = 200.min(total / 10).max(1);
    if step < warmup {
        return peak * (step + 1) as f32 / warmup as f32;
    }
    peak
}

/// Pretrain a base LM; returns the frozen model and held-out perplexity.
pub fn pretrain_lm(corpus: &[Vec<Token>], config: LMConfig, seed: u64) -> Result<(Lm, f64)> {
    check_corpus(corpus, 50_000)?;
    let held_out = 64.min(corpus.len() / 10).max(1);
    let (train, test) = corpus.split_at(corpus.len() - held_out);

    let mut lm = Lm::new(config, seed);
    let mut opt = Adam::new(lm.params(), config.pretrain_lr);
    let mut noise_rng = Stream::new(derive_seed(seed, "lm-noise"));
    for step in 0..config.pretrain_steps {
        opt.state.learning_rate = lr_schedule(config.pretrain_lr, step, config.pretrain_steps);
        opt.zero_grad();
        for i in 0..config.batch {
            let seq = &train[(step * config.batch + i) % train.len()];
            let mask = vec![true; seq.len() - 1];
            let loss = lm
                .sequence_loss(seq, &mask, Some(&mut noise_rng))?
                .scale(1.0 / config.batch as f32);
            loss.backward()?;
        }
        opt.step()?;
    }
    let ppl = perplexity(&lm, test)?;
    lm.freeze();
    Ok((lm, ppl))
}

/// Mean-per-token perplexity under teacher forcing (no noise).
pub fn perplexity(lm: &Lm, corpus: &[Vec<Token>]) -> Result<f64> {
    let mut total_nll = 0.0f64;
    let mut total_targets = 0usize;
    for seq in corpus {
        if seq.len() < 2 {
            continue;
        }
        let n = seq.len() - 1;
        let mask = vec![true; n];
        let loss = lm.sequence_loss(seq, &mask, None)?;
        total_nll += loss.item() as f64 * n as f64;
        total_targets += n;
    }
    if total_targets == 0 {
        return Err(Error::Config("perplexity over an empty corpus".into()));
    }
    Ok((total_nll / total_targets as f64).exp())
}

/// Supervised fine-tune into the chat variant: answer-only loss on
/// instruction-formatted sequences. The base model is untouched.
pub fn finetune_chat(base: &Lm, corpus: &[Vec<Token>], seed: u64) -> Result<Lm> {
    if base.variant != Variant::Base {
        return Err(Error::Config(format!(
            "finetune_chat expects a base model, got {}",
            base.variant.as_str()
        )));
    }
    check_corpus(corpus, 1)?;
    let config = base.config;
    let mut chat = base.clone_as(Variant::Chat);
    let mut opt = Adam::new(chat.params(), config.chat_ft_lr);
    let mut noise_rng = Stream::new(derive_seed(seed, "chat-noise"));
    for step in 0..config.chat_ft_steps {
        opt.zero_grad();
        for i in 0..config.batch {
            let seq = &corpus[(step * config.batch + i) % corpus.len()];
            let mask = answer_mask(seq)?;
            let loss = chat
                .sequence_loss(seq, &mask, Some(&mut noise_rng))?
                .scale(1.0 / config.batch as f32);
            loss.backward()?;
        }
        opt.step()?;
    }
    chat.freeze();
    Ok(chat)
}

/// Target mask that is true exactly on answer tokens (everything after
/// the ASSISTANT marker) and the closing END_OF_TEXT.
pub fn answer_mask(seq: &[Token]) -> Result<Vec<bool>> {
    let pos = seq
        .iter()
        .position(|&t| t == ASSISTANT)
        .ok_or_else(|| Error::Config("sequence has no ASSISTANT marker".into()))?;
    // target index i predicts seq[i+1]
    Ok((0..seq.len() - 1).map(|i| i >= pos).collect())
}

/// LoRA fine-tune on multitask samples with the encoder, alignment map,
/// and base LM all frozen; only the adapter pairs receive gradients.
pub fn lora_finetune(
    lm: &Lm,
    samples: &[crate::corpus::TaskSample],
    encoder: &crate::encoder::Encoder,
    module: &crate::alignment::AlignmentModule,
    config: LoraConfig,
    hyper: crate::alignment::TrainHyper,
) -> Result<Lora> {
    use crate::alignment::{assemble_from_prepared, prepare_sample, prompt_loss};

    if module.weight.requires_grad() || module.bias.requires_grad() {
        return Err(Error::Dependency(
            "lora_finetune requires a trained, frozen alignment module".into(),
        ));
    }
    if !lm.frozen || !encoder.frozen {
        return Err(Error::Integrity("lora_finetune requires frozen backbones".into()));
    }
    if samples.is_empty() {
        return Err(Error::Config("lora fine-tuning set is empty".into()));
    }
    let lm_sum = lm.checksum();
    let enc_sum = encoder.checksum();
    let align_sum = module.checksum();

    let lora = Lora::new(&lm.config, config, hyper.seed)?;
    let prepared: Vec<_> = samples
        .iter()
        .map(|s| prepare_sample(s, encoder, lm))
        .collect::<Result<_>>()?;
    let mut opt = Adam::new(lora.params(), hyper.lr);
    for step in 0..hyper.steps {
        opt.zero_grad();
        for i in 0..hyper.batch {
            let ps = &prepared[(step * hyper.batch + i) % prepared.len()];
            let assembled = assemble_from_prepared(ps, module, None)?;
            let loss = prompt_loss(lm, &assembled, Some(&lora))?;
            loss.scale(1.0 / hyper.batch as f32).backward()?;
        }
        opt.step()?;
    }
    if lm.checksum() != lm_sum || encoder.checksum() != enc_sum || module.checksum() != align_sum {
        return Err(Error::Integrity("frozen weights changed during LoRA fine-tuning".into()));
    }
    for (_, p) in lora.params() {
        p.set_requires_grad(false);
    }
    Ok(lora)
}

pub fn save_lm(path: &std::path::Path, lm: &Lm) -> Result<()> {
    weights::save(path, &lm.params())
}

pub fn load_lm(path: &std::path::Path, config: LMConfig, variant: Variant) -> Result<Lm> {
    let entries = weights::load(path)?;
    let mut lm = Lm::new(config, 0);
    lm.variant = variant;
    crate::nn::load_named(&lm.params(), &entries)?;
    lm.freeze();
    Ok(lm)
}

pub fn save_lora(path: &std::path::Path, lora: &Lora) -> Result<()> {
    weights::save(path, &lora.params())
}

pub fn load_lora(path: &std::path::Path, lm_config: &LMConfig, config: LoraConfig) -> Result<Lora> {
    let entries = weights::load(path)?;
    let lora = Lora::new(lm_config, config, 0)?;
    crate::nn::load_named(&lora.params(), &entries)?;
    for (_, p) in lora.params() {
        p.set_requires_grad(false);
    }
    Ok(lora)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{lm_pretrain_corpus, ToyWorld};

    fn tiny_config(steps: usize) -> LMConfig {
        LMConfig {
            pretrain_steps: steps,
            chat_ft_steps: steps,
            ..LMConfig::default()
        }
    }

    #[test]
    fn forward_shape_contract() {
        let lm = Lm::new(tiny_config(0), 1);
        let embs = lm.embed(&[1, 2, 3, 4, 5]).unwrap();
        let logits = lm.forward(&embs).unwrap();
        assert_eq!(logits.shape(), &[5, VOCAB_SIZE]);
    }

    #[test]
    fn decode_max_new_zero_is_empty() {
        let lm = Lm::new(tiny_config(0), 1);
        let embs = lm.embed(&[1, 2]).unwrap();
        assert!(lm.decode_greedy(&embs, 0).unwrap().is_empty());
    }

    #[test]
    fn causality_perturbation_sweep() {
        let lm = Lm::new(tiny_config(0), 1);
        let tokens: Vec<Token> = (0..8).collect();
        let base = lm.forward(&lm.embed(&tokens).unwrap()).unwrap().to_vec();
        let v = VOCAB_SIZE;
        for t in 0..8 {
            let mut changed = tokens.clone();
            changed[t] = 40 + t as Token;
            let out = lm.forward(&lm.embed(&changed).unwrap()).unwrap().to_vec();
            for pos in 0..t {
                assert_eq!(
                    &base[pos * v..(pos + 1) * v],
                    &out[pos * v..(pos + 1) * v],
                    "logits at {pos} changed by edit at {t}"
                );
            }
        }
    }

    #[test]
    fn untrained_perplexity_near_vocab_size() {
        let world = ToyWorld::new(5, 16);
        let corpus = lm_pretrain_corpus(&world, 1500, 11);
        let (lm, ppl) = pretrain_lm(&corpus, tiny_config(0), 2).unwrap();
        assert!(lm.frozen);
        assert!(
            (30.0..180.0).contains(&ppl),
            "untrained perplexity {ppl} not near vocab size"
        );
    }

    #[test]
    fn pretrain_same_seed_is_bitwise_identical() {
        let world = ToyWorld::new(5, 16);
        let corpus = lm_pretrain_corpus(&world, 1500, 11);
        let (a, _) = pretrain_lm(&corpus, tiny_config(2), 7).unwrap();
        let (b, _) = pretrain_lm(&corpus, tiny_config(2), 7).unwrap();
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn empty_corpus_is_config_error() {
        assert!(matches!(
            pretrain_lm(&[], tiny_config(1), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn chat_clone_is_homologous_and_distinct() {
        let world = ToyWorld::new(5, 16);
        let corpus = lm_pretrain_corpus(&world, 1500, 11);
        let (base, _) = pretrain_lm(&corpus, tiny_config(1), 7).unwrap();
        let instr = crate::corpus::instruction_corpus(&world, 50, 13);
        let chat = finetune_chat(&base, &instr, 9).unwrap();
        assert_eq!(chat.variant, Variant::Chat);
        assert_eq!(chat.config.vocab_size, base.config.vocab_size);
        assert_eq!(chat.config.d_lm, base.config.d_lm);
        // variant prefix differs, so compare bare checksums
        let b: Vec<(String, Tensor)> = base.bare_params();
        let c: Vec<(String, Tensor)> = chat.bare_params();
        assert_ne!(weights::checksum(&b), weights::checksum(&c));
        // base untouched by the fine-tune: re-derive from scratch
        let (base2, _) = pretrain_lm(&corpus, tiny_config(1), 7).unwrap();
        assert_eq!(base.checksum(), base2.checksum());
    }

    #[test]
    fn finetune_chat_rejects_chat_input() {
        let lm = Lm::new(tiny_config(0), 1);
        let chat = lm.clone_as(Variant::Chat);
        let world = ToyWorld::new(5, 16);
        let instr = crate::corpus::instruction_corpus(&world, 10, 13);
        assert!(matches!(
            finetune_chat(&chat, &instr, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn lora_parameter_count_and_noop_init() {
        let config = tiny_config(0);
        let lm = Lm::new(config, 1);
        let lora = Lora::new(&config, LoraConfig::default(), 3).unwrap();
        assert_eq!(lora.param_count(), 2 * 4 * (128 * 4 + 4 * 128));
        let embs = lm.embed(&[1, 2, 3]).unwrap();
        let plain = lm.forward(&embs).unwrap().to_vec();
        let with = lm.forward_lora(&embs, Some(&lora)).unwrap().to_vec();
        let pb: Vec<u32> = plain.iter().map(|v| v.to_bits()).collect();
        let wb: Vec<u32> = with.iter().map(|v| v.to_bits()).collect();
        assert_eq!(pb, wb);
    }

    #[test]
    fn answer_mask_counts_answer_and_terminator() {
        let seq = vec![crate::corpus::HUMAN, 1, 2, ASSISTANT, 5, 6, END_OF_TEXT];
        let mask = answer_mask(&seq).unwrap();
        assert_eq!(mask, vec![false, false, false, true, true, true]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 3);
    }

    #[test]
    fn sequence_overflow_is_length_error() {
        let lm = Lm::new(tiny_config(0), 1);
        let tokens: Vec<Token> = (0..257).map(|i| (i % 64) as Token).collect();
        let embs = lm.embedding_tensor().gather_rows(&vec![0usize; 257]).unwrap();
        assert!(matches!(lm.forward(&embs), Err(Error::Length(_))));
        drop(tokens);
    }
}
