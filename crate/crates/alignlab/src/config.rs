//! Experiment configuration: a flat, line-oriented `key = value` format
//! with `[section]` headers. Every artifact records the hash of the
//! resolved configuration that produced it.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::lm::{LMConfig, LoraConfig};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub global_seed: u64,
    pub out_dir: PathBuf,

    pub corpus_seed: u64,
    pub scale: usize,
    pub test_count: usize,

    pub encoder: EncoderConfig,
    pub encoder_corpus_size: usize,

    pub lm: LMConfig,
    pub lm_corpus_items: usize,
    pub chat_corpus_items: usize,

    pub align_lr: f32,
    pub align_batch: usize,
    pub align_steps: usize,

    pub lora: LoraConfig,
    pub lora_lr: f32,
    pub lora_steps: usize,

    /// SVD sweep; None denotes full rank.
    pub k_list: Vec<Option<usize>>,
    pub dim_list: Vec<usize>,
    pub max_new: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            global_seed: 1,
            out_dir: PathBuf::from("out"),
            corpus_seed: 1234,
            scale: 20,
            test_count: 50,
            encoder: EncoderConfig::default(),
            encoder_corpus_size: 2000,
            lm: LMConfig::default(),
            lm_corpus_items: 24000,
            chat_corpus_items: 2000,
            align_lr: 1e-3,
            align_batch: 8,
            align_steps: 250,
            lora: LoraConfig::default(),
            lora_lr: 1e-3,
            lora_steps: 100,
            k_list: vec![None, Some(64), Some(32), Some(16), Some(8), Some(4)],
            dim_list: vec![128, 96, 64, 32],
            max_new: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Dependency(path.display().to_string()))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            self.set(&section, key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T> {
            v.parse::<T>()
                .map_err(|_| Error::Config(format!("bad numeric value '{v}'")))
        }
        match (section, key) {
            ("", "seed") => self.global_seed = num(value)?,
            ("", "out_dir") => self.out_dir = PathBuf::from(value),
            ("corpus", "seed") => self.corpus_seed = num(value)?,
            ("corpus", "scale") => self.scale = num(value)?,
            ("corpus", "d_feat") => self.encoder.d_feat = num(value)?,
            ("corpus", "test_count") => self.test_count = num(value)?,
            ("encoder", "d_enc") => self.encoder.d_enc = num(value)?,
            ("encoder", "layers") => self.encoder.layers = num(value)?,
            ("encoder", "heads") => self.encoder.heads = num(value)?,
            ("encoder", "max_frames") => self.encoder.max_frames = num(value)?,
            ("encoder", "pretrain_steps") => self.encoder.pretrain_steps = num(value)?,
            ("encoder", "pretrain_lr") => self.encoder.pretrain_lr = num(value)?,
            ("encoder", "batch") => self.encoder.batch = num(value)?,
            ("encoder", "corpus_size") => self.encoder_corpus_size = num(value)?,
            ("lm", "d_lm") => self.lm.d_lm = num(value)?,
            ("lm", "layers") => self.lm.layers = num(value)?,
            ("lm", "heads") => self.lm.heads = num(value)?,
            ("lm", "max_seq") => self.lm.max_seq = num(value)?,
            ("lm", "pretrain_steps") => self.lm.pretrain_steps = num(value)?,
            ("lm", "pretrain_lr") => self.lm.pretrain_lr = num(value)?,
            ("lm", "chat_ft_steps") => self.lm.chat_ft_steps = num(value)?,
            ("lm", "chat_ft_lr") => self.lm.chat_ft_lr = num(value)?,
            ("lm", "batch") => self.lm.batch = num(value)?,
            ("lm", "noise_std") => self.lm.noise_std = num(value)?,
            ("lm", "corpus_items") => self.lm_corpus_items = num(value)?,
            ("lm", "chat_corpus_items") => self.chat_corpus_items = num(value)?,
            ("align", "lr") => self.align_lr = num(value)?,
            ("align", "batch") => self.align_batch = num(value)?,
            ("align", "steps") => self.align_steps = num(value)?,
            ("lora", "rank") => self.lora.rank = num(value)?,
            ("lora", "alpha") => self.lora.alpha = num(value)?,
            ("lora", "lr") => self.lora_lr = num(value)?,
            ("lora", "steps") => self.lora_steps = num(value)?,
            ("sweep", "k_list") => {
                self.k_list = value
                    .split(',')
                    .map(|s| {
                        let s = s.trim();
                        if s == "full" {
                            Ok(None)
                        } else {
                            num::<usize>(s).map(Some)
                        }
                    })
                    .collect::<Result<_>>()?;
            }
            ("sweep", "dim_list") => {
                self.dim_list = value
                    .split(',')
                    .map(|s| num::<usize>(s.trim()))
                    .collect::<Result<_>>()?;
            }
            ("eval", "max_new") => self.max_new = num(value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key '{key}' in section '[{section}]'"
                )))
            }
        }
        Ok(())
    }

    /// Canonical dump of every resolved value; hashing this pins the
    /// provenance of artifacts.
    pub fn resolved(&self) -> String {
        let k_list: Vec<String> = self
            .k_list
            .iter()
            .map(|k| k.map(|v| v.to_string()).unwrap_or_else(|| "full".into()))
            .collect();
        let dim_list: Vec<String> = self.dim_list.iter().map(|d| d.to_string()).collect();
        format!(
            "seed = {}\nout_dir = {}\n\n[corpus]\nseed = {}\nscale = {}\nd_feat = {}\ntest_count = {}\n\n\
             [encoder]\nd_enc = {}\nlayers = {}\nheads = {}\nmax_frames = {}\npretrain_steps = {}\npretrain_lr = {}\nbatch = {}\ncorpus_size = {}\n\n\
             [lm]\nd_lm = {}\nlayers = {}\nheads = {}\nmax_seq = {}\npretrain_steps = {}\npretrain_lr = {}\nchat_ft_steps = {}\nchat_ft_lr = {}\nbatch = {}\nnoise_std = {}\ncorpus_items = {}\nchat_corpus_items = {}\n\n\
             [align]\nlr = {}\nbatch = {}\nsteps = {}\n\n\
             [lora]\nrank = {}\nalpha = {}\nlr = {}\nsteps = {}\n\n\
             [sweep]\nk_list = {}\ndim_list = {}\n\n\
             [eval]\nmax_new = {}\n",
            self.global_seed,
            self.out_dir.display(),
            self.corpus_seed,
            self.scale,
            self.encoder.d_feat,
            self.test_count,
            self.encoder.d_enc,
            self.encoder.layers,
            self.encoder.heads,
            self.encoder.max_frames,
            self.encoder.pretrain_steps,
            self.encoder.pretrain_lr,
            self.encoder.batch,
            self.encoder_corpus_size,
            self.lm.d_lm,
            self.lm.layers,
            self.lm.heads,
            self.lm.max_seq,
            self.lm.pretrain_steps,
            self.lm.pretrain_lr,
            self.lm.chat_ft_steps,
            self.lm.chat_ft_lr,
            self.lm.batch,
            self.lm.noise_std,
            self.lm_corpus_items,
            self.chat_corpus_items,
            self.align_lr,
            self.align_batch,
            self.align_steps,
            self.lora.rank,
            self.lora.alpha,
            self.lora_lr,
            self.lora_steps,
            k_list.join(","),
            dim_list.join(","),
            self.max_new,
        )
    }

    /// Short hex digest of the resolved configuration.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.resolved().as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.d_enc % self.encoder.heads != 0 {
            return Err(Error::Config("d_enc not divisible by encoder heads".into()));
        }
        if self.lm.d_lm % self.lm.heads != 0 {
            return Err(Error::Config("d_lm not divisible by LM heads".into()));
        }
        if self.lm.d_lm <= self.encoder.d_enc {
            return Err(Error::Config("d_lm must exceed d_enc".into()));
        }
        if self.scale == 0 || self.scale % 20 != 0 {
            return Err(Error::Config(format!(
                "scale {} must be a positive multiple of 20",
                self.scale
            )));
        }
        for &d in &self.dim_list {
            if d < 1 || d > self.lm.d_lm {
                return Err(Error::Config(format!("trainable dim {d} outside [1, d_lm]")));
            }
        }
        for k in self.k_list.iter().flatten() {
            if *k < 1 {
                return Err(Error::Config("svd k must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_resolved_dump() {
        let cfg = ExperimentConfig::default();
        let mut parsed = ExperimentConfig::default();
        parsed.apply(&cfg.resolved()).unwrap();
        assert_eq!(cfg.resolved(), parsed.resolved());
        assert_eq!(cfg.hash(), parsed.hash());
    }

    #[test]
    fn overrides_change_the_hash() {
        let base = ExperimentConfig::default();
        let mut changed = ExperimentConfig::default();
        changed.apply("[align]\nsteps = 999\n").unwrap();
        assert_ne!(base.hash(), changed.hash());
        assert_eq!(changed.align_steps, 999);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(
            cfg.apply("[align]\nbogus = 3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply("# comment\n\n[corpus]\nscale = 40 # inline\n").unwrap();
        assert_eq!(cfg.scale, 40);
    }

    #[test]
    fn k_list_parses_full_and_numbers() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply("[sweep]\nk_list = full, 32, 8\n").unwrap();
        assert_eq!(cfg.k_list, vec![None, Some(32), Some(8)]);
    }

    #[test]
    fn validate_rejects_bad_geometry() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply("[lm]\nd_lm = 130\n").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.apply("[corpus]\nscale = 30\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
