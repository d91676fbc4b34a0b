//! KV-cached greedy decoding.
//!
//! The reference decoder in `lm` re-runs a full forward pass per emitted
//! token; this path caches per-layer key/value rows so each new token
//! costs O(T) attention instead of O(T^2). Both paths call the same raw
//! kernels, and the kernels' accumulation order is padding-invariant, so
//! cached decoding reproduces the reference decoder's numbers exactly.

use crate::corpus::{Token, END_OF_TEXT};
use crate::error::Result;
use crate::lm::{argmax_lowest, Lm, Lora};
use crate::nn::{sinusoidal_positions, Linear, LN_EPS};
use crate::tensor::kernels;
use crate::tensor::Tensor;

pub struct KvCache {
    k: Vec<Vec<f32>>, // per layer, len * d_lm
    v: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// A frozen LM (plus optional LoRA adapters) viewed through the cache.
pub struct CachedLm<'a> {
    pub lm: &'a Lm,
    pub lora: Option<&'a Lora>,
}

impl<'a> CachedLm<'a> {
    pub fn new(lm: &'a Lm) -> CachedLm<'a> {
        CachedLm { lm, lora: None }
    }

    pub fn with_lora(lm: &'a Lm, lora: &'a Lora) -> CachedLm<'a> {
        CachedLm { lm, lora: Some(lora) }
    }

    pub fn new_cache(&self) -> KvCache {
        let layers = self.lm.config.layers;
        KvCache {
            k: vec![Vec::new(); layers],
            v: vec![Vec::new(); layers],
            len: 0,
        }
    }

    fn linear_row(&self, x: &[f32], lin: &Linear) -> Vec<f32> {
        let d_in = lin.w.shape()[0];
        let d_out = lin.w.shape()[1];
        let mut out = kernels::matmul_nn(x, &lin.w.data(), 1, d_in, d_out);
        let bias = lin.b.data();
        for j in 0..d_out {
            out[j] += bias[j];
        }
        out
    }

    fn lora_row(&self, x: &[f32], adapter: &crate::nn::LoraAdapter) -> Vec<f32> {
        let d = adapter.a.shape()[0];
        let r = adapter.a.shape()[1];
        let mid = kernels::matmul_nn(x, &adapter.a.data(), 1, d, r);
        let mut out = kernels::matmul_nn(&mid, &adapter.b.data(), 1, r, d);
        for o in out.iter_mut() {
            *o *= adapter.scale;
        }
        out
    }

    /// Run one embedding row at position `cache.len`; returns the vocab
    /// logits for that position.
    pub fn step_row(&self, cache: &mut KvCache, emb: &[f32]) -> Result<Vec<f32>> {
        let cfg = &self.lm.config;
        let d = cfg.d_lm;
        let heads = cfg.heads;
        let dh = d / heads;
        let pos = cache.len;
        if pos >= cfg.max_seq {
            return Err(crate::error::Error::Length(format!(
                "cache position {pos} exceeds max_seq {}",
                cfg.max_seq
            )));
        }

        // input embedding + sinusoidal position row
        let pos_table = sinusoidal_positions(pos + 1, d);
        let pos_data = pos_table.data();
        let pos_row = &pos_data[pos * d..(pos + 1) * d];
        let mut x: Vec<f32> = (0..d).map(|j| emb[j] + pos_row[j]).collect();

        let inv_sqrt = 1.0 / (dh as f32).sqrt();
        for (layer, block) in self.lm.blocks().iter().enumerate() {
            let mut xn = vec![0.0f32; d];
            kernels::layer_norm_row(&x, &block.ln1.gamma.data(), &block.ln1.beta.data(), LN_EPS, &mut xn);

            let mut q = self.linear_row(&xn, &block.attn.wq);
            let k = self.linear_row(&xn, &block.attn.wk);
            let mut v = self.linear_row(&xn, &block.attn.wv);
            if let Some(l) = self.lora {
                let (qa, va) = &l.adapters[layer];
                let dq = self.lora_row(&xn, qa);
                let dv = self.lora_row(&xn, va);
                for j in 0..d {
                    q[j] += dq[j];
                    v[j] += dv[j];
                }
            }
            cache.k[layer].extend_from_slice(&k);
            cache.v[layer].extend_from_slice(&v);
            let t = pos + 1;

            let mut joined = vec![0.0f32; d];
            let mut col = vec![0.0f32; t];
            for h in 0..heads {
                let qh = &q[h * dh..(h + 1) * dh];
                let mut scores = vec![0.0f32; t];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &cache.k[layer][j * d + h * dh..j * d + (h + 1) * dh];
                    *s = kernels::dot(qh, kj) * inv_sqrt;
                }
                kernels::softmax_row(&mut scores);
                for c in 0..dh {
                    for j in 0..t {
                        col[j] = cache.v[layer][j * d + h * dh + c];
                    }
                    joined[h * dh + c] = kernels::dot(&scores, &col);
                }
            }
            let attn_out = self.linear_row(&joined, &block.attn.wo);
            for j in 0..d {
                x[j] += attn_out[j];
            }

            let mut xn2 = vec![0.0f32; d];
            kernels::layer_norm_row(&x, &block.ln2.gamma.data(), &block.ln2.beta.data(), LN_EPS, &mut xn2);
            let mut hidden = self.linear_row(&xn2, &block.ff1);
            for hval in hidden.iter_mut() {
                *hval = kernels::gelu(*hval);
            }
            let f = self.linear_row(&hidden, &block.ff2);
            for j in 0..d {
                x[j] += f[j];
            }
        }

        let mut xf = vec![0.0f32; d];
        let fln = self.lm.final_ln();
        kernels::layer_norm_row(&x, &fln.gamma.data(), &fln.beta.data(), LN_EPS, &mut xf);
        let emb_all = self.lm.embedding_tensor().data();
        let logits = kernels::matmul_nt(&xf, &emb_all, 1, d, cfg.vocab_size);
        cache.len += 1;
        Ok(logits)
    }

    /// Feed every prefix row through the cache; returns the logits of the
    /// final position.
    pub fn prefill(&self, cache: &mut KvCache, prefix: &Tensor) -> Result<Vec<f32>> {
        let t = prefix.shape()[0];
        let d = prefix.shape()[1];
        let data = prefix.data();
        let mut last = Vec::new();
        for i in 0..t {
            last = self.step_row(cache, &data[i * d..(i + 1) * d])?;
        }
        Ok(last)
    }

    /// Greedy decoding from an embedding prefix; identical output to the
    /// reference `Lm::decode_greedy`.
    pub fn decode_greedy(&self, prefix: &Tensor, max_new: usize) -> Result<Vec<Token>> {
        let mut cache = self.new_cache();
        if max_new == 0 {
            return Ok(Vec::new());
        }
        let mut logits = self.prefill(&mut cache, prefix)?;
        let emb_all = self.lm.embedding_tensor();
        let d = self.lm.config.d_lm;
        let mut out = Vec::new();
        for _ in 0..max_new {
            let next = argmax_lowest(&logits) as Token;
            out.push(next);
            if next == END_OF_TEXT {
                break;
            }
            if cache.len() >= self.lm.config.max_seq {
                break;
            }
            let data = emb_all.data();
            let row: Vec<f32> = data[next as usize * d..(next as usize + 1) * d].to_vec();
            drop(data);
            logits = self.step_row(&mut cache, &row)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{LMConfig, LoraConfig};
    use crate::rng::Stream;

    fn lm() -> Lm {
        let mut m = Lm::new(LMConfig::default(), 42);
        m.freeze();
        m
    }

    #[test]
    fn prefill_logits_match_full_forward() {
        let lm = lm();
        let tokens: Vec<Token> = vec![64, 1, 2, 3, 67, 5, 71];
        let prefix = lm.embed(&tokens).unwrap();
        let full = lm.forward(&prefix).unwrap();
        let v = lm.config.vocab_size;
        let want = full.to_vec()[(tokens.len() - 1) * v..].to_vec();

        let cached = CachedLm::new(&lm);
        let mut cache = cached.new_cache();
        let got = cached.prefill(&mut cache, &prefix).unwrap();
        assert_eq!(got, want, "cached logits diverge from reference");
    }

    #[test]
    fn every_position_matches_reference() {
        let lm = lm();
        let tokens: Vec<Token> = (0..12).map(|i| (i * 5 % 64) as Token).collect();
        let prefix = lm.embed(&tokens).unwrap();
        let full = lm.forward(&prefix).unwrap().to_vec();
        let v = lm.config.vocab_size;
        let d = lm.config.d_lm;

        let cached = CachedLm::new(&lm);
        let mut cache = cached.new_cache();
        let data = prefix.to_vec();
        for i in 0..tokens.len() {
            let logits = cached.step_row(&mut cache, &data[i * d..(i + 1) * d]).unwrap();
            assert_eq!(&logits[..], &full[i * v..(i + 1) * v], "mismatch at position {i}");
        }
    }

    #[test]
    fn greedy_decode_matches_reference() {
        let lm = lm();
        let prefix = lm.embed(&[64, 67, 10, 11, 71]).unwrap();
        let reference = lm.decode_greedy(&prefix, 16).unwrap();
        let cached = CachedLm::new(&lm).decode_greedy(&prefix, 16).unwrap();
        assert_eq!(reference, cached);
        assert!(!reference.is_empty());
    }

    #[test]
    fn lora_decode_matches_reference() {
        let lm = lm();
        let lora = Lora::new(&lm.config, LoraConfig::default(), 5).unwrap();
        // make the adapters non-trivial
        let mut rng = Stream::new(99);
        for (q, v) in &lora.adapters {
            for b in [&q.b, &v.b] {
                let mut d = b.data_mut();
                for x in d.iter_mut() {
                    *x = rng.normal() * 0.05;
                }
            }
        }
        let prefix = lm.embed(&[64, 67, 3, 4, 5, 71]).unwrap();
        let reference = lm.decode_greedy_lora(&prefix, 12, Some(&lora)).unwrap();
        let cached = CachedLm::with_lora(&lm, &lora).decode_greedy(&prefix, 12).unwrap();
        assert_eq!(reference, cached);
    }

    #[test]
    fn max_new_zero_is_empty() {
        let lm = lm();
        let prefix = lm.embed(&[1, 2]).unwrap();
        assert!(CachedLm::new(&lm).decode_greedy(&prefix, 0).unwrap().is_empty());
    }
}
