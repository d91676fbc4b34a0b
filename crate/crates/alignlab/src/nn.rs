//! Shared transformer building blocks (linear, layer norm, multi-head
//! attention, pre-norm block, sinusoidal positions) built on the tape
//! tensor ops. Both the encoder and the LM are assembled from these.

use crate::error::Result;
use crate::rng::Stream;
use crate::tensor::Tensor;

pub const LN_EPS: f32 = 1e-5;
const MASK_NEG: f32 = -1e9;

pub struct Linear {
    pub w: Tensor, // in x out
    pub b: Tensor, // out
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Stream) -> Linear {
        let bound = 1.0 / (d_in as f32).sqrt();
        let w: Vec<f32> = (0..d_in * d_out).map(|_| rng.uniform(-bound, bound)).collect();
        Linear {
            w: Tensor::param(w, &[d_in, d_out]).unwrap(),
            b: Tensor::param(vec![0.0; d_out], &[d_out]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add_bias(&self.b)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.w.clone()));
        out.push((format!("{prefix}.bias"), self.b.clone()));
    }
}

pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(d: usize) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::param(vec![1.0; d], &[d]).unwrap(),
            beta: Tensor::param(vec![0.0; d], &[d]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, LN_EPS)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub causal: bool,
}

impl MultiHeadAttention {
    pub fn new(d: usize, heads: usize, causal: bool, rng: &mut Stream) -> MultiHeadAttention {
        assert_eq!(d % heads, 0);
        MultiHeadAttention {
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
            heads,
            causal,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_lora(x, None, None)
    }

    /// Attention with optional low-rank adapters added to the query and
    /// value projections.
    pub fn forward_lora(
        &self,
        x: &Tensor,
        q_adapter: Option<&LoraAdapter>,
        v_adapter: Option<&LoraAdapter>,
    ) -> Result<Tensor> {
        let t = x.shape()[0];
        let d = x.shape()[1];
        let dh = d / self.heads;
        let mut q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let mut v = self.wv.forward(x)?;
        if let Some(a) = q_adapter {
            q = q.add(&a.apply(x)?)?;
        }
        if let Some(a) = v_adapter {
            v = v.add(&a.apply(x)?)?;
        }
        let mask = if self.causal { Some(causal_mask(t)) } else { None };
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice_cols(h * dh, dh)?;
            let kh = k.slice_cols(h * dh, dh)?;
            let vh = v.slice_cols(h * dh, dh)?;
            let mut scores = qh.matmul_nt(&kh)?.scale(1.0 / (dh as f32).sqrt());
            if let Some(m) = &mask {
                scores = scores.add(m)?;
            }
            let attn = scores.softmax_rows()?;
            head_outs.push(attn.matmul(&vh)?);
        }
        let joined = Tensor::concat_cols(&head_outs)?;
        self.wo.forward(&joined)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.wq.params(&format!("{prefix}.q"), out);
        self.wk.params(&format!("{prefix}.k"), out);
        self.wv.params(&format!("{prefix}.v"), out);
        self.wo.params(&format!("{prefix}.o"), out);
    }
}

/// Low-rank additive adapter: x -> (x·A)·B scaled by alpha/r. B starts at
/// zero so a fresh adapter is a no-op.
pub struct LoraAdapter {
    pub a: Tensor, // d x r
    pub b: Tensor, // r x d
    pub scale: f32,
}

impl LoraAdapter {
    pub fn new(d: usize, rank: usize, alpha: f32, rng: &mut Stream) -> LoraAdapter {
        let a: Vec<f32> = (0..d * rank).map(|_| rng.normal() * 0.02).collect();
        LoraAdapter {
            a: Tensor::param(a, &[d, rank]).unwrap(),
            b: Tensor::param(vec![0.0; rank * d], &[rank, d]).unwrap(),
            scale: alpha / rank as f32,
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.a)?.matmul(&self.b)?.scale(self.scale))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.a"), self.a.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// Additive causal mask: 0 on/below the diagonal, a large negative
/// constant above it. Constant tensor; no gradient flows into it.
pub fn causal_mask(t: usize) -> Tensor {
    let mut m = vec![0.0f32; t * t];
    for i in 0..t {
        for j in (i + 1)..t {
            m[i * t + j] = MASK_NEG;
        }
    }
    Tensor::from_vec(m, &[t, t]).unwrap()
}

/// Pre-norm transformer block: x + attn(ln1(x)), then x + ffn(ln2(x))
/// with a 4x gelu feed-forward.
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl Block {
    pub fn new(d: usize, heads: usize, causal: bool, rng: &mut Stream) -> Block {
        Block {
            ln1: LayerNorm::new(d),
            attn: MultiHeadAttention::new(d, heads, causal, rng),
            ln2: LayerNorm::new(d),
            ff1: Linear::new(d, 4 * d, rng),
            ff2: Linear::new(4 * d, d, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_lora(x, None, None)
    }

    pub fn forward_lora(
        &self,
        x: &Tensor,
        q_adapter: Option<&LoraAdapter>,
        v_adapter: Option<&LoraAdapter>,
    ) -> Result<Tensor> {
        let a = self.attn.forward_lora(&self.ln1.forward(x)?, q_adapter, v_adapter)?;
        let x = x.add(&a)?;
        let f = self.ff2.forward(&self.ff1.forward(&self.ln2.forward(&x)?)?.gelu())?;
        x.add(&f)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ln1.params(&format!("{prefix}.ln1"), out);
        self.attn.params(&format!("{prefix}.attn"), out);
        self.ln2.params(&format!("{prefix}.ln2"), out);
        self.ff1.params(&format!("{prefix}.ff1"), out);
        self.ff2.params(&format!("{prefix}.ff2"), out);
    }
}

/// Classic sin/cos position table, rows 0..t, width d, scaled by 0.3 so
/// a position row (raw norm sqrt(d/2)) does not drown the token
/// embeddings it is added to -- content-based attention matching (the
/// copy mechanism) needs token identity to survive in the residual
/// stream.
pub fn sinusoidal_positions(t: usize, d: usize) -> Tensor {
    const SCALE: f64 = 0.3;
    let mut table = vec![0.0f32; t * d];
    for pos in 0..t {
        for i in 0..d / 2 {
            let rate = (pos as f64) / 10000f64.powf(2.0 * i as f64 / d as f64);
            table[pos * d + 2 * i] = (SCALE * rate.sin()) as f32;
            table[pos * d + 2 * i + 1] = (SCALE * rate.cos()) as f32;
        }
    }
    Tensor::from_vec(table, &[t, d]).unwrap()
}

/// Copy values from `entries` into same-named parameters, by bit pattern.
pub fn load_named(params: &[(String, Tensor)], entries: &[(String, Tensor)]) -> Result<()> {
    use crate::error::Error;
    for (name, p) in params {
        let src = entries
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::WeightFormat(format!("missing parameter '{name}'")))?;
        if src.1.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "parameter '{name}': stored {:?} vs expected {:?}",
                src.1.shape(),
                p.shape()
            )));
        }
        p.data_mut().copy_from_slice(&src.1.data());
    }
    Ok(())
}
