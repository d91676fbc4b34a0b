//! Dense f32 tensors with dynamically recorded reverse-mode autodiff.
//!
//! Tensors are cheap `Rc` handles. An operation whose inputs include at
//! least one grad-requiring tensor records a node (parents + pullback);
//! otherwise the result is a plain leaf and no graph is built, which is
//! what makes frozen-backbone inference allocation-free on the tape side.
//! The recorded graph lives as long as the output tensor and is released
//! when it is dropped. Calling [`Tensor::backward`] repeatedly accumulates
//! into existing grad buffers; callers reset with `zero_grad`.

pub mod adam;
pub mod kernels;
pub mod svd;

pub use adam::Adam;
pub use svd::{svd, SvdResult};

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackFn = Box<dyn Fn(&[f32], &Inner)>;

struct Node {
    parents: Vec<Tensor>,
    back: BackFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f32>>>,
    node: RefCell<Option<Node>>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn new_leaf(data: Vec<f32>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                requires_grad: Cell::new(requires_grad),
                grad: RefCell::new(None),
                node: RefCell::new(None),
            }),
        }
    }

    fn new_result(data: Vec<f32>, shape: Vec<usize>, parents: Vec<Tensor>, back: BackFn) -> Tensor {
        let track = parents.iter().any(|p| p.requires_grad());
        let t = Tensor::new_leaf(data, shape, track);
        if track {
            *t.inner.node.borrow_mut() = Some(Node { parents, back });
        }
        t
    }

    pub fn from_vec(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::new_leaf(data, shape.to_vec(), false))
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape)?;
        t.inner.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new_leaf(vec![0.0; numel_of(shape)], shape.to_vec(), false)
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::new_leaf(vec![v], vec![], false)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Promote to / demote from trainable. Demoting drops any grad buffer.
    pub fn set_requires_grad(&self, flag: bool) {
        self.inner.requires_grad.set(flag);
        if !flag {
            *self.inner.grad.borrow_mut() = None;
        }
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> std::cell::RefMut<'_, Vec<f32>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Accumulate an externally computed gradient (respects requires_grad).
    pub fn add_grad(&self, g: &[f32]) {
        self.accum_grad(g);
    }

    /// Replace the gradient buffer wholesale (used for gradient masking).
    pub fn set_grad(&self, g: Vec<f32>) {
        debug_assert_eq!(g.len(), self.numel());
        *self.inner.grad.borrow_mut() = Some(g);
    }

    fn accum_grad(&self, g: &[f32]) {
        if !self.requires_grad() {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    fn rows(&self) -> usize {
        self.inner.shape[0]
    }

    fn cols(&self) -> usize {
        self.inner.shape[1]
    }

    fn check_2d(&self, what: &str) -> Result<()> {
        if self.inner.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "{what} requires a 2-d tensor, got shape {:?}",
                self.inner.shape
            )));
        }
        Ok(())
    }

    // ── arithmetic ops ──────────────────────────────────────────────────

    /// C[m,n] = self[m,k] · b[k,n].
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        self.check_2d("matmul")?;
        b.check_2d("matmul")?;
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (b.rows(), b.cols());
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} vs {:?}",
                self.shape(),
                b.shape()
            )));
        }
        let out = kernels::matmul_nn(&self.data(), &b.data(), m, k, n);
        let a_p = self.clone();
        let b_p = b.clone();
        Ok(Tensor::new_result(
            out,
            vec![m, n],
            vec![self.clone(), b.clone()],
            Box::new(move |g, _| {
                if a_p.requires_grad() {
                    // dA = dC · Bᵀ; B rows are length n so matmul_nt contracts over n
                    let ga = kernels::matmul_nt(g, &b_p.data(), m, n, k);
                    a_p.accum_grad(&ga);
                }
                if b_p.requires_grad() {
                    let gb = kernels::matmul_tn(&a_p.data(), g, m, k, n);
                    b_p.accum_grad(&gb);
                }
            }),
        ))
    }

    /// C[m,n] = self[m,k] · b[n,k]ᵀ.
    pub fn matmul_nt(&self, b: &Tensor) -> Result<Tensor> {
        self.check_2d("matmul_nt")?;
        b.check_2d("matmul_nt")?;
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (b.rows(), b.cols());
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul_nt inner dimensions differ: {:?} vs {:?}",
                self.shape(),
                b.shape()
            )));
        }
        let out = kernels::matmul_nt(&self.data(), &b.data(), m, k, n);
        let a_p = self.clone();
        let b_p = b.clone();
        Ok(Tensor::new_result(
            out,
            vec![m, n],
            vec![self.clone(), b.clone()],
            Box::new(move |g, _| {
                if a_p.requires_grad() {
                    let ga = kernels::matmul_nn(g, &b_p.data(), m, n, k);
                    a_p.accum_grad(&ga);
                }
                if b_p.requires_grad() {
                    let gb = kernels::matmul_tn(g, &a_p.data(), m, n, k);
                    b_p.accum_grad(&gb);
                }
            }),
        ))
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, b: &Tensor) -> Result<Tensor> {
        if self.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.shape(),
                b.shape()
            )));
        }
        let out: Vec<f32> = self.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
        let a_p = self.clone();
        let b_p = b.clone();
        Ok(Tensor::new_result(
            out,
            self.shape().to_vec(),
            vec![self.clone(), b.clone()],
            Box::new(move |g, _| {
                a_p.accum_grad(g);
                b_p.accum_grad(g);
            }),
        ))
    }

    /// Add a length-n bias row to every row of an m x n matrix.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        self.check_2d("add_bias")?;
        let (m, n) = (self.rows(), self.cols());
        if bias.shape() != [n] {
            return Err(Error::Shape(format!(
                "add_bias: bias shape {:?} does not match row width {n}",
                bias.shape()
            )));
        }
        let bd = bias.to_vec();
        let mut out = self.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bd[j];
            }
        }
        let a_p = self.clone();
        let b_p = bias.clone();
        Ok(Tensor::new_result(
            out,
            vec![m, n],
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _| {
                a_p.accum_grad(g);
                if b_p.requires_grad() {
                    let mut gb = vec![0.0f32; n];
                    for j in 0..n {
                        let mut s = 0.0f64;
                        for i in 0..m {
                            s += g[i * n + j] as f64;
                        }
                        gb[j] = s as f32;
                    }
                    b_p.accum_grad(&gb);
                }
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, b: &Tensor) -> Result<Tensor> {
        if self.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.shape(),
                b.shape()
            )));
        }
        let out: Vec<f32> = self.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
        let a_p = self.clone();
        let b_p = b.clone();
        Ok(Tensor::new_result(
            out,
            self.shape().to_vec(),
            vec![self.clone(), b.clone()],
            Box::new(move |g, _| {
                if a_p.requires_grad() {
                    let ga: Vec<f32> = g.iter().zip(b_p.data().iter()).map(|(x, y)| x * y).collect();
                    a_p.accum_grad(&ga);
                }
                if b_p.requires_grad() {
                    let gb: Vec<f32> = g.iter().zip(a_p.data().iter()).map(|(x, y)| x * y).collect();
                    b_p.accum_grad(&gb);
                }
            }),
        ))
    }

    pub fn scale(&self, c: f32) -> Tensor {
        let out: Vec<f32> = self.data().iter().map(|x| x * c).collect();
        let a_p = self.clone();
        Tensor::new_result(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let ga: Vec<f32> = g.iter().map(|x| x * c).collect();
                a_p.accum_grad(&ga);
            }),
        )
    }

    pub fn gelu(&self) -> Tensor {
        let out: Vec<f32> = self.data().iter().map(|&x| kernels::gelu(x)).collect();
        let a_p = self.clone();
        Tensor::new_result(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let xd = a_p.data();
                let ga: Vec<f32> = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(gy, &x)| gy * kernels::gelu_grad(x))
                    .collect();
                drop(xd);
                a_p.accum_grad(&ga);
            }),
        )
    }

    /// Row-wise softmax of an m x n matrix.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.check_2d("softmax_rows")?;
        let (m, n) = (self.rows(), self.cols());
        let mut out = self.to_vec();
        for i in 0..m {
            kernels::softmax_row(&mut out[i * n..(i + 1) * n]);
        }
        let a_p = self.clone();
        Ok(Tensor::new_result(
            out,
            vec![m, n],
            vec![self.clone()],
            Box::new(move |g, me| {
                let y = me.data.borrow();
                let mut ga = vec![0.0f32; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut s = 0.0f64;
                    for j in 0..n {
                        s += (gr[j] * yr[j]) as f64;
                    }
                    let s = s as f32;
                    let out_row = &mut ga[i * n..(i + 1) * n];
                    for j in 0..n {
                        out_row[j] = yr[j] * (gr[j] - s);
                    }
                }
                drop(y);
                a_p.accum_grad(&ga);
            }),
        ))
    }

    /// Row-wise layer norm with learned gain and offset.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
        self.check_2d("layer_norm")?;
        let (m, n) = (self.rows(), self.cols());
        if gamma.shape() != [n] || beta.shape() != [n] {
            return Err(Error::Shape(format!(
                "layer_norm: gamma/beta shapes {:?}/{:?} do not match width {n}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let mut out = vec![0.0f32; m * n];
        {
            let x = self.data();
            let gd = gamma.data();
            let bd = beta.data();
            for i in 0..m {
                kernels::layer_norm_row(
                    &x[i * n..(i + 1) * n],
                    &gd,
                    &bd,
                    eps,
                    &mut out[i * n..(i + 1) * n],
                );
            }
        }
        let x_p = self.clone();
        let g_p = gamma.clone();
        let b_p = beta.clone();
        Ok(Tensor::new_result(
            out,
            vec![m, n],
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _| {
                let x = x_p.data();
                let gamma_d = g_p.data();
                let mut gx = vec![0.0f32; m * n];
                let mut ggamma = vec![0.0f64; n];
                let mut gbeta = vec![0.0f64; n];
                for i in 0..m {
                    let xr = &x[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut mean = 0.0f64;
                    for &v in xr {
                        mean += v as f64;
                    }
                    mean /= n as f64;
                    let mut var = 0.0f64;
                    for &v in xr {
                        let d = v as f64 - mean;
                        var += d * d;
                    }
                    var /= n as f64;
                    let inv = 1.0 / (var + eps as f64).sqrt();
                    // dyhat = g * gamma; dx via the two-mean identity
                    let mut mean_dy = 0.0f64;
                    let mut mean_dyx = 0.0f64;
                    let mut xhat = vec![0.0f64; n];
                    for j in 0..n {
                        xhat[j] = (xr[j] as f64 - mean) * inv;
                        let dy = gr[j] as f64 * gamma_d[j] as f64;
                        mean_dy += dy;
                        mean_dyx += dy * xhat[j];
                        ggamma[j] += gr[j] as f64 * xhat[j];
                        gbeta[j] += gr[j] as f64;
                    }
                    mean_dy /= n as f64;
                    mean_dyx /= n as f64;
                    let gx_row = &mut gx[i * n..(i + 1) * n];
                    for j in 0..n {
                        let dy = gr[j] as f64 * gamma_d[j] as f64;
                        gx_row[j] = (inv * (dy - mean_dy - xhat[j] * mean_dyx)) as f32;
                    }
                }
                drop(x);
                drop(gamma_d);
                x_p.accum_grad(&gx);
                if g_p.requires_grad() {
                    let v: Vec<f32> = ggamma.iter().map(|&x| x as f32).collect();
                    g_p.accum_grad(&v);
                }
                if b_p.requires_grad() {
                    let v: Vec<f32> = gbeta.iter().map(|&x| x as f32).collect();
                    b_p.accum_grad(&v);
                }
            }),
        ))
    }

    /// Row lookup: self is a (v x d) table, result is (ids.len() x d).
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        self.check_2d("gather_rows")?;
        let (v, d) = (self.rows(), self.cols());
        for &id in ids {
            if id >= v {
                return Err(Error::Vocabulary(format!("row id {id} out of range {v}")));
            }
        }
        let x = self.data();
        let mut out = vec![0.0f32; ids.len() * d];
        for (t, &id) in ids.iter().enumerate() {
            out[t * d..(t + 1) * d].copy_from_slice(&x[id * d..(id + 1) * d]);
        }
        drop(x);
        let table = self.clone();
        let ids_own = ids.to_vec();
        Ok(Tensor::new_result(
            out,
            vec![ids_own.len(), d],
            vec![self.clone()],
            Box::new(move |g, _| {
                if table.requires_grad() {
                    let mut gt = vec![0.0f32; v * d];
                    for (t, &id) in ids_own.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[t * d + j];
                        }
                    }
                    table.accum_grad(&gt);
                }
            }),
        ))
    }

    /// Vertically stack matrices with identical column counts.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows of zero tensors".into()));
        }
        let n = parts[0].cols();
        let mut total = 0;
        for p in parts {
            p.check_2d("concat_rows")?;
            if p.cols() != n {
                return Err(Error::Shape(format!(
                    "concat_rows column mismatch: {} vs {n}",
                    p.cols()
                )));
            }
            total += p.rows();
        }
        let mut out = Vec::with_capacity(total * n);
        for p in parts {
            out.extend_from_slice(&p.data());
        }
        let owned: Vec<Tensor> = parts.to_vec();
        let sizes: Vec<usize> = parts.iter().map(|p| p.rows() * n).collect();
        Ok(Tensor::new_result(
            out,
            vec![total, n],
            owned.clone(),
            Box::new(move |g, _| {
                let mut off = 0;
                for (p, &sz) in owned.iter().zip(&sizes) {
                    p.accum_grad(&g[off..off + sz]);
                    off += sz;
                }
            }),
        ))
    }

    /// Take a contiguous column range [start, start+len).
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        self.check_2d("slice_cols")?;
        let (m, n) = (self.rows(), self.cols());
        if start + len > n {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) exceeds width {n}",
                start + len
            )));
        }
        let x = self.data();
        let mut out = vec![0.0f32; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&x[i * n + start..i * n + start + len]);
        }
        drop(x);
        let a_p = self.clone();
        Ok(Tensor::new_result(
            out,
            vec![m, len],
            vec![self.clone()],
            Box::new(move |g, _| {
                if a_p.requires_grad() {
                    let mut ga = vec![0.0f32; m * n];
                    for i in 0..m {
                        ga[i * n + start..i * n + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    a_p.accum_grad(&ga);
                }
            }),
        ))
    }

    /// Horizontally stack matrices with identical row counts.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of zero tensors".into()));
        }
        let m = parts[0].rows();
        let mut total = 0;
        for p in parts {
            p.check_2d("concat_cols")?;
            if p.rows() != m {
                return Err(Error::Shape(format!(
                    "concat_cols row mismatch: {} vs {m}",
                    p.rows()
                )));
            }
            total += p.cols();
        }
        let mut out = vec![0.0f32; m * total];
        let mut off = 0;
        for p in parts {
            let w = p.cols();
            let pd = p.data();
            for i in 0..m {
                out[i * total + off..i * total + off + w]
                    .copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let owned: Vec<Tensor> = parts.to_vec();
        Ok(Tensor::new_result(
            out,
            vec![m, total],
            owned.clone(),
            Box::new(move |g, _| {
                let mut off = 0;
                for p in &owned {
                    let w = p.cols();
                    if p.requires_grad() {
                        let mut gp = vec![0.0f32; m * w];
                        for i in 0..m {
                            gp[i * w..(i + 1) * w]
                                .copy_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        p.accum_grad(&gp);
                    }
                    off += w;
                }
            }),
        ))
    }

    /// Sum of all elements, f64 accumulation.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().map(|&x| x as f64).sum();
        let a_p = self.clone();
        let n = self.numel();
        Tensor::new_result(
            vec![s as f32],
            vec![],
            vec![self.clone()],
            Box::new(move |g, _| {
                let ga = vec![g[0]; n];
                a_p.accum_grad(&ga);
            }),
        )
    }

    /// Mean negative log-likelihood over masked-in positions of a (T x V)
    /// logit matrix.
    pub fn cross_entropy(&self, targets: &[usize], mask: &[bool]) -> Result<Tensor> {
        self.check_2d("cross_entropy")?;
        let (t_len, v) = (self.rows(), self.cols());
        if targets.len() != t_len || mask.len() != t_len {
            return Err(Error::Shape(format!(
                "cross_entropy: {t_len} logit rows vs {} targets / {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::DegenerateMask);
        }
        for t in 0..t_len {
            if mask[t] && targets[t] >= v {
                return Err(Error::Vocabulary(format!(
                    "target id {} at position {t} exceeds vocabulary size {v}",
                    targets[t]
                )));
            }
        }
        let x = self.data();
        let mut loss = 0.0f64;
        for t in 0..t_len {
            if !mask[t] {
                continue;
            }
            let row = &x[t * v..(t + 1) * v];
            let mut mx = f32::NEG_INFINITY;
            for &l in row {
                if l > mx {
                    mx = l;
                }
            }
            let mut denom = 0.0f64;
            for &l in row {
                denom += ((l - mx) as f64).exp();
            }
            loss += denom.ln() - (row[targets[t]] - mx) as f64;
        }
        loss /= count as f64;
        drop(x);
        let logits = self.clone();
        let targets_own = targets.to_vec();
        let mask_own = mask.to_vec();
        Ok(Tensor::new_result(
            vec![loss as f32],
            vec![],
            vec![self.clone()],
            Box::new(move |g, _| {
                if !logits.requires_grad() {
                    return;
                }
                let x = logits.data();
                let scale = g[0] / count as f32;
                let mut gx = vec![0.0f32; t_len * v];
                for t in 0..t_len {
                    if !mask_own[t] {
                        continue;
                    }
                    let row = &x[t * v..(t + 1) * v];
                    let mut p: Vec<f32> = row.to_vec();
                    kernels::softmax_row(&mut p);
                    let gr = &mut gx[t * v..(t + 1) * v];
                    for j in 0..v {
                        gr[j] = p[j] * scale;
                    }
                    gr[targets_own[t]] -= scale;
                }
                drop(x);
                logits.accum_grad(&gx);
            }),
        ))
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// grad-requiring tensor reachable from the loss; grads accumulate
    /// across calls until `zero_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Iterative post-order DFS for a topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.inner.node.borrow().as_ref() {
                for p in &node.parents {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        self.accum_grad(&[1.0]);
        for t in order.iter().rev() {
            let g = match t.inner.grad.borrow().as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            let node = t.inner.node.borrow();
            if let Some(node) = node.as_ref() {
                (node.back)(&g, &t.inner);
            }
        }
        Ok(())
    }
}
