//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Deliberately minimal: exactly the layers and losses the embedding
//! network needs. A [`Tape`] records operations in execution order;
//! [`Tape::backward`] walks the records once in reverse. Parameters enter
//! the tape as leaves tagged with a slot index so their gradients can be
//! collected after the pass.

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

fn shape_err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg.into())
}

/// Dense tensor: a shape and a flat row-major data array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(format!(
                "data length {} vs shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Smoothing offset for the l_1/2 sparsity loss; keeps its gradient
/// bounded at zero.
pub const SPARSITY_DELTA: f64 = 1e-8;

enum Op {
    Leaf { param: Option<usize> },
    Conv2d,
    Dense,
    Relu,
    Softmax,
    Reshape,
    LossDistance { target: f64 },
    LossKl,
    LossSparsity,
    Add,
    Scale { factor: f64 },
}

struct Node {
    op: Op,
    inputs: Vec<Var>,
    value: Arc<Tensor>,
}

/// Topologically ordered record of operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<Var>, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value: Arc::new(value),
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient slot of its own.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, vec![], value)
    }

    /// Leaf tied to parameter slot `slot`; shares the caller's storage.
    pub fn param(&mut self, slot: usize, value: Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf { param: Some(slot) },
            inputs: vec![],
            value,
        });
        Var(self.nodes.len() - 1)
    }

    /// Same-padded stride-1 cross-correlation.
    /// `input` is `[C_in, H, W]`, `kernels` is `[C_out, C_in, k, k]` with k
    /// odd, `bias` is `[C_out]`; output is `[C_out, H, W]`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ish, ksh, bsh) = (
            self.value(input).shape.clone(),
            self.value(kernels).shape.clone(),
            self.value(bias).shape.clone(),
        );
        if ish.len() != 3 || ksh.len() != 4 || bsh.len() != 1 {
            return Err(shape_err(format!(
                "conv2d ranks: input {ish:?}, kernels {ksh:?}, bias {bsh:?}"
            )));
        }
        let (c_in, h, w) = (ish[0], ish[1], ish[2]);
        let (c_out, kc, kh, kw) = (ksh[0], ksh[1], ksh[2], ksh[3]);
        if kc != c_in || kh != kw || kh % 2 == 0 || bsh[0] != c_out {
            return Err(shape_err(format!(
                "conv2d: input {ish:?} incompatible with kernels {ksh:?} / bias {bsh:?}"
            )));
        }
        let out = conv2d_forward(
            &self.value(input).data,
            &self.value(kernels).data,
            &self.value(bias).data,
            c_in,
            h,
            w,
            c_out,
            kh,
        );
        Ok(self.push(
            Op::Conv2d,
            vec![input, kernels, bias],
            Tensor {
                shape: vec![c_out, h, w],
                data: out,
            },
        ))
    }

    /// Affine map: `weight` is `[m, n]`, `input` is `[n]`, `bias` is `[m]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, AutodiffError> {
        let n = self.value(input).numel();
        let wsh = self.value(weight).shape.clone();
        let m = self.value(bias).numel();
        if wsh.len() != 2 || wsh[1] != n || wsh[0] != m {
            return Err(shape_err(format!(
                "dense: weight {wsh:?} vs input [{n}] and bias [{m}]"
            )));
        }
        let out = dense_forward(
            &self.value(input).data,
            &self.value(weight).data,
            &self.value(bias).data,
        );
        Ok(self.push(
            Op::Dense,
            vec![input, weight, bias],
            Tensor {
                shape: vec![m],
                data: out,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let out = Tensor {
            shape: v.shape.clone(),
            data: relu_forward(&v.data),
        };
        self.push(Op::Relu, vec![input], out)
    }

    /// Softmax over the full flattened tensor; the output is a histogram.
    pub fn softmax(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let out = Tensor {
            shape: v.shape.clone(),
            data: softmax_forward(&v.data),
        };
        self.push(Op::Softmax, vec![input], out)
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let v = self.value(input);
        let numel: usize = shape.iter().product();
        if numel != v.numel() {
            return Err(shape_err(format!(
                "reshape {:?} -> {shape:?} changes element count",
                v.shape
            )));
        }
        let out = Tensor {
            shape,
            data: v.data.clone(),
        };
        Ok(self.push(Op::Reshape, vec![input], out))
    }

    /// `(||e1 - e2||^2 - y)^2` — the supervised distance-fitting term.
    pub fn loss_distance(&mut self, e1: Var, e2: Var, y: f64) -> Result<Var, AutodiffError> {
        if self.value(e1).numel() != self.value(e2).numel() {
            return Err(shape_err("loss_distance: embedding dims differ"));
        }
        let ss: f64 = self
            .value(e1)
            .data
            .iter()
            .zip(&self.value(e2).data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let l = (ss - y) * (ss - y);
        Ok(self.push(
            Op::LossDistance { target: y },
            vec![e1, e2],
            Tensor::scalar(l),
        ))
    }

    /// `KL(target || recon)` with the `0 log 0` convention. `target` is
    /// treated as data (no gradient flows into it).
    pub fn loss_kl(&mut self, target: Var, recon: Var) -> Result<Var, AutodiffError> {
        if self.value(target).numel() != self.value(recon).numel() {
            return Err(shape_err("loss_kl: dims differ"));
        }
        let mut l = 0.0;
        for (&t, &r) in self.value(target).data.iter().zip(&self.value(recon).data) {
            if t > 0.0 {
                l += t * (t.ln() - r.ln());
            }
        }
        Ok(self.push(Op::LossKl, vec![target, recon], Tensor::scalar(l)))
    }

    /// Smoothed l_1/2 pseudo-norm: `sum_k sqrt(x_k + delta)`.
    pub fn loss_sparsity(&mut self, recon: Var) -> Var {
        let l: f64 = self
            .value(recon)
            .data
            .iter()
            .map(|&x| (x + SPARSITY_DELTA).sqrt())
            .sum();
        self.push(Op::LossSparsity, vec![recon], Tensor::scalar(l))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.value(a).shape != self.value(b).shape {
            return Err(shape_err("add: shapes differ"));
        }
        let out = Tensor {
            shape: self.value(a).shape.clone(),
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(x, y)| x + y)
                .collect(),
        };
        Ok(self.push(Op::Add, vec![a, b], out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = Tensor {
            shape: self.value(a).shape.clone(),
            data: self.value(a).data.iter().map(|&x| x * factor).collect(),
        };
        self.push(Op::Scale { factor }, vec![a], out)
    }

    /// Reverse pass from scalar `root`. Returns gradients for parameter
    /// slots `0..n_params`; slots whose leaves were never touched get
    /// `None`.
    pub fn backward(&self, root: Var, n_params: usize) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(root).numel(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let g_out = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            match node.op {
                Op::Leaf { param } => {
                    if param.is_some() {
                        grads[id] = Some(g_out); // keep for collection
                    }
                }
                Op::Conv2d => {
                    let [input, kernels, bias] = [node.inputs[0], node.inputs[1], node.inputs[2]];
                    let ish = &self.value(input).shape;
                    let ksh = &self.value(kernels).shape;
                    let (c_in, h, w) = (ish[0], ish[1], ish[2]);
                    let (c_out, k) = (ksh[0], ksh[2]);
                    let (gi, gk, gb) = conv2d_backward(
                        &g_out,
                        &self.value(input).data,
                        &self.value(kernels).data,
                        c_in,
                        h,
                        w,
                        c_out,
                        k,
                    );
                    accumulate(&mut grads, input, gi);
                    accumulate(&mut grads, kernels, gk);
                    accumulate(&mut grads, bias, gb);
                }
                Op::Dense => {
                    let [input, weight, bias] = [node.inputs[0], node.inputs[1], node.inputs[2]];
                    let x = &self.value(input).data;
                    let wdat = &self.value(weight).data;
                    let n = x.len();
                    let m = g_out.len();
                    let mut gx = vec![0.0; n];
                    let mut gw = vec![0.0; m * n];
                    for i in 0..m {
                        let go = g_out[i];
                        let row = &wdat[i * n..(i + 1) * n];
                        let grow = &mut gw[i * n..(i + 1) * n];
                        for j in 0..n {
                            gx[j] += go * row[j];
                            grow[j] = go * x[j];
                        }
                    }
                    accumulate(&mut grads, input, gx);
                    accumulate(&mut grads, weight, gw);
                    accumulate(&mut grads, bias, g_out);
                }
                Op::Relu => {
                    let input = node.inputs[0];
                    // Subgradient at 0 is 0.
                    let gx: Vec<f64> = self
                        .value(input)
                        .data
                        .iter()
                        .zip(&g_out)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, input, gx);
                }
                Op::Softmax => {
                    let input = node.inputs[0];
                    let s = &node.value.data;
                    let dot: f64 = s.iter().zip(&g_out).map(|(a, b)| a * b).sum();
                    let gx: Vec<f64> = s.iter().zip(&g_out).map(|(&si, &g)| si * (g - dot)).collect();
                    accumulate(&mut grads, input, gx);
                }
                Op::Reshape => {
                    accumulate(&mut grads, node.inputs[0], g_out);
                }
                Op::LossDistance { target } => {
                    let [e1, e2] = [node.inputs[0], node.inputs[1]];
                    let a = &self.value(e1).data;
                    let b = &self.value(e2).data;
                    let ss: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                    let scale = 4.0 * (ss - target) * g_out[0];
                    let g1: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| scale * (x - y)).collect();
                    let g2: Vec<f64> = g1.iter().map(|&g| -g).collect();
                    accumulate(&mut grads, e1, g1);
                    accumulate(&mut grads, e2, g2);
                }
                Op::LossKl => {
                    let [target, recon] = [node.inputs[0], node.inputs[1]];
                    let t = &self.value(target).data;
                    let r = &self.value(recon).data;
                    let gr: Vec<f64> = t
                        .iter()
                        .zip(r.iter())
                        .map(|(&tv, &rv)| if tv > 0.0 { -g_out[0] * tv / rv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, recon, gr);
                }
                Op::LossSparsity => {
                    let recon = node.inputs[0];
                    let gr: Vec<f64> = self
                        .value(recon)
                        .data
                        .iter()
                        .map(|&x| g_out[0] * 0.5 / (x + SPARSITY_DELTA).sqrt())
                        .collect();
                    accumulate(&mut grads, recon, gr);
                }
                Op::Add => {
                    accumulate(&mut grads, node.inputs[0], g_out.clone());
                    accumulate(&mut grads, node.inputs[1], g_out);
                }
                Op::Scale { factor } => {
                    let gx: Vec<f64> = g_out.iter().map(|&g| g * factor).collect();
                    accumulate(&mut grads, node.inputs[0], gx);
                }
            }
        }
        let mut out: Vec<Option<Tensor>> = (0..n_params).map(|_| None).collect();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(slot) } = node.op {
                if let Some(g) = grads[id].take() {
                    let t = Tensor {
                        shape: node.value.shape.clone(),
                        data: g,
                    };
                    match &mut out[slot] {
                        Some(acc) => {
                            for (a, b) in acc.data.iter_mut().zip(&t.data) {
                                *a += b;
                            }
                        }
                        None => out[slot] = Some(t),
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, g: Vec<f64>) {
    match &mut grads[var.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn dense_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = bias.len();
    let mut out = vec![0.0; m];
    for i in 0..m {
        let row = &weight[i * n..(i + 1) * n];
        let mut acc = bias[i];
        for (wv, xv) in row.iter().zip(x.iter()) {
            acc += wv * xv;
        }
        out[i] = acc;
    }
    out
}

pub(crate) fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub(crate) fn softmax_forward(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward(
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let pad = k / 2;
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        let ochan = &mut out[o * h * w..(o + 1) * h * w];
        ochan.fill(bias[o]);
        for c in 0..c_in {
            let ichan = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wgt = kernels[((o * c_in + c) * k + ky) * k + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    let dy = ky as isize - pad as isize;
                    let dx = kx as isize - pad as isize;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize).min(h as isize - dy).max(0) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize).min(w as isize - dx).max(0) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut ochan[y * w + x0..y * w + x1];
                        let irow = &ichan[sy * w + ((x0 as isize + dx) as usize)
                            ..sy * w + ((x1 as isize + dx) as usize)];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wgt * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward(
    g_out: &[f64],
    input: &[f64],
    kernels: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = k / 2;
    let mut gi = vec![0.0; c_in * h * w];
    let mut gk = vec![0.0; c_out * c_in * k * k];
    let mut gb = vec![0.0; c_out];
    for o in 0..c_out {
        let gchan = &g_out[o * h * w..(o + 1) * h * w];
        gb[o] = gchan.iter().sum();
        for c in 0..c_in {
            let ichan = &input[c * h * w..(c + 1) * h * w];
            let gichan = &mut gi[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let dy = ky as isize - pad as isize;
                    let dx = kx as isize - pad as isize;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize).min(h as isize - dy).max(0) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize).min(w as isize - dx).max(0) as usize;
                    let wgt = kernels[((o * c_in + c) * k + ky) * k + kx];
                    let mut wg = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let grow = &gchan[y * w + x0..y * w + x1];
                        let ioff = sy * w + ((x0 as isize + dx) as usize);
                        let irow = &ichan[ioff..ioff + (x1 - x0)];
                        let girow = &mut gichan[ioff..ioff + (x1 - x0)];
                        for ((gv, iv), gi_v) in grow.iter().zip(irow).zip(girow.iter_mut()) {
                            wg += gv * iv;
                            *gi_v += wgt * gv;
                        }
                    }
                    gk[((o * c_in + c) * k + ky) * k + kx] = wg;
                }
            }
        }
    }
    (gi, gk, gb)
}

/// Adam optimizer state over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(params: &[Arc<Tensor>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    /// One Adam update. `grads[i] = None` leaves parameter `i` untouched.
    pub fn step(
        &mut self,
        params: &mut [Arc<Tensor>],
        grads: &[Option<Tensor>],
        cfg: &AdamConfig,
    ) -> Result<(), AutodiffError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(shape_err("adam: parameter/gradient count mismatch"));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            if g.numel() != params[i].numel() {
                return Err(shape_err(format!("adam: grad {i} shape mismatch")));
            }
            let p = Arc::make_mut(&mut params[i]);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.data.len() {
                let gj = g.data[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.data[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
