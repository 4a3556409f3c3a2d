//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! A `Tape` records every op executed during one forward pass; `backward`
//! replays the record in exact reverse order and fills per-node gradient
//! buffers. Gradients for model parameters are read back off the tape and
//! accumulated into the owning `Tensor`s by the caller, which is what lets
//! one training step run several sub-network widths and sum their gradients
//! before a single optimizer update.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::fmath;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires: bool,
}

/// Per-channel batch statistics computed by a training-mode batch norm op.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

enum Op {
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Linear { x: Var, w: Var, b: Var, n: usize, ci: usize, co: usize },
    Relu { x: Var, y: Var },
    Add { a: Var, b: Var, y: Var },
    Mul { a: Var, b: Var, y: Var },
    GlobalAvgPool { x: Var, y: Var },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, y: Var, mean: Vec<f32>, inv_std: Vec<f32> },
    ChannelAffine { x: Var, y: Var, scale: Vec<f32> },
    SoftmaxCrossEntropy { logits: Var, y: Var, labels: Vec<usize>, probs: Vec<f32> },
}

pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<(Op, Var)>,
    grads: Vec<Option<Vec<f32>>>,
    done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), ops: Vec::new(), grads: Vec::new(), done: false }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, requires: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, requires });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf copied from a tensor, inheriting `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), t.requires_grad)
    }

    pub fn leaf_from(&mut self, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Var {
        self.push(shape, data, requires_grad)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Gradient of the last `backward` w.r.t. `v` (zeros if it never received one).
    pub fn grad(&self, v: Var) -> Vec<f32> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].data.len()],
        }
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::resolve(self.shape(x), self.shape(w), stride, pad, groups)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.co] {
                return Err(Error::ShapeMismatch {
                    expected: format!("bias [{:?}]", geom.co),
                    got: format!("{:?}", self.shape(b)),
                });
            }
        }
        let y = conv::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        );
        let req = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        let out = self.push(vec![geom.n, geom.co, geom.oh, geom.ow], y, req);
        self.ops.push((Op::Conv2d { x, w, b, geom }, out));
        Ok(out)
    }

    /// Depthwise convolution: one filter per channel, `groups == channels`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let c = *self.shape(x).get(1).unwrap_or(&0);
        self.conv2d(x, w, None, stride, pad, c)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(Error::ShapeMismatch {
                expected: format!("x[N,Ci], w[Co,Ci], b[Co]"),
                got: format!("x{xs:?} w{ws:?} b{:?}", self.shape(b)),
            });
        }
        let (n, ci, co) = (xs[0], xs[1], ws[0]);
        let y = conv::linear_forward(self.value(x), self.value(w), self.value(b), n, ci, co);
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        let out = self.push(vec![n, co], y, req);
        self.ops.push((Op::Linear { x, w, b, n, ci, co }, out));
        Ok(out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y: Vec<f32> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let req = self.requires(x);
        let shape = self.shape(x).to_vec();
        let out = self.push(shape, y, req);
        self.ops.push((Op::Relu { x, y: out }, out));
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape(a)),
                got: format!("{:?}", self.shape(b)),
            });
        }
        let y: Vec<f32> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        let out = self.push(shape, y, req);
        self.ops.push((Op::Add { a, b, y: out }, out));
        Ok(out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape(a)),
                got: format!("{:?}", self.shape(b)),
            });
        }
        let y: Vec<f32> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        let out = self.push(shape, y, req);
        self.ops.push((Op::Mul { a, b, y: out }, out));
        Ok(out)
    }

    /// Spatial mean: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                expected: format!("4-d input"),
                got: format!("{s:?}"),
            });
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let xv = self.value(x);
        let mut y = vec![0.0f32; n * c];
        for i in 0..n * c {
            let mut acc = 0.0;
            for v in &xv[i * hw..(i + 1) * hw] {
                acc += *v;
            }
            y[i] = acc / hw as f32;
        }
        let req = self.requires(x);
        let out = self.push(vec![n, c], y, req);
        self.ops.push((Op::GlobalAvgPool { x, y: out }, out));
        Ok(out)
    }

    /// Batch normalization with current-batch statistics (training mode).
    ///
    /// Normalizes per channel with the biased variance over `N*H*W`, applies
    /// scale/bias, and returns the batch statistics so the caller can fold
    /// them into its moving averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f32,
    ) -> Result<(Var, BnBatchStats)> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                expected: format!("4-d input"),
                got: format!("{s:?}"),
            });
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::ShapeMismatch {
                expected: format!("gamma/beta [{c}]"),
                got: format!("{:?}/{:?}", self.shape(gamma), self.shape(beta)),
            });
        }
        let m = n * hw;
        if m < 2 {
            return Err(Error::DegenerateBatch { elements: m });
        }
        let xv = self.value(x);
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        for ch in 0..c {
            let mut acc = 0.0f32;
            for img in 0..n {
                let base = (img * c + ch) * hw;
                for v in &xv[base..base + hw] {
                    acc += *v;
                }
            }
            mean[ch] = acc / m as f32;
            let mu = mean[ch];
            let mut vacc = 0.0f32;
            for img in 0..n {
                let base = (img * c + ch) * hw;
                for v in &xv[base..base + hw] {
                    let d = *v - mu;
                    vacc += d * d;
                }
            }
            var[ch] = vacc / m as f32;
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / fmath::sqrt(v + eps)).collect();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut y = vec![0.0f32; xv.len()];
        for img in 0..n {
            for ch in 0..c {
                let base = (img * c + ch) * hw;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for i in base..base + hw {
                    y[i] = ga * (xv[i] - mu) * is + be;
                }
            }
        }
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        let out = self.push(s, y, req);
        let stats = BnBatchStats { mean: mean.clone(), var };
        self.ops.push((
            Op::BatchNormTrain { x, gamma, beta, y: out, mean, inv_std },
            out,
        ));
        Ok((out, stats))
    }

    /// Per-channel affine `y = scale[c] * x + shift[c]` with constant
    /// coefficients; the eval-mode batch norm and fused-conv testing path.
    pub fn channel_affine(&mut self, x: Var, scale: &[f32], shift: &[f32]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = match s.len() {
            2 => s[1],
            4 => s[1],
            _ => {
                return Err(Error::ShapeMismatch {
                    expected: format!("2-d or 4-d input"),
                    got: format!("{s:?}"),
                })
            }
        };
        if scale.len() != c || shift.len() != c {
            return Err(Error::ShapeMismatch {
                expected: format!("scale/shift [{c}]"),
                got: format!("{}/{}", scale.len(), shift.len()),
            });
        }
        let hw: usize = s[2..].iter().product();
        let n = s[0];
        let xv = self.value(x);
        let mut y = vec![0.0f32; xv.len()];
        for img in 0..n {
            for ch in 0..c {
                let base = (img * c + ch) * hw.max(1);
                let (a, b) = (scale[ch], shift[ch]);
                for i in base..base + hw.max(1) {
                    y[i] = a * xv[i] + b;
                }
            }
        }
        let req = self.requires(x);
        let out = self.push(s, y, req);
        self.ops.push((Op::ChannelAffine { x, y: out, scale: scale.to_vec() }, out));
        Ok(out)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
    /// max subtraction. Returns a scalar (shape `[1]`) node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("logits [N,K] with N == labels"),
                got: format!("{s:?} with {} labels", labels.len()),
            });
        }
        let (n, k) = (s[0], s[1]);
        for &l in labels {
            if l >= k {
                return Err(Error::LabelOutOfRange { label: l, classes: k });
            }
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0f32; n * k];
        let mut loss = 0.0f64;
        for i in 0..n {
            let row = &lv[i * k..(i + 1) * k];
            let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let mut z = 0.0f32;
            for (j, &v) in row.iter().enumerate() {
                let e = fmath::exp(v - mx);
                probs[i * k + j] = e;
                z += e;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= z;
            }
            loss += (fmath::ln(z) - (row[labels[i]] - mx)) as f64;
        }
        let loss = (loss / n as f64) as f32;
        let req = self.requires(logits);
        let out = self.push(vec![1], vec![loss], req);
        self.ops.push((
            Op::SoftmaxCrossEntropy { logits, y: out, labels: labels.to_vec(), probs },
            out,
        ));
        Ok(out)
    }

    pub fn check_finite(&self, v: Var, context: &'static str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context })
        }
    }

    fn add_grad(&mut self, v: Var, g: &[f32]) {
        let slot = &mut self.grads[v.0];
        match slot {
            Some(buf) => {
                for (dst, src) in buf.iter_mut().zip(g) {
                    *dst += *src;
                }
            }
            None => {
                *slot = Some(g.to_vec());
            }
        }
    }

    /// Runs reverse-mode accumulation from the scalar `loss` node.
    ///
    /// May be called once per tape; a second call is an error. Gradient
    /// buffers on the tape are freshly written; accumulation into persistent
    /// parameter tensors is the caller's job.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.done {
            return Err(Error::TapeConsumed);
        }
        let len = self.nodes[loss.0].data.len();
        if len != 1 {
            return Err(Error::NonScalarLoss { len });
        }
        self.done = true;
        self.grads[loss.0] = Some(vec![1.0]);

        for oi in (0..self.ops.len()).rev() {
            let out = self.ops[oi].1;
            if self.grads[out.0].is_none() || !self.nodes[out.0].requires {
                continue;
            }
            let dy = self.grads[out.0].take().expect("grad present");
            match &self.ops[oi].0 {
                Op::Conv2d { x, w, b, geom } => {
                    let (x, w, b, geom) = (*x, *w, *b, *geom);
                    let need_dx = self.requires(x);
                    let (dx, dw, db) = conv::conv2d_backward(
                        &self.nodes[x.0].data,
                        &self.nodes[w.0].data,
                        &geom,
                        &dy,
                        need_dx,
                    );
                    if let Some(dx) = dx {
                        self.add_grad(x, &dx);
                    }
                    if self.requires(w) {
                        self.add_grad(w, &dw);
                    }
                    if let Some(b) = b {
                        if self.requires(b) {
                            self.add_grad(b, &db);
                        }
                    }
                }
                Op::Linear { x, w, b, n, ci, co } => {
                    let (x, w, b, n, ci, co) = (*x, *w, *b, *n, *ci, *co);
                    let need_dx = self.requires(x);
                    let (dx, dw, db) = conv::linear_backward(
                        &self.nodes[x.0].data,
                        &self.nodes[w.0].data,
                        &dy,
                        n,
                        ci,
                        co,
                        need_dx,
                    );
                    if let Some(dx) = dx {
                        self.add_grad(x, &dx);
                    }
                    if self.requires(w) {
                        self.add_grad(w, &dw);
                    }
                    if self.requires(b) {
                        self.add_grad(b, &db);
                    }
                }
                Op::Relu { x, y } => {
                    let (x, y) = (*x, *y);
                    if self.requires(x) {
                        let dx: Vec<f32> = self.nodes[y.0]
                            .data
                            .iter()
                            .zip(&dy)
                            .map(|(&yv, &g)| if yv > 0.0 { g } else { 0.0 })
                            .collect();
                        self.add_grad(x, &dx);
                    }
                }
                Op::Add { a, b, .. } => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        self.add_grad(a, &dy);
                    }
                    if self.requires(b) {
                        self.add_grad(b, &dy);
                    }
                }
                Op::Mul { a, b, .. } => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        let da: Vec<f32> =
                            self.nodes[b.0].data.iter().zip(&dy).map(|(&bv, &g)| bv * g).collect();
                        self.add_grad(a, &da);
                    }
                    if self.requires(b) {
                        let db: Vec<f32> =
                            self.nodes[a.0].data.iter().zip(&dy).map(|(&av, &g)| av * g).collect();
                        self.add_grad(b, &db);
                    }
                }
                Op::GlobalAvgPool { x, .. } => {
                    let x = *x;
                    if self.requires(x) {
                        let s = &self.nodes[x.0].shape;
                        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                        let mut dx = vec![0.0f32; n * c * hw];
                        let inv = 1.0 / hw as f32;
                        for i in 0..n * c {
                            let g = dy[i] * inv;
                            for v in &mut dx[i * hw..(i + 1) * hw] {
                                *v = g;
                            }
                        }
                        self.add_grad(x, &dx);
                    }
                }
                Op::BatchNormTrain { x, gamma, beta, mean, inv_std, .. } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let mean = mean.clone();
                    let inv_std = inv_std.clone();
                    let s = &self.nodes[x.0].shape;
                    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                    let m = (n * hw) as f32;
                    let xv = &self.nodes[x.0].data;
                    let gv = &self.nodes[gamma.0].data;
                    // per-channel reductions of dy and dy*xhat
                    let mut dbeta = vec![0.0f32; c];
                    let mut dgamma = vec![0.0f32; c];
                    for img in 0..n {
                        for ch in 0..c {
                            let base = (img * c + ch) * hw;
                            let (mu, is) = (mean[ch], inv_std[ch]);
                            let mut sb = 0.0f32;
                            let mut sg = 0.0f32;
                            for i in base..base + hw {
                                let xhat = (xv[i] - mu) * is;
                                sb += dy[i];
                                sg += dy[i] * xhat;
                            }
                            dbeta[ch] += sb;
                            dgamma[ch] += sg;
                        }
                    }
                    if self.requires(x) {
                        let mut dx = vec![0.0f32; xv.len()];
                        for img in 0..n {
                            for ch in 0..c {
                                let base = (img * c + ch) * hw;
                                let (mu, is, ga) = (mean[ch], inv_std[ch], gv[ch]);
                                let k = ga * is;
                                let (mb, mg) = (dbeta[ch] / m, dgamma[ch] / m);
                                for i in base..base + hw {
                                    let xhat = (xv[i] - mu) * is;
                                    dx[i] = k * (dy[i] - mb - xhat * mg);
                                }
                            }
                        }
                        self.add_grad(x, &dx);
                    }
                    if self.requires(gamma) {
                        self.add_grad(gamma, &dgamma);
                    }
                    if self.requires(beta) {
                        self.add_grad(beta, &dbeta);
                    }
                }
                Op::ChannelAffine { x, scale, .. } => {
                    let x = *x;
                    let scale = scale.clone();
                    if self.requires(x) {
                        let s = &self.nodes[x.0].shape;
                        let (n, c) = (s[0], s[1]);
                        let hw: usize = s[2..].iter().product::<usize>().max(1);
                        let mut dx = vec![0.0f32; self.nodes[x.0].data.len()];
                        for img in 0..n {
                            for ch in 0..c {
                                let base = (img * c + ch) * hw;
                                let a = scale[ch];
                                for i in base..base + hw {
                                    dx[i] = a * dy[i];
                                }
                            }
                        }
                        self.add_grad(x, &dx);
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs, .. } => {
                    let logits = *logits;
                    if self.requires(logits) {
                        let labels = labels.clone();
                        let probs = probs.clone();
                        let s = &self.nodes[logits.0].shape;
                        let (n, k) = (s[0], s[1]);
                        let scale = dy[0] / n as f32;
                        let mut dl = vec![0.0f32; n * k];
                        for i in 0..n {
                            for j in 0..k {
                                let ind = if labels[i] == j { 1.0 } else { 0.0 };
                                dl[i * k + j] = (probs[i * k + j] - ind) * scale;
                            }
                        }
                        self.add_grad(logits, &dl);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: &[usize], data: &[f32]) -> Var {
        tape.leaf_from(shape.to_vec(), data.to_vec(), true)
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], &[3.0]);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x), vec![6.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], &[2.0]);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y), Err(Error::TapeConsumed));
    }

    #[test]
    fn re_recording_doubles_accumulated_grad() {
        // Two independent tapes over the same graph, both accumulated into
        // the parameter tensor: grad doubles.
        let mut p = Tensor::new(vec![1], vec![3.0]).unwrap().with_grad();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let x = tape.leaf(&p);
            let y = tape.mul(x, x).unwrap();
            tape.backward(y).unwrap();
            let g = tape.grad(x);
            p.accumulate_grad(&g);
        }
        assert_eq!(p.grad.as_deref(), Some(&[12.0][..]));
    }

    #[test]
    fn relu_clamps_and_gates_gradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[4], &[-1.0, 2.0, 0.0, -3.5]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn add_of_opposites_is_zero() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[3], &[1.0, -2.0, 3.0]);
        let b = leaf(&mut tape, &[3], &[-1.0, 2.0, -3.0]);
        let y = tape.add(a, b).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_of_constant_map_is_the_constant() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![1, 2, 3, 3], vec![2.5; 18], false);
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y), &[2.5, 2.5]);
    }

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let mut tape = Tape::new();
        let logits = tape.leaf_from(vec![2, 10], vec![0.7; 20], false);
        let loss = tape.softmax_cross_entropy(logits, &[3, 9]).unwrap();
        let expect = (10.0f32).ln();
        assert!((tape.value(loss)[0] - expect).abs() < 1e-6);
    }

    #[test]
    fn dominant_logit_loss_is_zero() {
        let mut tape = Tape::new();
        let mut row = vec![0.0f32; 10];
        row[4] = 1.0e4;
        let logits = tape.leaf_from(vec![1, 10], row, false);
        let loss = tape.softmax_cross_entropy(logits, &[4]).unwrap();
        assert!(tape.value(loss)[0].abs() < 1e-6);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut tape = Tape::new();
        let logits = tape.leaf_from(vec![1, 5], vec![0.0; 5], false);
        assert!(matches!(
            tape.softmax_cross_entropy(logits, &[5]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn ones_conv_sums_the_window() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![1, 1, 3, 3], vec![1.0; 9], false);
        let w = tape.leaf_from(vec![1, 1, 3, 3], vec![1.0; 9], false);
        let y = tape.conv2d(x, w, None, 1, 0, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y), &[9.0]);
    }

    #[test]
    fn identity_permutation_one_by_one_conv_passes_through() {
        let mut tape = Tape::new();
        let xdata: Vec<f32> = (0..2 * 3 * 2 * 2).map(|v| v as f32 * 0.5 - 2.0).collect();
        let x = tape.leaf_from(vec![2, 3, 2, 2], xdata.clone(), false);
        // 1x1 kernels forming the identity over 3 channels
        let mut wdata = vec![0.0f32; 9];
        wdata[0] = 1.0;
        wdata[4] = 1.0;
        wdata[8] = 1.0;
        let w = tape.leaf_from(vec![3, 3, 1, 1], wdata, false);
        let b = tape.leaf_from(vec![3], vec![0.0; 3], false);
        let y = tape.conv2d(x, w, Some(b), 1, 0, 1).unwrap();
        assert_eq!(tape.value(y), &xdata[..]);
    }

    #[test]
    fn depthwise_corner_counts_valid_taps() {
        // all-twos input, all-half weights, 3x3 pad 1: corner sees 4 taps
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![1, 3, 4, 4], vec![2.0; 48], false);
        let w = tape.leaf_from(vec![3, 1, 3, 3], vec![0.5; 27], false);
        let y = tape.depthwise_conv2d(x, w, 1, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 4, 4]);
        assert_eq!(tape.value(y)[0], 4.0);
        // interior sees all 9 taps
        assert_eq!(tape.value(y)[5], 9.0);
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let mut tape = Tape::new();
        let xdata: Vec<f32> = (0..32).map(|v| v as f32 * 0.25 - 4.0).collect();
        let x = tape.leaf_from(vec![1, 2, 4, 4], xdata.clone(), false);
        let mut wdata = vec![0.0f32; 2 * 9];
        wdata[4] = 1.0; // center tap, channel 0
        wdata[13] = 1.0; // center tap, channel 1
        let w = tape.leaf_from(vec![2, 1, 3, 3], wdata, false);
        let y = tape.depthwise_conv2d(x, w, 1, 1).unwrap();
        assert_eq!(tape.value(y), &xdata[..]);
    }

    #[test]
    fn linear_identity_and_bias_broadcast() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], false);
        let mut eye = vec![0.0f32; 9];
        eye[0] = 1.0;
        eye[4] = 1.0;
        eye[8] = 1.0;
        let w = tape.leaf_from(vec![3, 3], eye, false);
        let b = tape.leaf_from(vec![3], vec![0.0; 3], false);
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let zero = tape.leaf_from(vec![3, 3], vec![0.0; 9], false);
        let bias = tape.leaf_from(vec![3], vec![7.0, 8.0, 9.0], false);
        let y2 = tape.linear(x, zero, bias).unwrap();
        assert_eq!(tape.value(y2), &[7.0, 8.0, 9.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn grouped_conv_rejects_indivisible_channels() {
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![1, 3, 4, 4], vec![0.0; 48], false);
        let w = tape.leaf_from(vec![2, 1, 3, 3], vec![0.0; 18], false);
        assert!(matches!(tape.conv2d(x, w, None, 1, 1, 2), Err(Error::BadGroups { .. })));
    }

    #[test]
    fn shift_invariance_of_cross_entropy() {
        let logits = [0.3f32, -1.2, 2.0, 0.1, -0.4, 1.1];
        let labels = [2usize, 0];
        let mut t1 = Tape::new();
        let l1 = t1.leaf_from(vec![2, 3], logits.to_vec(), false);
        let a = t1.softmax_cross_entropy(l1, &labels).unwrap();
        let shifted: Vec<f32> = logits.iter().map(|v| v + 37.5).collect();
        let mut t2 = Tape::new();
        let l2 = t2.leaf_from(vec![2, 3], shifted, false);
        let b = t2.softmax_cross_entropy(l2, &labels).unwrap();
        assert!((t1.value(a)[0] - t2.value(b)[0]).abs() < 1e-6);
    }
}
