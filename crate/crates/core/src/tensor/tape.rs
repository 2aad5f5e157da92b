//! Operation tape and reverse-mode gradients.

use crate::scalar::Scalar;

use super::conv::{conv2d_backward, conv2d_forward};
use super::{Result, Tensor, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, kernel: usize },
    InstanceNorm { x: Var, eps: f64 },
    Relu { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MaxPool2 { x: Var },
    Upsample2 { x: Var },
    Linear { x: Var, w: Var, b: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    Scale { x: Var, c: f64 },
    FocalLoss { pred: Var, target: Var, alpha: f64, omega: f64 },
    DiceLoss { pred: Var, target: Var, smooth: f64 },
    JaccardLoss { pred: Var, target: Var, smooth: f64 },
    MaskedCatCe { logits: Var, classes: usize, targets: Vec<usize>, mask: Vec<bool> },
    MaskedBinCe { logits: Var, targets: Vec<bool>, mask: Vec<bool> },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op,
    requires: bool,
}

/// Records forward operations; `backward` walks them in exact reverse
/// insertion order. One tape per forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Probabilities are clamped to `[CLAMP, 1-CLAMP]` inside log-based losses.
pub const PROB_CLAMP: f64 = 1e-7;

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. Parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a variable after `backward`; zero-filled for parameters
    /// the loss never touched.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op, requires });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor<T>, op: Op, requires: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push(value, op, requires))
    }

    // ───────────────────────── forward ops ─────────────────────────

    /// Same-padded stride-1 convolution. `x` BCHW, `w` (Cout,Cin,k,k), `b` (Cout).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, cin, h, wd) = self.value(x).dims4("conv2d")?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("weight must be (Cout,Cin,k,k), got {:?}", ws),
            });
        }
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        if k % 2 == 0 || !(1..=5).contains(&k) {
            return Err(TensorError::BadKernel { op: "conv2d", kernel: k });
        }
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input has {} channels, weight expects {}", cin, wcin),
            });
        }
        if self.value(b).shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias shape {:?}, expected [{}]", self.value(b).shape(), cout),
            });
        }
        let mut out = Tensor::zeros(vec![batch, cout, h, wd]);
        conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            batch,
            cin,
            cout,
            h,
            wd,
            k,
            out.data_mut(),
        );
        let req = self.req(x) || self.req(w) || self.req(b);
        self.record(out, Op::Conv2d { x, w, b, kernel: k }, req, "conv2d")
    }

    /// Per (batch, channel) plane normalization to zero mean and unit
    /// variance. The divisor is `sqrt(max(var, eps))`, so constant planes
    /// map to zeros and well-conditioned planes are normalized exactly.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TensorError::BadConfig {
                op: "instance_norm",
                detail: format!("eps must be positive, got {}", eps),
            });
        }
        let (batch, c, h, wd) = self.value(x).dims4("instance_norm")?;
        let plane = h * wd;
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); xs.len()];
        for pc in 0..batch * c {
            let src = &xs[pc * plane..(pc + 1) * plane];
            let (mean, var) = plane_moments(src);
            let sigma = var.max(T::c(eps)).sqrt();
            for (o, &v) in out[pc * plane..(pc + 1) * plane].iter_mut().zip(src) {
                *o = (v - mean) / sigma;
            }
        }
        let req = self.req(x);
        let t = Tensor::new(vec![batch, c, h, wd], out)?;
        self.record(t, Op::InstanceNorm { x, eps }, req, "instance_norm")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let req = self.req(x);
        self.record(out, Op::Relu { x }, req, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid_stable);
        let req = self.req(x);
        self.record(out, Op::Sigmoid { x }, req, "sigmoid")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add")
    }

    /// Elementwise product (Hadamard). Shapes must match exactly.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "hadamard")
    }

    fn binary_elementwise(&mut self, a: Var, b: Var, name: &'static str) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = match name {
            "add" => av.iter().zip(bv).map(|(&x, &y)| x + y).collect(),
            _ => av.iter().zip(bv).map(|(&x, &y)| x * y).collect(),
        };
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let req = self.req(a) || self.req(b);
        let op = if name == "add" { Op::Add { a, b } } else { Op::Mul { a, b } };
        self.record(t, op, req, name)
    }

    /// 2x2 max pooling with stride 2. Requires even H and W.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (batch, c, h, wd) = self.value(x).dims4("maxpool2x2")?;
        if h % 2 != 0 || wd % 2 != 0 {
            return Err(TensorError::OddPool { h, w: wd });
        }
        let (oh, ow) = (h / 2, wd / 2);
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); batch * c * oh * ow];
        for pc in 0..batch * c {
            let src = &xs[pc * h * wd..(pc + 1) * h * wd];
            let dst = &mut out[pc * oh * ow..(pc + 1) * oh * ow];
            for r in 0..oh {
                for q in 0..ow {
                    let i0 = 2 * r * wd + 2 * q;
                    let m = src[i0].max(src[i0 + 1]).max(src[i0 + wd]).max(src[i0 + wd + 1]);
                    dst[r * ow + q] = m;
                }
            }
        }
        let t = Tensor::new(vec![batch, c, oh, ow], out)?;
        let req = self.req(x);
        self.record(t, Op::MaxPool2 { x }, req, "maxpool2x2")
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let (batch, c, h, wd) = self.value(x).dims4("upsample_nearest2x")?;
        let (oh, ow) = (2 * h, 2 * wd);
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); batch * c * oh * ow];
        for pc in 0..batch * c {
            let src = &xs[pc * h * wd..(pc + 1) * h * wd];
            let dst = &mut out[pc * oh * ow..(pc + 1) * oh * ow];
            for r in 0..h {
                for q in 0..wd {
                    let v = src[r * wd + q];
                    let o = 2 * r * ow + 2 * q;
                    dst[o] = v;
                    dst[o + 1] = v;
                    dst[o + ow] = v;
                    dst[o + ow + 1] = v;
                }
            }
        }
        let t = Tensor::new(vec![batch, c, oh, ow], out)?;
        let req = self.req(x);
        self.record(t, Op::Upsample2 { x }, req, "upsample_nearest2x")
    }

    /// Dense layer: `x (B,I) @ w (I,O) + b (O)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                detail: format!("x {:?} @ w {:?}", xs, ws),
            });
        }
        let (rows, inner, cols) = (xs[0], xs[1], ws[1]);
        if self.value(b).shape() != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                detail: format!("bias {:?}, expected [{}]", self.value(b).shape(), cols),
            });
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let dst = &mut out[r * cols..(r + 1) * cols];
            dst.copy_from_slice(bd);
            for i in 0..inner {
                let xv = xd[r * inner + i];
                let wrow = &wd[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    dst[j] = dst[j] + xv * wrow[j];
                }
            }
        }
        let t = Tensor::new(vec![rows, cols], out)?;
        let req = self.req(x) || self.req(w) || self.req(b);
        self.record(t, Op::Linear { x, w, b }, req, "linear")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let req = self.req(x);
        self.record(Tensor::scalar(s), Op::SumAll { x }, req, "sum_all")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::Empty { op: "mean_all" });
        }
        let s: T = self.value(x).data().iter().copied().sum();
        let req = self.req(x);
        self.record(Tensor::scalar(s / T::c(n as f64)), Op::MeanAll { x }, req, "mean_all")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * T::c(c));
        let req = self.req(x);
        self.record(out, Op::Scale { x, c }, req, "scale")
    }

    /// Focal loss averaged per pixel. `pred` holds probabilities, `target`
    /// binary ground truth of identical shape.
    pub fn focal_loss(&mut self, pred: Var, target: Var, alpha: f64, omega: f64) -> Result<Var> {
        self.check_pair(pred, target, "focal_loss")?;
        let (a, w) = (T::c(alpha), T::c(omega));
        let lo = T::c(PROB_CLAMP);
        let hi = T::one() - lo;
        let n = T::c(self.value(pred).numel() as f64);
        let mut acc = T::zero();
        for (&p0, &y) in self.value(pred).data().iter().zip(self.value(target).data()) {
            let p = p0.max(lo).min(hi);
            let pos = a * y * (T::one() - p).powf(w) * p.ln();
            let neg = (T::one() - a) * (T::one() - y) * p.powf(w) * (T::one() - p).ln();
            acc += pos + neg;
        }
        let loss = -(acc / n);
        let req = self.req(pred);
        self.record(Tensor::scalar(loss), Op::FocalLoss { pred, target, alpha, omega }, req, "focal_loss")
    }

    /// Soft Dice loss `1 - (2*sum(p*y)+s)/(sum(p)+sum(y)+s)` with smoothing 1.
    pub fn dice_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_pair(pred, target, "dice_loss")?;
        let s = T::one();
        let (inter, psum, ysum) = overlap_sums(self.value(pred).data(), self.value(target).data());
        let loss = T::one() - (T::c(2.0) * inter + s) / (psum + ysum + s);
        let req = self.req(pred);
        self.record(Tensor::scalar(loss), Op::DiceLoss { pred, target, smooth: 1.0 }, req, "dice_loss")
    }

    /// Soft Jaccard loss `1 - (sum(p*y)+s)/(sum(p)+sum(y)-sum(p*y)+s)`.
    pub fn jaccard_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_pair(pred, target, "jaccard_loss")?;
        let s = T::one();
        let (inter, psum, ysum) = overlap_sums(self.value(pred).data(), self.value(target).data());
        let loss = T::one() - (inter + s) / (psum + ysum - inter + s);
        let req = self.req(pred);
        self.record(Tensor::scalar(loss), Op::JaccardLoss { pred, target, smooth: 1.0 }, req, "jaccard_loss")
    }

    /// Mean categorical cross-entropy over valid positions.
    /// `logits` is (R, P*classes); `targets` and `mask` are row-major (R, P).
    pub fn masked_categorical_ce(
        &mut self,
        logits: Var,
        classes: usize,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() != 2 || shape[1] % classes != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "masked_categorical_ce",
                detail: format!("logits {:?} not divisible into {}-way heads", shape, classes),
            });
        }
        let positions = shape[1] / classes;
        if targets.len() != shape[0] * positions || mask.len() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_categorical_ce",
                detail: format!(
                    "targets/mask length {}/{} vs {} positions",
                    targets.len(),
                    mask.len(),
                    shape[0] * positions
                ),
            });
        }
        let n_valid = mask.iter().filter(|m| **m).count();
        if n_valid == 0 {
            return Err(TensorError::Empty { op: "masked_categorical_ce" });
        }
        let ld = self.value(logits).data();
        let mut acc = T::zero();
        for (pos, (&t, &m)) in targets.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            let row = &ld[pos * classes..(pos + 1) * classes];
            acc += log_sum_exp(row) - row[t];
        }
        let loss = acc / T::c(n_valid as f64);
        let req = self.req(logits);
        self.record(
            Tensor::scalar(loss),
            Op::MaskedCatCe { logits, classes, targets: targets.to_vec(), mask: mask.to_vec() },
            req,
            "masked_categorical_ce",
        )
    }

    /// Mean binary cross-entropy (on logits) over valid positions.
    pub fn masked_binary_ce(&mut self, logits: Var, targets: &[bool], mask: &[bool]) -> Result<Var> {
        let n = self.value(logits).numel();
        if targets.len() != n || mask.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "masked_binary_ce",
                detail: format!("{} logits vs {} targets / {} mask", n, targets.len(), mask.len()),
            });
        }
        let n_valid = mask.iter().filter(|m| **m).count();
        if n_valid == 0 {
            return Err(TensorError::Empty { op: "masked_binary_ce" });
        }
        let ld = self.value(logits).data();
        let mut acc = T::zero();
        for ((&z, &y), &m) in ld.iter().zip(targets).zip(mask) {
            if !m {
                continue;
            }
            let yv = if y { T::one() } else { T::zero() };
            // max(z,0) - z*y + ln(1+exp(-|z|))
            acc += z.max(T::zero()) - z * yv + (T::one() + (-z.abs()).exp()).ln();
        }
        let loss = acc / T::c(n_valid as f64);
        let req = self.req(logits);
        self.record(
            Tensor::scalar(loss),
            Op::MaskedBinCe { logits, targets: targets.to_vec(), mask: mask.to_vec() },
            req,
            "masked_binary_ce",
        )
    }

    fn check_pair(&self, pred: Var, target: Var, op: &'static str) -> Result<()> {
        if self.value(pred).numel() == 0 {
            return Err(TensorError::Empty { op });
        }
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(pred).shape(),
                    self.value(target).shape()
                ),
            });
        }
        Ok(())
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    // ───────────────────────── backward ─────────────────────────

    /// Reverse pass from a scalar loss. Every `requires_grad` leaf ends up
    /// with a gradient; leaves the loss never touched get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.value(loss).shape().to_vec() });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..n).rev() {
            if !self.nodes[i].requires {
                continue;
            }
            let gout = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.step_backward(i, &op, &gout, &mut grads);
            grads[i] = Some(gout);
        }

        for i in 0..n {
            if let Some(g) = grads[i].take() {
                let shape = self.nodes[i].value.shape().to_vec();
                self.nodes[i].grad = Some(Tensor::new(shape, g)?);
            } else if matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires {
                self.nodes[i].grad = Some(Tensor::zeros(self.nodes[i].value.shape().to_vec()));
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, add: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); self.nodes[v.0].value.numel()]);
        }
        add(slot.as_mut().unwrap());
    }

    #[allow(clippy::too_many_lines)]
    fn step_backward(&self, i: usize, op: &Op, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, kernel } => {
                let (batch, cin, h, wd) = self.nodes[x.0].value.dims4("conv2d").unwrap();
                let cout = self.nodes[w.0].value.shape()[0];
                let mut dx = vec![T::zero(); self.nodes[x.0].value.numel()];
                let mut dw = vec![T::zero(); self.nodes[w.0].value.numel()];
                let mut db = vec![T::zero(); cout];
                conv2d_backward(
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    gout,
                    batch,
                    cin,
                    cout,
                    h,
                    wd,
                    kernel,
                    &mut dx,
                    &mut dw,
                    &mut db,
                );
                self.accumulate(grads, x, |g| add_into(g, &dx));
                self.accumulate(grads, w, |g| add_into(g, &dw));
                self.accumulate(grads, b, |g| add_into(g, &db));
            }
            Op::InstanceNorm { x, eps } => {
                let (batch, c, h, wd) = self.nodes[x.0].value.dims4("instance_norm").unwrap();
                let plane = h * wd;
                let xs = self.nodes[x.0].value.data();
                let mut dx = vec![T::zero(); xs.len()];
                let inv_n = T::one() / T::c(plane as f64);
                for pc in 0..batch * c {
                    let src = &xs[pc * plane..(pc + 1) * plane];
                    let g = &gout[pc * plane..(pc + 1) * plane];
                    let (mean, var) = plane_moments(src);
                    let eps_t = T::c(eps);
                    let sigma = var.max(eps_t).sqrt();
                    let mut gsum = T::zero();
                    let mut gxhat = T::zero();
                    for (&gv, &xv) in g.iter().zip(src) {
                        gsum += gv;
                        gxhat += gv * (xv - mean) / sigma;
                    }
                    let dst = &mut dx[pc * plane..(pc + 1) * plane];
                    if var > eps_t {
                        for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(src) {
                            let xhat = (xv - mean) / sigma;
                            *d = (gv - gsum * inv_n - xhat * gxhat * inv_n) / sigma;
                        }
                    } else {
                        // constant-plane branch: divisor is the fixed sqrt(eps)
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d = (gv - gsum * inv_n) / sigma;
                        }
                    }
                }
                self.accumulate(grads, x, |gr| add_into(gr, &dx));
            }
            Op::Relu { x } => {
                let xs = self.nodes[x.0].value.data();
                self.accumulate(grads, x, |g| {
                    for ((gi, &xv), &go) in g.iter_mut().zip(xs).zip(gout) {
                        if xv > T::zero() {
                            *gi += go;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let ys = self.nodes[i].value.data();
                self.accumulate(grads, x, |g| {
                    for ((gi, &y), &go) in g.iter_mut().zip(ys).zip(gout) {
                        *gi += go * y * (T::one() - y);
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, a, |g| add_into(g, gout));
                self.accumulate(grads, b, |g| add_into(g, gout));
            }
            Op::Mul { a, b } => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                self.accumulate(grads, a, |g| {
                    for ((gi, &o), &go) in g.iter_mut().zip(bv).zip(gout) {
                        *gi += go * o;
                    }
                });
                self.accumulate(grads, b, |g| {
                    for ((gi, &o), &go) in g.iter_mut().zip(av).zip(gout) {
                        *gi += go * o;
                    }
                });
            }
            Op::MaxPool2 { x } => {
                let (batch, c, h, wd) = self.nodes[x.0].value.dims4("maxpool2x2").unwrap();
                let (oh, ow) = (h / 2, wd / 2);
                let xs = self.nodes[x.0].value.data();
                let mut dx = vec![T::zero(); xs.len()];
                for pc in 0..batch * c {
                    let src = &xs[pc * h * wd..(pc + 1) * h * wd];
                    let g = &gout[pc * oh * ow..(pc + 1) * oh * ow];
                    let dst = &mut dx[pc * h * wd..(pc + 1) * h * wd];
                    for r in 0..oh {
                        for q in 0..ow {
                            let i0 = 2 * r * wd + 2 * q;
                            // first maximum in row-major scan wins ties
                            let cands = [i0, i0 + 1, i0 + wd, i0 + wd + 1];
                            let mut best = cands[0];
                            for &cand in &cands[1..] {
                                if src[cand] > src[best] {
                                    best = cand;
                                }
                            }
                            dst[best] += g[r * ow + q];
                        }
                    }
                }
                self.accumulate(grads, x, |g| add_into(g, &dx));
            }
            Op::Upsample2 { x } => {
                let (batch, c, h, wd) = self.nodes[x.0].value.dims4("upsample_nearest2x").unwrap();
                let ow = 2 * wd;
                let mut dx = vec![T::zero(); self.nodes[x.0].value.numel()];
                for pc in 0..batch * c {
                    let g = &gout[pc * 4 * h * wd..(pc + 1) * 4 * h * wd];
                    let dst = &mut dx[pc * h * wd..(pc + 1) * h * wd];
                    for r in 0..h {
                        for q in 0..wd {
                            let o = 2 * r * ow + 2 * q;
                            dst[r * wd + q] += g[o] + g[o + 1] + g[o + ow] + g[o + ow + 1];
                        }
                    }
                }
                self.accumulate(grads, x, |g| add_into(g, &dx));
            }
            Op::Linear { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let (rows, inner) = (xs[0], xs[1]);
                let cols = self.nodes[w.0].value.shape()[1];
                let xd = self.nodes[x.0].value.data();
                let wd = self.nodes[w.0].value.data();
                let mut dx = vec![T::zero(); rows * inner];
                let mut dw = vec![T::zero(); inner * cols];
                let mut db = vec![T::zero(); cols];
                for r in 0..rows {
                    let go = &gout[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        db[j] += go[j];
                    }
                    for ii in 0..inner {
                        let xv = xd[r * inner + ii];
                        let wrow = &wd[ii * cols..(ii + 1) * cols];
                        let mut acc = T::zero();
                        for j in 0..cols {
                            acc += go[j] * wrow[j];
                            dw[ii * cols + j] += xv * go[j];
                        }
                        dx[r * inner + ii] += acc;
                    }
                }
                self.accumulate(grads, x, |g| add_into(g, &dx));
                self.accumulate(grads, w, |g| add_into(g, &dw));
                self.accumulate(grads, b, |g| add_into(g, &db));
            }
            Op::SumAll { x } => {
                let go = gout[0];
                self.accumulate(grads, x, |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
            Op::MeanAll { x } => {
                let n = T::c(self.nodes[x.0].value.numel() as f64);
                let go = gout[0] / n;
                self.accumulate(grads, x, |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
            Op::Scale { x, c } => {
                let cf = T::c(c);
                self.accumulate(grads, x, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go * cf;
                    }
                });
            }
            Op::FocalLoss { pred, target, alpha, omega } => {
                let (a, w) = (T::c(alpha), T::c(omega));
                let lo = T::c(PROB_CLAMP);
                let hi = T::one() - lo;
                let n = T::c(self.nodes[pred.0].value.numel() as f64);
                let go = gout[0];
                let ps = self.nodes[pred.0].value.data();
                let ys = self.nodes[target.0].value.data();
                self.accumulate(grads, pred, |g| {
                    for ((gi, &p0), &y) in g.iter_mut().zip(ps).zip(ys) {
                        if p0 <= lo || p0 >= hi {
                            continue; // clamped: locally constant
                        }
                        let p = p0;
                        let one = T::one();
                        let dpos =
                            a * y * ((one - p).powf(w) / p - w * (one - p).powf(w - one) * p.ln());
                        let dneg = (one - a)
                            * (one - y)
                            * (w * p.powf(w - one) * (one - p).ln() - p.powf(w) / (one - p));
                        *gi += -go * (dpos + dneg) / n;
                    }
                });
            }
            Op::DiceLoss { pred, target, smooth } => {
                let s = T::c(smooth);
                let ps = self.nodes[pred.0].value.data();
                let ys = self.nodes[target.0].value.data();
                let (inter, psum, ysum) = overlap_sums(ps, ys);
                let num = T::c(2.0) * inter + s;
                let den = psum + ysum + s;
                let go = gout[0];
                self.accumulate(grads, pred, |g| {
                    for (gi, &y) in g.iter_mut().zip(ys) {
                        *gi += go * (num - T::c(2.0) * y * den) / (den * den);
                    }
                });
            }
            Op::JaccardLoss { pred, target, smooth } => {
                let s = T::c(smooth);
                let ps = self.nodes[pred.0].value.data();
                let ys = self.nodes[target.0].value.data();
                let (inter, psum, ysum) = overlap_sums(ps, ys);
                let union = psum + ysum - inter;
                let den = union + s;
                let num = inter + s;
                let go = gout[0];
                self.accumulate(grads, pred, |g| {
                    for (gi, &y) in g.iter_mut().zip(ys) {
                        // d(loss)/dp = -(y*den - num*(1-y)) / den^2
                        *gi += -go * (y * den - num * (T::one() - y)) / (den * den);
                    }
                });
            }
            Op::MaskedCatCe { logits, classes, ref targets, ref mask } => {
                let ld = self.nodes[logits.0].value.data();
                let n_valid = T::c(mask.iter().filter(|m| **m).count() as f64);
                let go = gout[0];
                self.accumulate(grads, logits, |g| {
                    for (pos, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let row = &ld[pos * classes..(pos + 1) * classes];
                        let lse = log_sum_exp(row);
                        for cidx in 0..classes {
                            let soft = (row[cidx] - lse).exp();
                            let indicator = if cidx == t { T::one() } else { T::zero() };
                            g[pos * classes + cidx] += go * (soft - indicator) / n_valid;
                        }
                    }
                });
            }
            Op::MaskedBinCe { logits, ref targets, ref mask } => {
                let ld = self.nodes[logits.0].value.data();
                let n_valid = T::c(mask.iter().filter(|m| **m).count() as f64);
                let go = gout[0];
                self.accumulate(grads, logits, |g| {
                    for (idx, (&y, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let yv = if y { T::one() } else { T::zero() };
                        g[idx] += go * (sigmoid_stable(ld[idx]) - yv) / n_valid;
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn plane_moments<T: Scalar>(src: &[T]) -> (T, T) {
    let n = T::c(src.len() as f64);
    let mut sum = T::zero();
    for &v in src {
        sum += v;
    }
    let mean = sum / n;
    let mut var = T::zero();
    for &v in src {
        var += (v - mean) * (v - mean);
    }
    (mean, var / n)
}

fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let mut m = row[0];
    for &v in &row[1..] {
        m = m.max(v);
    }
    let mut acc = T::zero();
    for &v in row {
        acc += (v - m).exp();
    }
    m + acc.ln()
}

fn overlap_sums<T: Scalar>(p: &[T], y: &[T]) -> (T, T, T) {
    let mut inter = T::zero();
    let mut psum = T::zero();
    let mut ysum = T::zero();
    for (&pv, &yv) in p.iter().zip(y) {
        inter += pv * yv;
        psum += pv;
        ysum += yv;
    }
    (inter, psum, ysum)
}
