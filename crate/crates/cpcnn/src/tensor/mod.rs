//! Minimal dense tensor engine with reverse-mode differentiation, covering
//! exactly the operator set the network needs: masked convolution, batch
//! normalization, ReLU, learnable weighted sums, global average pooling, a
//! linear layer, and softmax cross-entropy.

pub mod ops;
pub mod optim;

use std::rc::Rc;

use crate::error::{Error, Result};

pub use ops::MaskPlan;

/// Scalar element type: f32 for training, f64 for gradient checking.
pub trait Element:
    num_traits::Float + num_traits::NumAssign + Send + Sync + std::fmt::Debug + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> f64 {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor<T> {
        let len: usize = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); len], grad: None, requires_grad: false }
    }

    pub fn with_grad(mut self) -> Tensor<T> {
        self.requires_grad = true;
        self
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Per-channel batch statistics exposed by train-mode batch normalization so
/// the caller can update running statistics (the variance is the unbiased
/// estimate whenever more than one element contributed).
#[derive(Debug, Clone)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Record<T> {
    Conv2d {
        x: VarId,
        w: VarId,
        b: VarId,
        out: VarId,
        dims: ops::ConvDims,
        mask: Option<Rc<MaskPlan>>,
    },
    BatchNormTrain {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        out: VarId,
        mean: Vec<T>,
        invstd: Vec<T>,
    },
    BatchNormEval {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        out: VarId,
        mean: Vec<T>,
        invstd: Vec<T>,
    },
    Relu {
        x: VarId,
        out: VarId,
    },
    WeightedSum {
        inputs: Vec<VarId>,
        raw: VarId,
        out: VarId,
    },
    GlobalAvgPool {
        x: VarId,
        out: VarId,
    },
    Linear {
        x: VarId,
        w: VarId,
        b: VarId,
        out: VarId,
    },
    SoftmaxCrossEntropy {
        logits: VarId,
        out: VarId,
        labels: Vec<u32>,
        probs: Vec<T>,
    },
}

/// Reverse-mode tape. Operations append a record on execution; backward
/// replays the records in exact reverse order, accumulating gradients.
/// Records are only kept when some input requires a gradient, so pure
/// inference pays no bookkeeping.
pub struct Tape<T: Element> {
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
    grads: Vec<Option<Vec<T>>>,
    requires: Vec<bool>,
    records: Vec<Record<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Tape<T> {
        Tape {
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> VarId {
        self.push(t.shape, t.data, t.requires_grad)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, requires: bool) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = VarId(self.shapes.len());
        self.shapes.push(shape);
        self.values.push(data);
        self.grads.push(None);
        self.requires.push(requires);
        id
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: VarId) -> &[T] {
        &self.values[id.0]
    }

    pub fn grad(&self, id: VarId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    pub fn export(&self, id: VarId) -> Tensor<T> {
        Tensor {
            shape: self.shapes[id.0].clone(),
            data: self.values[id.0].clone(),
            grad: self.grads[id.0].clone(),
            requires_grad: self.requires[id.0],
        }
    }

    fn any_requires(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|&v| self.requires[v.0])
    }

    fn dims4(&self, id: VarId, what: &str) -> Result<[usize; 4]> {
        let s = self.shape(id);
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!("{what} must be 4-d, got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Cross-correlation of NCHW input with OIKK weights plus per-channel
    /// bias. With a mask plan, weight entries at disallowed (out, in) channel
    /// pairs are treated as absent in both directions: they contribute
    /// nothing forward and their gradients stay identically zero.
    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        mask: Option<Rc<MaskPlan>>,
        stride: usize,
        padding: usize,
    ) -> Result<VarId> {
        let [n, ci, h, wd] = self.dims4(x, "conv input")?;
        let [co, wi, kh, kw] = self.dims4(w, "conv weight")?;
        if wi != ci {
            return Err(Error::ShapeMismatch(format!(
                "conv weight expects {wi} input channels, input has {ci}"
            )));
        }
        if self.shape(b) != [co] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias shape {:?} does not match {co} output channels",
                self.shape(b)
            )));
        }
        if let Some(m) = &mask {
            if m.out_channels != co || m.in_channels != ci {
                return Err(Error::ShapeMismatch(format!(
                    "mask {}x{} does not match conv {co}x{ci}",
                    m.out_channels, m.in_channels
                )));
            }
        }
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be positive".into()));
        }
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                wd + 2 * padding
            )));
        }
        let dims = ops::ConvDims {
            n,
            ci,
            h,
            w: wd,
            co,
            kh,
            kw,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (wd + 2 * padding - kw) / stride + 1,
            stride,
            padding,
        };
        let mut out = vec![T::zero(); n * co * dims.oh * dims.ow];
        ops::conv2d_forward(
            self.value(x),
            self.value(w),
            self.value(b),
            &dims,
            mask.as_deref(),
            &mut out,
        );
        let requires = self.any_requires(&[x, w, b]);
        let out_id = self.push(vec![n, co, dims.oh, dims.ow], out, requires);
        if requires {
            self.records.push(Record::Conv2d { x, w, b, out: out_id, dims, mask });
        }
        Ok(out_id)
    }

    fn bn_check(&self, x: VarId, gamma: VarId, beta: VarId) -> Result<[usize; 4]> {
        let d = self.dims4(x, "batch norm input")?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p) != [d[1]] {
                return Err(Error::ShapeMismatch(format!(
                    "batch norm {name} shape {:?} does not match {} channels",
                    self.shape(p),
                    d[1]
                )));
            }
        }
        Ok(d)
    }

    /// Train-mode batch normalization: normalizes with batch statistics
    /// (ε = 1e-5) and returns them so the caller can maintain running stats.
    pub fn batch_norm_train(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
    ) -> Result<(VarId, BnStats<T>)> {
        let [n, c, h, w] = self.bn_check(x, gamma, beta)?;
        let mut out = vec![T::zero(); n * c * h * w];
        let (mean, invstd, var_running) = ops::bn_train_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            n,
            c,
            h * w,
            &mut out,
        );
        let requires = self.any_requires(&[x, gamma, beta]);
        let out_id = self.push(vec![n, c, h, w], out, requires);
        if requires {
            self.records.push(Record::BatchNormTrain {
                x,
                gamma,
                beta,
                out: out_id,
                mean: mean.clone(),
                invstd,
            });
        }
        Ok((out_id, BnStats { mean, var: var_running }))
    }

    /// Eval-mode batch normalization: normalizes with the provided running
    /// statistics, which are treated as constants.
    pub fn batch_norm_eval(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<VarId> {
        let [n, c, h, w] = self.bn_check(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "running stats length {}/{} does not match {c} channels",
                running_mean.len(),
                running_var.len()
            )));
        }
        let mean = running_mean.to_vec();
        let invstd: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + T::from_f64(ops::BN_EPS)).sqrt())
            .collect();
        let mut out = vec![T::zero(); n * c * h * w];
        ops::bn_eval_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            &mean,
            &invstd,
            n,
            c,
            h * w,
            &mut out,
        );
        let requires = self.any_requires(&[x, gamma, beta]);
        let out_id = self.push(vec![n, c, h, w], out, requires);
        if requires {
            self.records.push(Record::BatchNormEval { x, gamma, beta, out: out_id, mean, invstd });
        }
        Ok(out_id)
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let out: Vec<T> = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let requires = self.requires[x.0];
        let out_id = self.push(self.shapes[x.0].clone(), out, requires);
        if requires {
            self.records.push(Record::Relu { x, out: out_id });
        }
        out_id
    }

    /// Learnable aggregation Σ_k σ(raw_k)·x_k; the logistic squash keeps the
    /// effective weights in (0, 1).
    pub fn weighted_sum(&mut self, inputs: &[VarId], raw: VarId) -> Result<VarId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::InvalidParameter("weighted sum of zero inputs".into()))?;
        let shape = self.shapes[first.0].clone();
        for &v in inputs {
            if self.shapes[v.0] != shape {
                return Err(Error::ShapeMismatch(format!(
                    "weighted sum input shape {:?} differs from {shape:?}",
                    self.shapes[v.0]
                )));
            }
        }
        if self.shape(raw) != [inputs.len()] {
            return Err(Error::ShapeMismatch(format!(
                "expected {} aggregation weights, got shape {:?}",
                inputs.len(),
                self.shape(raw)
            )));
        }
        let mut out = vec![T::zero(); self.values[first.0].len()];
        for (k, &v) in inputs.iter().enumerate() {
            let s = ops::sigmoid(self.value(raw)[k]);
            for (o, &xv) in out.iter_mut().zip(self.value(v)) {
                *o += s * xv;
            }
        }
        let mut all = inputs.to_vec();
        all.push(raw);
        let requires = self.any_requires(&all);
        let out_id = self.push(shape, out, requires);
        if requires {
            self.records.push(Record::WeightedSum { inputs: inputs.to_vec(), raw, out: out_id });
        }
        Ok(out_id)
    }

    pub fn global_avg_pool(&mut self, x: VarId) -> Result<VarId> {
        let [n, c, h, w] = self.dims4(x, "pool input")?;
        let hw = h * w;
        let scale = T::one() / T::from_f64(hw as f64);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * c);
        for plane in 0..n * c {
            let mut acc = T::zero();
            for &v in &xv[plane * hw..(plane + 1) * hw] {
                acc += v;
            }
            out.push(acc * scale);
        }
        let requires = self.requires[x.0];
        let out_id = self.push(vec![n, c], out, requires);
        if requires {
            self.records.push(Record::GlobalAvgPool { x, out: out_id });
        }
        Ok(out_id)
    }

    /// Fully connected layer: out[n][k] = b[k] + Σ_c x[n][c]·w[k][c].
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch(format!(
                "linear expects [N,C] x [K,C], got {xs:?} x {ws:?}"
            )));
        }
        let (n, c, k) = (xs[0], xs[1], ws[0]);
        if self.shape(b) != [k] {
            return Err(Error::ShapeMismatch(format!(
                "linear bias shape {:?} does not match {k} outputs",
                self.shape(b)
            )));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = Vec::with_capacity(n * k);
        for row in 0..n {
            for col in 0..k {
                let mut acc = bv[col];
                let xr = &xv[row * c..(row + 1) * c];
                let wr = &wv[col * c..(col + 1) * c];
                for (a, b2) in xr.iter().zip(wr) {
                    acc += *a * *b2;
                }
                out.push(acc);
            }
        }
        let requires = self.any_requires(&[x, w, b]);
        let out_id = self.push(vec![n, k], out, requires);
        if requires {
            self.records.push(Record::Linear { x, w, b, out: out_id });
        }
        Ok(out_id)
    }

    /// Mean over the batch of −log softmax(logits)[label], computed with
    /// max-subtraction so it stays finite for logit magnitudes up to 1e4.
    pub fn softmax_cross_entropy(&mut self, logits: VarId, labels: &[u32]) -> Result<VarId> {
        let s = self.shape(logits);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch(format!("logits must be [N,K], got {s:?}")));
        }
        let (n, k) = (s[0], s[1]);
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::InvalidParameter(format!("label {bad} out of range for {k} classes")));
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); n * k];
        let mut total = 0.0f64;
        for row in 0..n {
            let r = &lv[row * k..(row + 1) * k];
            let mx = r.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (j, &v) in r.iter().enumerate() {
                let e = (v - mx).exp();
                probs[row * k + j] = e;
                z += e;
            }
            for p in &mut probs[row * k..(row + 1) * k] {
                *p /= z;
            }
            let y = labels[row] as usize;
            total += z.ln().to_f64() - (r[y] - mx).to_f64();
        }
        let loss = T::from_f64(total / n as f64);
        let requires = self.requires[logits.0];
        let out_id = self.push(vec![1], vec![loss], requires);
        if requires {
            self.records.push(Record::SoftmaxCrossEntropy {
                logits,
                out: out_id,
                labels: labels.to_vec(),
                probs,
            });
        }
        Ok(out_id)
    }

    /// Backward from a scalar output with seed gradient 1.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(Error::ShapeMismatch("backward requires a scalar output".into()));
        }
        self.backward_seeded(loss, &[T::one()])
    }

    /// Backward from any output, seeding its gradient with `cotangent`.
    pub fn backward_seeded(&mut self, out: VarId, cotangent: &[T]) -> Result<()> {
        if !self.requires[out.0] {
            return Err(Error::InvalidParameter(
                "backward target does not require gradients".into(),
            ));
        }
        if cotangent.len() != self.values[out.0].len() {
            return Err(Error::ShapeMismatch("cotangent length mismatch".into()));
        }
        self.grads[out.0] = Some(cotangent.to_vec());
        for idx in (0..self.records.len()).rev() {
            self.step_backward(idx);
        }
        Ok(())
    }

    fn ensure_grad(&mut self, id: VarId) {
        if self.grads[id.0].is_none() {
            self.grads[id.0] = Some(vec![T::zero(); self.values[id.0].len()]);
        }
    }

    fn take_grad(&mut self, id: VarId) -> Option<Vec<T>> {
        self.grads[id.0].take()
    }

    fn step_backward(&mut self, idx: usize) {
        // Records are taken out and restored so input values can be read
        // while gradients are written.
        match &self.records[idx] {
            Record::Conv2d { x, w, b, out, .. } => {
                let (x, w, b, out) = (*x, *w, *b, *out);
                let Some(dout) = self.take_grad(out) else { return };
                let Record::Conv2d { dims, mask, .. } = &self.records[idx] else {
                    unreachable!()
                };
                let dims = dims.clone();
                let mask = mask.clone();
                if self.requires[x.0] {
                    self.ensure_grad(x);
                    let mut dx = self.grads[x.0].take().unwrap();
                    ops::conv2d_backward_x(
                        &dout,
                        &self.values[w.0],
                        &dims,
                        mask.as_deref(),
                        &mut dx,
                    );
                    self.grads[x.0] = Some(dx);
                }
                if self.requires[w.0] {
                    self.ensure_grad(w);
                    let mut dw = self.grads[w.0].take().unwrap();
                    ops::conv2d_backward_w(
                        &dout,
                        &self.values[x.0],
                        &dims,
                        mask.as_deref(),
                        &mut dw,
                    );
                    self.grads[w.0] = Some(dw);
                }
                if self.requires[b.0] {
                    self.ensure_grad(b);
                    let mut db = self.grads[b.0].take().unwrap();
                    ops::conv2d_backward_b(&dout, &dims, &mut db);
                    self.grads[b.0] = Some(db);
                }
                self.grads[out.0] = Some(dout);
            }
            Record::BatchNormTrain { x, gamma, beta, out, .. } => {
                let (x, gamma, beta, out) = (*x, *gamma, *beta, *out);
                let Some(dout) = self.take_grad(out) else { return };
                let Record::BatchNormTrain { mean, invstd, .. } = &self.records[idx] else {
                    unreachable!()
                };
                let s = &self.shapes[x.0];
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let (dx, dgamma, dbeta) = ops::bn_train_backward(
                    &dout,
                    &self.values[x.0],
                    &self.values[gamma.0],
                    mean,
                    invstd,
                    n,
                    c,
                    hw,
                );
                self.accumulate(x, dx);
                self.accumulate(gamma, dgamma);
                self.accumulate(beta, dbeta);
                self.grads[out.0] = Some(dout);
            }
            Record::BatchNormEval { x, gamma, beta, out, .. } => {
                let (x, gamma, beta, out) = (*x, *gamma, *beta, *out);
                let Some(dout) = self.take_grad(out) else { return };
                let Record::BatchNormEval { mean, invstd, .. } = &self.records[idx] else {
                    unreachable!()
                };
                let s = &self.shapes[x.0];
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let (dx, dgamma, dbeta) = ops::bn_eval_backward(
                    &dout,
                    &self.values[x.0],
                    &self.values[gamma.0],
                    mean,
                    invstd,
                    n,
                    c,
                    hw,
                );
                self.accumulate(x, dx);
                self.accumulate(gamma, dgamma);
                self.accumulate(beta, dbeta);
                self.grads[out.0] = Some(dout);
            }
            Record::Relu { x, out } => {
                let (x, out) = (*x, *out);
                let Some(dout) = self.take_grad(out) else { return };
                if self.requires[x.0] {
                    self.ensure_grad(x);
                    let mut dx = self.grads[x.0].take().unwrap();
                    for ((d, &g), &v) in dx.iter_mut().zip(&dout).zip(&self.values[x.0]) {
                        if v > T::zero() {
                            *d += g;
                        }
                    }
                    self.grads[x.0] = Some(dx);
                }
                self.grads[out.0] = Some(dout);
            }
            Record::WeightedSum { inputs, raw, out } => {
                let (inputs, raw, out) = (inputs.clone(), *raw, *out);
                let Some(dout) = self.take_grad(out) else { return };
                for (k, &v) in inputs.iter().enumerate() {
                    let s = ops::sigmoid(self.values[raw.0][k]);
                    if self.requires[v.0] {
                        self.ensure_grad(v);
                        let mut dx = self.grads[v.0].take().unwrap();
                        for (d, &g) in dx.iter_mut().zip(&dout) {
                            *d += s * g;
                        }
                        self.grads[v.0] = Some(dx);
                    }
                    if self.requires[raw.0] {
                        let mut acc = 0.0f64;
                        for (&g, &xv) in dout.iter().zip(&self.values[v.0]) {
                            acc += (g * xv).to_f64();
                        }
                        let dv = s * (T::one() - s) * T::from_f64(acc);
                        self.ensure_grad(raw);
                        self.grads[raw.0].as_mut().unwrap()[k] += dv;
                    }
                }
                self.grads[out.0] = Some(dout);
            }
            Record::GlobalAvgPool { x, out } => {
                let (x, out) = (*x, *out);
                let Some(dout) = self.take_grad(out) else { return };
                if self.requires[x.0] {
                    let s = &self.shapes[x.0];
                    let hw = s[2] * s[3];
                    let scale = T::one() / T::from_f64(hw as f64);
                    self.ensure_grad(x);
                    let mut dx = self.grads[x.0].take().unwrap();
                    for (plane, &g) in dout.iter().enumerate() {
                        let gs = g * scale;
                        for d in &mut dx[plane * hw..(plane + 1) * hw] {
                            *d += gs;
                        }
                    }
                    self.grads[x.0] = Some(dx);
                }
                self.grads[out.0] = Some(dout);
            }
            Record::Linear { x, w, b, out } => {
                let (x, w, b, out) = (*x, *w, *b, *out);
                let Some(dout) = self.take_grad(out) else { return };
                let (n, c) = (self.shapes[x.0][0], self.shapes[x.0][1]);
                let k = self.shapes[w.0][0];
                if self.requires[x.0] {
                    self.ensure_grad(x);
                    let mut dx = self.grads[x.0].take().unwrap();
                    for row in 0..n {
                        for col in 0..k {
                            let g = dout[row * k + col];
                            let wr = &self.values[w.0][col * c..(col + 1) * c];
                            for (d, &wv) in dx[row * c..(row + 1) * c].iter_mut().zip(wr) {
                                *d += g * wv;
                            }
                        }
                    }
                    self.grads[x.0] = Some(dx);
                }
                if self.requires[w.0] {
                    self.ensure_grad(w);
                    let mut dw = self.grads[w.0].take().unwrap();
                    for row in 0..n {
                        let xr = &self.values[x.0][row * c..(row + 1) * c];
                        for col in 0..k {
                            let g = dout[row * k + col];
                            for (d, &xv) in dw[col * c..(col + 1) * c].iter_mut().zip(xr) {
                                *d += g * xv;
                            }
                        }
                    }
                    self.grads[w.0] = Some(dw);
                }
                if self.requires[b.0] {
                    self.ensure_grad(b);
                    let db = self.grads[b.0].as_mut().unwrap();
                    for row in 0..n {
                        for col in 0..k {
                            db[col] += dout[row * k + col];
                        }
                    }
                }
                self.grads[out.0] = Some(dout);
            }
            Record::SoftmaxCrossEntropy { logits, out, .. } => {
                let (logits, out) = (*logits, *out);
                let Some(dout) = self.take_grad(out) else { return };
                let Record::SoftmaxCrossEntropy { labels, probs, .. } = &self.records[idx] else {
                    unreachable!()
                };
                if self.requires[logits.0] {
                    let (n, k) = (self.shapes[logits.0][0], self.shapes[logits.0][1]);
                    let scale = dout[0] / T::from_f64(n as f64);
                    let mut dl = vec![T::zero(); n * k];
                    for row in 0..n {
                        let y = labels[row] as usize;
                        for j in 0..k {
                            let one = if j == y { T::one() } else { T::zero() };
                            dl[row * k + j] = (probs[row * k + j] - one) * scale;
                        }
                    }
                    self.accumulate(logits, dl);
                }
                self.grads[out.0] = Some(dout);
            }
        }
    }

    fn accumulate(&mut self, id: VarId, delta: Vec<T>) {
        if !self.requires[id.0] {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&delta) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}
