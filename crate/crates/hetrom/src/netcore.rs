//! Dense feed-forward models with an explicit parameter split.
//!
//! All layers except the last form the shared parameters `phi`; the final
//! linear layer is the task-specific parameter block `w`. Forward passes and
//! the gradients of the mean batch loss with respect to either block are
//! computed by hand-rolled reverse passes, so every number is checkable
//! against finite differences.
//!
//! Gradients in `phi` are partial derivatives at the given `(phi, w)` only;
//! nothing differentiates through an adaptation trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activated value. For relu the kink
    /// at zero takes the subgradient 0.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Regression,
    SoftmaxClassification,
}

/// Layer shape description. Hidden layers are the shared block; the final
/// linear layer is the task-specific block.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub head: Head,
}

impl Architecture {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        head: Head,
    ) -> Result<Self, NetError> {
        if input_dim == 0 || output_dim == 0 {
            return Err(NetError::InvalidArchitecture(
                "input and output dims must be >= 1".into(),
            ));
        }
        if hidden_dims.is_empty() {
            return Err(NetError::InvalidArchitecture(
                "at least one hidden layer is required".into(),
            ));
        }
        if hidden_dims.iter().any(|&d| d == 0) {
            return Err(NetError::InvalidArchitecture(
                "hidden dims must be >= 1".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
            head,
        })
    }

    /// Flat length of the shared block: weights + biases of every hidden layer.
    pub fn phi_len(&self) -> usize {
        let mut len = 0;
        let mut prev = self.input_dim;
        for &d in &self.hidden_dims {
            len += d * prev + d;
            prev = d;
        }
        len
    }

    /// Flat length of the task block: final-layer weights + biases.
    pub fn w_len(&self) -> usize {
        let last = *self.hidden_dims.last().expect("hidden_dims non-empty");
        self.output_dim * last + self.output_dim
    }
}

/// Parameter vectors for one model. `phi` and `w` are packed per layer as
/// row-major weights (output-neuron major) followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub phi: Vec<f64>,
    pub w: Vec<f64>,
    pub arch: Architecture,
}

/// Seed-reproducible initialization: weights uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn init_params(arch: &Architecture, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = Vec::with_capacity(arch.phi_len());
    let mut prev = arch.input_dim;
    for &d in &arch.hidden_dims {
        let bound = 1.0 / (prev as f64).sqrt();
        for _ in 0..d * prev {
            phi.push(rng.gen_range(-bound..bound));
        }
        phi.extend(std::iter::repeat(0.0).take(d));
        prev = d;
    }
    let mut w = Vec::with_capacity(arch.w_len());
    let bound = 1.0 / (prev as f64).sqrt();
    for _ in 0..arch.output_dim * prev {
        w.push(rng.gen_range(-bound..bound));
    }
    w.extend(std::iter::repeat(0.0).take(arch.output_dim));
    ModelParams {
        phi,
        w,
        arch: arch.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Row-major `count x target_dim` regression targets.
    Values(Vec<f64>),
    /// One class index per sample.
    Labels(Vec<usize>),
}

/// A batch of samples. Inputs are row-major `count x input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    inputs: Vec<f64>,
    targets: Targets,
    count: usize,
    input_dim: usize,
    /// Regression: target vector dim. Classification: number of classes.
    target_dim: usize,
}

impl SampleBatch {
    pub fn regression(
        inputs: Vec<f64>,
        targets: Vec<f64>,
        input_dim: usize,
        target_dim: usize,
    ) -> Result<Self, NetError> {
        if input_dim == 0 || target_dim == 0 {
            return Err(NetError::DimensionMismatch("zero dimension".into()));
        }
        if inputs.len() % input_dim != 0 {
            return Err(NetError::DimensionMismatch(
                "inputs not a multiple of input_dim".into(),
            ));
        }
        let count = inputs.len() / input_dim;
        if targets.len() != count * target_dim {
            return Err(NetError::DimensionMismatch(format!(
                "expected {} target values, got {}",
                count * target_dim,
                targets.len()
            )));
        }
        Ok(Self {
            inputs,
            targets: Targets::Values(targets),
            count,
            input_dim,
            target_dim,
        })
    }

    pub fn classification(
        inputs: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        classes: usize,
    ) -> Result<Self, NetError> {
        if input_dim == 0 || classes == 0 {
            return Err(NetError::DimensionMismatch("zero dimension".into()));
        }
        if inputs.len() % input_dim != 0 {
            return Err(NetError::DimensionMismatch(
                "inputs not a multiple of input_dim".into(),
            ));
        }
        let count = inputs.len() / input_dim;
        if labels.len() != count {
            return Err(NetError::DimensionMismatch(format!(
                "expected {} labels, got {}",
                count,
                labels.len()
            )));
        }
        for &l in &labels {
            if l >= classes {
                return Err(NetError::LabelOutOfRange { label: l, classes });
            }
        }
        Ok(Self {
            inputs,
            targets: Targets::Labels(labels),
            count,
            input_dim,
            target_dim: classes,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Values(v) => Some(v),
            Targets::Labels(_) => None,
        }
    }

    /// Replace labels, keeping inputs. Used by noise injection.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self, NetError> {
        Self::classification(self.inputs.clone(), labels, self.input_dim, self.target_dim)
    }

    /// Replace regression targets, keeping inputs.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, NetError> {
        Self::regression(self.inputs.clone(), values, self.input_dim, self.target_dim)
    }
}

fn check_batch(arch: &Architecture, batch: &SampleBatch) -> Result<(), NetError> {
    if batch.count == 0 {
        return Err(NetError::EmptyBatch);
    }
    if batch.input_dim != arch.input_dim {
        return Err(NetError::DimensionMismatch(format!(
            "batch input dim {} vs model {}",
            batch.input_dim, arch.input_dim
        )));
    }
    match (&batch.targets, arch.head) {
        (Targets::Values(_), Head::Regression) | (Targets::Labels(_), Head::SoftmaxClassification) => {}
        _ => {
            return Err(NetError::DimensionMismatch(
                "target kind does not match model head".into(),
            ))
        }
    }
    if batch.target_dim != arch.output_dim {
        return Err(NetError::DimensionMismatch(format!(
            "batch target dim {} vs model output {}",
            batch.target_dim, arch.output_dim
        )));
    }
    Ok(())
}

fn check_params(arch: &Architecture, phi: &[f64], w: &[f64]) -> Result<(), NetError> {
    if phi.len() != arch.phi_len() || w.len() != arch.w_len() {
        return Err(NetError::DimensionMismatch(format!(
            "phi len {} (want {}), w len {} (want {})",
            phi.len(),
            arch.phi_len(),
            w.len(),
            arch.w_len()
        )));
    }
    Ok(())
}

/// Forward pass for one sample; returns each hidden layer's activated output
/// plus the final linear output (logits or predictions).
fn forward_sample(
    arch: &Architecture,
    phi: &[f64],
    w: &[f64],
    x: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut posts: Vec<Vec<f64>> = Vec::with_capacity(arch.hidden_dims.len());
    let mut offset = 0;
    let mut prev_dim = arch.input_dim;
    for &d in &arch.hidden_dims {
        let weights = &phi[offset..offset + d * prev_dim];
        let biases = &phi[offset + d * prev_dim..offset + d * prev_dim + d];
        let prev: &[f64] = posts.last().map(|v| v.as_slice()).unwrap_or(x);
        let mut layer = Vec::with_capacity(d);
        for o in 0..d {
            let mut z = biases[o];
            let row = &weights[o * prev_dim..(o + 1) * prev_dim];
            for i in 0..prev_dim {
                z += row[i] * prev[i];
            }
            layer.push(arch.activation.apply(z));
        }
        posts.push(layer);
        offset += d * prev_dim + d;
        prev_dim = d;
    }
    let h = posts.last().expect("hidden layers present");
    let out_dim = arch.output_dim;
    let weights = &w[..out_dim * prev_dim];
    let biases = &w[out_dim * prev_dim..];
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let mut z = biases[o];
        let row = &weights[o * prev_dim..(o + 1) * prev_dim];
        for i in 0..prev_dim {
            z += row[i] * h[i];
        }
        out.push(z);
    }
    (posts, out)
}

/// Per-sample loss and its gradient in the model output.
fn loss_and_output_grad(
    head: Head,
    out: &[f64],
    targets: &Targets,
    sample: usize,
) -> (f64, Vec<f64>) {
    match (head, targets) {
        (Head::Regression, Targets::Values(vals)) => {
            let dim = out.len();
            let t = &vals[sample * dim..(sample + 1) * dim];
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(dim);
            for j in 0..dim {
                let r = out[j] - t[j];
                loss += r * r;
                grad.push(2.0 * r);
            }
            (loss, grad)
        }
        (Head::SoftmaxClassification, Targets::Labels(labels)) => {
            let label = labels[sample];
            // log-sum-exp shifted by the max logit
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = out.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + sum.ln();
            let loss = (lse - out[label]).max(0.0);
            let mut grad = Vec::with_capacity(out.len());
            for (j, &z) in out.iter().enumerate() {
                let p = (z - max).exp() / sum;
                grad.push(p - if j == label { 1.0 } else { 0.0 });
            }
            (loss, grad)
        }
        _ => unreachable!("head/target mismatch is rejected up front"),
    }
}

/// Mean per-sample loss over the batch: squared error for the regression
/// head, cross-entropy for the classification head.
pub fn mean_loss(params: &ModelParams, batch: &SampleBatch) -> Result<f64, NetError> {
    mean_loss_with(&params.arch, &params.phi, &params.w, batch)
}

pub fn mean_loss_with(
    arch: &Architecture,
    phi: &[f64],
    w: &[f64],
    batch: &SampleBatch,
) -> Result<f64, NetError> {
    check_params(arch, phi, w)?;
    check_batch(arch, batch)?;
    let mut total = 0.0;
    for s in 0..batch.count {
        let (_, out) = forward_sample(arch, phi, w, batch.input_row(s));
        let (loss, _) = loss_and_output_grad(arch.head, &out, &batch.targets, s);
        if !loss.is_finite() {
            return Err(NetError::NonFinite("loss"));
        }
        total += loss;
    }
    Ok(total / batch.count as f64)
}

/// Gradient of `mean_loss` with respect to the task block `w`, `phi` fixed.
pub fn grad_w(params: &ModelParams, batch: &SampleBatch) -> Result<Vec<f64>, NetError> {
    Ok(loss_and_grad_w(&params.arch, &params.phi, &params.w, batch)?.1)
}

/// Loss and `w`-gradient in one pass; the inner loop uses this to record the
/// support-loss trajectory without extra forward passes.
pub fn loss_and_grad_w(
    arch: &Architecture,
    phi: &[f64],
    w: &[f64],
    batch: &SampleBatch,
) -> Result<(f64, Vec<f64>), NetError> {
    check_params(arch, phi, w)?;
    check_batch(arch, batch)?;
    let last_dim = *arch.hidden_dims.last().unwrap();
    let out_dim = arch.output_dim;
    let mut grad = vec![0.0; arch.w_len()];
    let mut total = 0.0;
    for s in 0..batch.count {
        let (posts, out) = forward_sample(arch, phi, w, batch.input_row(s));
        let (loss, dy) = loss_and_output_grad(arch.head, &out, &batch.targets, s);
        if !loss.is_finite() || dy.iter().any(|g| !g.is_finite()) {
            return Err(NetError::NonFinite("loss gradient"));
        }
        total += loss;
        let h = posts.last().unwrap();
        for o in 0..out_dim {
            let row = &mut grad[o * last_dim..(o + 1) * last_dim];
            for i in 0..last_dim {
                row[i] += dy[o] * h[i];
            }
        }
        for o in 0..out_dim {
            grad[out_dim * last_dim + o] += dy[o];
        }
    }
    let scale = 1.0 / batch.count as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((total * scale, grad))
}

/// Gradient of `mean_loss` with respect to the shared block `phi` at the
/// given `(phi, w)`. Partial derivative only.
pub fn grad_phi(params: &ModelParams, batch: &SampleBatch) -> Result<Vec<f64>, NetError> {
    grad_phi_with(&params.arch, &params.phi, &params.w, batch)
}

pub fn grad_phi_with(
    arch: &Architecture,
    phi: &[f64],
    w: &[f64],
    batch: &SampleBatch,
) -> Result<Vec<f64>, NetError> {
    check_params(arch, phi, w)?;
    check_batch(arch, batch)?;
    let n_hidden = arch.hidden_dims.len();
    let last_dim = *arch.hidden_dims.last().unwrap();
    let out_dim = arch.output_dim;

    // Per-layer offsets into phi.
    let mut offsets = Vec::with_capacity(n_hidden);
    let mut prev = arch.input_dim;
    let mut off = 0;
    for &d in &arch.hidden_dims {
        offsets.push((off, prev, d));
        off += d * prev + d;
        prev = d;
    }

    let mut grad = vec![0.0; arch.phi_len()];
    for s in 0..batch.count {
        let x = batch.input_row(s);
        let (posts, out) = forward_sample(arch, phi, w, x);
        let (loss, dy) = loss_and_output_grad(arch.head, &out, &batch.targets, s);
        if !loss.is_finite() || dy.iter().any(|g| !g.is_finite()) {
            return Err(NetError::NonFinite("loss gradient"));
        }

        // Delta entering the last hidden layer through the final weights.
        let final_w = &w[..out_dim * last_dim];
        let mut delta = vec![0.0; last_dim];
        for i in 0..last_dim {
            let mut acc = 0.0;
            for o in 0..out_dim {
                acc += final_w[o * last_dim + i] * dy[o];
            }
            delta[i] = acc * arch.activation.derivative_from_output(posts[n_hidden - 1][i]);
        }

        // Walk hidden layers back to the input.
        for l in (0..n_hidden).rev() {
            let (off, in_dim, d) = offsets[l];
            let input: &[f64] = if l == 0 { x } else { &posts[l - 1] };
            for o in 0..d {
                let row = &mut grad[off + o * in_dim..off + (o + 1) * in_dim];
                for i in 0..in_dim {
                    row[i] += delta[o] * input[i];
                }
            }
            for o in 0..d {
                grad[off + d * in_dim + o] += delta[o];
            }
            if l > 0 {
                let weights = &phi[off..off + d * in_dim];
                let mut next = vec![0.0; in_dim];
                for i in 0..in_dim {
                    let mut acc = 0.0;
                    for o in 0..d {
                        acc += weights[o * in_dim + i] * delta[o];
                    }
                    next[i] = acc * arch.activation.derivative_from_output(posts[l - 1][i]);
                }
                delta = next;
            }
        }
    }
    let scale = 1.0 / batch.count as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

/// Raw model outputs for each sample, row-major `count x output_dim`.
pub fn predict(params: &ModelParams, batch: &SampleBatch) -> Result<Vec<f64>, NetError> {
    check_params(&params.arch, &params.phi, &params.w)?;
    if batch.count == 0 {
        return Err(NetError::EmptyBatch);
    }
    if batch.input_dim != params.arch.input_dim {
        return Err(NetError::DimensionMismatch("predict input dim".into()));
    }
    let mut out = Vec::with_capacity(batch.count * params.arch.output_dim);
    for s in 0..batch.count {
        let (_, o) = forward_sample(&params.arch, &params.phi, &params.w, batch.input_row(s));
        out.extend(o);
    }
    Ok(out)
}
