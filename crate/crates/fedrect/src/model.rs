//! Small differentiable models: multinomial logistic regression and a
//! one-hidden-layer tanh MLP.
//!
//! Every role evaluates the same mean cross-entropy forward loss; the cloud
//! role additionally uses the exact analytic gradient. Parameters live in a
//! single flat vector with a layer segmentation map so perturbations can be
//! generated and shipped layer by layer.

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Layer size descriptor: `[in, out]` is logistic regression, `[in, hidden,
/// out]` is the MLP. The hidden activation is tanh so the two-point
/// estimator sees a smooth objective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    dims: Vec<usize>,
}

impl Arch {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::Config(format!(
                "model.arch: expected 2 (logistic) or 3 (MLP) sizes, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("model.arch: all dimensions must be >= 1, got {dims:?}")));
        }
        Ok(Self { dims: dims.to_vec() })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        if self.dims.len() == 3 {
            Some(self.dims[1])
        } else {
            None
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Weight/bias segment lengths in storage order.
    fn segment_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for w in self.dims.windows(2) {
            out.push(w[0] * w[1]); // weight matrix, row-major [in x out]
            out.push(w[1]); // bias
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.segment_lengths().iter().sum()
    }
}

/// One contiguous parameter segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
}

/// Ordered, disjoint, contiguous segments covering `[0, d)` exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMap {
    segments: Vec<Segment>,
    dim: usize,
}

impl LayerMap {
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() || lengths.iter().any(|&l| l == 0) {
            return Err(Error::Config(format!("layer map lengths must be nonempty and positive: {lengths:?}")));
        }
        let mut segments = Vec::with_capacity(lengths.len());
        let mut offset = 0;
        for &len in lengths {
            segments.push(Segment { offset, len });
            offset += len;
        }
        Ok(Self { segments, dim: offset })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segment(&self, i: usize) -> Option<Segment> {
        self.segments.get(i).copied()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }
}

/// Flat model parameters plus their segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layer_map: LayerMap,
    arch: Arch,
}

impl ParameterVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layer_map(&self) -> &LayerMap {
        &self.layer_map
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    /// `values <- values - eta * gradient`, rejecting non-finite results.
    pub fn apply_step(&mut self, gradient: &[f64], eta: f64) -> Result<()> {
        if gradient.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "gradient length {} != parameter length {}",
                gradient.len(),
                self.values.len()
            )));
        }
        for (w, g) in self.values.iter_mut().zip(gradient) {
            *w -= eta * g;
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("parameter {i} after update") });
        }
        Ok(())
    }
}

/// A labelled minibatch, inputs stored row-major `(B x feature_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Shape("batch must contain at least one sample".into()));
        }
        if inputs.len() != labels.len() * feature_dim {
            return Err(Error::Shape(format!(
                "inputs length {} != {} samples x {} features",
                inputs.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Shape(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self { inputs, labels, feature_dim })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

const INIT_DOMAIN: u64 = 0x6D6F_6465_6C5F_696E; // internal tag, not a protocol stream

/// Deterministic initialization: weights from a small-variance normal scheme
/// (`0.1 / sqrt(fan_in)` scale), biases zero.
pub fn init_model(arch: &Arch, seed: u64) -> Result<ParameterVector> {
    let lengths = arch.segment_lengths();
    let layer_map = LayerMap::from_lengths(&lengths)?;
    let mut values = vec![0.0; layer_map.dim()];
    let mut rng = CounterRng::new(seed ^ INIT_DOMAIN);
    for (li, w) in arch.dims.windows(2).enumerate() {
        let seg = layer_map.segment(2 * li).unwrap();
        let scale = 0.1 / (w[0] as f64).sqrt();
        let mut i = seg.offset;
        while i < seg.offset + seg.len {
            let (a, b) = rng.next_normal_pair();
            values[i] = scale * a;
            i += 1;
            if i < seg.offset + seg.len {
                values[i] = scale * b;
                i += 1;
            }
        }
        // Bias segment stays zero.
    }
    Ok(ParameterVector { values, layer_map, arch: arch.clone() })
}

fn check_batch(params: &ParameterVector, batch: &Batch) -> Result<()> {
    if batch.feature_dim() != params.arch.input_dim() {
        return Err(Error::Shape(format!(
            "batch feature dim {} != model input dim {}",
            batch.feature_dim(),
            params.arch.input_dim()
        )));
    }
    Ok(())
}

/// Stable `-log softmax[label]` given raw logits.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    -(logits[label] - max - log_sum)
}

fn softmax_into(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

/// Mean cross-entropy of `params` over `batch`. Pure function.
pub fn forward_loss(params: &ParameterVector, batch: &Batch) -> Result<f64> {
    forward_loss_values(params.values(), &params.arch, batch)
}

/// Same as [`forward_loss`], over a raw value slice. Used by the two-point
/// estimator, which evaluates perturbed copies of the live vector.
pub fn forward_loss_values(values: &[f64], arch: &Arch, batch: &Batch) -> Result<f64> {
    if values.len() != arch.param_count() {
        return Err(Error::Shape(format!(
            "value vector length {} != arch parameter count {}",
            values.len(),
            arch.param_count()
        )));
    }
    if batch.feature_dim() != arch.input_dim() {
        return Err(Error::Shape(format!(
            "batch feature dim {} != model input dim {}",
            batch.feature_dim(),
            arch.input_dim()
        )));
    }
    let mut total = 0.0;
    let mut logits = vec![0.0; arch.output_dim()];
    let mut hidden = arch.hidden_dim().map(|h| vec![0.0; h]);
    for s in 0..batch.size() {
        logits_for(values, arch, batch.row(s), hidden.as_deref_mut(), &mut logits);
        total += cross_entropy(&logits, batch.label(s));
    }
    let loss = total / batch.size() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "forward loss".into() });
    }
    Ok(loss)
}

/// Computes logits for one sample; fills `hidden` with tanh activations when
/// the arch has a hidden layer.
fn logits_for(values: &[f64], arch: &Arch, x: &[f64], hidden: Option<&mut [f64]>, logits: &mut [f64]) {
    match (arch.hidden_dim(), hidden) {
        (None, _) => {
            let (fin, fout) = (arch.input_dim(), arch.output_dim());
            let w = &values[..fin * fout];
            let b = &values[fin * fout..];
            for c in 0..fout {
                logits[c] = b[c];
            }
            for (f, &xf) in x.iter().enumerate() {
                let row = &w[f * fout..(f + 1) * fout];
                for c in 0..fout {
                    logits[c] += xf * row[c];
                }
            }
        }
        (Some(h), Some(hid)) => {
            let (fin, fout) = (arch.input_dim(), arch.output_dim());
            let w1 = &values[..fin * h];
            let b1 = &values[fin * h..fin * h + h];
            let w2_off = fin * h + h;
            let w2 = &values[w2_off..w2_off + h * fout];
            let b2 = &values[w2_off + h * fout..];
            hid.copy_from_slice(b1);
            for (f, &xf) in x.iter().enumerate() {
                let row = &w1[f * h..(f + 1) * h];
                for j in 0..h {
                    hid[j] += xf * row[j];
                }
            }
            for v in hid.iter_mut() {
                *v = v.tanh();
            }
            for c in 0..fout {
                logits[c] = b2[c];
            }
            for (j, &hj) in hid.iter().enumerate() {
                let row = &w2[j * fout..(j + 1) * fout];
                for c in 0..fout {
                    logits[c] += hj * row[c];
                }
            }
        }
        (Some(_), None) => unreachable!("hidden buffer required for MLP"),
    }
}

/// Exact analytic gradient of [`forward_loss`] with respect to every
/// parameter, in storage order.
pub fn backprop_gradient(params: &ParameterVector, batch: &Batch) -> Result<Vec<f64>> {
    check_batch(params, batch)?;
    let arch = &params.arch;
    let values = params.values();
    let d = values.len();
    let mut grad = vec![0.0; d];
    let fin = arch.input_dim();
    let fout = arch.output_dim();
    let inv_b = 1.0 / batch.size() as f64;
    let mut logits = vec![0.0; fout];

    match arch.hidden_dim() {
        None => {
            for s in 0..batch.size() {
                let x = batch.row(s);
                logits_for(values, arch, x, None, &mut logits);
                softmax_into(&mut logits);
                logits[batch.label(s)] -= 1.0;
                let (gw, gb) = grad.split_at_mut(fin * fout);
                for (f, &xf) in x.iter().enumerate() {
                    let row = &mut gw[f * fout..(f + 1) * fout];
                    for c in 0..fout {
                        row[c] += inv_b * xf * logits[c];
                    }
                }
                for c in 0..fout {
                    gb[c] += inv_b * logits[c];
                }
            }
        }
        Some(h) => {
            let w2_off = fin * h + h;
            let mut hid = vec![0.0; h];
            let mut dpre = vec![0.0; h];
            for s in 0..batch.size() {
                let x = batch.row(s);
                logits_for(values, arch, x, Some(&mut hid), &mut logits);
                softmax_into(&mut logits);
                logits[batch.label(s)] -= 1.0;

                let w2 = &values[w2_off..w2_off + h * fout];
                for j in 0..h {
                    let mut dh = 0.0;
                    let row = &w2[j * fout..(j + 1) * fout];
                    for c in 0..fout {
                        dh += logits[c] * row[c];
                    }
                    dpre[j] = dh * (1.0 - hid[j] * hid[j]); // tanh'
                }

                for (f, &xf) in x.iter().enumerate() {
                    let row = &mut grad[f * h..(f + 1) * h];
                    for j in 0..h {
                        row[j] += inv_b * xf * dpre[j];
                    }
                }
                for j in 0..h {
                    grad[fin * h + j] += inv_b * dpre[j];
                }
                for (j, &hj) in hid.iter().enumerate() {
                    let row = &mut grad[w2_off + j * fout..w2_off + (j + 1) * fout];
                    for c in 0..fout {
                        row[c] += inv_b * hj * logits[c];
                    }
                }
                for c in 0..fout {
                    grad[w2_off + h * fout + c] += inv_b * logits[c];
                }
            }
        }
    }
    Ok(grad)
}

/// Fraction of batch samples whose argmax logit matches the label.
pub fn accuracy(params: &ParameterVector, batch: &Batch) -> Result<f64> {
    check_batch(params, batch)?;
    let arch = &params.arch;
    let mut logits = vec![0.0; arch.output_dim()];
    let mut hidden = arch.hidden_dim().map(|h| vec![0.0; h]);
    let mut hits = 0usize;
    for s in 0..batch.size() {
        logits_for(params.values(), arch, batch.row(s), hidden.as_deref_mut(), &mut logits);
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == batch.label(s) {
            hits += 1;
        }
    }
    Ok(hits as f64 / batch.size() as f64)
}

/// Rough multiply-add count of one forward pass over `batch_size` samples,
/// used by the deterministic wall-clock model.
pub fn forward_flops(arch: &Arch, batch_size: usize) -> f64 {
    let per_sample: usize = arch.dims.windows(2).map(|w| 2 * w[0] * w[1]).sum();
    (per_sample * batch_size) as f64
}
