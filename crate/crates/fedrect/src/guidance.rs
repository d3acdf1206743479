//! Cloud-side guidance: backprop training on the public split, a ring buffer
//! of recent gradients, the orthonormal basis spanned by them, and guided
//! perturbation sampling from that subspace.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{backprop_gradient, Batch, LayerMap, ParameterVector};
use crate::rng::{gaussian_stream, StreamAddress};

/// Default number of retained history gradients.
pub const DEFAULT_M_MAX: usize = 16;

/// Default relative rank tolerance for basis construction.
pub const DEFAULT_BASIS_TOL: f64 = 1e-10;

/// Ring buffer of recent gradients plus the orthonormal basis built from
/// them (newest first). The basis always satisfies
/// `max |V'V - I| <= 1e-8`; vectors that are numerically dependent get
/// dropped rather than normalized into noise.
#[derive(Debug, Clone)]
pub struct GradientSubspace {
    history: VecDeque<Vec<f64>>,
    m_max: usize,
    tol: f64,
    basis: Vec<Vec<f64>>,
    ambient_dim: usize,
}

impl GradientSubspace {
    pub fn new(m_max: usize, tol: f64) -> Self {
        Self {
            history: VecDeque::with_capacity(m_max.max(1)),
            m_max: m_max.max(1),
            tol,
            basis: Vec::new(),
            ambient_dim: 0,
        }
    }

    /// Appends a gradient, evicting the oldest once `m_max` are held.
    pub fn push_gradient(&mut self, gradient: Vec<f64>) {
        self.ambient_dim = gradient.len();
        if self.history.len() == self.m_max {
            self.history.pop_front();
        }
        self.history.push_back(gradient);
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Current effective subspace dimension (basis columns).
    pub fn m(&self) -> usize {
        self.basis.len()
    }

    /// Ambient (parameter) dimension.
    pub fn dim(&self) -> usize {
        self.ambient_dim
    }

    /// Orthonormal columns, each of ambient length.
    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Rebuilds the basis from the current history, newest gradient first.
    pub fn rebuild(&mut self) -> Result<()> {
        let history: Vec<&Vec<f64>> = self.history.iter().rev().collect();
        if history.is_empty() {
            self.basis.clear();
            return Err(Error::EmptyBasis);
        }
        self.basis = orthonormalize(&history, self.m_max, self.tol);
        if self.basis.is_empty() {
            return Err(Error::EmptyBasis);
        }
        Ok(())
    }

    /// `V z_g` for coefficients `z_g` of length `m`.
    pub fn multiply(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.basis.len());
        let mut out = vec![0.0; self.ambient_dim];
        for (c, col) in coeffs.iter().zip(&self.basis) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += c * v;
            }
        }
        out
    }

    /// Orthogonal projection `V V' x` onto the subspace.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for col in &self.basis {
            let dot: f64 = col.iter().zip(x).map(|(a, b)| a * b).sum();
            for (o, v) in out.iter_mut().zip(col) {
                *o += dot * v;
            }
        }
        out
    }

    /// Largest entry of `|V'V - I|`, the orthonormality defect.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.basis.len();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in i..m {
                let dot: f64 = self.basis[i].iter().zip(&self.basis[j]).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Modified Gram-Schmidt with a re-orthogonalization pass. Keeps at most
/// `m_max` columns; a candidate whose post-projection norm falls below
/// `tol` times its own norm is dropped.
fn orthonormalize(vectors: &[&Vec<f64>], m_max: usize, tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for &candidate in vectors {
        if basis.len() == m_max {
            break;
        }
        let own_norm = norm(candidate);
        if own_norm == 0.0 || !own_norm.is_finite() {
            continue;
        }
        let mut v = candidate.clone();
        for _pass in 0..2 {
            for col in &basis {
                let dot: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, c) in v.iter_mut().zip(col) {
                    *x -= dot * c;
                }
            }
        }
        let residual = norm(&v);
        if residual < tol * own_norm {
            continue;
        }
        for x in v.iter_mut() {
            *x /= residual;
        }
        basis.push(v);
    }
    basis
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Builds a subspace directly from a gradient history slice (newest last, as
/// a push order would produce). Fails with an empty-basis signal when every
/// vector is degenerate, in which case the caller falls back to a pure
/// zeroth-order round.
pub fn build_basis(history: &[Vec<f64>], m_max: usize, tol: f64) -> Result<GradientSubspace> {
    let mut subspace = GradientSubspace::new(m_max, tol);
    for g in history {
        subspace.push_gradient(g.clone());
    }
    subspace.rebuild()?;
    Ok(subspace)
}

/// A sampled guided direction `V z_g`, sliceable per model layer so it can
/// be shipped chunk by chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedPerturbation {
    vector: Vec<f64>,
    round: u64,
    subspace_dim: usize,
}

impl GuidedPerturbation {
    pub fn from_vector(vector: Vec<f64>, round: u64, subspace_dim: usize) -> Self {
        Self { vector, round, subspace_dim }
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn subspace_dim(&self) -> usize {
        self.subspace_dim
    }

    /// The slice of this direction belonging to one model layer.
    pub fn chunk(&self, layer_map: &LayerMap, layer_index: usize) -> Result<&[f64]> {
        let seg = layer_map.segment(layer_index).ok_or_else(|| {
            Error::Shape(format!("layer {layer_index} outside model bounds"))
        })?;
        Ok(&self.vector[seg.offset..seg.offset + seg.len])
    }
}

/// Draws `z_g ~ N(0, I_m)` from the addressed stream and returns `V z_g`.
pub fn sample_guided(subspace: &GradientSubspace, address: &StreamAddress) -> Result<GuidedPerturbation> {
    let m = subspace.m();
    if m == 0 {
        return Err(Error::EmptyBasis);
    }
    let z_g = gaussian_stream(address, m)?;
    Ok(GuidedPerturbation {
        vector: subspace.multiply(&z_g),
        round: address.round,
        subspace_dim: m,
    })
}

/// How the mixing weight is picked each guided round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Always use the configured constant.
    Fixed,
    /// `alpha = 1 - lambda*` with the optimal mixing weight computed from
    /// plugged-in scale estimates (the guided direction standing in for the
    /// backprop surrogate).
    LambdaStar,
}

/// Selects the mixing weight from the relative error scales of the two
/// perturbation sources.
///
/// `zoo_scale` is the total zeroth-order noise estimate (`d * sigma^2`-like)
/// and `guided_scale` the error scale of the guided surrogate. A
/// `guided_scale` of exactly zero means no usable guidance signal, which
/// falls back to a pure local perturbation (`alpha = 1`); both scales zero
/// falls back to the fixed default.
pub fn adaptive_alpha(zoo_scale: f64, guided_scale: f64, mode: AlphaMode, fixed_alpha: f64) -> Result<f64> {
    if zoo_scale < 0.0 || guided_scale < 0.0 {
        return Err(Error::Config(format!(
            "scales must be >= 0 (zoo {zoo_scale}, guided {guided_scale})"
        )));
    }
    if !(0.0..=1.0).contains(&fixed_alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1] (got {fixed_alpha})")));
    }
    match mode {
        AlphaMode::Fixed => Ok(fixed_alpha),
        AlphaMode::LambdaStar => {
            if zoo_scale == 0.0 && guided_scale == 0.0 {
                return Ok(fixed_alpha);
            }
            if guided_scale == 0.0 {
                return Ok(1.0);
            }
            // lambda* = zoo / (zoo + guided); alpha = 1 - lambda*.
            Ok(guided_scale / (zoo_scale + guided_scale))
        }
    }
}

/// The cloud role: its own model replica, learning rate, and the gradient
/// subspace it maintains while training on the public split.
#[derive(Debug, Clone)]
pub struct CloudNode {
    pub params: ParameterVector,
    pub learning_rate: f64,
    pub subspace: GradientSubspace,
}

impl CloudNode {
    pub fn new(params: ParameterVector, learning_rate: f64, m_max: usize, tol: f64) -> Self {
        Self { params, learning_rate, subspace: GradientSubspace::new(m_max, tol) }
    }

    /// One backprop SGD step on a public batch; the gradient is appended to
    /// the history and returned.
    pub fn bp_round(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        let gradient = backprop_gradient(&self.params, batch)?;
        self.params.apply_step(&gradient, self.learning_rate)?;
        self.subspace.push_gradient(gradient.clone());
        Ok(gradient)
    }

    /// Adopts the federated global model, keeping the gradient history.
    pub fn sync_model(&mut self, params: &ParameterVector) {
        self.params = params.clone();
    }

    /// Most recent history gradient, if any.
    pub fn latest_gradient(&self) -> Option<&Vec<f64>> {
        self.subspace.history.back()
    }
}
