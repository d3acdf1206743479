//! Two-point zeroth-order gradient estimation with antithetic sampling.
//!
//! The estimator evaluates the loss at `w + eps*z` and `w - eps*z` and
//! recovers `(delta / 2 eps) * z`. Because `z` regenerates from a stream
//! address, a client only ever uploads the scalar `delta`; the edge rebuilds
//! the full gradient estimate on its side.

use crate::error::{Error, Result};
use crate::guidance::{GradientSubspace, GuidedPerturbation};
use crate::model::{forward_loss_values, Batch, ParameterVector};
use crate::rng::{perturbation_vector, PerturbationSpec};

/// The scalar a client uploads: `L(W + eps z_h) - L(W - eps z_h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDifference {
    pub delta: f64,
    pub client_id: u32,
    pub round: u64,
    pub probe_index: u32,
}

/// Mix of a local Gaussian draw and a guided subspace direction, normalized
/// so its expected squared norm is 1:
///
/// ```text
/// z_h = sqrt(alpha / n) z + sqrt((1 - alpha) / m) V z_g
/// ```
///
/// `n` is the full parameter dimension and `m` the subspace dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPerturbation {
    pub vector: Vec<f64>,
    pub alpha: f64,
    pub local_dim: usize,
    pub subspace_dim: usize,
}

/// Forms the hybrid from a local draw and the already-multiplied guided
/// vector `V z_g`, which is how clients and the edge receive it.
pub fn hybrid_from_guided(
    z_local: &[f64],
    guided: &[f64],
    subspace_dim: usize,
    alpha: f64,
) -> Result<HybridPerturbation> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must be in [0, 1] (got {alpha})")));
    }
    let n = z_local.len();
    if subspace_dim == 0 {
        if alpha < 1.0 {
            return Err(Error::GuidanceUnavailable { alpha });
        }
        let c_local = (alpha / n as f64).sqrt();
        let vector = z_local.iter().map(|z| c_local * z).collect();
        return Ok(HybridPerturbation { vector, alpha, local_dim: n, subspace_dim: 0 });
    }
    if guided.len() != n {
        return Err(Error::Shape(format!(
            "guided vector length {} != local perturbation length {n}",
            guided.len()
        )));
    }
    let c_local = (alpha / n as f64).sqrt();
    let c_guided = ((1.0 - alpha) / subspace_dim as f64).sqrt();
    let vector = z_local
        .iter()
        .zip(guided)
        .map(|(z, g)| c_local * z + c_guided * g)
        .collect();
    Ok(HybridPerturbation { vector, alpha, local_dim: n, subspace_dim })
}

/// Forms the hybrid from the basis itself: computes `V z_g` and delegates to
/// [`hybrid_from_guided`]. `z_g` must have one entry per basis column.
pub fn hybrid_perturbation(
    z_local: &[f64],
    subspace: &GradientSubspace,
    z_g: &[f64],
    alpha: f64,
) -> Result<HybridPerturbation> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha must be in [0, 1] (got {alpha})")));
    }
    let m = subspace.m();
    if m == 0 {
        if alpha < 1.0 {
            return Err(Error::GuidanceUnavailable { alpha });
        }
        return hybrid_from_guided(z_local, &[], 0, alpha);
    }
    if z_g.len() != m {
        return Err(Error::Shape(format!("z_g length {} != subspace dimension {m}", z_g.len())));
    }
    if subspace.dim() != z_local.len() {
        return Err(Error::Shape(format!(
            "subspace ambient dimension {} != local perturbation length {}",
            subspace.dim(),
            z_local.len()
        )));
    }
    let guided = subspace.multiply(z_g);
    hybrid_from_guided(z_local, &guided, m, alpha)
}

/// Antithetic loss difference of an arbitrary objective, used by estimator
/// oracles. Mutates `values` in place and restores it exactly (the original
/// is snapshotted, both evaluation points are formed from the snapshot, and
/// the snapshot is copied back).
pub fn two_point_delta<F>(
    values: &mut [f64],
    perturbation: &[f64],
    epsilon: f64,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0 (got {epsilon})")));
    }
    if perturbation.len() != values.len() {
        return Err(Error::Shape(format!(
            "perturbation length {} != parameter length {}",
            perturbation.len(),
            values.len()
        )));
    }
    let saved = values.to_vec();
    for (v, (&w, &z)) in values.iter_mut().zip(saved.iter().zip(perturbation)) {
        *v = w + epsilon * z;
    }
    let plus = loss(values).map_err(|_| Error::NonFinite {
        context: "loss at the +epsilon perturbation".into(),
    })?;
    for (v, (&w, &z)) in values.iter_mut().zip(saved.iter().zip(perturbation)) {
        *v = w - epsilon * z;
    }
    let minus = loss(values).map_err(|_| Error::NonFinite {
        context: "loss at the -epsilon perturbation".into(),
    })?;
    values.copy_from_slice(&saved);
    debug_assert!(values == &saved[..]);
    Ok(plus - minus)
}

/// Model-bound antithetic loss difference: mean cross-entropy on `batch` at
/// `params +- eps * perturbation`. `params` is restored exactly.
pub fn two_point_loss_diff(
    params: &mut ParameterVector,
    perturbation: &[f64],
    epsilon: f64,
    batch: &Batch,
    client_id: u32,
    round: u64,
    probe_index: u32,
) -> Result<LossDifference> {
    let arch = params.arch().clone();
    let delta = two_point_delta(params.values_mut(), perturbation, epsilon, |w| {
        forward_loss_values(w, &arch, batch)
    })?;
    Ok(LossDifference { delta, client_id, round, probe_index })
}

/// `(delta / 2 eps) * perturbation`, the edge-side gradient reconstruction.
pub fn reconstruct_gradient(delta: f64, perturbation: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0 (got {epsilon})")));
    }
    let scale = delta / (2.0 * epsilon);
    Ok(perturbation.iter().map(|z| scale * z).collect())
}

/// Coordinate-wise mean of equally sized vectors, with a fixed accumulation
/// order so edge-side and client-side paths produce identical bits.
pub fn mean_vectors(vectors: &[Vec<f64>]) -> Vec<f64> {
    assert!(!vectors.is_empty());
    let mut acc = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let inv = 1.0 / vectors.len() as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
    acc
}

/// Mean of `K` reconstructed single-probe estimates, one per spec. Guided
/// specs mix with the supplied guided perturbation; specs are evaluated in
/// order. Stands in for heavier variance-control schemes.
pub fn multi_sample_estimate(
    params: &mut ParameterVector,
    batch: &Batch,
    specs: &[PerturbationSpec],
    guided: Option<&GuidedPerturbation>,
) -> Result<Vec<f64>> {
    let first = specs.first().ok_or_else(|| Error::Config("at least one perturbation spec required".into()))?;
    if specs.iter().any(|s| {
        s.address.round != first.address.round || s.address.client_id != first.address.client_id
    }) {
        return Err(Error::Config("all specs must share round and client".into()));
    }
    let layer_map = params.layer_map().clone();
    let mut gradients = Vec::with_capacity(specs.len());
    for spec in specs {
        let z = perturbation_vector(&spec.address, &layer_map);
        let pert = if spec.guided {
            let gp = guided.ok_or(Error::GuidanceUnavailable { alpha: spec.alpha })?;
            hybrid_from_guided(&z, gp.vector(), gp.subspace_dim(), spec.alpha)?.vector
        } else {
            z
        };
        let ld = two_point_loss_diff(
            params,
            &pert,
            spec.epsilon,
            batch,
            spec.address.client_id,
            spec.address.round,
            spec.address.probe_index,
        )?;
        gradients.push(reconstruct_gradient(ld.delta, &pert, spec.epsilon)?);
    }
    Ok(mean_vectors(&gradients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::build_basis;
    use crate::model::{init_model, Arch, LayerMap};
    use crate::rng::{gaussian_stream, CounterRng, StreamAddress};

    fn quadratic(w: &[f64]) -> Result<f64> {
        Ok(0.5 * w.iter().map(|x| x * x).sum::<f64>())
    }

    fn unit(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn hybrid_alpha_one_is_scaled_local() {
        let d = 16;
        let z = gaussian_stream(&StreamAddress::new(1, 0, 0, 0), d).unwrap();
        let basis = build_basis(&[unit(d, 0)], 4, 1e-10).unwrap();
        let zh = hybrid_perturbation(&z, &basis, &[0.3], 1.0).unwrap();
        let c = (1.0 / d as f64).sqrt();
        for (h, zi) in zh.vector.iter().zip(&z) {
            assert_eq!(*h, c * zi);
        }
    }

    #[test]
    fn hybrid_alpha_zero_is_scaled_guided() {
        let d = 8;
        let z = gaussian_stream(&StreamAddress::new(2, 0, 0, 0), d).unwrap();
        let basis = build_basis(&[unit(d, 1), unit(d, 3)], 4, 1e-10).unwrap();
        let z_g = [0.7, -1.2];
        let zh = hybrid_perturbation(&z, &basis, &z_g, 0.0).unwrap();
        let guided = basis.multiply(&z_g);
        let c = (1.0f64 / 2.0).sqrt();
        for (h, g) in zh.vector.iter().zip(&guided) {
            assert_eq!(*h, c * g);
        }
    }

    #[test]
    fn hybrid_norm_is_unit_in_expectation() {
        let d = 64;
        let m = 8;
        let cols: Vec<Vec<f64>> = (0..m).map(|j| unit(d, j * 3)).collect();
        let basis = build_basis(&cols, m, 1e-10).unwrap();
        let mut total = 0.0;
        let trials = 10_000;
        for t in 0..trials {
            let z = gaussian_stream(&StreamAddress::new(77, t, 0, 0), d).unwrap();
            let zg = gaussian_stream(&StreamAddress::new(78, t, 0, 0), m).unwrap();
            let zh = hybrid_perturbation(&z, &basis, &zg, 0.5).unwrap();
            total += zh.vector.iter().map(|x| x * x).sum::<f64>();
        }
        let mean = total / trials as f64;
        assert!((0.97..=1.03).contains(&mean), "mean ||z_h||^2 = {mean}");
    }

    #[test]
    fn missing_subspace_with_alpha_below_one_errors() {
        let z = vec![1.0; 4];
        assert!(matches!(
            hybrid_from_guided(&z, &[], 0, 0.5),
            Err(Error::GuidanceUnavailable { .. })
        ));
        assert!(hybrid_from_guided(&z, &[], 0, 1.0).is_ok());
    }

    #[test]
    fn two_point_delta_on_quadratic() {
        // f(w) = 0.5 ||w||^2 at w = e1, z = e1, eps = 0.01:
        // delta = 0.5 (1.01^2 - 0.99^2) = 0.02.
        let mut w = unit(4, 0);
        let z = unit(4, 0);
        let delta = two_point_delta(&mut w, &z, 0.01, quadratic).unwrap();
        assert!((delta - 0.02).abs() < 1e-15, "delta {delta}");
        assert_eq!(w, unit(4, 0), "parameters not restored");
    }

    #[test]
    fn two_point_delta_zero_at_symmetric_minimum() {
        let mut w = vec![0.0; 6];
        let z = gaussian_stream(&StreamAddress::new(5, 1, 0, 0), 6).unwrap();
        let delta = two_point_delta(&mut w, &z, 0.05, quadratic).unwrap();
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn two_point_is_pure_and_restores_model_params() {
        let arch = Arch::new(&[5, 4, 3]).unwrap();
        let mut params = init_model(&arch, 9).unwrap();
        let before = params.values().to_vec();
        let batch = {
            let mut rng = CounterRng::new(4);
            let inputs: Vec<f64> = (0..5 * 6).map(|_| rng.next_normal_pair().0).collect();
            Batch::new(inputs, vec![0, 1, 2, 0, 1, 2], 5, 3).unwrap()
        };
        let z = gaussian_stream(&StreamAddress::new(6, 0, 0, 0), params.dim()).unwrap();
        let a = two_point_loss_diff(&mut params, &z, 1e-3, &batch, 0, 0, 0).unwrap();
        assert_eq!(params.values(), &before[..], "exact restore");
        let b = two_point_loss_diff(&mut params, &z, 1e-3, &batch, 0, 0, 0).unwrap();
        assert_eq!(a.delta.to_bits(), b.delta.to_bits());
    }

    #[test]
    fn reconstruct_continues_the_quadratic_example() {
        let g = reconstruct_gradient(0.02, &unit(4, 0), 0.01).unwrap();
        // True gradient of 0.5||w||^2 at e1 is e1.
        for (i, v) in g.iter().enumerate() {
            let expect = if i == 0 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
        assert!(reconstruct_gradient(1.0, &[1.0], 0.0).is_err());
        assert_eq!(reconstruct_gradient(0.0, &unit(3, 1), 0.1).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn reconstruct_is_linear_in_delta() {
        let z = gaussian_stream(&StreamAddress::new(8, 0, 0, 0), 10).unwrap();
        let a = reconstruct_gradient(0.3, &z, 0.01).unwrap();
        let b = reconstruct_gradient(0.6, &z, 0.01).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn single_probe_estimates_are_unbiased_on_quadratic() {
        // f(w) = 0.5 w' A w with diagonal A; mean over many probes must land
        // within 3 standard errors of A w per coordinate.
        let d = 10;
        let a_diag: Vec<f64> = (0..d).map(|i| 0.5 + i as f64 * 0.25).collect();
        let w0: Vec<f64> = (0..d).map(|i| (i as f64 * 0.7).sin()).collect();
        let grad_true: Vec<f64> = a_diag.iter().zip(&w0).map(|(a, w)| a * w).collect();
        let trials = 10_000usize;
        let eps = 1e-5;
        let mut sums = vec![0.0; d];
        let mut sums_sq = vec![0.0; d];
        let mut w = w0.clone();
        let loss = |v: &[f64]| Ok(0.5 * v.iter().zip(&a_diag).map(|(x, a)| a * x * x).sum::<f64>());
        for t in 0..trials {
            let z = gaussian_stream(&StreamAddress::new(321, t as u64, 0, 0), d).unwrap();
            let delta = two_point_delta(&mut w, &z, eps, loss).unwrap();
            let g = reconstruct_gradient(delta, &z, eps).unwrap();
            for i in 0..d {
                sums[i] += g[i];
                sums_sq[i] += g[i] * g[i];
            }
        }
        for i in 0..d {
            let mean = sums[i] / trials as f64;
            let var = sums_sq[i] / trials as f64 - mean * mean;
            let se = (var / trials as f64).sqrt();
            let dev = (mean - grad_true[i]).abs();
            assert!(dev <= 3.0 * se, "coord {i}: dev {dev} > 3 se {se}");
        }
    }

    #[test]
    fn alpha_zero_estimates_stay_in_span() {
        let d = 12;
        let cols = vec![unit(d, 0), unit(d, 5)];
        let basis = build_basis(&cols, 4, 1e-10).unwrap();
        let mut w: Vec<f64> = (0..d).map(|i| (i as f64).cos()).collect();
        for t in 0..50u64 {
            let z = gaussian_stream(&StreamAddress::new(31, t, 0, 0), d).unwrap();
            let zg = gaussian_stream(&StreamAddress::new(32, t, 0, 0), 2).unwrap();
            let zh = hybrid_perturbation(&z, &basis, &zg, 0.0).unwrap();
            let delta = two_point_delta(&mut w, &zh.vector, 1e-4, quadratic).unwrap();
            let g = reconstruct_gradient(delta, &zh.vector, 1e-4).unwrap();
            let proj = basis.project(&g);
            let residual: f64 = g
                .iter()
                .zip(&proj)
                .map(|(x, p)| (x - p) * (x - p))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(residual <= 1e-8 * norm.max(1.0), "residual {residual}");
        }
    }

    #[test]
    fn multi_sample_variance_shrinks_like_one_over_k() {
        // Coordinate-wise variance of the K-probe mean on a quadratic, fitted
        // against 1/K at K in {1, 4, 16}.
        let d = 8;
        let w0: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 * 0.1).collect();
        let eps = 1e-5;
        let mut var_at_k = Vec::new();
        for &k in &[1usize, 4, 16] {
            let trials = 1000;
            let mut sums = vec![0.0; d];
            let mut sums_sq = vec![0.0; d];
            let mut w = w0.clone();
            for trial in 0..trials {
                let mut grads = Vec::with_capacity(k);
                for probe in 0..k {
                    let addr = StreamAddress::new(5000 + k as u64, trial as u64, 0, probe as u32);
                    let z = gaussian_stream(&addr, d).unwrap();
                    let delta = two_point_delta(&mut w, &z, eps, quadratic).unwrap();
                    grads.push(reconstruct_gradient(delta, &z, eps).unwrap());
                }
                let g = mean_vectors(&grads);
                for i in 0..d {
                    sums[i] += g[i];
                    sums_sq[i] += g[i] * g[i];
                }
            }
            let mean_var: f64 = (0..d)
                .map(|i| {
                    let m = sums[i] / trials as f64;
                    sums_sq[i] / trials as f64 - m * m
                })
                .sum::<f64>()
                / d as f64;
            var_at_k.push(mean_var);
        }
        // var(K) ~ c / K: check ratios against 4x within 20 percent.
        let r1 = var_at_k[0] / var_at_k[1];
        let r2 = var_at_k[1] / var_at_k[2];
        assert!((r1 - 4.0).abs() / 4.0 <= 0.2, "var ratio K=1/K=4 was {r1}");
        assert!((r2 - 4.0).abs() / 4.0 <= 0.2, "var ratio K=4/K=16 was {r2}");
    }

    #[test]
    fn multi_sample_k1_equals_single_reconstruction() {
        let arch = Arch::new(&[4, 3]).unwrap();
        let mut params = init_model(&arch, 17).unwrap();
        let batch = {
            let mut rng = CounterRng::new(18);
            let inputs: Vec<f64> = (0..4 * 6).map(|_| rng.next_normal_pair().0).collect();
            Batch::new(inputs, vec![0, 1, 2, 0, 1, 2], 4, 3).unwrap()
        };
        let addr = StreamAddress::new(99, 3, 1, 0);
        let spec = PerturbationSpec::new(addr, 1e-3, 0.5, false).unwrap();
        let est = multi_sample_estimate(&mut params, &batch, &[spec], None).unwrap();
        let z = perturbation_vector(&addr, &LayerMap::from_lengths(&[12, 3]).unwrap());
        let ld = two_point_loss_diff(&mut params, &z, 1e-3, &batch, 1, 3, 0).unwrap();
        let single = reconstruct_gradient(ld.delta, &z, 1e-3).unwrap();
        // mean_vectors over one vector divides by 1, bit-preserving.
        assert_eq!(est, single);
        // Determinism: identical specs give identical output.
        let est2 = multi_sample_estimate(&mut params, &batch, &[spec], None).unwrap();
        assert_eq!(est, est2);
    }

    #[test]
    fn multi_sample_rejects_mixed_rounds() {
        let arch = Arch::new(&[3, 2]).unwrap();
        let mut params = init_model(&arch, 1).unwrap();
        let batch = Batch::new(vec![0.1, 0.2, 0.3], vec![0], 3, 2).unwrap();
        let a = PerturbationSpec::new(StreamAddress::new(1, 0, 0, 0), 1e-3, 0.5, false).unwrap();
        let b = PerturbationSpec::new(StreamAddress::new(1, 1, 0, 1), 1e-3, 0.5, false).unwrap();
        assert!(multi_sample_estimate(&mut params, &batch, &[a, b], None).is_err());
        assert!(multi_sample_estimate(&mut params, &batch, &[], None).is_err());
    }
}
