//! Closed-form bias/variance tradeoff of mixing a surrogate gradient into a
//! zeroth-order estimate, plus Monte Carlo machinery that validates the
//! formulas empirically.
//!
//! The model: the zeroth-order estimate is `g_Z = grad + zeta` with
//! `zeta ~ N(0, sigma2 * I_d)`; the surrogate is `g_B = grad + b` with
//! `E[b]` of squared norm `bias2` and total variance `tau2`. Mixing with
//! weight `lambda` on the surrogate gives
//!
//! ```text
//! MSE(lambda) = lambda^2 (bias2 + tau2) + (1 - lambda)^2 d sigma2
//! ```
//!
//! which is strictly convex whenever `d sigma2 + bias2 + tau2 > 0`.

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Noise scales of the two estimators being mixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorStats {
    /// Parameter dimension.
    pub d: usize,
    /// Per-coordinate variance of the zeroth-order noise.
    pub sigma2: f64,
    /// Squared norm of the surrogate's mean bias.
    pub bias2: f64,
    /// Total variance of the surrogate.
    pub tau2: f64,
    /// PL constant of the objective (used by descent experiments).
    pub mu: f64,
    /// Smoothness constant of the objective.
    pub l0: f64,
}

impl EstimatorStats {
    pub fn new(d: usize, sigma2: f64, bias2: f64, tau2: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("stats: d must be >= 1".into()));
        }
        for (name, v) in [("sigma2", sigma2), ("bias2", bias2), ("tau2", tau2)] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("stats: {name} must be >= 0 (got {v})")));
            }
        }
        Ok(Self { d, sigma2, bias2, tau2, mu: 1.0, l0: 1.0 })
    }

    /// Total zeroth-order noise, `d * sigma2`.
    pub fn zoo_noise(&self) -> f64 {
        self.d as f64 * self.sigma2
    }

    /// Total surrogate error, `bias2 + tau2`.
    pub fn surrogate_error(&self) -> f64 {
        self.bias2 + self.tau2
    }
}

/// Mean squared error of the mixed estimator at mixing weight `lambda`.
pub fn mse_lambda(stats: &EstimatorStats, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must be in [0, 1] (got {lambda})")));
    }
    Ok(lambda * lambda * stats.surrogate_error() + (1.0 - lambda) * (1.0 - lambda) * stats.zoo_noise())
}

/// The minimizer of [`mse_lambda`]: `d sigma2 / (d sigma2 + bias2 + tau2)`.
pub fn optimal_lambda(stats: &EstimatorStats) -> Result<f64> {
    let denom = stats.zoo_noise() + stats.surrogate_error();
    if denom <= 0.0 {
        return Err(Error::DegenerateStats("d*sigma2 + bias2 + tau2 must be > 0".into()));
    }
    Ok(stats.zoo_noise() / denom)
}

/// Iteration-complexity ratio of pure zeroth-order descent over optimally
/// mixed descent: `1 + d sigma2 / (bias2 + tau2)`.
pub fn speedup_ratio(stats: &EstimatorStats) -> Result<f64> {
    let err = stats.surrogate_error();
    if err <= 0.0 {
        return Err(Error::UnboundedSpeedup);
    }
    Ok(1.0 + stats.zoo_noise() / err)
}

/// Residual-error ratio of mixed over pure zeroth-order descent at a fixed
/// round budget: `(1 + (bias2 + tau2) / (d sigma2))^-1`, in `(0, 1]`.
pub fn accuracy_ratio(stats: &EstimatorStats) -> Result<f64> {
    let noise = stats.zoo_noise();
    if noise <= 0.0 {
        return Err(Error::DegenerateStats("d*sigma2 must be > 0".into()));
    }
    Ok(1.0 / (1.0 + stats.surrogate_error() / noise))
}

/// Empirical MSE at `lambda` over `trials` simulated draws.
///
/// Each trial mixes `g_Z = zeta` and `g_B = b_mean + xi` around a zero true
/// gradient, with `zeta ~ N(0, sigma2 I_d)`, `b_mean` spreading `bias2`
/// evenly over coordinates, and `xi ~ N(0, tau2/d I_d)` so the surrogate's
/// total variance is `tau2` regardless of `d`.
pub fn montecarlo_mse(stats: &EstimatorStats, lambda: f64, trials: usize, seed: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must be in [0, 1] (got {lambda})")));
    }
    if trials < 1000 {
        return Err(Error::Config(format!("trials must be >= 1000 (got {trials})")));
    }
    let d = stats.d;
    let sigma = stats.sigma2.sqrt();
    let bias_coord = (stats.bias2 / d as f64).sqrt();
    let tau_coord = (stats.tau2 / d as f64).sqrt();
    let mut total = 0.0;
    for trial in 0..trials {
        // Per-trial addressed stream keeps trials order-free.
        let mut rng = CounterRng::new(seed ^ 0x4D43_5F4D_5345 ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut sq = 0.0;
        let mut i = 0;
        while i < d {
            let (a, b) = rng.next_normal_pair();
            let (c, e) = rng.next_normal_pair();
            let zeta = sigma * a;
            let xi = bias_coord + tau_coord * b;
            let err = lambda * xi + (1.0 - lambda) * zeta;
            sq += err * err;
            i += 1;
            if i < d {
                let zeta = sigma * c;
                let xi = bias_coord + tau_coord * e;
                let err = lambda * xi + (1.0 - lambda) * zeta;
                sq += err * err;
                i += 1;
            }
        }
        total += sq;
    }
    Ok(total / trials as f64)
}

/// Outcome of one noisy-descent run on the controlled quadratic objective.
#[derive(Debug, Clone, Copy)]
pub struct DescentOutcome {
    /// First iteration with `f(w_t) <= target`, if reached.
    pub iterations: Option<usize>,
    /// Final objective value.
    pub final_value: f64,
}

/// Noisy gradient descent on `f(w) = mu/2 ||w||^2` with injected estimator
/// noise, mixing weight `lambda`, and the diminishing step `1 / (mu * t)`.
///
/// The gradient fed to each step is `grad + lambda*(b_mean + xi) +
/// (1-lambda)*zeta` with the same noise model as [`montecarlo_mse`], so
/// iteration counts to a fixed sub-optimality can be compared against
/// [`speedup_ratio`].
pub fn quadratic_descent(
    stats: &EstimatorStats,
    lambda: f64,
    start_radius: f64,
    target: f64,
    max_iters: usize,
    seed: u64,
) -> Result<DescentOutcome> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must be in [0, 1] (got {lambda})")));
    }
    if !(stats.mu > 0.0) {
        return Err(Error::Config("stats: mu must be > 0 for descent".into()));
    }
    let d = stats.d;
    let sigma = stats.sigma2.sqrt();
    let bias_coord = (stats.bias2 / d as f64).sqrt();
    let tau_coord = (stats.tau2 / d as f64).sqrt();
    let mut w = vec![start_radius / (d as f64).sqrt(); d];
    let mut rng = CounterRng::new(seed ^ 0x7175_6164_7261_7469);
    let mut reached = None;
    let mut value = objective(&w, stats.mu);
    for t in 1..=max_iters {
        if reached.is_none() && value <= target {
            reached = Some(t - 1);
            break;
        }
        let eta = 1.0 / (stats.mu * t as f64);
        for wi in w.iter_mut() {
            let (a, b) = rng.next_normal_pair();
            let zeta = sigma * a;
            let xi = bias_coord + tau_coord * b;
            let g = stats.mu * *wi + lambda * xi + (1.0 - lambda) * zeta;
            *wi -= eta * g;
        }
        value = objective(&w, stats.mu);
    }
    if reached.is_none() && value <= target {
        reached = Some(max_iters);
    }
    Ok(DescentOutcome { iterations: reached, final_value: value })
}

fn objective(w: &[f64], mu: f64) -> f64 {
    0.5 * mu * w.iter().map(|x| x * x).sum::<f64>()
}

/// One row of the tradeoff table printed by the `analyze` command.
#[derive(Debug, Clone, Copy)]
pub struct TradeoffRow {
    pub lambda: f64,
    pub mse: f64,
}

/// MSE curve over a uniform lambda grid plus the derived summary numbers.
pub struct TradeoffTable {
    pub rows: Vec<TradeoffRow>,
    pub optimal_lambda: f64,
    pub mse_at_optimum: f64,
    pub speedup: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn tradeoff_table(stats: &EstimatorStats, grid_points: usize) -> Result<TradeoffTable> {
    let n = grid_points.max(2);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let lambda = i as f64 / (n - 1) as f64;
        rows.push(TradeoffRow { lambda, mse: mse_lambda(stats, lambda)? });
    }
    let lstar = optimal_lambda(stats)?;
    Ok(TradeoffTable {
        rows,
        optimal_lambda: lstar,
        mse_at_optimum: mse_lambda(stats, lstar)?,
        speedup: speedup_ratio(stats).ok(),
        accuracy: accuracy_ratio(stats).ok(),
    })
}
