//! Deterministic, addressable Gaussian streams.
//!
//! Clients and the edge server never exchange perturbation vectors; both
//! regenerate them from a [`StreamAddress`]. Any two parties that agree on an
//! address obtain bit-identical draws, in any order, which is what makes the
//! scalar-loss upload protocol sound.
//!
//! # Keying layout (v1, frozen)
//!
//! Protocol correctness depends on every implementation deriving the same
//! bytes from an address, so the layout below is versioned and must not
//! change without bumping [`STREAM_LAYOUT_VERSION`].
//!
//! ```text
//! key <- root_seed
//! for field in [round, client_id, probe_index, layer_index] (that order,
//!              each zero-extended to 64 bits):
//!     key <- mix64(key XOR field)
//! raw u64 #i   = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)        (wrapping)
//! uniform #i   = ((raw >> 11) + 1) * 2^-53                         in (0, 1]
//! normals      = Box-Muller over consecutive uniform pairs (u1, u2):
//!                r = sqrt(-2 ln u1)
//!                z_{2k}   = r * cos(2 pi u2)
//!                z_{2k+1} = r * sin(2 pi u2)
//! ```
//!
//! `mix64` is the splitmix64 finalizer (30/27/31 shift constants). A stream
//! of length `n` consumes exactly `2 * ceil(n / 2)` raw u64s; the spare
//! normal of an odd-length request is discarded, never carried over.
//!
//! Reserved address values (see [`ROLE_CLOUD`], [`LANE_BATCH`]) keep
//! cloud-side draws and batch-selection draws out of the client perturbation
//! space.

use crate::error::{Error, Result};
use crate::model::LayerMap;

/// Version tag of the address-to-bytes keying layout documented above.
pub const STREAM_LAYOUT_VERSION: u32 = 1;

/// `client_id` value reserved for cloud-role draws (guided perturbations).
pub const ROLE_CLOUD: u32 = u32::MAX;

/// `probe_index` value reserved for batch-selection draws.
pub const LANE_BATCH: u32 = u32::MAX;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Identity of one deterministic stream.
///
/// Distinct addresses yield statistically independent streams; equal
/// addresses yield bit-identical streams on every host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamAddress {
    pub root_seed: u64,
    pub round: u64,
    pub client_id: u32,
    pub probe_index: u32,
    pub layer_index: u32,
}

impl StreamAddress {
    pub fn new(root_seed: u64, round: u64, client_id: u32, probe_index: u32) -> Self {
        Self { root_seed, round, client_id, probe_index, layer_index: 0 }
    }

    /// Same address with a different layer lane.
    pub fn with_layer(mut self, layer_index: u32) -> Self {
        self.layer_index = layer_index;
        self
    }

    /// Derived 64-bit stream key per the v1 layout.
    fn key(&self) -> u64 {
        let mut key = self.root_seed;
        for field in [
            self.round,
            u64::from(self.client_id),
            u64::from(self.probe_index),
            u64::from(self.layer_index),
        ] {
            key = mix64(key ^ field);
        }
        key
    }
}

/// splitmix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless counter generator over a fixed key.
///
/// `nth_u64(i)` is a pure function of `(key, i)`, so draws can be produced
/// out of order or in parallel.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn from_address(address: &StreamAddress) -> Self {
        Self::new(address.key())
    }

    /// The i-th raw output of this key, independent of generator state.
    #[inline]
    pub fn nth_u64(&self, i: u64) -> u64 {
        mix64(self.key.wrapping_add((i.wrapping_add(1)).wrapping_mul(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.nth_u64(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform draw in (0, 1], safe to feed into `ln`.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        uniform_open_closed(self.next_u64())
    }

    /// Standard-normal pair via Box-Muller.
    #[inline]
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }
}

#[inline]
fn uniform_open_closed(raw: u64) -> f64 {
    ((raw >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

// Lets the data plumbing (shuffles, Dirichlet draws) reuse the same keyed
// streams through the standard `Rng` facade. Not part of the frozen protocol
// surface.
impl rand::RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        CounterRng::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Scale, mixing weight, and stream identity of one perturbation probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub address: StreamAddress,
    pub epsilon: f64,
    pub alpha: f64,
    pub guided: bool,
}

impl PerturbationSpec {
    pub fn new(address: StreamAddress, epsilon: f64, alpha: f64, guided: bool) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0 (got {epsilon})")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1] (got {alpha})")));
        }
        Ok(Self { address, epsilon, alpha, guided })
    }
}

/// I.i.d. standard-normal draws addressed by `address`.
pub fn gaussian_stream(address: &StreamAddress, length: usize) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::EmptyRequest("gaussian_stream of length 0"));
    }
    let mut rng = CounterRng::from_address(address);
    let mut out = Vec::with_capacity(length);
    while out.len() < length {
        let (a, b) = rng.next_normal_pair();
        out.push(a);
        if out.len() < length {
            out.push(b);
        }
    }
    Ok(out)
}

/// The per-layer slice of a full-length perturbation.
///
/// The full vector for an address is *defined* layer-wise: layer `i` of the
/// model is drawn from the address with `layer_index = i`, so any single
/// layer can be regenerated without materializing the rest. Concatenating
/// the chunks for every layer of `layer_map` in order yields the full draw.
pub fn layer_chunk(
    address: &StreamAddress,
    layer_map: &LayerMap,
    layer_index: usize,
) -> Result<Vec<f64>> {
    let segment = layer_map.segment(layer_index).ok_or_else(|| {
        Error::Shape(format!(
            "layer {layer_index} outside model bounds (model has {} layers)",
            layer_map.len()
        ))
    })?;
    gaussian_stream(&address.with_layer(layer_index as u32), segment.len)
}

/// Full-length perturbation for an address, assembled layer by layer.
pub fn perturbation_vector(address: &StreamAddress, layer_map: &LayerMap) -> Vec<f64> {
    let mut out = Vec::with_capacity(layer_map.dim());
    for i in 0..layer_map.len() {
        // Segments are valid by LayerMap construction.
        out.extend(layer_chunk(address, layer_map, i).expect("valid layer map"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerMap;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn addr(round: u64, client: u32, probe: u32) -> StreamAddress {
        StreamAddress::new(0xDEAD_BEEF, round, client, probe)
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = addr(3, 7, 1);
        let x = gaussian_stream(&a, 1000).unwrap();
        let y = gaussian_stream(&a, 1000).unwrap();
        assert_eq!(x, y);
        // A shorter request is a prefix of a longer one.
        let z = gaussian_stream(&a, 10).unwrap();
        assert_eq!(&x[..10], &z[..]);
    }

    #[test]
    fn zero_length_request_is_an_error() {
        assert!(matches!(gaussian_stream(&addr(0, 0, 0), 0), Err(Error::EmptyRequest(_))));
    }

    #[test]
    fn moments_match_standard_normal() {
        let xs = gaussian_stream(&addr(1, 2, 3), 100_000).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "variance {var}");
    }

    #[test]
    fn ks_statistic_below_crit_at_point_001() {
        let mut xs = gaussian_stream(&addr(9, 0, 0), 100_000).unwrap();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = xs.len() as f64;
        let mut d = 0.0f64;
        for (i, x) in xs.iter().enumerate() {
            let cdf = normal.cdf(*x);
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
        }
        // Large-sample critical value at alpha = 0.001: sqrt(ln(2/alpha)/2)/sqrt(n).
        let crit = (f64::ln(2.0 / 0.001) / 2.0).sqrt() / n.sqrt();
        assert!(d < crit, "KS statistic {d} >= critical {crit}");
    }

    #[test]
    fn sibling_layers_are_uncorrelated() {
        let base = addr(5, 4, 2);
        let x = gaussian_stream(&base.with_layer(0), 10_000).unwrap();
        let y = gaussian_stream(&base.with_layer(1), 10_000).unwrap();
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (a, b) in x.iter().zip(&y) {
            cov += (a - mx) * (b - my);
            vx += (a - mx) * (a - mx);
            vy += (b - my) * (b - my);
        }
        let corr = cov / (vx.sqrt() * vy.sqrt());
        assert!(corr.abs() <= 0.05, "correlation {corr}");
    }

    #[test]
    fn layer_chunks_partition_the_full_draw() {
        let map = LayerMap::from_lengths(&[8, 2, 6, 3]).unwrap();
        let a = addr(2, 1, 0);
        let full = perturbation_vector(&a, &map);
        assert_eq!(full.len(), 19);
        let mut rebuilt = Vec::new();
        for i in 0..map.len() {
            rebuilt.extend(layer_chunk(&a, &map, i).unwrap());
        }
        assert_eq!(full, rebuilt);
        // Re-request is bit-identical.
        assert_eq!(layer_chunk(&a, &map, 2).unwrap(), layer_chunk(&a, &map, 2).unwrap());
    }

    #[test]
    fn out_of_bounds_layer_is_shape_error() {
        let map = LayerMap::from_lengths(&[4, 4]).unwrap();
        assert!(matches!(layer_chunk(&addr(0, 0, 0), &map, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn distinct_layers_never_collide() {
        // 10^3 trials over rounds; sibling layer chunks must differ.
        let map = LayerMap::from_lengths(&[4, 4]).unwrap();
        for round in 0..1000 {
            let a = addr(round, 0, 0);
            let x = layer_chunk(&a, &map, 0).unwrap();
            let y = layer_chunk(&a, &map, 1).unwrap();
            assert_ne!(x, y, "collision at round {round}");
        }
    }

    #[test]
    fn perturbation_spec_validates_ranges() {
        let a = addr(0, 0, 0);
        assert!(PerturbationSpec::new(a, 0.0, 0.5, false).is_err());
        assert!(PerturbationSpec::new(a, 1e-3, 1.5, false).is_err());
        assert!(PerturbationSpec::new(a, 1e-3, 0.5, true).is_ok());
    }
}
