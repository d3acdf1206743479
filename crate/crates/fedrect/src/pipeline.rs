//! Latency and memory models for the layer-wise guided-perturbation pipeline.
//!
//! Distributing a guided perturbation involves three stages per model layer:
//! sampling on the cloud, transmission, and application on the client.
//! Without pipelining the stages run back to back over the whole model;
//! with pipelining, layer `l` can be transmitted while layer `l+1` is being
//! sampled and layer `l-1` is being applied, so only one layer of
//! perturbations ever needs to be held client-side.

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Per-layer stage durations in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimes {
    pub sample_s: f64,
    pub transmit_s: f64,
    pub apply_s: f64,
}

/// Stage timing of a guided-perturbation distribution.
///
/// Totals are the whole-model stage durations; per-layer times default to
/// `total / layers` unless explicit heterogeneous times are supplied (real
/// layers differ, in which case the closed forms become bounds that the
/// event simulation reports against).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub layers: usize,
    pub total_sample_s: f64,
    pub total_transmit_s: f64,
    pub total_compute_s: f64,
    pub per_layer: Option<Vec<StageTimes>>,
}

impl PipelineSpec {
    pub fn uniform(layers: usize, total_sample_s: f64, total_transmit_s: f64, total_compute_s: f64) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("pipeline.layers must be >= 1".into()));
        }
        for (name, v) in [
            ("t_cs", total_sample_s),
            ("t_t", total_transmit_s),
            ("t_cc", total_compute_s),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("pipeline.{name} must be >= 0 (got {v})")));
            }
        }
        Ok(Self { layers, total_sample_s, total_transmit_s, total_compute_s, per_layer: None })
    }

    /// Builds a heterogeneous spec; totals are the stage sums.
    pub fn from_stage_times(stages: Vec<StageTimes>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("pipeline: at least one layer required".into()));
        }
        if stages
            .iter()
            .any(|s| !(s.sample_s >= 0.0 && s.transmit_s >= 0.0 && s.apply_s >= 0.0))
        {
            return Err(Error::Config("pipeline: stage times must be >= 0".into()));
        }
        Ok(Self {
            layers: stages.len(),
            total_sample_s: stages.iter().map(|s| s.sample_s).sum(),
            total_transmit_s: stages.iter().map(|s| s.transmit_s).sum(),
            total_compute_s: stages.iter().map(|s| s.apply_s).sum(),
            per_layer: Some(stages),
        })
    }

    /// Per-layer stage times, materializing the uniform split when no
    /// explicit times were given.
    pub fn stage_times(&self) -> Vec<StageTimes> {
        match &self.per_layer {
            Some(v) => v.clone(),
            None => {
                let l = self.layers as f64;
                vec![
                    StageTimes {
                        sample_s: self.total_sample_s / l,
                        transmit_s: self.total_transmit_s / l,
                        apply_s: self.total_compute_s / l,
                    };
                    self.layers
                ]
            }
        }
    }
}

/// Closed-form latency mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyMode {
    /// All sampling, then all transmission, then all application.
    Sequential,
    /// Layer-wise overlap: `T_cs + T_cc / L`.
    Pipelined,
}

/// Whole-distribution latency under the closed-form model.
pub fn analytic_latency(spec: &PipelineSpec, mode: LatencyMode) -> f64 {
    match mode {
        LatencyMode::Sequential => spec.total_sample_s + spec.total_transmit_s + spec.total_compute_s,
        LatencyMode::Pipelined => spec.total_sample_s + spec.total_compute_s / spec.layers as f64,
    }
}

/// Latency removed by pipelining: `T_t + (L-1)/L * T_cc`.
pub fn latency_reduction(spec: &PipelineSpec) -> f64 {
    analytic_latency(spec, LatencyMode::Sequential) - analytic_latency(spec, LatencyMode::Pipelined)
}

/// Pipeline stage index: 0 = sample, 1 = transmit, 2 = apply.
pub const STAGE_NAMES: [&str; 3] = ["sample", "transmit", "apply"];

/// One completed stage execution in the event simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageEvent {
    pub layer: usize,
    pub stage: usize,
    pub start_s: f64,
    pub end_s: f64,
}

/// Event-simulation result: makespan plus the full per-layer trace.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub makespan_s: f64,
    pub events: Vec<StageEvent>,
}

#[derive(Debug, Clone, Copy)]
struct Completion {
    time: f64,
    layer: usize,
    stage: usize,
}

impl PartialEq for Completion {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.layer == other.layer && self.stage == other.stage
    }
}
impl Eq for Completion {}
impl Ord for Completion {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on time; deterministic tie-break on (layer, stage).
        other
            .time
            .partial_cmp(&self.time)
            .unwrap()
            .then(other.layer.cmp(&self.layer))
            .then(other.stage.cmp(&self.stage))
    }
}
impl PartialOrd for Completion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Discrete-event simulation of the three-stage layer pipeline.
///
/// Each stage is a unit-capacity resource processing layers in order; stage
/// `k` of layer `l` starts once stage `k` of layer `l-1` and stage `k-1` of
/// layer `l` have both finished.
pub fn simulate_pipeline(spec: &PipelineSpec) -> PipelineRun {
    let stages = spec.stage_times();
    let layers = stages.len();
    let duration = |layer: usize, stage: usize| match stage {
        0 => stages[layer].sample_s,
        1 => stages[layer].transmit_s,
        _ => stages[layer].apply_s,
    };

    let mut done = vec![[f64::NAN; 3]; layers];
    let mut started = vec![[false; 3]; layers];
    let mut events = Vec::with_capacity(layers * 3);
    let mut queue = BinaryHeap::new();

    let start = |layer: usize,
                     stage: usize,
                     at: f64,
                     started: &mut Vec<[bool; 3]>,
                     queue: &mut BinaryHeap<Completion>,
                     events: &mut Vec<StageEvent>| {
        started[layer][stage] = true;
        let end = at + duration(layer, stage);
        events.push(StageEvent { layer, stage, start_s: at, end_s: end });
        queue.push(Completion { time: end, layer, stage });
    };

    start(0, 0, 0.0, &mut started, &mut queue, &mut events);
    let mut makespan = 0.0f64;
    while let Some(Completion { time, layer, stage }) = queue.pop() {
        done[layer][stage] = time;
        makespan = makespan.max(time);
        // Downstream stage of the same layer.
        if stage + 1 < 3 && !started[layer][stage + 1] {
            let resource_free = if layer == 0 { Some(0.0) } else { finite(done[layer - 1][stage + 1]) };
            if let Some(free) = resource_free {
                start(layer, stage + 1, time.max(free), &mut started, &mut queue, &mut events);
            }
        }
        // Same stage of the next layer.
        if layer + 1 < layers && !started[layer + 1][stage] {
            let dep = if stage == 0 { Some(0.0) } else { finite(done[layer + 1][stage - 1]) };
            if let Some(dep_done) = dep {
                start(layer + 1, stage, time.max(dep_done), &mut started, &mut queue, &mut events);
            }
        }
    }
    events.sort_by(|a, b| {
        a.start_s
            .partial_cmp(&b.start_s)
            .unwrap()
            .then(a.stage.cmp(&b.stage))
            .then(a.layer.cmp(&b.layer))
    });
    PipelineRun { makespan_s: makespan, events }
}

fn finite(v: f64) -> Option<f64> {
    if v.is_nan() {
        None
    } else {
        Some(v)
    }
}

/// Client memory accounting mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// Model, full local and guided perturbations, and full gradient:
    /// `4 * Mem0`.
    Baseline,
    /// One layer of perturbations at a time, scalar loss instead of a
    /// gradient: `(1 + 2/L) * Mem0`.
    Spc,
    /// As above with a fraction `omega` of each layer compressed to ratio
    /// `theta`: `(1 + 2/L - omega (1 - theta)/L) * Mem0`.
    SpcDtc,
}

/// Inputs to the client memory model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemorySpec {
    pub model_bytes: f64,
    pub layers: usize,
    pub omega: Option<f64>,
    pub theta: Option<f64>,
    pub mode: MemoryMode,
}

/// Modeled client-side memory footprint in bytes.
pub fn client_memory(spec: &MemorySpec) -> Result<f64> {
    if spec.layers == 0 {
        return Err(Error::Config("memory.layers must be >= 1".into()));
    }
    if !(spec.model_bytes >= 0.0) {
        return Err(Error::Config("memory.model_bytes must be >= 0".into()));
    }
    let l = spec.layers as f64;
    match spec.mode {
        MemoryMode::Baseline => Ok(4.0 * spec.model_bytes),
        MemoryMode::Spc => Ok((1.0 + 2.0 / l) * spec.model_bytes),
        MemoryMode::SpcDtc => {
            let omega = spec
                .omega
                .ok_or_else(|| Error::Config("memory.omega required for spc_dtc mode".into()))?;
            let theta = spec
                .theta
                .ok_or_else(|| Error::Config("memory.theta required for spc_dtc mode".into()))?;
            if !(0.0 < omega && omega < 1.0) || !(0.0 < theta && theta < 1.0) {
                return Err(Error::Config(format!(
                    "memory.omega and memory.theta must lie in (0, 1) (got {omega}, {theta})"
                )));
            }
            Ok((1.0 + 2.0 / l - omega * (1.0 - theta) / l) * spec.model_bytes)
        }
    }
}

/// Inputs to the transformer activation-memory estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationModel {
    pub layers: usize,
    pub context_tokens: usize,
    pub batch: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub vars_forward: usize,
    pub vars_backward: usize,
    pub trainable_params: usize,
}

/// Activation bytes of a fine-tuning step:
/// `2 L (V_fwd + V_bwd) L_ctx B D + 5 H L_ctx B`.
pub fn estimate_activation_memory(m: &ActivationModel) -> f64 {
    let l = m.layers as f64;
    let ctx = m.context_tokens as f64;
    let b = m.batch as f64;
    let d = m.hidden_dim as f64;
    let h = m.heads as f64;
    let vars = (m.vars_forward + m.vars_backward) as f64;
    2.0 * l * vars * ctx * b * d + 5.0 * h * ctx * b
}

/// Full fine-tuning footprint: FP16 parameters (`2P`), FP32 optimizer state
/// (`8P`), FP32 gradients (`4P`), and activations.
#[derive(Debug, Clone, Copy)]
pub struct MemoryBreakdown {
    pub params_bytes: f64,
    pub optimizer_bytes: f64,
    pub gradient_bytes: f64,
    pub activation_bytes: f64,
}

impl MemoryBreakdown {
    pub fn total(&self) -> f64 {
        self.params_bytes + self.optimizer_bytes + self.gradient_bytes + self.activation_bytes
    }
}

pub fn fine_tuning_memory(m: &ActivationModel) -> MemoryBreakdown {
    let p = m.trainable_params as f64;
    MemoryBreakdown {
        params_bytes: 2.0 * p,
        optimizer_bytes: 8.0 * p,
        gradient_bytes: 4.0 * p,
        activation_bytes: estimate_activation_memory(m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: dynamic-programming critical path
    /// `finish[l][k] = max(finish[l-1][k], finish[l][k-1]) + t[l][k]`.
    fn critical_path(stages: &[StageTimes]) -> f64 {
        let l = stages.len();
        let mut finish = vec![[0.0f64; 3]; l];
        for i in 0..l {
            let t = [stages[i].sample_s, stages[i].transmit_s, stages[i].apply_s];
            for k in 0..3 {
                let above = if i == 0 { 0.0 } else { finish[i - 1][k] };
                let left = if k == 0 { 0.0 } else { finish[i][k - 1] };
                finish[i][k] = above.max(left) + t[k];
            }
        }
        finish[l - 1][2]
    }

    #[test]
    fn analytic_reduction_formula() {
        // L = 32: reduction is T_t + 31/32 T_cc.
        let spec = PipelineSpec::uniform(32, 10.0, 5.0, 8.0).unwrap();
        let reduction = latency_reduction(&spec);
        assert!((reduction - (5.0 + 31.0 / 32.0 * 8.0)).abs() < 1e-12);
        // L = 1: no overlap possible; reduction is exactly T_t.
        let single = PipelineSpec::uniform(1, 10.0, 5.0, 8.0).unwrap();
        assert!((analytic_latency(&single, LatencyMode::Pipelined) - 18.0).abs() < 1e-12);
        assert!((latency_reduction(&single) - 5.0).abs() < 1e-12);
        // T_cc = 0: reduction is T_t.
        let no_compute = PipelineSpec::uniform(8, 10.0, 5.0, 0.0).unwrap();
        assert!((latency_reduction(&no_compute) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn event_sim_matches_critical_path_oracle() {
        // Hiding condition: per-layer transmit and apply both fit under the
        // sample stage.
        let spec = PipelineSpec::uniform(16, 16.0, 8.0, 12.0).unwrap();
        let stages = spec.stage_times();
        let run = simulate_pipeline(&spec);
        let oracle = critical_path(&stages);
        assert!((run.makespan_s - oracle).abs() < 1e-12, "{} vs {oracle}", run.makespan_s);
        // Under hiding the makespan is T_cs + t_t + t_cc (one trailing
        // transmit and apply after the last sample).
        let expect = 16.0 + 8.0 / 16.0 + 12.0 / 16.0;
        assert!((run.makespan_s - expect).abs() < 1e-12);
    }

    #[test]
    fn event_sim_matches_pipelined_closed_form_when_transmit_vanishes() {
        for layers in [1usize, 2, 32, 80] {
            let spec = PipelineSpec::uniform(layers, 20.0, 0.0, 6.0).unwrap();
            let run = simulate_pipeline(&spec);
            let analytic = analytic_latency(&spec, LatencyMode::Pipelined);
            assert!(
                (run.makespan_s - analytic).abs() <= 1e-9,
                "L={layers}: sim {} vs analytic {analytic}",
                run.makespan_s
            );
        }
    }

    #[test]
    fn single_bottleneck_sets_the_makespan() {
        let spec = PipelineSpec::uniform(8, 0.0, 24.0, 0.0).unwrap();
        let run = simulate_pipeline(&spec);
        assert!((run.makespan_s - 24.0).abs() < 1e-12);
    }

    #[test]
    fn makespan_respects_bounds() {
        let cases = [
            PipelineSpec::uniform(4, 3.0, 9.0, 2.0).unwrap(),
            PipelineSpec::uniform(12, 7.0, 1.0, 20.0).unwrap(),
            PipelineSpec::from_stage_times(vec![
                StageTimes { sample_s: 1.0, transmit_s: 4.0, apply_s: 0.5 },
                StageTimes { sample_s: 3.0, transmit_s: 0.5, apply_s: 2.0 },
                StageTimes { sample_s: 0.2, transmit_s: 2.0, apply_s: 5.0 },
            ])
            .unwrap(),
        ];
        for spec in cases {
            let run = simulate_pipeline(&spec);
            let sequential = analytic_latency(&spec, LatencyMode::Sequential);
            let lower = spec
                .total_sample_s
                .max(spec.total_transmit_s)
                .max(spec.total_compute_s);
            assert!(run.makespan_s <= sequential + 1e-12);
            assert!(run.makespan_s >= lower - 1e-12);
            // Trace covers every (layer, stage) exactly once.
            assert_eq!(run.events.len(), spec.layers * 3);
            // Oracle agreement on heterogeneous times too.
            assert!((run.makespan_s - critical_path(&spec.stage_times())).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_modes() {
        let gib = 1024.0f64.powi(3);
        let mem0 = 13.6 * gib;
        let baseline = client_memory(&MemorySpec {
            model_bytes: mem0,
            layers: 32,
            omega: None,
            theta: None,
            mode: MemoryMode::Baseline,
        })
        .unwrap();
        assert_eq!(baseline, 4.0 * mem0);
        let spc = client_memory(&MemorySpec {
            model_bytes: mem0,
            layers: 32,
            omega: None,
            theta: None,
            mode: MemoryMode::Spc,
        })
        .unwrap();
        // Reduction approximately 40 GB for a 13.6 GB model at L = 32.
        let reduction_gb = (baseline - spc) / gib;
        assert!((reduction_gb - 39.95).abs() / 39.95 < 0.01, "reduction {reduction_gb} GB");
        let dtc = client_memory(&MemorySpec {
            model_bytes: mem0,
            layers: 32,
            omega: Some(0.8),
            theta: Some(0.25),
            mode: MemoryMode::SpcDtc,
        })
        .unwrap();
        assert!(dtc < spc);
        // omega/theta are mandatory in spc_dtc mode.
        assert!(client_memory(&MemorySpec {
            model_bytes: mem0,
            layers: 32,
            omega: None,
            theta: Some(0.25),
            mode: MemoryMode::SpcDtc,
        })
        .is_err());
    }

    #[test]
    fn spc_memory_is_monotone_in_layers() {
        let mut prev = f64::INFINITY;
        for layers in [1usize, 2, 4, 16, 64] {
            let m = client_memory(&MemorySpec {
                model_bytes: 1e9,
                layers,
                omega: None,
                theta: None,
                mode: MemoryMode::Spc,
            })
            .unwrap();
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn activation_estimate_is_linear_in_context_and_batch() {
        let base = ActivationModel {
            layers: 32,
            context_tokens: 1024,
            batch: 1,
            hidden_dim: 4096,
            heads: 32,
            vars_forward: 16,
            vars_backward: 18,
            trainable_params: 7_000_000_000,
        };
        let a1 = estimate_activation_memory(&base);
        let a2 = estimate_activation_memory(&ActivationModel { context_tokens: 2048, ..base });
        assert!((a2 - 2.0 * a1).abs() < 1e-3 * a1);
        let zero = estimate_activation_memory(&ActivationModel { batch: 0, ..base });
        assert_eq!(zero, 0.0);
        // Monotone growth over a 1K..16K context sweep.
        let mut prev = 0.0;
        for ctx in [1024usize, 2048, 4096, 8192, 16384] {
            let a = estimate_activation_memory(&ActivationModel { context_tokens: ctx, ..base });
            assert!(a > prev);
            prev = a;
        }
    }
}
