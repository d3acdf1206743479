//! The three-tier protocol: edge-coordinated rounds over N clients with a
//! cloud replica feeding guided perturbations, as deterministic state
//! machines over an in-process message bus.
//!
//! Per round, in order: the edge broadcasts the global model; the cloud
//! takes one backprop step on the public split and, on guided rounds,
//! rebuilds its gradient basis and broadcasts a guided perturbation layer by
//! layer; every client evaluates antithetic losses at its seed-addressed
//! (hybrid) perturbations and uploads one scalar per probe; the edge
//! regenerates the perturbations, reconstructs and aggregates the gradient
//! estimates in a fixed order, and applies a single global step. Latency is
//! modeled, not incurred; nothing in a round depends on host timing.

use std::sync::Arc;

use crate::compression::{
    choose_omega_with, dequantize, quantize, DecompressionModel, OmegaChoice, QuantizedBlock,
    TransmissionPlan, TransmitSizeRule,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::guidance::{adaptive_alpha, sample_guided, AlphaMode, CloudNode};
use crate::metrics::{MetricsRow, MetricsSeries};
use crate::model::{
    accuracy, backprop_gradient, forward_flops, forward_loss, init_model, Arch, Batch, LayerMap,
    ParameterVector,
};
use crate::pipeline::{
    client_memory, simulate_pipeline, MemoryMode, MemorySpec, PipelineSpec, StageTimes,
};
use crate::rng::{perturbation_vector, CounterRng, StreamAddress, LANE_BATCH, ROLE_CLOUD};
use crate::zoo::{
    hybrid_from_guided, mean_vectors, reconstruct_gradient, two_point_loss_diff, LossDifference,
};

/// Which optimizer the federation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Plain two-point estimation every round, no cloud role.
    PureZoo,
    /// Guided rounds every `gamma` rounds, rectifying the local estimates.
    Zgr,
    /// Exact backprop aggregation, as a reference upper baseline.
    BpOracle,
}

/// Federation hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub clients: usize,
    /// Aggregation weights, must sum to 1 within 1e-12.
    pub weights: Vec<f64>,
    /// Global learning rate.
    pub eta: f64,
    /// Perturbation scale.
    pub epsilon: f64,
    /// Mixing weight for guided rounds (also the adaptive fallback).
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
    /// Guidance interval: guided rounds are exactly the rounds divisible by
    /// `gamma`.
    pub gamma: u64,
    /// Retained gradient-history length on the cloud.
    pub m_max: usize,
    /// Probes per client per round.
    pub probes: usize,
    pub rounds_total: u64,
    /// Edge-to-cloud model sync cadence, in rounds.
    pub cloud_sync_every: u64,
    pub root_seed: u64,
    pub client_batch_size: usize,
    pub cloud_batch_size: usize,
    pub cloud_eta: f64,
    pub basis_tol: f64,
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("federation.clients must be >= 1".into()));
        }
        if self.weights.len() != self.clients {
            return Err(Error::Config(format!(
                "federation.weights: {} entries for {} clients",
                self.weights.len(),
                self.clients
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("federation.weights must sum to 1 (got {sum})")));
        }
        if self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("federation.weights must be nonnegative".into()));
        }
        if self.gamma == 0 {
            return Err(Error::Config("federation.gamma must be >= 1".into()));
        }
        if self.cloud_sync_every == 0 {
            return Err(Error::Config("federation.cloud_sync_every must be >= 1".into()));
        }
        if self.probes == 0 {
            return Err(Error::Config("federation.probes must be >= 1".into()));
        }
        if self.rounds_total == 0 {
            return Err(Error::Config("federation.rounds must be >= 1".into()));
        }
        if !(self.eta > 0.0) || !(self.cloud_eta > 0.0) {
            return Err(Error::Config("federation.eta and cloud_eta must be > 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("federation.epsilon must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "federation.alpha must be in [0, 1] (got {})",
                self.alpha
            )));
        }
        if self.m_max == 0 {
            return Err(Error::Config("federation.m_max must be >= 1".into()));
        }
        if self.client_batch_size == 0 || self.cloud_batch_size == 0 {
            return Err(Error::Config("federation batch sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Quantization width for guided chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitWidth {
    /// Pass values through unquantized (test mode: the controller and byte
    /// accounting still run, but model math is identical to a run without
    /// DTC).
    Exact,
    Bits(u8),
}

/// How the compressed proportion is picked on guided rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaPolicy {
    /// Smallest grid value that hides transmission under computation.
    Adaptive,
    Fixed(f64),
}

/// Guided-chunk compression settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtcSettings {
    pub bits: BitWidth,
    /// Modeled size ratio after compression, in (0, 1).
    pub theta: f64,
    pub grid_step: f64,
    pub omega_policy: OmegaPolicy,
    pub decomp: DecompressionModel,
    pub transmit_rule: TransmitSizeRule,
}

/// Deterministic wall-clock model. Latency is computed from these rates and
/// the actual message sizes, never measured from the host.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub client_flops_per_s: f64,
    pub cloud_flops_per_s: f64,
    pub edge_flops_per_s: f64,
    /// Link bandwidth in bytes per second (default models 10 Mbps).
    pub bandwidth_bytes_per_s: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            client_flops_per_s: 1e9,
            cloud_flops_per_s: 5e10,
            edge_flops_per_s: 1e10,
            bandwidth_bytes_per_s: 1.25e6,
        }
    }
}

/// Client shards plus the cloud's public split and the evaluation holdout.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub clients: Vec<Dataset>,
    pub public: Dataset,
    pub eval: Dataset,
}

/// Payload of one guided-perturbation layer chunk.
#[derive(Debug, Clone, PartialEq)]
pub enum ChunkPayload {
    Raw(Vec<f64>),
    /// First `block.original_len` elements quantized, remainder raw.
    Quantized { block: QuantizedBlock, tail: Vec<f64> },
}

impl ChunkPayload {
    /// The values a recipient applies: dequantized head plus raw tail.
    pub fn decode(&self) -> Result<Vec<f64>> {
        match self {
            ChunkPayload::Raw(v) => Ok(v.clone()),
            ChunkPayload::Quantized { block, tail } => {
                let mut out = dequantize(block)?;
                out.extend_from_slice(tail);
                Ok(out)
            }
        }
    }

    pub fn byte_size(&self) -> usize {
        match self {
            ChunkPayload::Raw(v) => 4 + 8 * v.len(),
            ChunkPayload::Quantized { block, tail } => 4 + block.wire_bytes() + 4 + 8 * tail.len(),
        }
    }

    /// Bytes that need decompression on arrival.
    pub fn quantized_bytes(&self) -> usize {
        match self {
            ChunkPayload::Raw(_) => 0,
            ChunkPayload::Quantized { block, .. } => block.wire_bytes(),
        }
    }
}

/// Message recipient on the in-process bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    Edge,
    Cloud,
    Client(u32),
}

/// Typed protocol messages. `byte_size` is the accounted wire size used by
/// the latency model and the audit trace.
#[derive(Debug, Clone)]
pub enum RoundMessage {
    /// Edge to one client: current global model plus the shared root seed.
    ModelBroadcast { round: u64, params: Arc<ParameterVector>, root_seed: u64, to_client: u32 },
    /// Cloud to a client or the edge: one layer of the guided perturbation.
    GuidedChunk {
        round: u64,
        layer_index: u32,
        subspace_dim: u32,
        alpha: f64,
        payload: Arc<ChunkPayload>,
        to: Recipient,
    },
    /// Client to edge: the antithetic loss difference for one probe.
    LossReport(LossDifference),
    /// Edge to cloud: the updated global model.
    ModelSync { round: u64, params: Arc<ParameterVector> },
    /// Client to edge in the backprop reference baseline only; ZOO modes
    /// never send full vectors upstream.
    GradientUpload { round: u64, client_id: u32, dim: usize },
}

impl RoundMessage {
    pub fn byte_size(&self) -> u64 {
        match self {
            RoundMessage::ModelBroadcast { params, .. } => 20 + 8 * params.dim() as u64,
            RoundMessage::GuidedChunk { payload, .. } => 24 + payload.byte_size() as u64,
            RoundMessage::LossReport(_) => 24,
            RoundMessage::ModelSync { params, .. } => 8 + 8 * params.dim() as u64,
            RoundMessage::GradientUpload { dim, .. } => 12 + 8 * *dim as u64,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RoundMessage::ModelBroadcast { .. } => "model_broadcast",
            RoundMessage::GuidedChunk { .. } => "guided_chunk",
            RoundMessage::LossReport(_) => "loss_report",
            RoundMessage::ModelSync { .. } => "model_sync",
            RoundMessage::GradientUpload { .. } => "gradient_upload",
        }
    }
}

/// One line of the audit trace: a flat view of a [`RoundMessage`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceRecord {
    pub round: u64,
    pub kind: &'static str,
    pub from: &'static str,
    pub to: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub byte_size: u64,
}

impl TraceRecord {
    fn from_message(msg: &RoundMessage) -> Self {
        let byte_size = msg.byte_size();
        let kind = msg.kind();
        match msg {
            RoundMessage::ModelBroadcast { round, to_client, .. } => TraceRecord {
                round: *round,
                kind,
                from: "edge",
                to: format!("client:{to_client}"),
                layer_index: None,
                client_id: None,
                probe_index: None,
                delta: None,
                byte_size,
            },
            RoundMessage::GuidedChunk { round, layer_index, to, .. } => TraceRecord {
                round: *round,
                kind,
                from: "cloud",
                to: match to {
                    Recipient::Edge => "edge".to_string(),
                    Recipient::Cloud => "cloud".to_string(),
                    Recipient::Client(i) => format!("client:{i}"),
                },
                layer_index: Some(*layer_index),
                client_id: None,
                probe_index: None,
                delta: None,
                byte_size,
            },
            RoundMessage::LossReport(ld) => TraceRecord {
                round: ld.round,
                kind,
                from: "client",
                to: "edge".to_string(),
                layer_index: None,
                client_id: Some(ld.client_id),
                probe_index: Some(ld.probe_index),
                delta: Some(ld.delta),
                byte_size,
            },
            RoundMessage::ModelSync { round, .. } => TraceRecord {
                round: *round,
                kind,
                from: "edge",
                to: "cloud".to_string(),
                layer_index: None,
                client_id: None,
                probe_index: None,
                delta: None,
                byte_size,
            },
            RoundMessage::GradientUpload { round, client_id, .. } => TraceRecord {
                round: *round,
                kind,
                from: "client",
                to: "edge".to_string(),
                layer_index: None,
                client_id: Some(*client_id),
                probe_index: None,
                delta: None,
                byte_size,
            },
        }
    }
}

/// The guided direction as it crossed the wire this round, shared by every
/// client and the edge (post-codec values, so both sides apply identical
/// bits).
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedRoundInfo {
    pub values: Vec<f64>,
    pub subspace_dim: usize,
    pub alpha: f64,
}

/// Everything the edge needs to regenerate client perturbations for one
/// round.
#[derive(Debug)]
pub struct RegenContext<'a> {
    pub root_seed: u64,
    pub round: u64,
    pub epsilon: f64,
    pub probes: usize,
    pub weights: &'a [f64],
    pub layer_map: &'a LayerMap,
    pub guided: Option<&'a GuidedRoundInfo>,
}

/// `sum_i w_i * estimates[i]`, accumulated in client order.
pub fn aggregate_weighted(estimates: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    assert_eq!(estimates.len(), weights.len());
    let dim = estimates.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (est, &w) in estimates.iter().zip(weights) {
        for (o, g) in out.iter_mut().zip(est) {
            *o += w * g;
        }
    }
    out
}

/// Edge-side reconstruction and aggregation: regenerates each probe's
/// perturbation from the shared seed, recovers `(delta / 2 eps) z_h`,
/// averages per client, and reduces in ascending (client, probe) order.
/// Fails fast when any expected report is missing.
pub fn edge_aggregate(reports: &[LossDifference], ctx: &RegenContext) -> Result<Vec<f64>> {
    let n = ctx.weights.len();
    let mut estimates = Vec::with_capacity(n);
    for client in 0..n as u32 {
        let mut probe_gradients = Vec::with_capacity(ctx.probes);
        for probe in 0..ctx.probes as u32 {
            let report = reports
                .iter()
                .find(|r| r.client_id == client && r.probe_index == probe && r.round == ctx.round)
                .ok_or(Error::Straggler { client_id: client, round: ctx.round })?;
            let address = StreamAddress::new(ctx.root_seed, ctx.round, client, probe);
            let z = perturbation_vector(&address, ctx.layer_map);
            let perturbation = match ctx.guided {
                Some(g) => hybrid_from_guided(&z, &g.values, g.subspace_dim, g.alpha)?.vector,
                None => z,
            };
            probe_gradients.push(reconstruct_gradient(report.delta, &perturbation, ctx.epsilon)?);
        }
        estimates.push(mean_vectors(&probe_gradients));
    }
    Ok(aggregate_weighted(&estimates, ctx.weights))
}

/// Inputs assembled by the harness for one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub mode: RunMode,
    pub federation: FederationConfig,
    pub arch: Arch,
    pub init_seed: u64,
    pub cost: CostModel,
    pub spc_enabled: bool,
    pub dtc: Option<DtcSettings>,
    /// Layer count for the latency/memory models; defaults to the model's
    /// layer map length.
    pub pipeline_layers: Option<usize>,
    /// Model size for the memory model; defaults to `8 * d` bytes.
    pub model_bytes: Option<f64>,
}

/// Per-round outcome used to assemble metrics.
#[derive(Debug, Clone, Copy)]
pub struct RoundReport {
    pub round: u64,
    pub guided: bool,
    /// Guided round degraded to a plain round (empty basis).
    pub fallback: bool,
    pub alpha_used: f64,
    pub omega_used: Option<f64>,
    pub round_time_s: f64,
    pub bytes_cloud_to_client: u64,
    pub bytes_client_to_edge: u64,
    pub client_mem_bytes: u64,
}

/// Deterministic federation state machine.
pub struct Federation {
    setup: ExperimentSetup,
    data: DatasetBundle,
    global: ParameterVector,
    cloud: CloudNode,
    round: u64,
    clock_s: f64,
    trace: Option<Vec<TraceRecord>>,
}

impl Federation {
    pub fn new(setup: ExperimentSetup, data: DatasetBundle) -> Result<Self> {
        setup.federation.validate()?;
        if data.clients.len() != setup.federation.clients {
            return Err(Error::Config(format!(
                "dataset bundle has {} client shards for {} clients",
                data.clients.len(),
                setup.federation.clients
            )));
        }
        if let Some(d) = &setup.dtc {
            if !(d.theta > 0.0 && d.theta < 1.0) {
                return Err(Error::Config(format!("dtc.theta must be in (0, 1) (got {})", d.theta)));
            }
            if let BitWidth::Bits(b) = d.bits {
                if !(2..=8).contains(&b) {
                    return Err(Error::Config(format!("dtc.bits must be in 2..=8 (got {b})")));
                }
            }
            if let OmegaPolicy::Fixed(w) = d.omega_policy {
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Config(format!("dtc.omega must be in [0, 1] (got {w})")));
                }
            }
        }
        for (i, shard) in data.clients.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::Config(format!("client {i} has an empty shard")));
            }
            if shard.feature_dim() != setup.arch.input_dim() {
                return Err(Error::Config(format!(
                    "client {i} feature dim {} != model input dim {}",
                    shard.feature_dim(),
                    setup.arch.input_dim()
                )));
            }
        }
        let global = init_model(&setup.arch, setup.init_seed)?;
        let cloud = CloudNode::new(
            global.clone(),
            setup.federation.cloud_eta,
            setup.federation.m_max,
            setup.federation.basis_tol,
        );
        Ok(Self { setup, data, global, cloud, round: 0, clock_s: 0.0, trace: None })
    }

    /// Starts recording one trace record per message.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.take().unwrap_or_default()
    }

    pub fn global_params(&self) -> &ParameterVector {
        &self.global
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    fn record(&mut self, msg: &RoundMessage) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord::from_message(msg));
        }
    }

    fn model_layers(&self) -> usize {
        self.setup.pipeline_layers.unwrap_or_else(|| self.global.layer_map().len())
    }

    fn model_bytes(&self) -> f64 {
        self.setup.model_bytes.unwrap_or(8.0 * self.global.dim() as f64)
    }

    /// Modeled client memory for the metrics column, from the run's SPC/DTC
    /// flags. This is the guided-round footprint model, reported uniformly
    /// across rounds.
    fn client_mem_bytes(&self, omega: Option<f64>) -> u64 {
        let layers = self.model_layers();
        let model_bytes = self.model_bytes();
        let spec = match (&self.setup.dtc, self.setup.spc_enabled) {
            (_, false) => MemorySpec { model_bytes, layers, omega: None, theta: None, mode: MemoryMode::Baseline },
            (None, true) => MemorySpec { model_bytes, layers, omega: None, theta: None, mode: MemoryMode::Spc },
            (Some(dtc), true) => {
                let w = omega.unwrap_or(match dtc.omega_policy {
                    OmegaPolicy::Fixed(w) => w,
                    OmegaPolicy::Adaptive => 1.0,
                });
                if w > 0.0 && w < 1.0 {
                    MemorySpec {
                        model_bytes,
                        layers,
                        omega: Some(w),
                        theta: Some(dtc.theta),
                        mode: MemoryMode::SpcDtc,
                    }
                } else {
                    MemorySpec { model_bytes, layers, omega: None, theta: None, mode: MemoryMode::Spc }
                }
            }
        };
        client_memory(&spec).unwrap_or(0.0) as u64
    }

    /// Runs one full round and advances the simulated clock.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round;
        let report = match self.setup.mode {
            RunMode::BpOracle => self.run_bp_round(round)?,
            RunMode::PureZoo | RunMode::Zgr => self.run_zoo_round(round)?,
        };
        self.round += 1;
        self.clock_s += report.round_time_s;
        Ok(report)
    }

    fn broadcast_model(&mut self, round: u64) -> u64 {
        let params = Arc::new(self.global.clone());
        let mut bytes = 0;
        for client in 0..self.setup.federation.clients as u32 {
            let msg = RoundMessage::ModelBroadcast {
                round,
                params: Arc::clone(&params),
                root_seed: self.setup.federation.root_seed,
                to_client: client,
            };
            bytes = msg.byte_size();
            self.record(&msg);
        }
        bytes
    }

    fn client_batch(&self, round: u64, client: usize) -> Result<Batch> {
        let address =
            StreamAddress::new(self.setup.federation.root_seed, round, client as u32, LANE_BATCH);
        let mut rng = CounterRng::from_address(&address);
        self.data.clients[client].sample_batch(self.setup.federation.client_batch_size, &mut rng)
    }

    fn run_bp_round(&mut self, round: u64) -> Result<RoundReport> {
        let n = self.setup.federation.clients;
        let broadcast_bytes = self.broadcast_model(round);
        let mut estimates = Vec::with_capacity(n);
        let mut upload_bytes = 0;
        for client in 0..n {
            let batch = self.client_batch(round, client)?;
            estimates.push(backprop_gradient(&self.global, &batch)?);
            let msg = RoundMessage::GradientUpload {
                round,
                client_id: client as u32,
                dim: self.global.dim(),
            };
            upload_bytes = msg.byte_size();
            self.record(&msg);
        }
        let gradient = aggregate_weighted(&estimates, &self.setup.federation.weights);
        self.global.apply_step(&gradient, self.setup.federation.eta)?;

        let cost = &self.setup.cost;
        let eval_flops = 3.0 * forward_flops(&self.setup.arch, self.setup.federation.client_batch_size);
        let round_time_s = broadcast_bytes as f64 / cost.bandwidth_bytes_per_s
            + eval_flops / cost.client_flops_per_s
            + upload_bytes as f64 / cost.bandwidth_bytes_per_s
            + (n * self.global.dim()) as f64 * 2.0 / cost.edge_flops_per_s;
        Ok(RoundReport {
            round,
            guided: false,
            fallback: false,
            alpha_used: 1.0,
            omega_used: None,
            round_time_s,
            bytes_cloud_to_client: 0,
            bytes_client_to_edge: upload_bytes,
            client_mem_bytes: self.client_mem_bytes(None),
        })
    }

    fn run_zoo_round(&mut self, round: u64) -> Result<RoundReport> {
        let cfg = self.setup.federation.clone();
        let broadcast_bytes = self.broadcast_model(round);

        // Cloud: backprop step every round in guided mode; guided broadcast
        // only on rounds divisible by gamma.
        let guided_planned = self.setup.mode == RunMode::Zgr && round % cfg.gamma == 0;
        let mut fallback = false;
        let mut guidance: Option<GuidedRoundInfo> = None;
        let mut guided_stage_times: Vec<StageTimes> = Vec::new();
        let mut bytes_cloud_to_client = 0u64;
        let mut omega_used = None;

        if self.setup.mode == RunMode::Zgr {
            let cloud_batch = {
                let address = StreamAddress::new(cfg.root_seed, round, ROLE_CLOUD, LANE_BATCH);
                let mut rng = CounterRng::from_address(&address);
                self.data.public.sample_batch(cfg.cloud_batch_size, &mut rng)?
            };
            self.cloud.bp_round(&cloud_batch)?;
        }

        if guided_planned {
            match self.cloud.subspace.rebuild() {
                Err(Error::EmptyBasis) => fallback = true,
                Err(e) => return Err(e),
                Ok(()) => {
                    let alpha = self.select_alpha()?;
                    let address = StreamAddress::new(cfg.root_seed, round, ROLE_CLOUD, 0);
                    let guided = sample_guided(&self.cloud.subspace, &address)?;
                    let omega = self.select_omega(guided.vector().len());
                    omega_used = omega.map(|c| c.omega);
                    let (info, stage_times, per_client_bytes) =
                        self.broadcast_guided(round, &guided, alpha, omega)?;
                    bytes_cloud_to_client = per_client_bytes;
                    guided_stage_times = stage_times;
                    guidance = Some(info);
                }
            }
        }

        // Clients: antithetic probes on seed-addressed perturbations; only
        // scalars go upstream. A shared scratch vector is sound because the
        // two-point evaluation restores it exactly.
        let n = cfg.clients;
        let mut reports = Vec::with_capacity(n * cfg.probes);
        let mut scratch = self.global.clone();
        let layer_map = self.global.layer_map().clone();
        let mut report_bytes_per_client = 0u64;
        for client in 0..n {
            let batch = self.client_batch(round, client)?;
            let mut client_bytes = 0u64;
            for probe in 0..cfg.probes as u32 {
                let address = StreamAddress::new(cfg.root_seed, round, client as u32, probe);
                let z = perturbation_vector(&address, &layer_map);
                let perturbation = match &guidance {
                    Some(g) => hybrid_from_guided(&z, &g.values, g.subspace_dim, g.alpha)?.vector,
                    None => z,
                };
                let ld = two_point_loss_diff(
                    &mut scratch,
                    &perturbation,
                    cfg.epsilon,
                    &batch,
                    client as u32,
                    round,
                    probe,
                )?;
                let msg = RoundMessage::LossReport(ld);
                client_bytes += msg.byte_size();
                self.record(&msg);
                reports.push(ld);
            }
            report_bytes_per_client = client_bytes;
        }

        // Edge: regenerate, reconstruct, aggregate in fixed order, update.
        let ctx = RegenContext {
            root_seed: cfg.root_seed,
            round,
            epsilon: cfg.epsilon,
            probes: cfg.probes,
            weights: &cfg.weights,
            layer_map: &layer_map,
            guided: guidance.as_ref(),
        };
        let gradient = edge_aggregate(&reports, &ctx)?;
        self.global.apply_step(&gradient, cfg.eta)?;

        // Model sync to the cloud per cadence.
        if self.setup.mode == RunMode::Zgr && (round + 1) % cfg.cloud_sync_every == 0 {
            let msg = RoundMessage::ModelSync { round, params: Arc::new(self.global.clone()) };
            self.record(&msg);
            self.cloud.sync_model(&self.global);
        }

        // Deterministic wall clock.
        let cost = &self.setup.cost;
        let guided_time_s = if guided_stage_times.is_empty() {
            0.0
        } else {
            let spec = PipelineSpec::from_stage_times(guided_stage_times)?;
            if self.setup.spc_enabled {
                simulate_pipeline(&spec).makespan_s
            } else {
                spec.total_sample_s + spec.total_transmit_s + spec.total_compute_s
            }
        };
        let eval_flops =
            cfg.probes as f64 * 2.0 * forward_flops(&self.setup.arch, cfg.client_batch_size);
        let d = self.global.dim() as f64;
        let edge_flops = (n * cfg.probes) as f64 * d * 10.0;
        let round_time_s = broadcast_bytes as f64 / cost.bandwidth_bytes_per_s
            + guided_time_s
            + eval_flops / cost.client_flops_per_s
            + report_bytes_per_client as f64 / cost.bandwidth_bytes_per_s
            + edge_flops / cost.edge_flops_per_s;

        let alpha_used = guidance.as_ref().map_or(1.0, |g| g.alpha);
        Ok(RoundReport {
            round,
            guided: guidance.is_some(),
            fallback,
            alpha_used,
            omega_used,
            round_time_s,
            bytes_cloud_to_client,
            bytes_client_to_edge: report_bytes_per_client,
            client_mem_bytes: self.client_mem_bytes(omega_used),
        })
    }

    /// Mixing weight for this guided round.
    fn select_alpha(&self) -> Result<f64> {
        let cfg = &self.setup.federation;
        match cfg.alpha_mode {
            AlphaMode::Fixed => Ok(cfg.alpha),
            AlphaMode::LambdaStar => {
                // Scale estimates from the latest cloud gradient: single-probe
                // zeroth-order noise grows with dimension (averaged across
                // probes); the guided surrogate's error is the part of that
                // gradient the subspace cannot represent.
                let g = self
                    .cloud
                    .latest_gradient()
                    .ok_or_else(|| Error::Config("adaptive alpha needs cloud history".into()))?;
                let g_norm2: f64 = g.iter().map(|x| x * x).sum();
                let d = g.len() as f64;
                let zoo_scale = d * g_norm2 / cfg.probes as f64;
                let projected = self.cloud.subspace.project(g);
                let guided_scale: f64 =
                    g.iter().zip(&projected).map(|(a, p)| (a - p) * (a - p)).sum();
                adaptive_alpha(zoo_scale, guided_scale, AlphaMode::LambdaStar, cfg.alpha)
            }
        }
    }

    /// Compression proportion for this guided round, `None` when DTC is off.
    fn select_omega(&self, guided_len: usize) -> Option<OmegaChoice> {
        let dtc = self.setup.dtc.as_ref()?;
        match dtc.omega_policy {
            OmegaPolicy::Fixed(omega) => Some(OmegaChoice { omega, feasible: true }),
            OmegaPolicy::Adaptive => {
                let layers = self.model_layers() as f64;
                let per_layer_bytes = 8.0 * guided_len as f64 / layers;
                let per_layer_apply_flops = 4.0 * guided_len as f64 / layers;
                let plan = TransmissionPlan {
                    payload_bytes: per_layer_bytes,
                    bandwidth_bytes_per_s: self.setup.cost.bandwidth_bytes_per_s,
                    omega: 0.0,
                    theta: dtc.theta,
                    compute_s: per_layer_apply_flops / self.setup.cost.client_flops_per_s,
                    decomp: dtc.decomp,
                };
                choose_omega_with(&plan, dtc.grid_step, dtc.transmit_rule).ok()
            }
        }
    }

    /// Chunks the guided direction per layer, applies the codec, emits the
    /// chunk messages, and returns the on-wire guided values (identical for
    /// every recipient) plus per-layer stage times for the latency model.
    fn broadcast_guided(
        &mut self,
        round: u64,
        guided: &crate::guidance::GuidedPerturbation,
        alpha: f64,
        omega: Option<OmegaChoice>,
    ) -> Result<(GuidedRoundInfo, Vec<StageTimes>, u64)> {
        let layer_map = self.global.layer_map().clone();
        let m = guided.subspace_dim();
        let cost = self.setup.cost;
        let n_clients = self.setup.federation.clients as u32;

        let mut wire_values = Vec::with_capacity(self.global.dim());
        let mut stage_times = Vec::with_capacity(layer_map.len());
        let mut per_client_bytes = 0u64;

        for layer in 0..layer_map.len() {
            let chunk = guided.chunk(&layer_map, layer)?;
            let payload = match (&self.setup.dtc, omega) {
                (Some(dtc), Some(choice)) => match dtc.bits {
                    BitWidth::Exact => ChunkPayload::Raw(chunk.to_vec()),
                    BitWidth::Bits(bits) => {
                        let head =
                            ((choice.omega * chunk.len() as f64).round() as usize).min(chunk.len());
                        if head < 2 {
                            ChunkPayload::Raw(chunk.to_vec())
                        } else {
                            ChunkPayload::Quantized {
                                block: quantize(&chunk[..head], bits)?,
                                tail: chunk[head..].to_vec(),
                            }
                        }
                    }
                },
                _ => ChunkPayload::Raw(chunk.to_vec()),
            };
            wire_values.extend(payload.decode()?);

            let payload = Arc::new(payload);
            let mut chunk_bytes = 0u64;
            for client in 0..n_clients {
                let msg = RoundMessage::GuidedChunk {
                    round,
                    layer_index: layer as u32,
                    subspace_dim: m as u32,
                    alpha,
                    payload: Arc::clone(&payload),
                    to: Recipient::Client(client),
                };
                chunk_bytes = msg.byte_size();
                self.record(&msg);
            }
            let edge_msg = RoundMessage::GuidedChunk {
                round,
                layer_index: layer as u32,
                subspace_dim: m as u32,
                alpha,
                payload: Arc::clone(&payload),
                to: Recipient::Edge,
            };
            self.record(&edge_msg);
            per_client_bytes += chunk_bytes;

            let len = layer_map.segment(layer).unwrap().len as f64;
            let decomp_s = self.setup.dtc.as_ref().map_or(0.0, |d| match payload.quantized_bytes() {
                0 => 0.0,
                q => d.decomp.time_s(q as f64),
            });
            stage_times.push(StageTimes {
                sample_s: (2.0 * m as f64 * len + 4.0 * len) / cost.cloud_flops_per_s,
                transmit_s: chunk_bytes as f64 / cost.bandwidth_bytes_per_s,
                apply_s: 4.0 * len / cost.client_flops_per_s + decomp_s,
            });
        }

        Ok((
            GuidedRoundInfo { values: wire_values, subspace_dim: m, alpha },
            stage_times,
            per_client_bytes,
        ))
    }
}

/// Output of a full experiment.
#[derive(Debug)]
pub struct ExperimentRun {
    pub metrics: MetricsSeries,
    pub trace: Option<Vec<TraceRecord>>,
    pub final_params: ParameterVector,
    /// Rounds that fell back from guided to plain (empty basis).
    pub fallback_rounds: Vec<u64>,
}

/// Runs `rounds_total` rounds, recording per-round metrics (loss and
/// accuracy of the updated model, simulated wall clock, per-link bytes, and
/// the modeled client memory).
pub fn run_experiment(
    setup: &ExperimentSetup,
    data: &DatasetBundle,
    with_trace: bool,
) -> Result<ExperimentRun> {
    let mut federation = Federation::new(setup.clone(), data.clone())?;
    if with_trace {
        federation.enable_trace();
    }
    let eval_batch = if data.eval.is_empty() { None } else { Some(data.eval.to_batch()?) };
    let client_batches: Vec<Batch> =
        data.clients.iter().map(|c| c.to_batch()).collect::<Result<Vec<_>>>()?;
    let mut metrics = MetricsSeries::new();
    let mut fallback_rounds = Vec::new();
    for _ in 0..setup.federation.rounds_total {
        let report = federation.run_round()?;
        if report.fallback {
            fallback_rounds.push(report.round);
        }
        let params = federation.global_params();
        let mut train_loss = 0.0;
        for (batch, w) in client_batches.iter().zip(&setup.federation.weights) {
            train_loss += w * forward_loss(params, batch)?;
        }
        let eval_accuracy = match &eval_batch {
            Some(b) => accuracy(params, b)?,
            None => 0.0,
        };
        metrics.push(MetricsRow {
            round: report.round,
            sim_wall_clock_s: federation.clock_s(),
            train_loss,
            eval_accuracy,
            alpha_used: report.alpha_used,
            guided_flag: report.guided,
            bytes_cloud_to_client: report.bytes_cloud_to_client,
            bytes_client_to_edge: report.bytes_client_to_edge,
            client_mem_bytes: report.client_mem_bytes,
        })?;
    }
    let trace = if with_trace { Some(federation.take_trace()) } else { None };
    Ok(ExperimentRun {
        metrics,
        trace,
        final_params: federation.global_params().clone(),
        fallback_rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_mixture;
    use crate::model::forward_loss_values;
    use crate::rng::PerturbationSpec;
    use crate::zoo::multi_sample_estimate;

    fn small_setup(mode: RunMode, rounds: u64) -> (ExperimentSetup, DatasetBundle) {
        let arch = Arch::new(&[6, 3]).unwrap();
        let n = 4;
        let federation = FederationConfig {
            clients: n,
            weights: uniform_weights(n),
            eta: 0.5,
            epsilon: 1e-3,
            alpha: 0.5,
            alpha_mode: AlphaMode::Fixed,
            gamma: 3,
            m_max: 4,
            probes: 2,
            rounds_total: rounds,
            cloud_sync_every: 3,
            root_seed: 77,
            client_batch_size: 8,
            cloud_batch_size: 16,
            cloud_eta: 0.2,
            basis_tol: 1e-10,
        };
        let setup = ExperimentSetup {
            mode,
            federation,
            arch,
            init_seed: 5,
            cost: CostModel::default(),
            spc_enabled: true,
            dtc: None,
            pipeline_layers: None,
            model_bytes: None,
        };
        let data = synthetic_mixture(6, 3, 240, 1.0, 3.0, 9).unwrap();
        let part = crate::data::partition_dirichlet(&data, n, 10.0, 0.2, 3).unwrap();
        let (public, eval) = crate::data::split_eval(&part.public, 0.5, 4).unwrap();
        let bundle = DatasetBundle { clients: part.clients, public, eval };
        (setup, bundle)
    }

    #[test]
    fn guided_rounds_happen_exactly_on_gamma_multiples() {
        let (setup, data) = small_setup(RunMode::Zgr, 7);
        let run = run_experiment(&setup, &data, true).unwrap();
        for row in run.metrics.rows() {
            assert_eq!(row.guided_flag, row.round % 3 == 0, "round {}", row.round);
            if !row.guided_flag {
                assert_eq!(row.bytes_cloud_to_client, 0);
            } else {
                assert!(row.bytes_cloud_to_client > 0);
            }
        }
        // No guided chunks outside guided rounds.
        let trace = run.trace.unwrap();
        assert!(!trace.is_empty());
        for rec in trace.iter().filter(|r| r.kind == "guided_chunk") {
            assert_eq!(rec.round % 3, 0);
        }
    }

    #[test]
    fn runs_are_bit_deterministic() {
        let (setup, data) = small_setup(RunMode::Zgr, 6);
        let a = run_experiment(&setup, &data, false).unwrap();
        let b = run_experiment(&setup, &data, false).unwrap();
        assert_eq!(a.final_params.values(), b.final_params.values());
        assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    }

    #[test]
    fn clients_upload_only_scalars_in_zoo_modes() {
        for mode in [RunMode::PureZoo, RunMode::Zgr] {
            let (setup, data) = small_setup(mode, 5);
            let run = run_experiment(&setup, &data, true).unwrap();
            let d = run.final_params.dim() as u64;
            for rec in run.trace.unwrap() {
                if rec.from == "client" {
                    assert_eq!(rec.kind, "loss_report");
                    assert_eq!(rec.byte_size, 24);
                    assert!(rec.byte_size < 8 * d);
                }
            }
            // Per-round per-client upload bytes are constant and d-free.
            for row in run.metrics.rows() {
                assert_eq!(row.bytes_client_to_edge, 24 * setup.federation.probes as u64);
            }
        }
    }

    #[test]
    fn round_numbers_are_monotone_per_sender() {
        let (setup, data) = small_setup(RunMode::Zgr, 6);
        let run = run_experiment(&setup, &data, true).unwrap();
        let trace = run.trace.unwrap();
        let mut last: std::collections::HashMap<(&str, String), u64> = Default::default();
        for rec in &trace {
            let key = (rec.kind, rec.to.clone());
            if let Some(prev) = last.get(&key) {
                assert!(rec.round >= *prev, "{key:?} went backwards");
            }
            last.insert(key, rec.round);
        }
    }

    #[test]
    fn single_client_non_guided_round_matches_hand_trace() {
        // N=1, w=1, K=1 on a 3-parameter logistic toy: the update must be
        // exactly W - eta * (delta / 2 eps) * z.
        let arch = Arch::new(&[2, 1]).unwrap();
        let federation = FederationConfig {
            clients: 1,
            weights: vec![1.0],
            eta: 0.3,
            epsilon: 1e-3,
            alpha: 0.5,
            alpha_mode: AlphaMode::Fixed,
            gamma: 100,
            m_max: 4,
            probes: 1,
            rounds_total: 1,
            cloud_sync_every: 1,
            root_seed: 11,
            client_batch_size: 64,
            cloud_batch_size: 8,
            cloud_eta: 0.1,
            basis_tol: 1e-10,
        };
        let setup = ExperimentSetup {
            mode: RunMode::PureZoo,
            federation,
            arch: arch.clone(),
            init_seed: 2,
            cost: CostModel::default(),
            spc_enabled: true,
            dtc: None,
            pipeline_layers: None,
            model_bytes: None,
        };
        let data = synthetic_mixture(2, 1, 16, 1.0, 2.0, 6).unwrap();
        let bundle =
            DatasetBundle { clients: vec![data.clone()], public: data.clone(), eval: data.clone() };

        // Hand computation of the same round.
        let w0 = init_model(&arch, 2).unwrap();
        let batch = data.to_batch().unwrap();
        let z = perturbation_vector(&StreamAddress::new(11, 0, 0, 0), w0.layer_map());
        let mut values = w0.values().to_vec();
        let plus = {
            let v: Vec<f64> = values.iter().zip(&z).map(|(w, zi)| w + 1e-3 * zi).collect();
            forward_loss_values(&v, &arch, &batch).unwrap()
        };
        let minus = {
            let v: Vec<f64> = values.iter().zip(&z).map(|(w, zi)| w - 1e-3 * zi).collect();
            forward_loss_values(&v, &arch, &batch).unwrap()
        };
        let scale = (plus - minus) / (2.0 * 1e-3);
        for (w, zi) in values.iter_mut().zip(&z) {
            *w -= 0.3 * (scale * zi);
        }

        let run = run_experiment(&setup, &bundle, false).unwrap();
        assert_eq!(run.final_params.values(), &values[..]);
    }

    #[test]
    fn all_zero_deltas_leave_model_unchanged() {
        let layer_map = LayerMap::from_lengths(&[4, 2]).unwrap();
        let reports: Vec<LossDifference> = (0..3u32)
            .map(|c| LossDifference { delta: 0.0, client_id: c, round: 2, probe_index: 0 })
            .collect();
        let weights = uniform_weights(3);
        let ctx = RegenContext {
            root_seed: 9,
            round: 2,
            epsilon: 1e-3,
            probes: 1,
            weights: &weights,
            layer_map: &layer_map,
            guided: None,
        };
        let g = edge_aggregate(&reports, &ctx).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn missing_report_names_the_straggler() {
        let layer_map = LayerMap::from_lengths(&[4]).unwrap();
        let reports = vec![LossDifference { delta: 0.1, client_id: 0, round: 0, probe_index: 0 }];
        let weights = uniform_weights(2);
        let ctx = RegenContext {
            root_seed: 1,
            round: 0,
            epsilon: 1e-3,
            probes: 1,
            weights: &weights,
            layer_map: &layer_map,
            guided: None,
        };
        match edge_aggregate(&reports, &ctx) {
            Err(Error::Straggler { client_id, round }) => {
                assert_eq!((client_id, round), (1, 0));
            }
            other => panic!("expected straggler error, got {other:?}"),
        }
    }

    #[test]
    fn identical_clients_aggregate_to_any_single_estimate() {
        // With identical data everywhere and equal weights, the aggregate
        // equals the mean of per-client estimates; with a single client it
        // equals that client's estimate exactly.
        let layer_map = LayerMap::from_lengths(&[3]).unwrap();
        let reports = vec![LossDifference { delta: 0.4, client_id: 0, round: 1, probe_index: 0 }];
        let weights = vec![1.0];
        let ctx = RegenContext {
            root_seed: 5,
            round: 1,
            epsilon: 1e-2,
            probes: 1,
            weights: &weights,
            layer_map: &layer_map,
            guided: None,
        };
        let agg = edge_aggregate(&reports, &ctx).unwrap();
        let z = perturbation_vector(&StreamAddress::new(5, 1, 0, 0), &layer_map);
        let single = reconstruct_gradient(0.4, &z, 1e-2).unwrap();
        for (a, b) in agg.iter().zip(&single) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn edge_path_is_bit_identical_to_client_path() {
        let (setup, data) = small_setup(RunMode::Zgr, 1);
        let cfg = &setup.federation;
        let params = init_model(&setup.arch, setup.init_seed).unwrap();
        let layer_map = params.layer_map().clone();

        // Guided info exactly as round 0 builds it: fresh cloud, one BP
        // step, rebuild, sample.
        let mut cloud = CloudNode::new(params.clone(), cfg.cloud_eta, cfg.m_max, cfg.basis_tol);
        let cloud_batch = {
            let address = StreamAddress::new(cfg.root_seed, 0, ROLE_CLOUD, LANE_BATCH);
            let mut rng = CounterRng::from_address(&address);
            data.public.sample_batch(cfg.cloud_batch_size, &mut rng).unwrap()
        };
        cloud.bp_round(&cloud_batch).unwrap();
        cloud.subspace.rebuild().unwrap();
        let guided =
            sample_guided(&cloud.subspace, &StreamAddress::new(cfg.root_seed, 0, ROLE_CLOUD, 0))
                .unwrap();
        let info = GuidedRoundInfo {
            values: guided.vector().to_vec(),
            subspace_dim: guided.subspace_dim(),
            alpha: cfg.alpha,
        };

        // Client-side path (compute estimates locally), plus wire reports.
        let mut estimates = Vec::new();
        let mut reports = Vec::new();
        for client in 0..cfg.clients {
            let batch = {
                let address = StreamAddress::new(cfg.root_seed, 0, client as u32, LANE_BATCH);
                let mut rng = CounterRng::from_address(&address);
                data.clients[client].sample_batch(cfg.client_batch_size, &mut rng).unwrap()
            };
            let mut local = params.clone();
            let specs: Vec<PerturbationSpec> = (0..cfg.probes as u32)
                .map(|p| {
                    PerturbationSpec::new(
                        StreamAddress::new(cfg.root_seed, 0, client as u32, p),
                        cfg.epsilon,
                        cfg.alpha,
                        true,
                    )
                    .unwrap()
                })
                .collect();
            let gp = crate::guidance::GuidedPerturbation::from_vector(
                info.values.clone(),
                0,
                info.subspace_dim,
            );
            estimates.push(multi_sample_estimate(&mut local, &batch, &specs, Some(&gp)).unwrap());
            for p in 0..cfg.probes as u32 {
                let address = StreamAddress::new(cfg.root_seed, 0, client as u32, p);
                let z = perturbation_vector(&address, &layer_map);
                let zh =
                    hybrid_from_guided(&z, &info.values, info.subspace_dim, cfg.alpha).unwrap().vector;
                let ld =
                    two_point_loss_diff(&mut local, &zh, cfg.epsilon, &batch, client as u32, 0, p)
                        .unwrap();
                reports.push(ld);
            }
        }
        let client_side = aggregate_weighted(&estimates, &cfg.weights);

        // Edge-side path from the scalar reports alone.
        let ctx = RegenContext {
            root_seed: cfg.root_seed,
            round: 0,
            epsilon: cfg.epsilon,
            probes: cfg.probes,
            weights: &cfg.weights,
            layer_map: &layer_map,
            guided: Some(&info),
        };
        let edge_side = edge_aggregate(&reports, &ctx).unwrap();
        assert_eq!(client_side.len(), edge_side.len());
        for (a, b) in client_side.iter().zip(&edge_side) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dtc_exact_mode_matches_no_dtc_bitwise() {
        let (mut setup, data) = small_setup(RunMode::Zgr, 7);
        let baseline = run_experiment(&setup, &data, false).unwrap();
        setup.dtc = Some(DtcSettings {
            bits: BitWidth::Exact,
            theta: 0.25,
            grid_step: 0.05,
            omega_policy: OmegaPolicy::Adaptive,
            decomp: DecompressionModel { base_s: 1e-4, per_byte_s: 2e-10 },
            transmit_rule: TransmitSizeRule::EffectiveCompressed,
        });
        let exact = run_experiment(&setup, &data, false).unwrap();
        assert_eq!(baseline.final_params.values(), exact.final_params.values());
        // Quantized mode changes outputs only through the guided chunks.
        setup.dtc = Some(DtcSettings {
            bits: BitWidth::Bits(4),
            theta: 0.25,
            grid_step: 0.05,
            omega_policy: OmegaPolicy::Fixed(1.0),
            decomp: DecompressionModel { base_s: 1e-4, per_byte_s: 2e-10 },
            transmit_rule: TransmitSizeRule::EffectiveCompressed,
        });
        let quantized = run_experiment(&setup, &data, false).unwrap();
        assert_ne!(baseline.final_params.values(), quantized.final_params.values());
    }

    #[test]
    fn bp_oracle_runs_and_descends() {
        let (setup, data) = small_setup(RunMode::BpOracle, 20);
        let run = run_experiment(&setup, &data, false).unwrap();
        let first = run.metrics.rows().first().unwrap().train_loss;
        let last = run.metrics.rows().last().unwrap().train_loss;
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn simulated_clock_is_monotone_increasing() {
        let (setup, data) = small_setup(RunMode::Zgr, 5);
        let run = run_experiment(&setup, &data, false).unwrap();
        let mut prev = 0.0;
        for row in run.metrics.rows() {
            assert!(row.sim_wall_clock_s > prev);
            prev = row.sim_wall_clock_s;
        }
    }
}
