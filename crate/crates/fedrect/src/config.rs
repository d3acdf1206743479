//! Experiment configuration: a flat TOML file with dotted sections
//! (`federation.gamma`, `dtc.bits`, `pipeline.layers`, ...), defaults
//! mirroring the reference setup (learning rate 0.1, alpha 0.5, one local
//! epoch, 10 Mbps bandwidth), and cross-field validation that names the
//! offending key path.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::compression::{DecompressionModel, TransmitSizeRule};
use crate::error::{Error, Result};
use crate::federation::{
    uniform_weights, BitWidth, CostModel, DtcSettings, ExperimentSetup, FederationConfig,
    OmegaPolicy, RunMode,
};
use crate::guidance::AlphaMode;
use crate::model::Arch;
use crate::pipeline::PipelineSpec;

/// Top-level experiment configuration (one TOML document).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    pub model: ModelSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub spc: SpcSection,
    #[serde(default)]
    pub dtc: DtcSection,
    #[serde(default)]
    pub memory: MemorySection,
}

fn default_mode() -> RunMode {
    RunMode::Zgr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Layer sizes: `[in, out]` (logistic) or `[in, hidden, out]` (MLP).
    pub arch: Vec<usize>,
    /// Initialization seed; defaults to the federation root seed.
    #[serde(default)]
    pub init_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum DatasetSection {
    /// Gaussian-mixture classification.
    Synthetic {
        features: usize,
        classes: usize,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_concentration")]
        concentration: f64,
        #[serde(default = "default_eval_fraction")]
        eval_fraction: f64,
        #[serde(default = "default_public_fraction")]
        public_fraction: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Headed CSV with a named label column.
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default = "default_concentration")]
        concentration: f64,
        #[serde(default = "default_eval_fraction")]
        eval_fraction: f64,
        #[serde(default = "default_public_fraction")]
        public_fraction: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Controlled quadratic descent with injected estimator noise, for
    /// theory validation rather than federation.
    Quadratic {
        d: usize,
        sigma2: f64,
        bias2: f64,
        tau2: f64,
        #[serde(default = "default_start_radius")]
        start_radius: f64,
        target: f64,
        #[serde(default = "default_max_iters")]
        max_iters: usize,
    },
}

fn default_samples() -> usize {
    2000
}
fn default_noise() -> f64 {
    1.0
}
fn default_spread() -> f64 {
    3.0
}
fn default_concentration() -> f64 {
    1.0
}
fn default_eval_fraction() -> f64 {
    0.2
}
fn default_public_fraction() -> f64 {
    0.2
}
fn default_start_radius() -> f64 {
    10.0
}
fn default_max_iters() -> usize {
    200_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub clients: usize,
    /// Empty means uniform `1/N`.
    pub weights: Vec<f64>,
    pub eta: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
    pub gamma: u64,
    pub m_max: usize,
    pub probes: usize,
    pub rounds: u64,
    /// 0 means "every gamma rounds".
    pub cloud_sync_every: u64,
    pub root_seed: u64,
    pub client_batch_size: usize,
    pub cloud_batch_size: usize,
    pub cloud_eta: f64,
    pub basis_tol: f64,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            clients: 20,
            weights: Vec::new(),
            eta: 0.1,
            epsilon: 1e-3,
            alpha: 0.5,
            alpha_mode: AlphaMode::Fixed,
            gamma: 5,
            m_max: 16,
            probes: 1,
            rounds: 200,
            cloud_sync_every: 0,
            root_seed: 42,
            client_batch_size: 8,
            cloud_batch_size: 16,
            cloud_eta: 0.1,
            basis_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    /// Layer count for latency/memory models; 0 means the model's own layer
    /// map length.
    pub layers: usize,
    pub client_flops_per_s: f64,
    pub cloud_flops_per_s: f64,
    pub edge_flops_per_s: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let cost = CostModel::default();
        Self {
            layers: 0,
            client_flops_per_s: cost.client_flops_per_s,
            cloud_flops_per_s: cost.cloud_flops_per_s,
            edge_flops_per_s: cost.edge_flops_per_s,
            bandwidth_bytes_per_s: cost.bandwidth_bytes_per_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpcSection {
    pub enabled: bool,
}

impl Default for SpcSection {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtcSection {
    pub enabled: bool,
    /// 0 selects the exact pass-through test mode.
    pub bits: u8,
    pub theta: f64,
    pub grid_step: f64,
    /// "adaptive" or a fixed proportion like "0.5".
    pub omega: String,
    pub decomp_base_s: f64,
    pub decomp_per_byte_s: f64,
    pub transmit_rule: TransmitSizeRule,
}

impl Default for DtcSection {
    fn default() -> Self {
        Self {
            enabled: true,
            bits: 4,
            theta: 0.25,
            grid_step: 0.05,
            omega: "adaptive".to_string(),
            decomp_base_s: 1e-4,
            decomp_per_byte_s: 2e-10,
            transmit_rule: TransmitSizeRule::EffectiveCompressed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySection {
    /// Modeled model size in bytes; 0 means `8 * d`.
    pub model_bytes: f64,
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical serialized form: defaults materialized, sections ordered.
    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let arch = Arch::new(&self.model.arch)?;
        match &self.dataset {
            DatasetSection::Synthetic {
                features,
                classes,
                samples,
                noise,
                eval_fraction,
                public_fraction,
                concentration,
                ..
            } => {
                if *features != arch.input_dim() {
                    return Err(Error::Config(format!(
                        "dataset.features ({features}) must match model.arch input ({})",
                        arch.input_dim()
                    )));
                }
                if *classes != arch.output_dim() {
                    return Err(Error::Config(format!(
                        "dataset.classes ({classes}) must match model.arch output ({})",
                        arch.output_dim()
                    )));
                }
                if *samples < self.federation.clients {
                    return Err(Error::Config(format!(
                        "dataset.samples ({samples}) must cover federation.clients ({})",
                        self.federation.clients
                    )));
                }
                if !(*noise >= 0.0) {
                    return Err(Error::Config("dataset.noise must be >= 0".into()));
                }
                if !(0.0..1.0).contains(eval_fraction) {
                    return Err(Error::Config("dataset.eval_fraction must be in [0, 1)".into()));
                }
                if !(0.0..1.0).contains(public_fraction) {
                    return Err(Error::Config("dataset.public_fraction must be in [0, 1)".into()));
                }
                if !(*concentration > 0.0) {
                    return Err(Error::Config("dataset.concentration must be > 0".into()));
                }
            }
            DatasetSection::Csv { eval_fraction, public_fraction, concentration, .. } => {
                if !(0.0..1.0).contains(eval_fraction) {
                    return Err(Error::Config("dataset.eval_fraction must be in [0, 1)".into()));
                }
                if !(0.0..1.0).contains(public_fraction) {
                    return Err(Error::Config("dataset.public_fraction must be in [0, 1)".into()));
                }
                if !(*concentration > 0.0) {
                    return Err(Error::Config("dataset.concentration must be > 0".into()));
                }
            }
            DatasetSection::Quadratic { d, sigma2, bias2, tau2, target, max_iters, .. } => {
                if *d == 0 {
                    return Err(Error::Config("dataset.d must be >= 1".into()));
                }
                if !(*sigma2 >= 0.0 && *bias2 >= 0.0 && *tau2 >= 0.0) {
                    return Err(Error::Config("dataset noise scales must be >= 0".into()));
                }
                if !(*target > 0.0) {
                    return Err(Error::Config("dataset.target must be > 0".into()));
                }
                if *max_iters == 0 {
                    return Err(Error::Config("dataset.max_iters must be >= 1".into()));
                }
            }
        }
        if self.federation.gamma > self.federation.rounds {
            return Err(Error::Config(format!(
                "federation.gamma ({}) must be <= federation.rounds ({})",
                self.federation.gamma, self.federation.rounds
            )));
        }
        self.federation_config()?.validate()?;
        if self.dtc.enabled {
            if self.dtc.bits != 0 && !(2..=8).contains(&self.dtc.bits) {
                return Err(Error::Config(format!(
                    "dtc.bits must be 0 (exact) or in 2..=8 (got {})",
                    self.dtc.bits
                )));
            }
            if !(self.dtc.theta > 0.0 && self.dtc.theta < 1.0) {
                return Err(Error::Config(format!(
                    "dtc.theta must be in (0, 1) (got {})",
                    self.dtc.theta
                )));
            }
            if !(self.dtc.grid_step > 0.0 && self.dtc.grid_step <= 1.0) {
                return Err(Error::Config("dtc.grid_step must be in (0, 1]".into()));
            }
            self.omega_policy()?;
        }
        if !(self.pipeline.client_flops_per_s > 0.0
            && self.pipeline.cloud_flops_per_s > 0.0
            && self.pipeline.edge_flops_per_s > 0.0
            && self.pipeline.bandwidth_bytes_per_s > 0.0)
        {
            return Err(Error::Config("pipeline rates must all be > 0".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<Arch> {
        Arch::new(&self.model.arch)
    }

    fn omega_policy(&self) -> Result<OmegaPolicy> {
        if self.dtc.omega == "adaptive" {
            return Ok(OmegaPolicy::Adaptive);
        }
        let fixed: f64 = self.dtc.omega.parse().map_err(|_| {
            Error::Config(format!(
                "dtc.omega must be 'adaptive' or a number (got '{}')",
                self.dtc.omega
            ))
        })?;
        if !(0.0..=1.0).contains(&fixed) {
            return Err(Error::Config(format!("dtc.omega must be in [0, 1] (got {fixed})")));
        }
        Ok(OmegaPolicy::Fixed(fixed))
    }

    pub fn federation_config(&self) -> Result<FederationConfig> {
        let f = &self.federation;
        let weights =
            if f.weights.is_empty() { uniform_weights(f.clients) } else { f.weights.clone() };
        Ok(FederationConfig {
            clients: f.clients,
            weights,
            eta: f.eta,
            epsilon: f.epsilon,
            alpha: f.alpha,
            alpha_mode: f.alpha_mode,
            gamma: f.gamma,
            m_max: f.m_max,
            probes: f.probes,
            rounds_total: f.rounds,
            cloud_sync_every: if f.cloud_sync_every == 0 { f.gamma } else { f.cloud_sync_every },
            root_seed: f.root_seed,
            client_batch_size: f.client_batch_size,
            cloud_batch_size: f.cloud_batch_size,
            cloud_eta: f.cloud_eta,
            basis_tol: f.basis_tol,
        })
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            client_flops_per_s: self.pipeline.client_flops_per_s,
            cloud_flops_per_s: self.pipeline.cloud_flops_per_s,
            edge_flops_per_s: self.pipeline.edge_flops_per_s,
            bandwidth_bytes_per_s: self.pipeline.bandwidth_bytes_per_s,
        }
    }

    pub fn dtc_settings(&self) -> Result<Option<DtcSettings>> {
        if !self.dtc.enabled {
            return Ok(None);
        }
        Ok(Some(DtcSettings {
            bits: if self.dtc.bits == 0 { BitWidth::Exact } else { BitWidth::Bits(self.dtc.bits) },
            theta: self.dtc.theta,
            grid_step: self.dtc.grid_step,
            omega_policy: self.omega_policy()?,
            decomp: DecompressionModel {
                base_s: self.dtc.decomp_base_s,
                per_byte_s: self.dtc.decomp_per_byte_s,
            },
            transmit_rule: self.dtc.transmit_rule,
        }))
    }

    /// Assembles the federation inputs (not used by the quadratic dataset,
    /// which runs the descent experiment instead).
    pub fn experiment_setup(&self) -> Result<ExperimentSetup> {
        Ok(ExperimentSetup {
            mode: self.mode,
            federation: self.federation_config()?,
            arch: self.arch()?,
            init_seed: self.model.init_seed.unwrap_or(self.federation.root_seed),
            cost: self.cost_model(),
            spc_enabled: self.spc.enabled,
            dtc: self.dtc_settings()?,
            pipeline_layers: if self.pipeline.layers == 0 {
                None
            } else {
                Some(self.pipeline.layers)
            },
            model_bytes: if self.memory.model_bytes == 0.0 {
                None
            } else {
                Some(self.memory.model_bytes)
            },
        })
    }
}

/// Spec file for the standalone `pipeline` command: stage totals (or
/// explicit per-layer times) plus the memory model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFileSpec {
    pub pipeline: PipelineTimesSection,
    #[serde(default)]
    pub memory: PipelineMemorySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineTimesSection {
    pub layers: usize,
    pub t_cs: f64,
    pub t_t: f64,
    pub t_cc: f64,
    /// Optional heterogeneous per-layer times, each `[sample, transmit,
    /// apply]`; overrides the uniform split of the totals.
    #[serde(default)]
    pub per_layer: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineMemorySection {
    pub model_bytes: f64,
    pub omega: f64,
    pub theta: f64,
}

impl Default for PipelineMemorySection {
    fn default() -> Self {
        Self { model_bytes: 13.6 * 1024.0 * 1024.0 * 1024.0, omega: 0.8, theta: 0.25 }
    }
}

impl PipelineFileSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("pipeline spec {}: {e}", path.display())))?;
        let spec: PipelineFileSpec =
            toml::from_str(&text).map_err(|e| Error::Config(format!("pipeline spec parse: {e}")))?;
        spec.to_pipeline_spec()?; // validates
        Ok(spec)
    }

    pub fn to_pipeline_spec(&self) -> Result<PipelineSpec> {
        let p = &self.pipeline;
        if p.per_layer.is_empty() {
            PipelineSpec::uniform(p.layers, p.t_cs, p.t_t, p.t_cc)
        } else {
            if p.per_layer.len() != p.layers {
                return Err(Error::Config(format!(
                    "pipeline.per_layer has {} entries for {} layers",
                    p.per_layer.len(),
                    p.layers
                )));
            }
            PipelineSpec::from_stage_times(
                p.per_layer
                    .iter()
                    .map(|t| crate::pipeline::StageTimes {
                        sample_s: t[0],
                        transmit_s: t[1],
                        apply_s: t[2],
                    })
                    .collect(),
            )
        }
    }
}
