use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{REFERENCE_CLIENT_SIZES, REFERENCE_PERCENTAGES};
use crate::error::{Error, Result};
use crate::losses::{DistillConfig, T2Placement};
use crate::nn::{Architecture, LayerSpec};
use crate::payload::ScalarWidth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    #[serde(rename = "bifedkd")]
    BiFedKD,
    #[serde(rename = "fedmd")]
    FedMD,
    #[serde(rename = "fedavg")]
    FedAvg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::BiFedKD, Algorithm::FedMD, Algorithm::FedAvg];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::BiFedKD => "bifedkd",
            Algorithm::FedMD => "fedmd",
            Algorithm::FedAvg => "fedavg",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bifedkd" => Ok(Algorithm::BiFedKD),
            "fedmd" => Ok(Algorithm::FedMD),
            "fedavg" => Ok(Algorithm::FedAvg),
            _ => Err(Error::config(format!("unknown algorithm {s:?}"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a client's random streams (initialisation, shuffling, reduction
/// order) are keyed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RngKeying {
    #[default]
    ClientId,
    /// Keyed by a digest of the client's private data, so relabelling clients
    /// does not change any server-side quantity.
    Content,
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv(PathBuf),
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            Ok(DataSource::Synthetic)
        } else if let Some(path) = s.strip_prefix("csv:") {
            if path.is_empty() {
                return Err(Error::config("csv data source needs a path"));
            }
            Ok(DataSource::Csv(PathBuf::from(path)))
        } else {
            Err(Error::config(format!("data source must be synthetic or csv:<path>, got {s:?}")))
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic => f.write_str("synthetic"),
            DataSource::Csv(p) => write!(f, "csv:{}", p.display()),
        }
    }
}

impl Serialize for DataSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DataSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How client label mixtures are chosen.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PartitionSpec {
    /// The three reference clients with their fixed label percentages.
    #[default]
    Reference,
    Dirichlet(f64),
    /// Per-client weights from `client_weights`.
    Custom,
}

impl FromStr for PartitionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(PartitionSpec::Reference),
            "custom" => Ok(PartitionSpec::Custom),
            _ => {
                let alpha = s
                    .strip_prefix("dirichlet:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::config(format!("partition must be reference, custom or dirichlet:<alpha>, got {s:?}"))
                    })?;
                Ok(PartitionSpec::Dirichlet(alpha))
            }
        }
    }
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionSpec::Reference => f.write_str("reference"),
            PartitionSpec::Dirichlet(a) => write!(f, "dirichlet:{a}"),
            PartitionSpec::Custom => f.write_str("custom"),
        }
    }
}

impl Serialize for PartitionSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PartitionSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub const DEFAULT_STUDENT_ARCH: &str = "conv1d:8:7:2 relu maxpool:2:2 conv1d:16:5:2 relu flatten dense:5";
pub const DEFAULT_TEACHER_ARCH: &str =
    "conv1d:16:7:2 relu maxpool:2:2 conv1d:32:5:2 relu maxpool:2:2 flatten dense:64 relu dense:5";

/// Every knob of one experiment. Defaults are the reference setting: three
/// clients, 1,000-sample balanced proxy, five classes, T = 3, λ = 0.3,
/// E_s = 100, E_k = 1, R = 50, batch 64, learning rate 2e-4, 32-bit payloads,
/// 360-point beats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rounds: usize,
    pub student_pretrain_epochs: usize,
    pub teacher_pretrain_epochs: usize,
    pub temperature: f64,
    pub lambda: f64,
    /// Weight of the supervised term in the student's distillation objective.
    pub student_lambda: f64,
    /// Distil students on the KL term alone.
    pub student_kl_only: bool,
    pub t2_placement: T2Placement,
    pub batch_size: usize,
    pub student_lr: f64,
    pub teacher_lr: f64,
    pub payload_bits: u32,

    pub num_classes: usize,
    pub sample_len: usize,
    pub proxy_size: usize,
    pub test_per_class: usize,
    pub data: DataSource,
    pub csv_header: bool,
    pub partition: PartitionSpec,
    pub client_sizes: Vec<usize>,
    /// Per-client class weights, used with `partition = "custom"`.
    pub client_weights: Vec<Vec<f64>>,
    pub noise_scale: f64,
    pub bump_width: f64,
    pub bump_spacing: f64,

    pub student_arch: String,
    /// Per-client overrides of `student_arch`; empty means all clients share it.
    pub client_archs: Vec<String>,
    pub teacher_arch: String,

    /// Run the server-side teacher (BiFedKD only). Disabling it reduces BiFedKD to FedMD.
    pub teacher_stage: bool,
    pub teacher_distill_epochs: usize,
    pub student_distill_epochs: usize,
    pub student_local_epochs: usize,
    pub skip_student_distill: bool,
    pub skip_realign: bool,
    pub rng_keying: RngKeying,
    pub parallel_clients: bool,
    /// Retain every round's exchanged matrices in the run history.
    #[serde(skip)]
    pub keep_artifacts: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::BiFedKD,
            seed: 1,
            rounds: 50,
            student_pretrain_epochs: 1,
            teacher_pretrain_epochs: 100,
            temperature: 3.0,
            lambda: 0.3,
            student_lambda: 0.3,
            student_kl_only: false,
            t2_placement: T2Placement::CrossEntropy,
            batch_size: 64,
            student_lr: 2e-4,
            teacher_lr: 2e-4,
            payload_bits: 32,
            num_classes: 5,
            sample_len: 360,
            proxy_size: 1000,
            test_per_class: 200,
            data: DataSource::Synthetic,
            csv_header: false,
            partition: PartitionSpec::Reference,
            client_sizes: REFERENCE_CLIENT_SIZES.to_vec(),
            client_weights: Vec::new(),
            noise_scale: 0.6,
            bump_width: 120.0,
            bump_spacing: 16.0,
            student_arch: DEFAULT_STUDENT_ARCH.into(),
            client_archs: Vec::new(),
            teacher_arch: DEFAULT_TEACHER_ARCH.into(),
            teacher_stage: true,
            teacher_distill_epochs: 1,
            student_distill_epochs: 1,
            student_local_epochs: 1,
            skip_student_distill: false,
            skip_realign: false,
            rng_keying: RngKeying::ClientId,
            parallel_clients: false,
            keep_artifacts: false,
        }
    }
}

impl ExperimentConfig {
    pub fn num_clients(&self) -> usize {
        match self.partition {
            PartitionSpec::Custom => self.client_weights.len(),
            _ => self.client_sizes.len(),
        }
    }

    pub fn width(&self) -> Result<ScalarWidth> {
        ScalarWidth::try_from(self.payload_bits)
    }

    pub fn teacher_distill(&self) -> DistillConfig {
        DistillConfig {
            temperature: self.temperature,
            lambda: self.lambda,
            t2_placement: self.t2_placement,
        }
    }

    pub fn student_distill(&self) -> DistillConfig {
        DistillConfig {
            temperature: self.temperature,
            lambda: if self.student_kl_only { 0.0 } else { self.student_lambda },
            t2_placement: self.t2_placement,
        }
    }

    /// Whether the run has a server-side teacher.
    pub fn uses_teacher(&self) -> bool {
        self.algorithm == Algorithm::BiFedKD && self.teacher_stage
    }

    /// Resolved per-client student architectures.
    pub fn client_architectures(&self, num_clients: usize) -> Result<Vec<Vec<LayerSpec>>> {
        let archs: Vec<&str> = if self.client_archs.is_empty() {
            vec![self.student_arch.as_str(); num_clients]
        } else if self.client_archs.len() == num_clients {
            self.client_archs.iter().map(String::as_str).collect()
        } else {
            return Err(Error::config(format!(
                "{} client architectures for {num_clients} clients",
                self.client_archs.len()
            )));
        };
        archs
            .into_iter()
            .map(|a| {
                a.parse::<Architecture>()?
                    .resolve(self.sample_len)
                    .map_err(|e| Error::config(format!("student architecture {a:?}: {e}")))
            })
            .collect()
    }

    pub fn teacher_layers(&self) -> Result<Vec<LayerSpec>> {
        self.teacher_arch
            .parse::<Architecture>()?
            .resolve(self.sample_len)
            .map_err(|e| Error::config(format!("teacher architecture {:?}: {e}", self.teacher_arch)))
    }

    /// Check everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_clients();
        if k == 0 {
            return Err(Error::config("at least one client is required"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!("temperature must be positive, got {}", self.temperature)));
        }
        for (name, v) in [("lambda", self.lambda), ("student_lambda", self.student_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        self.width()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        for (name, lr) in [("student_lr", self.student_lr), ("teacher_lr", self.teacher_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.num_classes == 0 || self.sample_len == 0 {
            return Err(Error::config("class count and sample length must be positive"));
        }
        if self.algorithm != Algorithm::FedAvg && self.proxy_size < self.num_classes {
            return Err(Error::config(format!(
                "proxy size {} cannot hold one sample of each of {} classes",
                self.proxy_size, self.num_classes
            )));
        }
        match self.partition {
            PartitionSpec::Reference => {
                if self.num_classes != REFERENCE_PERCENTAGES[0].len() || k != REFERENCE_PERCENTAGES.len() {
                    return Err(Error::config(
                        "reference partition needs exactly 3 client sizes and 5 classes",
                    ));
                }
            }
            PartitionSpec::Dirichlet(alpha) => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::config(format!("dirichlet alpha must be positive, got {alpha}")));
                }
            }
            PartitionSpec::Custom => {
                if self.client_sizes.len() != k {
                    return Err(Error::config(format!(
                        "{} client sizes for {k} custom clients",
                        self.client_sizes.len()
                    )));
                }
                if self.client_weights.iter().any(|w| w.len() != self.num_classes) {
                    return Err(Error::config("every client weight row needs one entry per class"));
                }
            }
        }
        if self.client_sizes.contains(&0) {
            return Err(Error::config("client datasets must be nonempty"));
        }
        let archs = self.client_architectures(k)?;
        if self.algorithm == Algorithm::FedAvg && archs.iter().any(|a| a != &archs[0]) {
            return Err(Error::config("fedavg requires every client to share one student architecture"));
        }
        for (i, layers) in archs.iter().enumerate() {
            crate::nn::Model::new(layers.clone(), self.sample_len, self.num_classes)
                .map_err(|e| Error::config(format!("client {i} student: {e}")))?;
        }
        if self.uses_teacher() {
            crate::nn::Model::new(self.teacher_layers()?, self.sample_len, self.num_classes)
                .map_err(|e| Error::config(format!("teacher: {e}")))?;
        }
        Ok(())
    }
}
