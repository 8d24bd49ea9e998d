//! Pipeline configuration: one TOML file, every key optional.

use std::path::{Path, PathBuf};

use pa_core::aggregation::NormalityScoring;
use pa_core::coreset::ProjectionPolicy;
use pa_core::decision::{FusionOrder, PsiMode, Reduction, TauScope};
use pa_core::pipeline::{CadaConfig, Toggles};
use pa_core::{EngineConfig, ScoringParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The documented default configuration, printed by `--print-config`.
pub const DEFAULT_CONFIG: &str = r#"# pa-score configuration. Every key is optional; the values below are the
# defaults. Relative paths are resolved against the directory of this file.

# Feature container directory (manifest.json + blobs). Required for every
# subcommand except `synth`.
container = "container"
# Output directory. Replaced atomically at the end of a successful run.
output = "out"

[selection]
# Fraction of images kept as pseudo-normal references: max(1, ceil(f * N)).
fraction = 0.1
# Temperature dividing class-token/text cosine similarities.
temperature = 0.01
# "positive_only" ranks by similarity to the normal prompt,
# "softmax" by the two-way softmax against the defective prompt.
normality = "positive_only"

[aggregation]
# Neighborhood sizes r (odd, distinct).
scales = [1, 3, 5]

[cada]
enabled = true
# Position-variance threshold between geometric and appearance-only plans.
theta = 0.05
# Jitter noise norm relative to the mean patch norm.
jitter_scale = 0.01

[memory]
# Coreset ratio of the full bank (all test images).
full_ratio = 0.1
# Coreset ratio of the normal bank (augmented reference images).
normal_ratio = 0.25
seed = 0
# "auto" (128-dim projection above 100000 pooled vectors), "off", or a
# dimension.
projection = "auto"

[decision]
k_min = 1
k_max = 3
# Fixed k before clamping; 0 means ceil(0.01 * bank size).
k_target = 0
# Subtraction strength.
alpha = 0.5
# Percentile of the background response used as the subtraction gate.
tau_percentile = 80.0
# "per_image" or "per_dataset".
tau_scope = "per_image"
# One weight per scale summing to 1; empty means uniform.
weights = []
# "per_entry" or "per_image" (nearest distance per source image first).
psi_mode = "per_entry"
# "mean" of the k smallest distances or "max_of_k".
reduction = "mean"
# "subtract_then_fuse" or "fuse_then_subtract".
fusion_order = "subtract_then_fuse"
# Gaussian sigma in pixels applied after bilinear upsampling.
smoothing_sigma = 4.0

[metrics]
# FPR integration limit of PRO.
fpr_limit = 0.3

[toggles]
# Adaptive subtraction; false scores with the full bank alone.
pad_enabled = true
# Normal bank; false leaves no background response to subtract.
pam_enabled = true
# Normal bank at every scale; false keeps it at the smallest scale only.
multiscale_pam_enabled = true
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normality {
    PositiveOnly,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Projection {
    Dim(usize),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerImage,
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi {
    PerEntry,
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduce {
    Mean,
    MaxOfK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    SubtractThenFuse,
    FuseThenSubtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub fraction: f64,
    pub temperature: f64,
    pub normality: Normality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationSection {
    pub scales: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CadaSection {
    pub enabled: bool,
    pub theta: f64,
    pub jitter_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySection {
    pub full_ratio: f64,
    pub normal_ratio: f64,
    pub seed: u64,
    pub projection: Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionSection {
    pub k_min: usize,
    pub k_max: usize,
    pub k_target: usize,
    pub alpha: f64,
    pub tau_percentile: f64,
    pub tau_scope: Scope,
    pub weights: Vec<f64>,
    pub psi_mode: Psi,
    pub reduction: Reduce,
    pub fusion_order: Order,
    pub smoothing_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub fpr_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TogglesSection {
    pub pad_enabled: bool,
    pub pam_enabled: bool,
    pub multiscale_pam_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub container: PathBuf,
    pub output: PathBuf,
    pub selection: SelectionSection,
    pub aggregation: AggregationSection,
    pub cada: CadaSection,
    pub memory: MemorySection,
    pub decision: DecisionSection,
    pub metrics: MetricsSection,
    pub toggles: TogglesSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::from_engine(&EngineConfig::default())
    }
}

macro_rules! section_default {
    ($($t:ty => $field:ident),*) => {
        $(impl Default for $t {
            fn default() -> Self {
                PipelineConfig::default().$field
            }
        })*
    };
}

section_default!(
    SelectionSection => selection,
    AggregationSection => aggregation,
    CadaSection => cada,
    MemorySection => memory,
    DecisionSection => decision,
    MetricsSection => metrics,
    TogglesSection => toggles
);

impl PipelineConfig {
    pub fn from_engine(e: &EngineConfig) -> Self {
        let s = &e.scoring;
        Self {
            container: "container".into(),
            output: "out".into(),
            selection: SelectionSection {
                fraction: e.selection_fraction,
                temperature: e.temperature,
                normality: match e.normality {
                    NormalityScoring::PositiveOnly => Normality::PositiveOnly,
                    NormalityScoring::Softmax => Normality::Softmax,
                },
            },
            aggregation: AggregationSection {
                scales: e.scales.clone(),
            },
            cada: CadaSection {
                enabled: e.cada.enabled,
                theta: e.cada.theta,
                jitter_scale: e.cada.jitter_scale,
            },
            memory: MemorySection {
                full_ratio: e.full_ratio,
                normal_ratio: e.normal_ratio,
                seed: e.seed,
                projection: match e.projection {
                    ProjectionPolicy::Auto => Projection::Named("auto".into()),
                    ProjectionPolicy::Off => Projection::Named("off".into()),
                    ProjectionPolicy::Dim(d) => Projection::Dim(d),
                },
            },
            decision: DecisionSection {
                k_min: s.k_min,
                k_max: s.k_max,
                k_target: s.k_target.unwrap_or(0),
                alpha: s.alpha,
                tau_percentile: s.tau_percentile,
                tau_scope: match s.tau_scope {
                    TauScope::PerImage => Scope::PerImage,
                    TauScope::PerDataset => Scope::PerDataset,
                },
                weights: s.weights.clone(),
                psi_mode: match s.psi_mode {
                    PsiMode::PerEntry => Psi::PerEntry,
                    PsiMode::PerImage => Psi::PerImage,
                },
                reduction: match s.reduction {
                    Reduction::Mean => Reduce::Mean,
                    Reduction::MaxOfK => Reduce::MaxOfK,
                },
                fusion_order: match s.fusion_order {
                    FusionOrder::SubtractThenFuse => Order::SubtractThenFuse,
                    FusionOrder::FuseThenSubtract => Order::FuseThenSubtract,
                },
                smoothing_sigma: e.smoothing_sigma,
            },
            metrics: MetricsSection {
                fpr_limit: e.fpr_limit,
            },
            toggles: TogglesSection {
                pad_enabled: e.toggles.pad_enabled,
                pam_enabled: e.toggles.pam_enabled,
                multiscale_pam_enabled: e.toggles.multiscale_pam_enabled,
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves its paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.container = base.join(&cfg.container);
        cfg.output = base.join(&cfg.output);
        Ok(cfg)
    }

    pub fn engine(&self) -> Result<EngineConfig> {
        let s = &self.decision;
        let projection = match &self.memory.projection {
            Projection::Dim(0) => {
                return Err(Error::Config(
                    "projection dimension must be positive".into(),
                ))
            }
            Projection::Dim(d) => ProjectionPolicy::Dim(*d),
            Projection::Named(n) if n == "auto" => ProjectionPolicy::Auto,
            Projection::Named(n) if n == "off" => ProjectionPolicy::Off,
            Projection::Named(n) => {
                return Err(Error::Config(format!(
                    "memory.projection must be \"auto\", \"off\" or a dimension, got \"{n}\""
                )))
            }
        };
        let engine = EngineConfig {
            scales: self.aggregation.scales.clone(),
            temperature: self.selection.temperature,
            selection_fraction: self.selection.fraction,
            normality: match self.selection.normality {
                Normality::PositiveOnly => NormalityScoring::PositiveOnly,
                Normality::Softmax => NormalityScoring::Softmax,
            },
            cada: CadaConfig {
                enabled: self.cada.enabled,
                theta: self.cada.theta,
                jitter_scale: self.cada.jitter_scale,
            },
            full_ratio: self.memory.full_ratio,
            normal_ratio: self.memory.normal_ratio,
            seed: self.memory.seed,
            projection,
            scoring: ScoringParams {
                k_min: s.k_min,
                k_max: s.k_max,
                k_target: (s.k_target > 0).then_some(s.k_target),
                alpha: s.alpha,
                tau_percentile: s.tau_percentile,
                tau_scope: match s.tau_scope {
                    Scope::PerImage => TauScope::PerImage,
                    Scope::PerDataset => TauScope::PerDataset,
                },
                weights: s.weights.clone(),
                psi_mode: match s.psi_mode {
                    Psi::PerEntry => PsiMode::PerEntry,
                    Psi::PerImage => PsiMode::PerImage,
                },
                reduction: match s.reduction {
                    Reduce::Mean => Reduction::Mean,
                    Reduce::MaxOfK => Reduction::MaxOfK,
                },
                fusion_order: match s.fusion_order {
                    Order::SubtractThenFuse => FusionOrder::SubtractThenFuse,
                    Order::FuseThenSubtract => FusionOrder::FuseThenSubtract,
                },
            },
            smoothing_sigma: s.smoothing_sigma,
            fpr_limit: self.metrics.fpr_limit,
            toggles: Toggles {
                pad_enabled: self.toggles.pad_enabled,
                pam_enabled: self.toggles.pam_enabled,
                multiscale_pam_enabled: self.toggles.multiscale_pam_enabled,
            },
        };
        engine
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.validate_cada()?;
        Ok(engine)
    }

    fn validate_cada(&self) -> Result<()> {
        let c = &self.cada;
        if !(c.theta > 0.0 && c.theta.is_finite()) {
            return Err(Error::Config(format!(
                "cada.theta must be positive, got {}",
                c.theta
            )));
        }
        if !(c.jitter_scale >= 0.0 && c.jitter_scale.is_finite()) {
            return Err(Error::Config(format!(
                "cada.jitter_scale must be non-negative, got {}",
                c.jitter_scale
            )));
        }
        let s = &self.selection;
        if !(s.fraction > 0.0 && s.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "selection.fraction must be in (0, 1], got {}",
                s.fraction
            )));
        }
        if !(s.temperature > 0.0 && s.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "selection.temperature must be positive, got {}",
                s.temperature
            )));
        }
        Ok(())
    }

    /// Checks that the input container exists.
    pub fn check_paths(&self) -> Result<()> {
        if !self
            .container
            .join(crate::container::MANIFEST_FILE)
            .is_file()
        {
            return Err(Error::Config(format!(
                "container {} has no {}",
                self.container.display(),
                crate::container::MANIFEST_FILE
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_defaults_parse_to_defaults() {
        assert_eq!(
            PipelineConfig::parse(DEFAULT_CONFIG).unwrap(),
            PipelineConfig::default()
        );
        assert_eq!(
            PipelineConfig::default().engine().unwrap(),
            EngineConfig::default()
        );
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(
            PipelineConfig::parse("").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::parse("[toggles]\npad = false\n").is_err());
        let cfg = PipelineConfig::parse("[aggregation]\nscales = [1, 2]\n").unwrap();
        assert!(matches!(cfg.engine(), Err(Error::Config(_))));
        let cfg = PipelineConfig::parse("[memory]\nprojection = \"sometimes\"\n").unwrap();
        assert!(matches!(cfg.engine(), Err(Error::Config(_))));
        let cfg = PipelineConfig::parse("[memory]\nprojection = 32\n").unwrap();
        assert_eq!(cfg.engine().unwrap().projection, ProjectionPolicy::Dim(32));
    }
}
