//! Run configuration: a versioned TOML document describing the sample, the
//! demography, the mutation model and the numerical settings.

use std::fmt;

use serde::{Deserialize, Serialize};

use quadri_core::combiner::{SpectrumOptions, DEFAULT_THRESHOLD};
use quadri_core::conditional_times::{MomentMode, TimeOptions};
use quadri_core::demography::{DemographicModel, Piece};
use quadri_core::lineage::LineageOptions;
use quadri_core::oracle::{OracleOptions, PairSampling};
use quadri_core::sample::{PopulationSample, SampleConfiguration};
use quadri_core::triallelic::{MutationModel, OuterRange};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// The document is not valid TOML or does not match the schema.
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// A field holds a value that violates a constraint.
    Invalid { path: String, message: String },
    Io(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Parse { line, column, message } => write!(f, "parse error at line {line}, column {column}: {message}"),
            ConfigError::Invalid { path, message } => write!(f, "invalid value for `{path}`: {message}"),
            ConfigError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    pub population: Vec<PopulationConfig>,
    pub demography: DemographyConfig,
    pub mutation: MutationConfig,
    #[serde(default)]
    pub combiner: CombinerConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_replicates() -> u64 {
    100_000
}

/// One population: `n = ancestral + derived`, and `m` lineages at `t_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub n: usize,
    pub ancestral: usize,
    pub derived: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemographyConfig {
    pub reference_size: f64,
    pub divergence_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_end: Option<f64>,
    pub piece: Vec<PieceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceConfig {
    Constant { start: f64, value: f64 },
    Exponential { start: f64, rate0: f64, growth: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationConfig {
    pub theta: f64,
    /// Rows and columns in allele order `a, b, c, d`; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<[[f64; 4]; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinerConfig {
    #[serde(default = "default_thresholds")]
    pub thresholds: [f64; 3],
    #[serde(default)]
    pub outer_range: OuterRange,
    /// Optional reference set for post-normalizing the combined value; each
    /// entry lists the three populations.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub normalize: Vec<NormalizationEntry>,
}

fn default_thresholds() -> [f64; 3] {
    [DEFAULT_THRESHOLD; 3]
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            outer_range: OuterRange::default(),
            normalize: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationEntry {
    pub population: Vec<PopulationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub moment_mode: MomentMode,
    /// Relative tolerance of the single integrals; the double integrals use
    /// ten times this value.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_sample_size")]
    pub max_sample_size: usize,
}

fn default_tolerance() -> f64 {
    TimeOptions::default().rel_tol
}

fn default_max_sample_size() -> usize {
    LineageOptions::default().max_sample_size
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            moment_mode: MomentMode::default(),
            tolerance: default_tolerance(),
            max_sample_size: default_max_sample_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub sampling: PairSampling,
    #[serde(default)]
    pub mutate_ancestral: bool,
    #[serde(default = "default_block_size")]
    pub block_size: u64,
}

fn default_block_size() -> u64 {
    OracleOptions::default().block_size
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            sampling: PairSampling::default(),
            mutate_ancestral: false,
            block_size: default_block_size(),
        }
    }
}

/// Everything a subcommand needs, validated and converted to library types.
#[derive(Debug, Clone)]
pub struct Setup {
    pub sample: SampleConfiguration,
    pub demography: DemographicModel,
    pub mutation: MutationModel,
    pub thresholds: [f64; 3],
    pub normalization: Vec<SampleConfiguration>,
    pub spectrum: SpectrumOptions,
    pub oracle: OracleOptions,
    pub seed: u64,
    pub replicates: u64,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl Config {
    /// Read the document without checking value constraints.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn setup(&self) -> Result<Setup, ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        let sample = sample_from(&self.population, "population")?;
        let a = &self.analysis;
        if !(a.tolerance > 0.0 && a.tolerance < 1.0) {
            return Err(invalid("analysis.tolerance", format!("must lie in (0, 1), got {}", a.tolerance)));
        }
        if a.max_sample_size < 2 {
            return Err(invalid("analysis.max_sample_size", "must be at least 2"));
        }
        if a.max_sample_size > LineageOptions::default().max_sample_size {
            log::warn!(
                "max_sample_size = {}: exact coefficient arithmetic grows quickly with N",
                a.max_sample_size
            );
        }
        for k in 1..=3u8 {
            let (p, q) = quadri_core::sample::model_populations(k).expect("valid model index");
            let n = sample.population(p).size() + sample.population(q).size();
            if n > a.max_sample_size {
                return Err(invalid(
                    "analysis.max_sample_size",
                    format!("model {k} pools {n} lineages, above the limit {}", a.max_sample_size),
                ));
            }
        }
        let normalization = self
            .combiner
            .normalize
            .iter()
            .enumerate()
            .map(|(i, e)| sample_from(&e.population, &format!("combiner.normalize[{i}].population")))
            .collect::<Result<Vec<_>, _>>()?;
        for (k, eps) in self.combiner.thresholds.iter().enumerate() {
            if !(*eps > 0.0 && *eps < 1.0) {
                return Err(invalid(format!("combiner.thresholds[{k}]"), format!("must lie in (0, 1), got {eps}")));
            }
        }
        if self.oracle.block_size == 0 {
            return Err(invalid("oracle.block_size", "must be positive"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be positive"));
        }
        let time = TimeOptions {
            mode: a.moment_mode,
            rel_tol: a.tolerance,
            joint_rel_tol: (10.0 * a.tolerance).min(0.5),
            lineage: LineageOptions {
                max_sample_size: a.max_sample_size,
                ..LineageOptions::default()
            },
        };
        Ok(Setup {
            sample,
            demography: self.demography.build()?,
            mutation: self.mutation.build()?,
            thresholds: self.combiner.thresholds,
            normalization,
            spectrum: SpectrumOptions {
                time,
                outer_range: self.combiner.outer_range,
            },
            oracle: OracleOptions {
                sampling: self.oracle.sampling,
                mutate_ancestral: self.oracle.mutate_ancestral,
                block_size: self.oracle.block_size,
            },
            seed: self.seed,
            replicates: self.replicates,
        })
    }
}

fn sample_from(pops: &[PopulationConfig], path: &str) -> Result<SampleConfiguration, ConfigError> {
    if pops.len() != 3 {
        return Err(invalid(path, format!("exactly three populations required, got {}", pops.len())));
    }
    let mut out = [PopulationSample::new(0, 0, 0); 3];
    for (i, p) in pops.iter().enumerate() {
        let here = |field: &str| format!("{path}[{i}].{field}");
        if p.ancestral + p.derived != p.n {
            return Err(invalid(
                here("n"),
                format!("n must equal ancestral + derived ({} + {} = {}), got {}", p.ancestral, p.derived, p.ancestral + p.derived, p.n),
            ));
        }
        if p.m < 1 || p.m > p.n {
            return Err(invalid(here("m"), format!("need 1 <= m <= n = {}, got {}", p.n, p.m)));
        }
        out[i] = PopulationSample::new(p.ancestral, p.derived, p.m);
    }
    SampleConfiguration::new(out).map_err(|e| invalid(path, e.to_string()))
}

impl DemographyConfig {
    pub fn build(&self) -> Result<DemographicModel, ConfigError> {
        if !(self.reference_size.is_finite() && self.reference_size > 0.0) {
            return Err(invalid("demography.reference_size", format!("must be positive, got {}", self.reference_size)));
        }
        if !(self.divergence_time.is_finite() && self.divergence_time >= 0.0) {
            return Err(invalid(
                "demography.divergence_time",
                format!("must be finite and non-negative, got {}", self.divergence_time),
            ));
        }
        if self.piece.is_empty() {
            return Err(invalid("demography.piece", "at least one piece is required"));
        }
        let mut pieces = Vec::with_capacity(self.piece.len());
        let mut last = f64::NEG_INFINITY;
        for (i, p) in self.piece.iter().enumerate() {
            let here = |field: &str| format!("demography.piece[{i}].{field}");
            let start = match *p {
                PieceConfig::Constant { start, value } => {
                    if !(value.is_finite() && value > 0.0) {
                        return Err(invalid(here("value"), format!("ratio must be positive, got {value}")));
                    }
                    pieces.push(Piece::constant(start, value));
                    start
                }
                PieceConfig::Exponential { start, rate0, growth } => {
                    if !(rate0.is_finite() && rate0 > 0.0) {
                        return Err(invalid(here("rate0"), format!("must be positive, got {rate0}")));
                    }
                    if !growth.is_finite() {
                        return Err(invalid(here("growth"), format!("must be finite, got {growth}")));
                    }
                    pieces.push(Piece::exponential(start, rate0, growth));
                    start
                }
            };
            if i == 0 && start != 0.0 {
                return Err(invalid(here("start"), format!("the first piece must start at 0, got {start}")));
            }
            if !(start.is_finite() && start > last) {
                return Err(invalid(here("start"), format!("starts must be finite and strictly increasing, got {start} after {last}")));
            }
            last = start;
        }
        let end = self.domain_end.unwrap_or(f64::INFINITY);
        if let Some(d) = self.domain_end {
            if !(d > 0.0) || d < self.divergence_time {
                return Err(invalid("demography.domain_end", format!("must be positive and at least the divergence time, got {d}")));
            }
        }
        DemographicModel::with_domain_end(self.reference_size, self.divergence_time, pieces, end)
            .map_err(|e| invalid("demography", e.to_string()))
    }
}

impl MutationConfig {
    pub fn build(&self) -> Result<MutationModel, ConfigError> {
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(invalid("mutation.theta", format!("must be finite and non-negative, got {}", self.theta)));
        }
        match self.transition {
            None => MutationModel::uniform(self.theta),
            Some(p) => {
                for (r, row) in p.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-12 {
                        return Err(invalid(
                            format!("mutation.transition[{r}]"),
                            format!("row must hold probabilities summing to 1, got {row:?}"),
                        ));
                    }
                }
                MutationModel::new(p, self.theta)
            }
        }
        .map_err(|e| invalid("mutation", e.to_string()))
    }
}
