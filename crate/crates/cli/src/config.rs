//! Experiment configuration: JSON schema and validation.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use svb_core::mixture::{mixture_predict, GaussianParams, MixtureState};
use svb_core::{ConstraintSpec, Distribution, Grid, SemanticChannel};

use crate::ExitKind;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Seed for sampling mode; ignored otherwise.
    #[serde(default)]
    pub seed: u64,
    /// Output directory used when `--out` is not given.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Mixture(MixtureConfig),
    EmVsEnm(EmVsEnmConfig),
    RgCompress(RgConfig),
    Control(ControlConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Mixture(_) => "mixture",
            Self::EmVsEnm(_) => "em_vs_enm",
            Self::RgCompress(_) => "rg_compress",
            Self::Control(_) => "control",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid<f64>> {
        Ok(Grid::uniform(self.min, self.max, self.step)?)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub mu: f64,
    pub sigma: f64,
    pub weight: f64,
}

fn components(c: &[ComponentConfig]) -> Vec<GaussianParams<f64>> {
    c.iter().map(|c| GaussianParams::new(c.mu, c.sigma, c.weight)).collect()
}

/// Draw `draws` samples from the true distribution and use relative frequencies instead.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub draws: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Em,
    Enm,
    /// Channel mixture with Gaussian truth functions refit from the posterior.
    Channel,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Em => "em",
            Self::Enm => "enm",
            Self::Channel => "channel",
        }
    }
}

fn default_kl() -> f64 {
    1e-3
}

fn default_max_outer() -> usize {
    2000
}

fn default_n() -> usize {
    1
}

fn default_s() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub variant: Variant,
    /// E/M1 repetitions per outer iteration (EnM only).
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_kl")]
    pub stop_kl_bits: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// Run exactly this many model updates and report the state reached.
    #[serde(default)]
    pub iterations: Option<usize>,
    /// Strength exponent of the channel mixture.
    #[serde(default = "default_s")]
    pub s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub grid: GridConfig,
    #[serde(rename = "true")]
    pub truth: Vec<ComponentConfig>,
    pub init: Vec<ComponentConfig>,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmVsEnmConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub grid: GridConfig,
    #[serde(rename = "true")]
    pub truth: Vec<ComponentConfig>,
    pub init: Vec<ComponentConfig>,
    pub n: usize,
    #[serde(default = "default_kl")]
    pub stop_kl_bits: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
}

/// Source of the observed `P(x)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PxConfig {
    Gaussian {
        mu: f64,
        sigma: f64,
    },
    /// `P(x) ∝ exp(-x / scale)`.
    Exponential {
        scale: f64,
    },
    Mixture(Vec<ComponentConfig>),
    /// Nonnegative weights, normalized.
    Values(Vec<f64>),
}

impl PxConfig {
    pub fn build(&self, grid: &Grid<f64>) -> Result<Distribution<f64>> {
        Ok(match self {
            Self::Gaussian { mu, sigma } => Distribution::discretized_gaussian(grid, *mu, *sigma)?,
            Self::Exponential { scale } => {
                if !(*scale > 0.0) {
                    bail!("exponential scale must be positive");
                }
                let logs = grid.values().mapv(|x| -x / scale);
                Distribution::from_log_weights(logs.view())?
            }
            Self::Mixture(c) => mixture_predict(&MixtureState::new(grid.clone(), components(c))?),
            Self::Values(v) => {
                if v.len() != grid.len() {
                    bail!("px has {} values for {} grid points", v.len(), grid.len());
                }
                Distribution::from_weights(Array1::from(v.clone()))?
            }
        })
    }
}

/// Log-score `offset + slope (x - center) - curvature (x - center)^2` of one label.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub name: String,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub curvature: f64,
    #[serde(default)]
    pub center: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedConstraint {
    pub name: String,
    #[serde(flatten)]
    pub spec: ConstraintSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SemanticsConfig {
    /// Truth rows `P(y_j|x) / max_x P(y_j|x)` of a softmax over per-label log-scores.
    SoftmaxScores(Vec<ScoreConfig>),
    Constraints(Vec<NamedConstraint>),
}

impl SemanticsConfig {
    pub fn names(&self) -> Vec<String> {
        match self {
            Self::SoftmaxScores(s) => s.iter().map(|s| s.name.clone()).collect(),
            Self::Constraints(c) => c.iter().map(|c| c.name.clone()).collect(),
        }
    }

    pub fn build(&self, grid: &Grid<f64>, px: &Distribution<f64>) -> Result<SemanticChannel<f64>> {
        let rows: Vec<Array1<f64>> = match self {
            Self::SoftmaxScores(scores) => {
                let x = grid.values();
                let logits: Vec<Array1<f64>> = scores
                    .iter()
                    .map(|s| x.mapv(|x| s.offset + s.slope * (x - s.center) - s.curvature * (x - s.center).powi(2)))
                    .collect();
                let mut rows: Vec<Array1<f64>> = Vec::with_capacity(scores.len());
                for l in &logits {
                    let post = Array1::from_shape_fn(x.len(), |i| {
                        let lse = svb_core::scalar::log_sum_exp(logits.iter().map(|r| r[i]));
                        (l[i] - lse).exp()
                    });
                    let mx = post.iter().cloned().fold(0.0, f64::max);
                    rows.push(post.mapv(|p| p / mx));
                }
                rows
            }
            Self::Constraints(c) => c.iter().map(|c| c.spec.truth_row(grid, px)).collect::<svb_core::Result<_>>()?,
        };
        Ok(SemanticChannel::from_rows(&rows)?.with_labels(self.names())?)
    }

    fn len(&self) -> usize {
        match self {
            Self::SoftmaxScores(s) => s.len(),
            Self::Constraints(c) => c.len(),
        }
    }
}

fn default_eps() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    100_000
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub grid: GridConfig,
    pub px: PxConfig,
    pub semantics: SemanticsConfig,
    #[serde(default = "default_s")]
    pub s: f64,
    /// Ascending multipliers for an R(G) curve sweep, warm-started.
    #[serde(default)]
    pub s_grid: Option<Vec<f64>>,
    /// Also solve the maximum-truth criterion R(Θ) at `s`.
    #[serde(default = "yes")]
    pub compare_theta: bool,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

/// One objective parameter swept across cells.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaryConfig {
    /// Index of the objective whose parameter changes.
    pub objective: usize,
    pub param: String,
    pub values: Vec<f64>,
    /// Column name in the output table.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub grid: GridConfig,
    pub px: PxConfig,
    pub objectives: Vec<NamedConstraint>,
    pub s: Vec<f64>,
    #[serde(default)]
    pub vary: Option<VaryConfig>,
    #[serde(default)]
    pub initial_pa: Option<Vec<f64>>,
    #[serde(default = "default_control_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_control_eps() -> f64 {
    1e-13
}

/// One (s, varied value) cell of a control sweep.
#[derive(Clone, Debug)]
pub struct ControlCell {
    pub s: f64,
    pub value: Option<f64>,
    pub objectives: Vec<NamedConstraint>,
}

impl ControlConfig {
    pub fn vary_label(&self) -> Option<String> {
        self.vary.as_ref().map(|v| v.label.clone().unwrap_or_else(|| v.param.clone()))
    }

    pub fn cells(&self) -> Result<Vec<ControlCell>> {
        let mut out = Vec::new();
        for &s in &self.s {
            match &self.vary {
                None => out.push(ControlCell { s, value: None, objectives: self.objectives.clone() }),
                Some(v) => {
                    for &value in &v.values {
                        let mut objectives = self.objectives.clone();
                        let target = objectives
                            .get_mut(v.objective)
                            .ok_or_else(|| anyhow!("vary.objective {} out of range", v.objective))?;
                        target.spec = with_param(&target.spec, &v.param, value)?;
                        out.push(ControlCell { s, value: Some(value), objectives });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Replaces one named parameter of a constraint form.
fn with_param(spec: &ConstraintSpec, param: &str, value: f64) -> Result<ConstraintSpec> {
    let mut json = serde_json::to_value(spec)?;
    let obj = json.as_object_mut().ok_or_else(|| anyhow!("constraint is not an object"))?;
    if matches!(param, "kind" | "form") || !obj.contains_key(param) {
        bail!("form '{}' has no parameter '{param}'", spec.form.name());
    }
    obj.insert(param.to_string(), serde_json::json!(value));
    Ok(serde_json::from_value(json)?)
}

fn check_names(names: &[String]) -> Result<()> {
    for n in names {
        if n.is_empty() || n.contains([',', '"', '\n']) {
            bail!("label name {n:?} must be non-empty without commas, quotes or newlines");
        }
    }
    Ok(())
}

fn check_mixture(grid: &GridConfig, truth: &[ComponentConfig], init: &[ComponentConfig]) -> Result<()> {
    let g = grid.build()?;
    if truth.is_empty() || init.is_empty() {
        bail!("true and init component lists must be non-empty");
    }
    MixtureState::new(g.clone(), components(truth)).context("true components")?;
    MixtureState::new(g, components(init)).context("init components")?;
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .context(ExitKind::Io)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid config").context(ExitKind::Config)?;
        cfg.validate().context(ExitKind::Config)?;
        Ok(cfg)
    }

    /// Kind-payload consistency checks; nothing is computed beyond realizing inputs.
    pub fn validate(&self) -> Result<()> {
        match &self.experiment {
            Experiment::Mixture(m) => {
                check_mixture(&m.grid, &m.truth, &m.init)?;
                let a = &m.algorithm;
                if a.n == 0 {
                    bail!("algorithm.n must be at least 1");
                }
                if a.variant == Variant::Em && a.n != 1 {
                    bail!("variant em requires n = 1");
                }
                if !(a.stop_kl_bits >= 0.0) || !(a.s >= 0.0) {
                    bail!("stop_kl_bits and s must be non-negative");
                }
                if a.variant == Variant::Channel && m.truth.len() != m.init.len() {
                    bail!("channel variant needs one init truth per component");
                }
            }
            Experiment::EmVsEnm(m) => {
                check_mixture(&m.grid, &m.truth, &m.init)?;
                if m.n < 2 {
                    bail!("n must be at least 2 to differ from EM");
                }
            }
            Experiment::RgCompress(r) => {
                let g = r.grid.build()?;
                let px = r.px.build(&g)?;
                if r.semantics.len() == 0 {
                    bail!("semantics must list at least one label");
                }
                check_names(&r.semantics.names())?;
                r.semantics.build(&g, &px)?;
                if let Some(sg) = &r.s_grid {
                    if sg.is_empty() || sg.windows(2).any(|w| !(w[1] > w[0])) {
                        bail!("s_grid must be non-empty and strictly ascending");
                    }
                }
                if !(r.eps > 0.0) || r.max_iter == 0 {
                    bail!("eps must be positive and max_iter at least 1");
                }
            }
            Experiment::Control(c) => {
                let g = c.grid.build()?;
                let px = c.px.build(&g)?;
                if c.objectives.is_empty() {
                    bail!("objectives must list at least one target");
                }
                if c.s.is_empty() || c.s.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    bail!("s must list finite non-negative strengths");
                }
                check_names(&c.objectives.iter().map(|o| o.name.clone()).collect::<Vec<_>>())?;
                if let Some(label) = c.vary_label() {
                    check_names(&[label])?;
                }
                if let Some(pa) = &c.initial_pa {
                    if pa.len() != c.objectives.len() {
                        bail!("initial_pa has {} entries for {} objectives", pa.len(), c.objectives.len());
                    }
                    Distribution::from_vec(pa.clone())?;
                }
                for cell in c.cells()? {
                    let rows: Vec<Array1<f64>> =
                        cell.objectives.iter().map(|o| o.spec.truth_row(&g, &px)).collect::<svb_core::Result<_>>()?;
                    svb_core::control::ControlProblem::new(px.clone(), SemanticChannel::from_rows(&rows)?, cell.s)?;
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        let n = match &self.experiment {
            Experiment::Mixture(m) => m.name.clone(),
            Experiment::EmVsEnm(m) => m.name.clone(),
            Experiment::RgCompress(r) => r.name.clone(),
            Experiment::Control(c) => c.name.clone(),
        };
        n.unwrap_or_else(|| self.experiment.kind().to_string())
    }
}

/// Observed distribution for a mixture instance: synthesized, or sampled when configured.
pub fn observed_mixture(
    grid: &Grid<f64>,
    truth: &[ComponentConfig],
    sampling: Option<SamplingConfig>,
    seed: u64,
) -> Result<Distribution<f64>> {
    let px = mixture_predict(&MixtureState::new(grid.clone(), components(truth))?);
    match sampling {
        None => Ok(px),
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(px.sample_frequencies(s.draws, &mut rng)?)
        }
    }
}

pub fn mixture_state(grid: &Grid<f64>, c: &[ComponentConfig]) -> Result<MixtureState<f64>> {
    Ok(MixtureState::new(grid.clone(), components(c))?)
}
