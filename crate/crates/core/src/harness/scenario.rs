use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapConfig;
use crate::error::{Error, Result};
use crate::estimation::{Constraint, EmConfig};
use crate::model::{CovarianceStructure, MixtureParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    /// Cumulative rule on the posterior of the true parameter.
    Oracle,
    /// Cumulative rule on the fitted posterior.
    PlugIn,
    BootParam,
    BootNonParam,
    /// Keep items with fitted `T <= alpha`.
    FixedBaseline,
}

impl Procedure {
    pub const ALL: [Procedure; 5] =
        [Procedure::Oracle, Procedure::PlugIn, Procedure::BootParam, Procedure::BootNonParam, Procedure::FixedBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::Oracle => "oracle",
            Procedure::PlugIn => "plug_in",
            Procedure::BootParam => "boot_param",
            Procedure::BootNonParam => "boot_nonparam",
            Procedure::FixedBaseline => "fixed_baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Where the data of each replication comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    /// Unit-covariance Gaussian components with `μ₁ = 0`,
    /// `μ₂ = (ε/√d, …, ε/√d)` and, for three components, `μ₃ = √ε e₂`.
    /// Equal weights.
    Separated {
        q: usize,
        d: usize,
    },
    Fixed {
        params: MixtureParams,
    },
    /// Rows of a CSV file; labels are read from `label_column`.
    FromCsv {
        path: PathBuf,
        q: usize,
        columns: Vec<String>,
        label_column: String,
        /// Draw `n` rows with replacement per replication instead of using the file as is.
        #[serde(default)]
        resample: bool,
    },
}

impl Truth {
    /// Ground-truth parameter at separation `epsilon`; `None` for file data.
    pub fn params(&self, epsilon: f64) -> Result<Option<MixtureParams>> {
        match self {
            Truth::Separated { q, d } => separated_truth(*q, *d, epsilon).map(Some),
            Truth::Fixed { params } => Ok(Some(params.clone())),
            Truth::FromCsv { .. } => Ok(None),
        }
    }
}

pub fn separated_truth(q: usize, d: usize, epsilon: f64) -> Result<MixtureParams> {
    if !(2..=3).contains(&q) {
        return Err(Error::InvalidConfig(format!("separated truth supports 2 or 3 components, got {q}")));
    }
    if d < 2 && q == 3 || d == 0 {
        return Err(Error::InvalidConfig(format!("dimension {d} too small for {q} components")));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!("separation must be finite and non-negative, got {epsilon}")));
    }
    let mut means = vec![vec![0.0; d], vec![epsilon / (d as f64).sqrt(); d]];
    if q == 3 {
        let mut m3 = vec![0.0; d];
        m3[1] = epsilon.sqrt();
        means.push(m3);
    }
    let covs = vec![DMatrix::identity(d, d); q];
    MixtureParams::gaussian(vec![1.0 / q as f64; q], &means, &covs, CovarianceStructure::Full)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Epsilon,
    N,
    Alpha,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Epsilon => "epsilon",
            SweepParameter::N => "n",
            SweepParameter::Alpha => "alpha",
        }
    }
}

/// One swept parameter, with optional overrides of the scenario's base values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub label: String,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Sweep {
    pub fn new(label: &str, parameter: SweepParameter, values: Vec<f64>) -> Self {
        Self { label: label.to_string(), parameter, values, n: None, epsilon: None, alpha: None }
    }

    pub fn at_n(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }
}

/// Fully resolved settings of one sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub epsilon: f64,
    pub n: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub truth: Truth,
    /// Base separation (ignored for fixed or file truths).
    #[serde(default)]
    pub epsilon: f64,
    pub n: usize,
    pub reps: usize,
    pub procedures: Vec<Procedure>,
    pub sweeps: Vec<Sweep>,
    pub alpha: f64,
    /// With the `known` structure and no supplied values, the true weights and
    /// covariances of each sweep point are used.
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub boot: BootstrapConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn q(&self) -> Result<usize> {
        match &self.truth {
            Truth::Separated { q, .. } => Ok(*q),
            Truth::Fixed { params } => Ok(params.q()),
            Truth::FromCsv { q, .. } => Ok(*q),
        }
    }

    pub fn points(&self, sweep: &Sweep) -> Vec<SweepPoint> {
        let base = SweepPoint {
            value: 0.0,
            epsilon: sweep.epsilon.unwrap_or(self.epsilon),
            n: sweep.n.unwrap_or(self.n),
            alpha: sweep.alpha.unwrap_or(self.alpha),
        };
        sweep
            .values
            .iter()
            .map(|&value| {
                let mut p = SweepPoint { value, ..base };
                match sweep.parameter {
                    SweepParameter::Epsilon => p.epsilon = value,
                    SweepParameter::N => p.n = value as usize,
                    SweepParameter::Alpha => p.alpha = value,
                }
                p
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("scenario {}: {msg}", self.name)));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.procedures.is_empty() {
            return bad("no procedures".into());
        }
        if self.sweeps.is_empty() {
            return bad("no sweeps".into());
        }
        self.em.validate()?;
        self.boot.validate()?;
        let file_truth = matches!(self.truth, Truth::FromCsv { .. });
        if file_truth && self.procedures.contains(&Procedure::Oracle) {
            return bad("the oracle needs a known truth".into());
        }
        for sweep in &self.sweeps {
            if sweep.values.is_empty() {
                return bad(format!("sweep {} has no values", sweep.label));
            }
            if file_truth && sweep.parameter == SweepParameter::Epsilon {
                return bad("file data cannot be swept in separation".into());
            }
            for p in self.points(sweep) {
                if !(p.alpha > 0.0 && p.alpha < 1.0) {
                    return Err(Error::InvalidLevel(p.alpha));
                }
                if sweep.parameter == SweepParameter::N && (p.value.fract() != 0.0 || p.value < 1.0) {
                    return bad(format!("sample size {} is not a positive integer", p.value));
                }
                if p.n == 0 && !file_truth {
                    return bad("sample size must be positive".into());
                }
                if let Some(truth) = self.truth.params(p.epsilon)? {
                    self.em_for(&truth)?.constraint.validate(truth.q(), truth.dim())?;
                }
            }
        }
        Ok(())
    }

    /// EM settings for a replication under `truth`, filling in known values.
    pub fn em_for(&self, truth: &MixtureParams) -> Result<EmConfig> {
        let mut em = self.em.clone();
        if em.constraint.structure == CovarianceStructure::Known {
            let known = Constraint::known_from(truth);
            em.constraint.known_weights.get_or_insert(known.known_weights.unwrap());
            em.constraint.known_scatters.get_or_insert(known.known_scatters.unwrap());
        }
        Ok(em)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario configs serialize")
    }
}

/// Level sweep shared by the built-in scenarios.
pub const ALPHA_SWEEP: [f64; 4] = [0.05, 0.1, 0.15, 0.2];

fn base(name: &str, q: usize, d: usize, epsilon: f64, n: usize, structure: CovarianceStructure) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        truth: Truth::Separated { q, d },
        epsilon,
        n,
        reps: 100,
        procedures: Procedure::ALL.to_vec(),
        sweeps: Vec::new(),
        alpha: 0.1,
        em: EmConfig::default().with_structure(structure),
        boot: BootstrapConfig::default(),
        seed: 2024,
    }
}

fn alpha_sweeps(ns: &[usize]) -> Vec<Sweep> {
    ns.iter()
        .map(|&n| Sweep::new(&format!("alpha_n{n}"), SweepParameter::Alpha, ALPHA_SWEEP.to_vec()).at_n(n))
        .collect()
}

/// The six simulation settings.
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    let sqrt2 = std::f64::consts::SQRT_2;
    let eps_values = vec![1.0, sqrt2, 2.0, 4.0];

    let mut known = base("known-params", 2, 2, sqrt2, 100, CovarianceStructure::Known);
    known.sweeps = vec![Sweep::new("epsilon", SweepParameter::Epsilon, eps_values.clone())];

    let mut diagonal = base("diagonal", 2, 2, sqrt2, 200, CovarianceStructure::Diagonal);
    diagonal.sweeps = vec![
        Sweep::new("epsilon", SweepParameter::Epsilon, eps_values).at_n(100),
        Sweep::new("n", SweepParameter::N, vec![100.0, 200.0, 500.0, 1000.0]),
    ];
    diagonal.sweeps.extend(alpha_sweeps(&[200, 1000]));

    let mut high_dim = base("high-dim", 2, 20, sqrt2, 200, CovarianceStructure::Diagonal);
    high_dim.sweeps = alpha_sweeps(&[200, 1000]);

    let mut three = base("three-component", 3, 2, sqrt2, 200, CovarianceStructure::Diagonal);
    three.sweeps = alpha_sweeps(&[200, 1000]);

    let mut unconstrained = base("unconstrained", 2, 2, sqrt2, 200, CovarianceStructure::Full);
    unconstrained.sweeps = alpha_sweeps(&[200, 1000]);

    let mut typical = base("typical", 3, 4, 2.0, 200, CovarianceStructure::Full);
    typical.sweeps = alpha_sweeps(&[200, 1000]);

    vec![known, diagonal, high_dim, three, unconstrained, typical]
}

pub fn builtin_scenario(name: &str) -> Option<ScenarioConfig> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}
