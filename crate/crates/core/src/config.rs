//! TOML configuration shared by every subcommand.
//!
//! Matrices are arrays of rows. `M` is either such an array or a generator
//! table (`generator = "uniform"`, `low`, `high`, `seed`, optional `mix`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::matcore::{check_finite, Mat};
use crate::model::{DesignSpec, ErrorFamily, ModelConfig, Restriction};
use crate::montecarlo::SimulationPlan;
use crate::risk::WeightMatrix;

pub type Rows = Vec<Vec<f64>>;

/// The desk-scale configuration used when none is given.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Inline(Rows),
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub generator: String,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_high")]
    pub high: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<Rows>,
}

fn default_low() -> f64 {
    -1.0
}

fn default_high() -> f64 {
    1.0
}

fn default_family() -> String {
    "gaussian".into()
}

fn default_master_seed() -> u64 {
    20_240_601
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "SimulationSection::default_reps")]
    pub reps: usize,
    #[serde(default = "SimulationSection::default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "SimulationSection::default_lambda_n")]
    pub lambda_n: usize,
    #[serde(default = "SimulationSection::default_lambda_reps")]
    pub lambda_reps: usize,
}

impl SimulationSection {
    fn default_reps() -> usize {
        5000
    }
    fn default_estimators() -> Vec<String> {
        ["UE", "B2", "B3", "B4"].map(String::from).to_vec()
    }
    fn default_lambda_n() -> usize {
        2000
    }
    fn default_lambda_reps() -> usize {
        5000
    }
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            reps: Self::default_reps(),
            estimators: Self::default_estimators(),
            lambda_n: Self::default_lambda_n(),
            lambda_reps: Self::default_lambda_reps(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Risk weight `W`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Rows>,
    /// `Q₀` of the generic restricted estimator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencySection {
    #[serde(default = "EfficiencySection::default_estimator")]
    pub estimator: String,
    /// Direction of `θ₀`; falls back to `theta0`, then to all ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Rows>,
    #[serde(default = "EfficiencySection::default_points")]
    pub points: usize,
    /// Largest scale of the grid; twice the crossing scale when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_scale: Option<f64>,
    /// Explicit grid, overriding `points` and `max_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
}

impl EfficiencySection {
    fn default_estimator() -> String {
        "B2".into()
    }
    fn default_points() -> usize {
        20
    }
}

impl Default for EfficiencySection {
    fn default() -> Self {
        Self {
            estimator: Self::default_estimator(),
            direction: None,
            points: Self::default_points(),
            max_scale: None,
            scales: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub sigma_eps2: f64,
    pub sigma_delta2: f64,
    pub sigma_psi2: f64,
    #[serde(default = "default_family")]
    pub error_family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_dof: Option<f64>,
    #[serde(rename = "M")]
    pub m: MatrixSpec,
    #[serde(rename = "R1")]
    pub r1: Rows,
    #[serde(rename = "R2")]
    pub r2: Rows,
    pub theta: Rows,
    /// Local-alternative direction; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Rows>,
    /// Starting point for the simulated truth; zero when absent.
    #[serde(rename = "B_seed", default, skip_serializing_if = "Option::is_none")]
    pub b_seed: Option<Rows>,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub efficiency: EfficiencySection,
}

/// Command-line overrides; everything else comes from the document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub n: Option<usize>,
}

pub fn to_mat(rows: &Rows, what: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::Config(format!("{what} must be a nonempty array of rows")));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(Error::Config(format!(
            "{what}: row {} has {} entries, expected {c}",
            i + 1,
            row.len()
        )));
    }
    let m = Mat::from_fn(r, c, |i, j| rows[i][j]);
    check_finite(&m, what).map_err(|_| Error::Config(format!("{what} has non-finite entries")))?;
    Ok(m)
}

pub fn to_rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn default_desk() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("bundled default config is valid")
    }

    /// Checks every derived object once so later accessors cannot fail on input.
    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        self.restriction()?;
        self.b_seed()?;
        self.weight()?;
        self.generic_q0()?;
        self.sim_estimators()?;
        Estimator::parse(&self.efficiency.estimator, self.generic_q0()?.as_ref())?;
        if self.simulation.lambda_n <= self.p {
            return Err(Error::Config("simulation.lambda_n must exceed p".into()));
        }
        if self.efficiency.scales.is_none() && self.efficiency.points < 2 {
            return Err(Error::Config("efficiency.points must be at least 2".into()));
        }
        if let Some(d) = &self.efficiency.direction {
            self.shaped(d, "efficiency.direction", self.r1.len(), self.r2.first().map_or(0, Vec::len))?;
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(r) = o.reps {
            self.simulation.reps = r;
        }
        if let Some(n) = o.n {
            self.n = n;
        }
        self.validate()
    }

    /// Canonical re-serialization: fixed key order with defaults filled in.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Config::canonical`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn shaped(&self, rows: &Rows, what: &str, r: usize, c: usize) -> Result<Mat> {
        let m = to_mat(rows, what)?;
        if m.shape() != (r, c) {
            return Err(Error::Config(format!(
                "{what} is {}x{}, expected {r}x{c}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let design = match &self.m {
            MatrixSpec::Inline(rows) => DesignSpec::Inline(self.shaped(rows, "M", self.n, self.p)?),
            MatrixSpec::Generator(g) => {
                if g.generator != "uniform" {
                    return Err(Error::Config(format!(
                        "unknown M generator '{}' (expected uniform)",
                        g.generator
                    )));
                }
                let mix = match &g.mix {
                    Some(rows) => Some(self.shaped(rows, "M.mix", self.p, self.p)?),
                    None => None,
                };
                DesignSpec::Uniform {
                    low: g.low,
                    high: g.high,
                    seed: g.seed,
                    mix,
                }
            }
        };
        let cfg = ModelConfig {
            n: self.n,
            p: self.p,
            q: self.q,
            sigma_eps2: self.sigma_eps2,
            sigma_delta2: self.sigma_delta2,
            sigma_psi2: self.sigma_psi2,
            design,
            error_family: ErrorFamily::parse(&self.error_family, self.t_dof)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn restriction(&self) -> Result<Restriction> {
        let r1 = to_mat(&self.r1, "R1")?;
        let r2 = to_mat(&self.r2, "R2")?;
        if r1.ncols() != self.p || r2.nrows() != self.q {
            return Err(Error::Config(format!(
                "R1 must have p = {} columns and R2 q = {} rows",
                self.p, self.q
            )));
        }
        let theta = self.shaped(&self.theta, "theta", r1.nrows(), r2.ncols())?;
        let theta0 = match &self.theta0 {
            Some(rows) => self.shaped(rows, "theta0", r1.nrows(), r2.ncols())?,
            None => Mat::zeros(r1.nrows(), r2.ncols()),
        };
        Restriction::new(r1, r2, theta, theta0).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn b_seed(&self) -> Result<Mat> {
        match &self.b_seed {
            Some(rows) => self.shaped(rows, "B_seed", self.p, self.q),
            None => Ok(Mat::zeros(self.p, self.q)),
        }
    }

    pub fn weight(&self) -> Result<WeightMatrix> {
        match &self.analysis.weight {
            Some(rows) => WeightMatrix::new(self.shaped(rows, "analysis.weight", self.p, self.p)?)
                .map_err(|e| Error::Config(format!("analysis.weight: {e}"))),
            None => Ok(WeightMatrix::identity(self.p)),
        }
    }

    pub fn generic_q0(&self) -> Result<Option<Mat>> {
        match &self.analysis.q0 {
            Some(rows) => {
                let q0 = self.shaped(rows, "analysis.q0", self.p, self.p)?;
                WeightMatrix::new(q0.clone())
                    .map_err(|e| Error::Config(format!("analysis.q0: {e}")))?;
                Ok(Some(q0))
            }
            None => Ok(None),
        }
    }

    pub fn sim_estimators(&self) -> Result<Vec<Estimator>> {
        let q0 = self.generic_q0()?;
        let set = self
            .simulation
            .estimators
            .iter()
            .map(|l| Estimator::parse(l, q0.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        if set.is_empty() {
            return Err(Error::Config("simulation.estimators is empty".into()));
        }
        Ok(set)
    }

    /// Restricted estimators analysed by `adr`: B2, B3, B4 and the generic one if configured.
    pub fn restricted_estimators(&self) -> Result<Vec<Estimator>> {
        let mut set = vec![Estimator::B2, Estimator::B3, Estimator::B4];
        if let Some(q0) = self.generic_q0()? {
            set.push(Estimator::Generic(q0));
        }
        Ok(set)
    }

    pub fn efficiency_estimator(&self) -> Result<Estimator> {
        let e = Estimator::parse(&self.efficiency.estimator, self.generic_q0()?.as_ref())?;
        if !e.is_restricted() {
            return Err(Error::Config("efficiency.estimator must be a restricted estimator".into()));
        }
        Ok(e)
    }

    pub fn efficiency_direction(&self) -> Result<Mat> {
        let restr = self.restriction()?;
        let (r, c) = restr.theta0.shape();
        if let Some(rows) = &self.efficiency.direction {
            return self.shaped(rows, "efficiency.direction", r, c);
        }
        if restr.theta0.norm() > 0.0 {
            return Ok(restr.theta0);
        }
        Ok(Mat::from_element(r, c, 1.0))
    }

    pub fn plan(&self) -> Result<SimulationPlan> {
        Ok(SimulationPlan {
            cfg: self.model_config()?,
            restr: self.restriction()?,
            b_seed: self.b_seed()?,
            reps: self.simulation.reps,
            estimators: self.sim_estimators()?,
            master_seed: self.master_seed,
            weight: self.weight()?,
        })
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_resolves() {
        let c = Config::default_desk();
        assert_eq!((c.p, c.q, c.n), (2, 2, 1000));
        assert_eq!(c.simulation.reps, 5000);
        let restr = c.restriction().unwrap();
        assert_eq!(restr.r1.nrows(), 1);
        assert_eq!(restr.r2.ncols(), 1);
        assert!(restr.theta0.norm() > 0.0);
        c.plan().unwrap();
    }

    #[test]
    fn digest_ignores_key_order_and_tracks_values() {
        let a = "n = 40\np = 1\nq = 1\nsigma_eps2 = 1.0\nsigma_delta2 = 0.1\nsigma_psi2 = 0.2\n\
                 M = { generator = \"uniform\", seed = 3 }\nR1 = [[1.0]]\nR2 = [[1.0]]\ntheta = [[0.0]]\n";
        let b = "theta = [[0.0]]\nR2 = [[1.0]]\nR1 = [[1.0]]\nM = { seed = 3, generator = \"uniform\" }\n\
                 sigma_psi2 = 0.2\nsigma_delta2 = 0.1\nsigma_eps2 = 1\nq = 1\np = 1\nn = 40\n";
        let ca = Config::from_toml_str(a).unwrap();
        let cb = Config::from_toml_str(b).unwrap();
        assert_eq!(ca.digest(), cb.digest());
        let mut cc = ca.clone();
        cc.apply(&Overrides {
            seed: Some(1),
            ..Default::default()
        })
        .unwrap();
        assert_ne!(ca.digest(), cc.digest());
        assert_eq!(ca.digest().len(), 64);
    }

    #[test]
    fn canonical_form_round_trips() {
        let c = Config::default_desk();
        let back = Config::from_toml_str(&c.canonical()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_are_config_errors() {
        let base = Config::default_desk().canonical();
        for (from, to) in [
            ("sigma_eps2 = 1.0", "sigma_eps2 = -1.0"),
            ("R1 = [[1.0, 1.0]]", "R1 = [[1.0, 1.0, 2.0]]"),
            ("error_family = \"gaussian\"", "error_family = \"cauchy\""),
            ("n = 1000", "n = 1000\nbogus = 1"),
        ] {
            assert!(base.contains(from), "{from}");
            let text = base.replacen(from, to, 1);
            assert!(matches!(Config::from_toml_str(&text), Err(Error::Config(_))), "{to}");
        }
        let err = Config::from_toml_str("n = [").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let mut c = Config::default_desk();
        c.apply(&Overrides {
            seed: Some(9),
            reps: Some(10),
            n: Some(300),
        })
        .unwrap();
        assert_eq!((c.master_seed, c.simulation.reps, c.n), (9, 10, 300));
        assert!(c
            .apply(&Overrides {
                n: Some(1),
                ..Default::default()
            })
            .is_err());
    }
}
