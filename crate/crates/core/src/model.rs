//! The ultrastructural measurement-error model `Z = DB + E`, `X = D + Δ`,
//! `D = M + Ψ`, and synthetic data generation under it.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, StudentT};

use crate::error::{Error, Result};
use crate::matcore::{check_finite, check_shape, rank, Mat};
use crate::seeding::SimRng;
use rand::SeedableRng;

/// Distribution of the standardized E, Δ and Ψ entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorFamily {
    Gaussian,
    /// `Exp(1) − 1`: skewness 2, excess kurtosis 6.
    ShiftedExponential,
    /// Student t with `dof` degrees of freedom rescaled to unit variance.
    ScaledT { dof: f64 },
}

impl ErrorFamily {
    pub const DEFAULT_T_DOF: f64 = 8.0;

    pub fn name(&self) -> &'static str {
        match self {
            ErrorFamily::Gaussian => "gaussian",
            ErrorFamily::ShiftedExponential => "shifted-exponential",
            ErrorFamily::ScaledT { .. } => "scaled-t",
        }
    }

    pub fn parse(name: &str, dof: Option<f64>) -> Result<Self> {
        match name {
            "gaussian" => Ok(ErrorFamily::Gaussian),
            "shifted-exponential" => Ok(ErrorFamily::ShiftedExponential),
            "scaled-t" => {
                let dof = dof.unwrap_or(Self::DEFAULT_T_DOF);
                if !(dof > 4.0) {
                    return Err(Error::Config(format!(
                        "scaled-t needs more than 4 degrees of freedom for a finite fourth moment, got {dof}"
                    )));
                }
                Ok(ErrorFamily::ScaledT { dof })
            }
            other => Err(Error::Config(format!(
                "unknown error_family '{other}' (expected gaussian, shifted-exponential or scaled-t)"
            ))),
        }
    }

    /// Skewness γ₁.
    pub fn gamma1(&self) -> f64 {
        match self {
            ErrorFamily::Gaussian | ErrorFamily::ScaledT { .. } => 0.0,
            ErrorFamily::ShiftedExponential => 2.0,
        }
    }

    /// Excess kurtosis γ₂.
    pub fn gamma2(&self) -> f64 {
        match self {
            ErrorFamily::Gaussian => 0.0,
            ErrorFamily::ShiftedExponential => 6.0,
            ErrorFamily::ScaledT { dof } => 6.0 / (dof - 4.0),
        }
    }

    /// One draw with mean 0 and variance 1.
    pub fn standard_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ErrorFamily::Gaussian => rng.sample(StandardNormal),
            ErrorFamily::ShiftedExponential => {
                let e: f64 = rng.sample(Exp1);
                e - 1.0
            }
            ErrorFamily::ScaledT { dof } => {
                let t = StudentT::new(dof).expect("dof validated at construction");
                t.sample(rng) * ((dof - 2.0) / dof).sqrt()
            }
        }
    }

    fn fill<R: Rng + ?Sized>(&self, rows: usize, cols: usize, variance: f64, rng: &mut R) -> Mat {
        let sd = variance.sqrt();
        Mat::from_fn(rows, cols, |_, _| sd * self.standard_draw(rng))
    }
}

/// How the fixed design `M` is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpec {
    Inline(Mat),
    /// Rows drawn once from `uniform(low, high)` with a fixed seed, then
    /// multiplied on the right by `mix` when given. Row `i` does not depend on `n`.
    Uniform {
        low: f64,
        high: f64,
        seed: u64,
        mix: Option<Mat>,
    },
}

impl DesignSpec {
    pub fn resolve(&self, n: usize, p: usize) -> Result<Mat> {
        let m = match self {
            DesignSpec::Inline(m) => {
                check_shape(m, n, p, "M")?;
                m.clone()
            }
            DesignSpec::Uniform {
                low,
                high,
                seed,
                mix,
            } => {
                if !(low < high) {
                    return Err(Error::Config(format!(
                        "M generator needs low < high, got [{low}, {high}]"
                    )));
                }
                let mut rng = SimRng::seed_from_u64(*seed);
                let mut u = Mat::zeros(n, p);
                for i in 0..n {
                    for j in 0..p {
                        u[(i, j)] = rng.random_range(*low..*high);
                    }
                }
                match mix {
                    Some(mix) => {
                        check_shape(mix, p, p, "M mix")?;
                        u * mix
                    }
                    None => u,
                }
            }
        };
        check_finite(&m, "M")?;
        if rank(&m) < p {
            return Err(Error::Config("M must have full column rank".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub sigma_eps2: f64,
    pub sigma_delta2: f64,
    pub sigma_psi2: f64,
    pub design: DesignSpec,
    pub error_family: ErrorFamily,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::Config("p and q must be at least 1".into()));
        }
        if self.n <= self.p {
            return Err(Error::Config(format!(
                "need n > p, got n = {} and p = {}",
                self.n, self.p
            )));
        }
        for (name, v) in [
            ("sigma_eps2", self.sigma_eps2),
            ("sigma_delta2", self.sigma_delta2),
            ("sigma_psi2", self.sigma_psi2),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }
}

/// A validated configuration with its design matrix resolved.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    m: Mat,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.design.resolve(cfg.n, cfg.p)?;
        Ok(Self { cfg, m })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn design(&self) -> &Mat {
        &self.m
    }

    pub fn n(&self) -> usize {
        self.cfg.n
    }

    /// `M'M / n`, the finite-n stand-in for `σ_M σ_M'`.
    pub fn design_gram(&self) -> Mat {
        self.m.transpose() * &self.m / self.cfg.n as f64
    }

    /// `Σ_X = M'M/n + (σ²_ψ + σ²_δ) I`.
    pub fn sigma_x(&self) -> Mat {
        let p = self.cfg.p;
        self.design_gram()
            + Mat::identity(p, p) * (self.cfg.sigma_psi2 + self.cfg.sigma_delta2)
    }
}

/// Latent components kept alongside a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub d: Mat,
    pub e: Mat,
    pub delta: Mat,
    pub psi: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub z: Mat,
    pub x: Mat,
    pub latent: Option<Latent>,
}

impl Dataset {
    pub fn observed(z: Mat, x: Mat) -> Result<Self> {
        if z.nrows() != x.nrows() {
            return Err(Error::DimMismatch(format!(
                "Z has {} rows but X has {}",
                z.nrows(),
                x.nrows()
            )));
        }
        check_finite(&z, "Z")?;
        check_finite(&x, "X")?;
        Ok(Self { z, x, latent: None })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// The linear restriction `R₁ B R₂ = θ` with local-alternative direction `θ₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct Restriction {
    pub r1: Mat,
    pub r2: Mat,
    pub theta: Mat,
    pub theta0: Mat,
}

impl Restriction {
    pub fn new(r1: Mat, r2: Mat, theta: Mat, theta0: Mat) -> Result<Self> {
        let r = Self {
            r1,
            r2,
            theta,
            theta0,
        };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let (r1, r2) = (self.r1.nrows(), self.r2.ncols());
        check_shape(&self.theta, r1, r2, "theta")?;
        check_shape(&self.theta0, r1, r2, "theta0")?;
        for (m, name) in [
            (&self.r1, "R1"),
            (&self.r2, "R2"),
            (&self.theta, "theta"),
            (&self.theta0, "theta0"),
        ] {
            check_finite(m, name)?;
        }
        if rank(&self.r1) != r1 {
            return Err(Error::RankDeficient(format!("R1 must have rank {r1}")));
        }
        if rank(&self.r2) != r2 {
            return Err(Error::RankDeficient(format!("R2 must have rank {r2}")));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.r1.ncols()
    }

    pub fn q(&self) -> usize {
        self.r2.nrows()
    }

    pub fn check_dims(&self, p: usize, q: usize) -> Result<()> {
        if self.p() != p || self.q() != q {
            return Err(Error::DimMismatch(format!(
                "restriction acts on {}x{} coefficients, model has {p}x{q}",
                self.p(),
                self.q()
            )));
        }
        Ok(())
    }

    /// Same restriction with a different local-alternative direction.
    pub fn with_theta0(&self, theta0: Mat) -> Result<Self> {
        Self::new(self.r1.clone(), self.r2.clone(), self.theta.clone(), theta0)
    }

    /// `R₁ B R₂ − θ`.
    pub fn residual(&self, b: &Mat) -> Mat {
        &self.r1 * b * &self.r2 - &self.theta
    }
}

fn gram_inverse(g: &Mat, what: &str) -> Result<Mat> {
    g.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::RankDeficient(format!("{what} is singular")))
}

/// Truth for simulation: the minimum-norm correction of `seed_b` onto
/// `R₁ B R₂ = θ + θ₀/√n`.
pub fn make_restricted_b(cfg: &ModelConfig, restr: &Restriction, seed_b: &Mat) -> Result<Mat> {
    check_shape(seed_b, cfg.p, cfg.q, "B seed")?;
    restr.check_dims(cfg.p, cfg.q)?;
    let target = &restr.theta + &restr.theta0 / (cfg.n as f64).sqrt();
    let r1r1t = gram_inverse(&(&restr.r1 * restr.r1.transpose()), "R1 R1'")?;
    let r2tr2 = gram_inverse(&(restr.r2.transpose() * &restr.r2), "R2' R2")?;
    let gap = &restr.r1 * seed_b * &restr.r2 - target;
    Ok(seed_b - restr.r1.transpose() * r1r1t * gap * r2tr2 * restr.r2.transpose())
}

/// Draws one dataset. Draw order is E, then Δ, then Ψ, each column-major.
pub fn generate<R: Rng + ?Sized>(model: &Model, b: &Mat, rng: &mut R) -> Result<Dataset> {
    let cfg = model.config();
    check_shape(b, cfg.p, cfg.q, "B")?;
    let fam = cfg.error_family;
    let e = fam.fill(cfg.n, cfg.q, cfg.sigma_eps2, rng);
    let delta = fam.fill(cfg.n, cfg.p, cfg.sigma_delta2, rng);
    let psi = fam.fill(cfg.n, cfg.p, cfg.sigma_psi2, rng);
    let d = model.design() + &psi;
    let z = &d * b + &e;
    let x = &d + &delta;
    Ok(Dataset {
        z,
        x,
        latent: Some(Latent { d, e, delta, psi }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{identity, rel_frobenius};

    fn base_cfg(n: usize) -> ModelConfig {
        ModelConfig {
            n,
            p: 2,
            q: 2,
            sigma_eps2: 1.0,
            sigma_delta2: 0.25,
            sigma_psi2: 0.5,
            design: DesignSpec::Uniform {
                low: -1.0,
                high: 1.0,
                seed: 7,
                mix: None,
            },
            error_family: ErrorFamily::Gaussian,
        }
    }

    fn restriction(theta0: f64) -> Restriction {
        Restriction::new(
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            Mat::zeros(1, 1),
            Mat::from_element(1, 1, theta0),
        )
        .unwrap()
    }

    fn moments(values: &[f64]) -> (f64, f64, f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let c = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
        (mean, c(2), c(3), c(4))
    }

    #[test]
    fn restricted_b_hand_expansion() {
        let cfg = base_cfg(100);
        let restr = restriction(3.0);
        let seed = Mat::from_row_slice(2, 2, &[5.0, 1.0, 2.0, 4.0]);
        let b = make_restricted_b(&cfg, &restr, &seed).unwrap();
        // only B11 is constrained; it becomes θ₀/√n, the rest is untouched
        assert!((b[(0, 0)] - 0.3).abs() < 1e-14);
        assert_eq!(b[(0, 1)], 1.0);
        assert_eq!(b[(1, 0)], 2.0);
        assert_eq!(b[(1, 1)], 4.0);
    }

    #[test]
    fn restricted_b_fixed_point_and_exactness() {
        let cfg = base_cfg(50);
        let restr = Restriction::new(
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            Mat::from_row_slice(2, 1, &[1.0, -1.0]),
            Mat::from_element(1, 1, 0.5),
            Mat::zeros(1, 1),
        )
        .unwrap();
        let seed = Mat::from_row_slice(2, 2, &[0.9, -0.3, 1.7, 0.3]);
        let b = make_restricted_b(&cfg, &restr, &seed).unwrap();
        assert!(restr.residual(&b).norm() <= 1e-10);
        let again = make_restricted_b(&cfg, &restr, &b).unwrap();
        assert!((again - &b).norm() <= 1e-14);
        let with_alt = restr.with_theta0(Mat::from_element(1, 1, 2.0)).unwrap();
        let b2 = make_restricted_b(&cfg, &with_alt, &seed).unwrap();
        let target = 0.5 + 2.0 / (50f64).sqrt();
        assert!(((&with_alt.r1 * &b2 * &with_alt.r2)[(0, 0)] - target).abs() <= 1e-10);
    }

    #[test]
    fn rank_deficient_restriction_rejected() {
        let err = Restriction::new(
            Mat::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]),
            identity(2),
            Mat::zeros(2, 2),
            Mat::zeros(2, 2),
        );
        assert!(matches!(err, Err(Error::RankDeficient(_))));
    }

    #[test]
    fn noiseless_generation_is_exact() {
        let mut cfg = base_cfg(30);
        cfg.sigma_eps2 = 0.0;
        cfg.sigma_delta2 = 0.0;
        cfg.sigma_psi2 = 0.0;
        let model = Model::new(cfg).unwrap();
        let b = Mat::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let ds = generate(&model, &b, &mut SimRng::seed_from_u64(1)).unwrap();
        assert_eq!(ds.x, *model.design());
        assert_eq!(ds.z, model.design() * &b);
    }

    #[test]
    fn latent_components_reconstruct_observations() {
        let model = Model::new(base_cfg(200)).unwrap();
        let b = Mat::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let ds = generate(&model, &b, &mut SimRng::seed_from_u64(2)).unwrap();
        let lat = ds.latent.as_ref().unwrap();
        assert!((&ds.x - &lat.d - &lat.delta).norm() < 1e-12);
        assert!((&ds.z - &lat.d * &b - &lat.e).norm() < 1e-12);
        assert_eq!(lat.d, model.design() + &lat.psi);
    }

    #[test]
    fn gaussian_moments() {
        let mut cfg = base_cfg(50_000);
        cfg.sigma_delta2 = 2.0;
        let model = Model::new(cfg).unwrap();
        let ds = generate(&model, &Mat::zeros(2, 2), &mut SimRng::seed_from_u64(3)).unwrap();
        let delta = ds.latent.unwrap().delta;
        let (_, var, m3, m4) = moments(delta.as_slice());
        assert!((var - 2.0).abs() / 2.0 < 0.05);
        assert!(m3.abs() / var.powf(1.5) < 0.1);
        assert!((m4 - 3.0 * 4.0).abs() / 12.0 < 0.10);
    }

    #[test]
    fn shifted_exponential_skewness() {
        let mut cfg = base_cfg(50_000);
        cfg.sigma_delta2 = 1.0;
        cfg.error_family = ErrorFamily::ShiftedExponential;
        let model = Model::new(cfg).unwrap();
        let ds = generate(&model, &Mat::zeros(2, 2), &mut SimRng::seed_from_u64(4)).unwrap();
        let (mean, var, m3, _) = moments(ds.latent.unwrap().delta.as_slice());
        assert!(mean.abs() < 0.02);
        let skew = m3 / var.powf(1.5);
        assert!((skew - 2.0).abs() / 2.0 < 0.10, "skewness {skew}");
    }

    #[test]
    fn scaled_t_has_unit_variance() {
        let fam = ErrorFamily::parse("scaled-t", None).unwrap();
        assert_eq!(fam.gamma2(), 1.5);
        let mut rng = SimRng::seed_from_u64(5);
        let draws: Vec<f64> = (0..200_000).map(|_| fam.standard_draw(&mut rng)).collect();
        let (_, var, _, _) = moments(&draws);
        assert!((var - 1.0).abs() < 0.03);
        assert!(ErrorFamily::parse("scaled-t", Some(3.0)).is_err());
        assert!(ErrorFamily::parse("cauchy", None).is_err());
    }

    #[test]
    fn components_are_uncorrelated() {
        let model = Model::new(base_cfg(50_000)).unwrap();
        let ds = generate(&model, &Mat::zeros(2, 2), &mut SimRng::seed_from_u64(6)).unwrap();
        let lat = ds.latent.unwrap();
        let n = 50_000f64;
        let pairs = [
            (lat.e.column(0).into_owned(), lat.delta.column(0).into_owned()),
            (lat.e.column(1).into_owned(), lat.psi.column(1).into_owned()),
            (lat.delta.column(1).into_owned(), lat.psi.column(0).into_owned()),
        ];
        for (a, b) in pairs {
            let cov = a.dot(&b) / n;
            let se = (a.map(|v| v * v).dot(&b.map(|v| v * v)) / n).sqrt() / n.sqrt();
            assert!(cov.abs() < 3.0 * se, "cov {cov} se {se}");
        }
    }

    #[test]
    fn sample_gram_converges() {
        let model = Model::new(base_cfg(10_000)).unwrap();
        let ds = generate(&model, &Mat::zeros(2, 2), &mut SimRng::seed_from_u64(7)).unwrap();
        let sx = ds.x.transpose() * &ds.x / 10_000.0;
        assert!(rel_frobenius(&sx, &model.sigma_x()) <= 0.05);
    }

    #[test]
    fn design_rows_do_not_depend_on_n() {
        let small = Model::new(base_cfg(10)).unwrap();
        let large = Model::new(base_cfg(40)).unwrap();
        assert_eq!(small.design().rows(0, 10), large.design().rows(0, 10));
    }

    #[test]
    fn config_validation() {
        let mut cfg = base_cfg(2);
        assert!(cfg.validate().is_err());
        cfg.n = 10;
        cfg.sigma_delta2 = -1.0;
        assert!(cfg.validate().is_err());
    }
}
