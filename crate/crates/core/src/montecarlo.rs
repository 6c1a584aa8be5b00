//! Replication engine: generate, estimate, accumulate and compare with the
//! limit laws. Replication `r` always draws from the generator seeded by
//! `(master_seed, r)` and results are reduced in index order, so summaries
//! are bit-identical for any worker count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::asymptotics::AsymptoticLaw;
use crate::error::{Error, Result};
use crate::estimators::{build_kx, named_res_with, Estimator};
use crate::matcore::{
    check_shape, frobenius, identity, kron, rel_frobenius, stacked_cov, unvec_t, vec_t,
    AffineTransform, Mat, MatrixNormal, Vector,
};
use crate::model::{generate, make_restricted_b, Model, ModelConfig, Restriction};
use crate::risk::{adr_block, WeightMatrix};
use crate::seeding::{replication_rng, SimRng};

/// Largest share of replications that may be dropped as near-singular.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("worker count must be positive".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Simulation(format!("cannot build worker pool: {e}"))),
    }
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub cfg: ModelConfig,
    pub restr: Restriction,
    pub b_seed: Mat,
    pub reps: usize,
    pub estimators: Vec<Estimator>,
    pub master_seed: u64,
    pub weight: WeightMatrix,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.restr.check_dims(self.cfg.p, self.cfg.q)?;
        check_shape(&self.b_seed, self.cfg.p, self.cfg.q, "B seed")?;
        if self.reps < 2 {
            return Err(Error::Config(format!("reps must be at least 2, got {}", self.reps)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimator set is empty".into()));
        }
        if self.weight.p() != self.cfg.p {
            return Err(Error::DimMismatch("weight does not match p".into()));
        }
        let generics = self
            .estimators
            .iter()
            .filter(|e| matches!(e, Estimator::Generic(_)))
            .count();
        if generics > 1 {
            return Err(Error::Config("at most one generic estimator per plan".into()));
        }
        Ok(())
    }

    fn generic_q0(&self) -> Option<&Mat> {
        self.estimators.iter().find_map(|e| match e {
            Estimator::Generic(q0) => Some(q0),
            _ => None,
        })
    }
}

/// Empirical moments of the stacked `√n`-scaled errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSummary {
    pub labels: Vec<String>,
    pub p: usize,
    pub q: usize,
    /// Averages of `√n(B̂ − B)`.
    pub mean_errors: Vec<Mat>,
    /// Standard errors of `mean_errors`.
    pub mean_se: Vec<Mat>,
    /// Sample covariance of the stacked `vec(√n(B̂ − B)ᵀ)`.
    pub cov_empirical: Mat,
    /// `n‖B̂ − B‖²_W` per estimator and kept replication.
    pub per_rep_losses: Vec<Vec<f64>>,
    pub rep_count: usize,
    pub excluded: usize,
    /// Largest `‖R₁B̃R₂ − θ‖_F` over restricted estimators and replications.
    pub max_constraint_violation: f64,
    pub truth: Option<Mat>,
}

impl EmpiricalSummary {
    /// Summarizes stacked draws directly, e.g. samples from a limit law.
    pub fn from_stacked(
        labels: Vec<String>,
        p: usize,
        q: usize,
        draws: &[Vector],
        weight: &WeightMatrix,
    ) -> Result<Self> {
        let d = p * q;
        let k = labels.len();
        if draws.len() < 2 {
            return Err(Error::Config("need at least two draws".into()));
        }
        if let Some(bad) = draws.iter().find(|v| v.len() != k * d) {
            return Err(Error::ShapeMismatch(format!(
                "draw has length {}, expected {}",
                bad.len(),
                k * d
            )));
        }
        let m = draws.len() as f64;
        let mut mean = Vector::zeros(k * d);
        for v in draws {
            mean += v;
        }
        mean /= m;
        let mut cov = Mat::zeros(k * d, k * d);
        let mut var = Vector::zeros(k * d);
        for v in draws {
            let c = v - &mean;
            cov.ger(1.0, &c, &c, 1.0);
            var += c.component_mul(&c);
        }
        cov /= m - 1.0;
        let cov = crate::matcore::symmetrize(&cov);
        let se = var.map(|s| (s / (m - 1.0) / m).sqrt());
        let w_lift = weight.lifted(q);
        let per_rep_losses = (0..k)
            .map(|i| {
                draws
                    .iter()
                    .map(|v| {
                        let u = v.rows(i * d, d);
                        (u.transpose() * &w_lift * u)[(0, 0)]
                    })
                    .collect()
            })
            .collect();
        let block = |v: &Vector, i: usize| unvec_t(&v.rows(i * d, d).into_owned(), p, q);
        Ok(Self {
            p,
            q,
            mean_errors: (0..k).map(|i| block(&mean, i)).collect::<Result<_>>()?,
            mean_se: (0..k).map(|i| block(&se, i)).collect::<Result<_>>()?,
            cov_empirical: cov,
            per_rep_losses,
            rep_count: draws.len(),
            excluded: 0,
            max_constraint_violation: 0.0,
            truth: None,
            labels,
        })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// The sub-summary of the entries at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.labels.len()) {
            return Err(Error::ShapeMismatch(format!("no summary entry {bad}")));
        }
        let d = self.p * self.q;
        let mut cov = Mat::zeros(idx.len() * d, idx.len() * d);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                cov.view_mut((a * d, b * d), (d, d)).copy_from(&self.cov_block(i, j));
            }
        }
        Ok(Self {
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            mean_errors: idx.iter().map(|&i| self.mean_errors[i].clone()).collect(),
            mean_se: idx.iter().map(|&i| self.mean_se[i].clone()).collect(),
            per_rep_losses: idx.iter().map(|&i| self.per_rep_losses[i].clone()).collect(),
            cov_empirical: cov,
            ..self.clone()
        })
    }

    pub fn cov_block(&self, i: usize, j: usize) -> Mat {
        let d = self.p * self.q;
        self.cov_empirical.view((i * d, j * d), (d, d)).into_owned()
    }

    /// Mean and standard error of the per-replication losses of entry `i`.
    pub fn loss_mean_se(&self, i: usize) -> (f64, f64) {
        let l = &self.per_rep_losses[i];
        let m = l.len() as f64;
        let mean = l.iter().sum::<f64>() / m;
        let var = l.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, (var / m).sqrt())
    }
}

struct RepOutcome {
    stacked: Vector,
    violation: f64,
}

fn one_replication(
    plan: &SimulationPlan,
    model: &Model,
    b: &Mat,
    r: u64,
) -> Result<Option<RepOutcome>> {
    let n = plan.cfg.n;
    let mut rng = replication_rng(plan.master_seed, r);
    let ds = generate(model, b, &mut rng)?;
    let est = build_kx(&ds.x, plan.cfg.sigma_delta2, n)
        .and_then(|kxp| named_res_with(&ds.x, &ds.z, &kxp, &plan.restr, plan.generic_q0()));
    let est = match est {
        Ok(e) => e,
        Err(Error::NearSingular(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let d = plan.cfg.p * plan.cfg.q;
    let root_n = (n as f64).sqrt();
    let mut stacked = Vector::zeros(plan.estimators.len() * d);
    let mut violation = 0.0_f64;
    for (i, which) in plan.estimators.iter().enumerate() {
        let bh = est
            .get(which)
            .ok_or_else(|| Error::Simulation(format!("{} was not computed", which.label())))?;
        stacked
            .rows_mut(i * d, d)
            .copy_from(&vec_t(&((bh - b) * root_n)));
        if which.is_restricted() {
            violation = violation.max(frobenius(&plan.restr.residual(bh)));
        }
    }
    Ok(Some(RepOutcome { stacked, violation }))
}

/// Runs every replication of `plan`.
pub fn run(plan: &SimulationPlan, workers: Option<usize>) -> Result<EmpiricalSummary> {
    plan.validate()?;
    let model = Model::new(plan.cfg.clone())?;
    let b = make_restricted_b(&plan.cfg, &plan.restr, &plan.b_seed)?;
    let outcomes: Vec<Option<RepOutcome>> = with_workers(workers, || {
        (0..plan.reps as u64)
            .into_par_iter()
            .map(|r| one_replication(plan, &model, &b, r))
            .collect::<Result<Vec<_>>>()
    })??;
    let excluded = outcomes.iter().filter(|o| o.is_none()).count();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * plan.reps as f64 {
        return Err(Error::Simulation(format!(
            "{excluded} of {} replications were near-singular",
            plan.reps
        )));
    }
    let kept: Vec<RepOutcome> = outcomes.into_iter().flatten().collect();
    let max_violation = kept.iter().fold(0.0_f64, |m, o| m.max(o.violation));
    let draws: Vec<Vector> = kept.into_iter().map(|o| o.stacked).collect();
    let labels = plan.estimators.iter().map(|e| e.label().to_string()).collect();
    let mut summary =
        EmpiricalSummary::from_stacked(labels, plan.cfg.p, plan.cfg.q, &draws, &plan.weight)?;
    summary.rep_count = plan.reps;
    summary.excluded = excluded;
    summary.max_constraint_violation = max_violation;
    summary.truth = Some(b);
    Ok(summary)
}

/// Per-block and per-estimator discrepancies between a summary and a law.
#[derive(Debug, Clone, PartialEq)]
pub struct LawComparison {
    pub labels: Vec<String>,
    /// Relative Frobenius error of each empirical covariance block.
    pub block_errors: Vec<Vec<f64>>,
    /// Largest entrywise `|mean − μ| / SE` per estimator.
    pub mean_z: Vec<f64>,
    pub max_block_error: f64,
    pub max_mean_z: f64,
    pub tol_cov: f64,
    pub tol_mean_se: f64,
    pub cov_pass: bool,
    pub mean_pass: bool,
}

impl LawComparison {
    pub fn pass(&self) -> bool {
        self.cov_pass && self.mean_pass
    }
}

pub fn compare_law(
    summary: &EmpiricalSummary,
    law: &AsymptoticLaw,
    tol_cov: f64,
    tol_mean_se: f64,
) -> Result<LawComparison> {
    if summary.labels != law.labels || summary.p != law.p || summary.q != law.q {
        return Err(Error::ShapeMismatch(format!(
            "summary {:?} ({}x{}) does not match law {:?} ({}x{})",
            summary.labels, summary.p, summary.q, law.labels, law.p, law.q
        )));
    }
    let k = law.len();
    let block_errors: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| rel_frobenius(&summary.cov_block(i, j), &law.cov_blocks[i][j]))
                .collect()
        })
        .collect();
    let mean_z: Vec<f64> = (0..k)
        .map(|i| {
            let gap = &summary.mean_errors[i] - &law.means[i];
            gap.iter()
                .zip(summary.mean_se[i].iter())
                .map(|(g, s)| match (g.abs(), *s) {
                    (0.0, _) => 0.0,
                    (a, s) if s > 0.0 => a / s,
                    _ => f64::INFINITY,
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let max_block_error = block_errors.iter().flatten().fold(0.0_f64, |m, &e| m.max(e));
    let max_mean_z = mean_z.iter().fold(0.0_f64, |m, &z| m.max(z));
    Ok(LawComparison {
        labels: law.labels.clone(),
        block_errors,
        mean_z,
        max_block_error,
        max_mean_z,
        tol_cov,
        tol_mean_se,
        cov_pass: max_block_error <= tol_cov,
        mean_pass: max_mean_z <= tol_mean_se,
    })
}

/// Empirical `n·E‖B̂ − B‖²_W` against the asymptotic risk of the same entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCheck {
    pub label: String,
    pub empirical: f64,
    pub empirical_se: f64,
    pub adr: f64,
    pub rel_gap: f64,
    pub pass: bool,
}

pub const RISK_DIAGNOSTIC_TOL: f64 = 0.20;

pub fn risk_diagnostic(
    summary: &EmpiricalSummary,
    law: &AsymptoticLaw,
    weight: &WeightMatrix,
) -> Result<Vec<RiskCheck>> {
    law.labels
        .iter()
        .enumerate()
        .map(|(li, label)| {
            let si = summary
                .index_of(label)
                .ok_or_else(|| Error::ShapeMismatch(format!("summary lacks {label}")))?;
            let (empirical, empirical_se) = summary.loss_mean_se(si);
            let adr = adr_block(weight, law, li)?;
            let rel_gap = (empirical - adr).abs() / adr.abs().max(f64::MIN_POSITIVE);
            Ok(RiskCheck {
                label: label.clone(),
                empirical,
                empirical_se,
                adr,
                rel_gap,
                pass: rel_gap <= RISK_DIAGNOSTIC_TOL,
            })
        })
        .collect()
}

/// Outcome of the transformed matrix-normal checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub m: usize,
    pub draws: usize,
    /// Relative Frobenius error of each block of the transformed stack.
    pub block_errors: Vec<Vec<f64>>,
    pub max_block_error: f64,
    /// Largest entrywise `|mean − ϱⱼ| / SE`.
    pub max_mean_z: f64,
    /// Errors of the two-block `V₁₁`, `V₁₂`, `V₂₂` against their closed forms.
    pub two_block_errors: [f64; 3],
    pub pass: bool,
}

pub const LEMMA_COV_TOL: f64 = 0.10;
pub const LEMMA_MEAN_Z: f64 = 4.0;

fn gaussian_mat(rng: &mut SimRng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn uniform_mat(rng: &mut SimRng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// `Tₙ` with every coefficient perturbed by `n^{-1/2}` noise.
fn perturbed(t: &AffineTransform, scale: f64, rng: &mut SimRng) -> AffineTransform {
    let mut jitter = |m: &Mat| m + gaussian_mat(rng, m.nrows(), m.ncols()) * scale;
    AffineTransform {
        kappa: jitter(&t.kappa),
        iota: jitter(&t.iota),
        alpha: jitter(&t.alpha),
        beta: jitter(&t.beta),
        rho: jitter(&t.rho),
    }
}

/// Empirical moments of `(T₁ₙ(Yₙ), …, Tₘₙ(Yₙ))` where `Yₙ → Y ~ MN(0, Λ)`.
fn transformed_summary(
    transforms: &[AffineTransform],
    lambda: &Mat,
    draws: usize,
    n_index: f64,
    rng: &mut SimRng,
) -> Result<(Vector, Vector, Mat)> {
    let (p, q) = transforms[0].input_shape();
    let y_law = MatrixNormal::new(Mat::zeros(p, q), lambda.clone())?.sampler()?;
    let scale = n_index.powf(-0.5);
    let sizes: Vec<usize> = transforms
        .iter()
        .map(|t| t.output_shape().0 * t.output_shape().1)
        .collect();
    let total: usize = sizes.iter().sum();
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let y = y_law.sample(rng) + gaussian_mat(rng, p, q) * scale;
        let mut v = Vector::zeros(total);
        let mut at = 0;
        for (t, &len) in transforms.iter().zip(&sizes) {
            let tn = perturbed(t, scale, rng);
            v.rows_mut(at, len).copy_from(&vec_t(&tn.apply(&y)));
            at += len;
        }
        samples.push(v);
    }
    let m = draws as f64;
    let mean = samples.iter().fold(Vector::zeros(total), |acc, v| acc + v) / m;
    let mut cov = Mat::zeros(total, total);
    for v in &samples {
        let c = v - &mean;
        cov.ger(1.0 / (m - 1.0), &c, &c, 1.0);
    }
    let se = Vector::from_fn(total, |i, _| (cov[(i, i)] / m).sqrt());
    Ok((mean, se, cov))
}

fn block_errors(emp: &Mat, theory: &Mat, sizes: &[usize]) -> Vec<Vec<f64>> {
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    sizes
        .iter()
        .zip(&offsets)
        .map(|(&si, &oi)| {
            sizes
                .iter()
                .zip(&offsets)
                .map(|(&sj, &oj)| {
                    rel_frobenius(
                        &emp.view((oi, oj), (si, sj)).into_owned(),
                        &theory.view((oi, oj), (si, sj)).into_owned(),
                    )
                })
                .collect()
        })
        .collect()
}

/// Random affine transforms of a converging matrix-normal sequence with
/// `p = 2`, `q = 3`; checks the stacked covariance formula, the offsets and
/// the explicit two-block structure with `κ₂ = I`, `ι₂ = I`.
pub fn lemma_suite(m: usize, draws: usize, seed: u64) -> Result<LemmaReport> {
    if m < 1 {
        return Err(Error::Config("lemma suite needs at least one transform".into()));
    }
    if draws < 2 {
        return Err(Error::Config("lemma suite needs at least two draws".into()));
    }
    let (p, q) = (2, 3);
    let n_index = 1e6;
    let mut rng = replication_rng(seed, 0);
    let g = uniform_mat(&mut rng, p * q, p * q);
    let lambda = &g * g.transpose() + identity(p * q) * 0.2;

    let transforms: Vec<AffineTransform> = (0..m)
        .map(|_| {
            let a = rng.random_range(1..=3);
            let b = rng.random_range(1..=3);
            AffineTransform::new(
                uniform_mat(&mut rng, a, p),
                uniform_mat(&mut rng, q, b),
                uniform_mat(&mut rng, a, p),
                uniform_mat(&mut rng, q, b),
                uniform_mat(&mut rng, a, b) * 3.0,
            )
        })
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = transforms
        .iter()
        .map(|t| t.output_shape().0 * t.output_shape().1)
        .collect();
    let theory = stacked_cov(&transforms, &lambda)?;
    let (mean, se, cov) = transformed_summary(&transforms, &lambda, draws, n_index, &mut rng)?;
    let errors = block_errors(&cov, &theory, &sizes);
    let rho: Vector = Vector::from_iterator(
        sizes.iter().sum(),
        transforms.iter().flat_map(|t| vec_t(&t.rho).iter().copied().collect::<Vec<_>>()),
    );
    let max_mean_z = (&mean - &rho)
        .iter()
        .zip(se.iter())
        .map(|(g, s)| g.abs() / s)
        .fold(0.0, f64::max);

    // two-block structure: T₁ = identity, T₂(Y) = Y + α₂Yβ₂
    let alpha2 = uniform_mat(&mut rng, p, p);
    let beta2 = uniform_mat(&mut rng, q, q);
    let pair = [
        AffineTransform::identity(p, q),
        AffineTransform::new(identity(p), identity(q), alpha2.clone(), beta2.clone(), Mat::zeros(p, q))?,
    ];
    let (_, _, cov2) = transformed_summary(&pair, &lambda, draws, n_index, &mut rng)?;
    let d = p * q;
    let right = identity(d) + kron(&alpha2.transpose(), &beta2);
    let v11 = lambda.clone();
    let v12 = &lambda + &lambda * kron(&alpha2.transpose(), &beta2);
    let v22 = right.transpose() * &lambda * &right;
    let two_block_errors = [
        rel_frobenius(&cov2.view((0, 0), (d, d)).into_owned(), &v11),
        rel_frobenius(&cov2.view((0, d), (d, d)).into_owned(), &v12),
        rel_frobenius(&cov2.view((d, d), (d, d)).into_owned(), &v22),
    ];

    let max_block_error = errors.iter().flatten().fold(0.0_f64, |a, &e| a.max(e));
    let pass = max_block_error <= LEMMA_COV_TOL
        && max_mean_z <= LEMMA_MEAN_Z
        && two_block_errors.iter().all(|&e| e <= LEMMA_COV_TOL);
    Ok(LemmaReport {
        m,
        draws,
        block_errors: errors,
        max_block_error,
        max_mean_z,
        two_block_errors,
        pass,
    })
}
