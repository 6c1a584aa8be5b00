//! Population quantities and the joint normal limit of the √n-scaled
//! estimator errors, with mean shifts under local alternatives.
//!
//! Every covariance block refers to `vec(Uᵀ)` of the `p x q` error `U`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{Estimator, KxSource};
use crate::matcore::{
    check_shape, eig_extremes, identity, kron, psd_factor, spd_inverse, spd_solve, symmetrize,
    vec, Mat, Vector,
};
use crate::model::{generate, Model, Restriction};
use crate::seeding::replication_rng;

/// `Σ`, `K = Σ⁻¹(Σ − σ²_δI)`, `Σ − σ²_δI` and `K̄ = σ²_δΣ⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub sigma: Mat,
    pub k: Mat,
    pub sigma_d: Mat,
    pub kbar: Mat,
    pub sigma_delta2: f64,
}

impl PopulationModel {
    pub fn from_sigma(sigma: Mat, sigma_delta2: f64) -> Result<Self> {
        let sigma = symmetrize(&sigma);
        let p = sigma.nrows();
        let (lo, _) = eig_extremes(&sigma)?;
        if lo <= 0.0 {
            return Err(Error::NotPd(format!("Σ has smallest eigenvalue {lo:e}")));
        }
        if sigma_delta2 >= lo {
            return Err(Error::NotPd(format!(
                "σ²_δ = {sigma_delta2} is not below ch_min(Σ) = {lo}"
            )));
        }
        let sigma_d = &sigma - identity(p) * sigma_delta2;
        let k = spd_solve(&sigma, &sigma_d, "Σ")?;
        let kbar = spd_inverse(&sigma, "Σ")? * sigma_delta2;
        Ok(Self {
            sigma,
            k,
            sigma_d,
            kbar,
            sigma_delta2,
        })
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    /// `ΣK`, symmetrized (it equals `Σ − σ²_δI`).
    pub fn sigma_k(&self) -> Mat {
        symmetrize(&(&self.sigma * &self.k))
    }

    /// Limit `Q₀` of `Σ̂/n` for a named estimator.
    pub fn q0_for(&self, which: &Estimator) -> Result<Mat> {
        match which {
            Estimator::B2 => Ok(self.sigma_k()),
            Estimator::B3 => Ok(self.sigma.clone()),
            Estimator::B4 => Ok(identity(self.p())),
            Estimator::Generic(q0) => {
                check_shape(q0, self.p(), self.p(), "Q₀")?;
                let (lo, _) = eig_extremes(q0)?;
                if lo <= 0.0 {
                    return Err(Error::NotPd(format!("Q₀ has smallest eigenvalue {lo:e}")));
                }
                Ok(symmetrize(q0))
            }
            Estimator::Ue | Estimator::Lse => Err(Error::Config(format!(
                "{} is not a restricted estimator",
                which.label()
            ))),
        }
    }
}

/// Population model at the configured `n`, using `M'M/n` for `σ_M σ_M'`.
pub fn population(model: &Model) -> Result<PopulationModel> {
    PopulationModel::from_sigma(model.sigma_x(), model.config().sigma_delta2)
}

/// Monte Carlo estimate of `Λ = E[g gᵀ]` with `g = vec(h') + vec(B'K̄_X H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaEstimate {
    pub lambda: Mat,
    /// Monte Carlo mean of `g`; its limit is zero.
    pub mean: Vector,
    pub reps: usize,
    pub n_used: usize,
    /// Largest entrywise standard error of `lambda`.
    pub standard_error: f64,
    /// Entrywise standard errors of `mean`.
    pub mean_standard_error: Vector,
}

pub const MIN_LAMBDA_REPS: usize = 1000;

/// One draw of `g` for the dataset generated from `rng`.
fn lambda_draw(model: &Model, b: &Mat, source: KxSource, seed: u64, index: u64) -> Result<Vector> {
    let cfg = model.config();
    let n = cfg.n as f64;
    let mut rng = replication_rng(seed, index);
    let ds = generate(model, b, &mut rng)?;
    let lat = ds.latent.as_ref().expect("generated datasets keep latent parts");
    let resid = &lat.e - &lat.delta * b;
    let h = ds.x.transpose() * resid / n.sqrt() + b * (n.sqrt() * cfg.sigma_delta2);
    let mut g = h.transpose();
    if source == KxSource::Reference {
        // with the plug-in Σ_X = X'X/n the H term vanishes identically
        let sigma_x = model.sigma_x();
        let big_h = ds.x.transpose() * &ds.x / n.sqrt() - &sigma_x * n.sqrt();
        let kbar = spd_inverse(&sigma_x, "Σ_X")? * cfg.sigma_delta2;
        g += b.transpose() * kbar * big_h;
    }
    Ok(vec(&g))
}

/// Estimates `Λ` by averaging `g gᵀ` over `reps` independent datasets.
/// Replication `r` uses the generator seeded from `(seed, r)`.
pub fn estimate_lambda(
    model: &Model,
    b: &Mat,
    reps: usize,
    seed: u64,
    source: KxSource,
) -> Result<LambdaEstimate> {
    let cfg = model.config();
    check_shape(b, cfg.p, cfg.q, "B")?;
    if reps < MIN_LAMBDA_REPS {
        return Err(Error::Config(format!(
            "estimating Λ needs at least {MIN_LAMBDA_REPS} replications, got {reps}"
        )));
    }
    let draws: Vec<Vector> = (0..reps as u64)
        .into_par_iter()
        .map(|r| lambda_draw(model, b, source, seed, r))
        .collect::<Result<_>>()?;

    let dim = cfg.p * cfg.q;
    let nr = reps as f64;
    let mut sum = Mat::zeros(dim, dim);
    let mut sum_sq = Mat::zeros(dim, dim);
    let mut mean = Vector::zeros(dim);
    let mut mean_sq = Vector::zeros(dim);
    for g in &draws {
        let outer = g * g.transpose();
        sum_sq += outer.component_mul(&outer);
        sum += outer;
        mean += g;
        mean_sq += g.component_mul(g);
    }
    let lambda = symmetrize(&(sum / nr));
    let var = sum_sq / nr - lambda.component_mul(&lambda);
    let standard_error = var.iter().fold(0.0_f64, |m, v| m.max(v.max(0.0).sqrt())) / nr.sqrt();
    let mean = mean / nr;
    let mean_var = mean_sq / nr - mean.component_mul(&mean);
    let mean_standard_error = mean_var.map(|v| (v.max(0.0) * nr / (nr - 1.0)).sqrt() / nr.sqrt());
    Ok(LambdaEstimate {
        lambda,
        mean,
        reps,
        n_used: cfg.n,
        standard_error,
        mean_standard_error,
    })
}

/// Exact `Cov(vec(h'))` at the configured `n` for Gaussian errors and the
/// plug-in `Σ_X`:
/// `Λ[(a,b),(c,d)] = Σ_X[a,c]·Ω[b,d] + σ⁴_δ·B[a,d]·B[c,b]`, `Ω = σ²_εI + σ²_δB'B`.
pub fn gaussian_lambda(model: &Model, b: &Mat) -> Result<Mat> {
    let cfg = model.config();
    check_shape(b, cfg.p, cfg.q, "B")?;
    let (p, q) = (cfg.p, cfg.q);
    let sigma_x = model.sigma_x();
    let omega = identity(q) * cfg.sigma_eps2 + b.transpose() * b * cfg.sigma_delta2;
    let s4 = cfg.sigma_delta2 * cfg.sigma_delta2;
    let mut lambda = kron(&sigma_x, &omega);
    for a in 0..p {
        for bb in 0..q {
            for c in 0..p {
                for d in 0..q {
                    lambda[(a * q + bb, c * q + d)] += s4 * b[(a, d)] * b[(c, bb)];
                }
            }
        }
    }
    Ok(symmetrize(&lambda))
}

/// `Q₀⁻¹R₁'(R₁Q₀⁻¹R₁')⁻¹`.
pub fn restriction_gain(q0: &Mat, restr: &Restriction) -> Result<Mat> {
    let qinv_r1t = spd_solve(q0, &restr.r1.transpose(), "Q₀")?;
    let middle = &restr.r1 * &qinv_r1t;
    let inv = spd_inverse(&middle, "R₁Q₀⁻¹R₁'")
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    Ok(qinv_r1t * inv)
}

/// `(R₂'R₂)⁻¹R₂'`.
pub fn right_pseudo(restr: &Restriction) -> Result<Mat> {
    let r2tr2 = restr.r2.transpose() * &restr.r2;
    spd_solve(&r2tr2, &restr.r2.transpose(), "R₂'R₂")
        .map_err(|e| Error::RankDeficient(e.to_string()))
}

/// `R₂(R₂'R₂)⁻¹R₂'`.
pub fn right_projector(restr: &Restriction) -> Result<Mat> {
    Ok(&restr.r2 * right_pseudo(restr)?)
}

/// The matrix mapping `vec(h')` to the limit of `vec(√n(B̂ − B)')`.
pub fn a_matrix(pm: &PopulationModel, restr: &Restriction, which: &Estimator) -> Result<Mat> {
    let p = pm.p();
    let q = restr.q();
    restr.check_dims(p, q)?;
    let sk_inv = spd_inverse(&pm.sigma_k(), "ΣK")?;
    let a1 = kron(&sk_inv, &identity(q));
    match which {
        Estimator::Ue => Ok(a1),
        Estimator::Lse => Err(Error::Config("LSE has no centred limit law".into())),
        _ => {
            let q0 = pm.q0_for(which)?;
            let g = restriction_gain(&q0, restr)?;
            Ok(a1 - kron(&(g * &restr.r1 * sk_inv), &right_projector(restr)?))
        }
    }
}

/// `μ(Q₀) = −Q₀⁻¹R₁'(R₁Q₀⁻¹R₁')⁻¹θ₀(R₂'R₂)⁻¹R₂'`.
pub fn restricted_mean(q0: &Mat, restr: &Restriction, theta0: &Mat) -> Result<Mat> {
    check_shape(theta0, restr.r1.nrows(), restr.r2.ncols(), "θ₀")?;
    Ok(-(restriction_gain(q0, restr)? * theta0 * right_pseudo(restr)?))
}

/// Joint normal limit of a stack of estimator errors.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticLaw {
    pub labels: Vec<String>,
    pub means: Vec<Mat>,
    pub cov_blocks: Vec<Vec<Mat>>,
    pub p: usize,
    pub q: usize,
}

impl AsymptoticLaw {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn full_cov(&self) -> Mat {
        let d = self.p * self.q;
        let k = self.len();
        let mut out = Mat::zeros(k * d, k * d);
        for (i, row) in self.cov_blocks.iter().enumerate() {
            for (j, block) in row.iter().enumerate() {
                out.view_mut((i * d, j * d), (d, d)).copy_from(block);
            }
        }
        out
    }

    /// Sampler for the stacked errors (one `p x q` matrix per label).
    pub fn sampler(&self) -> Result<LawSampler> {
        Ok(LawSampler {
            factor: psd_factor(&symmetrize(&self.full_cov()))?,
            means: self.means.clone(),
            p: self.p,
            q: self.q,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LawSampler {
    factor: Mat,
    means: Vec<Mat>,
    p: usize,
    q: usize,
}

impl LawSampler {
    /// One draw of the stacked `vec(Uᵢᵀ)` vectors.
    pub fn sample_stacked<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let dim = self.factor.nrows();
        let z = Vector::from_fn(dim, |_, _| rng.sample(rand_distr::StandardNormal));
        let mut v = &self.factor * z;
        let d = self.p * self.q;
        for (k, mu) in self.means.iter().enumerate() {
            let mut seg = v.rows_mut(k * d, d);
            seg += vec(&mu.transpose());
        }
        v
    }
}

/// Limit law of the listed estimators with `Σᵢⱼ = AᵢΛAⱼ'` and means
/// `0` (UE) or `μ(Q₀)` (restricted) under `R₁BR₂ = θ + θ₀/√n`.
pub fn joint_law(
    pm: &PopulationModel,
    lambda: &Mat,
    restr: &Restriction,
    set: &[Estimator],
    theta0: &Mat,
) -> Result<AsymptoticLaw> {
    let p = pm.p();
    let q = restr.q();
    check_shape(lambda, p * q, p * q, "Λ")?;
    if set.is_empty() {
        return Err(Error::Config("estimator set is empty".into()));
    }
    let a: Vec<Mat> = set
        .iter()
        .map(|w| a_matrix(pm, restr, w))
        .collect::<Result<_>>()?;
    let means: Vec<Mat> = set
        .iter()
        .map(|w| match w {
            Estimator::Ue => Ok(Mat::zeros(p, q)),
            _ => restricted_mean(&pm.q0_for(w)?, restr, theta0),
        })
        .collect::<Result<_>>()?;
    let mut cov_blocks = vec![vec![Mat::zeros(p * q, p * q); set.len()]; set.len()];
    for i in 0..set.len() {
        let left = &a[i] * lambda;
        for j in i..set.len() {
            let block = &left * a[j].transpose();
            if i != j {
                cov_blocks[j][i] = block.transpose();
            }
            cov_blocks[i][j] = if i == j { symmetrize(&block) } else { block };
        }
    }
    Ok(AsymptoticLaw {
        labels: set.iter().map(|w| w.label().to_string()).collect(),
        means,
        cov_blocks,
        p,
        q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{rel_frobenius, vec_t};
    use crate::model::{DesignSpec, ErrorFamily, ModelConfig};
    use crate::seeding::SimRng;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn rand_mat(rng: &mut SimRng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn model(n: usize, sigma_delta2: f64) -> Model {
        Model::new(ModelConfig {
            n,
            p: 2,
            q: 2,
            sigma_eps2: 1.0,
            sigma_delta2,
            sigma_psi2: 0.5,
            design: DesignSpec::Uniform {
                low: -1.0,
                high: 1.0,
                seed: 7,
                mix: Some(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8])),
            },
            error_family: ErrorFamily::Gaussian,
        })
        .unwrap()
    }

    fn restriction() -> Restriction {
        Restriction::new(
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            Mat::from_row_slice(2, 1, &[1.0, -1.0]),
            Mat::from_element(1, 1, 0.5),
            Mat::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn truth() -> Mat {
        Mat::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.5])
    }

    #[test]
    fn population_examples() {
        let pm = PopulationModel::from_sigma(identity(3) * 1.7, 0.0).unwrap();
        assert_relative_eq!(pm.k, identity(3), epsilon = 1e-14);
        assert_eq!(pm.kbar, Mat::zeros(3, 3));
        let pm = PopulationModel::from_sigma(identity(2) * 2.0, 1.0).unwrap();
        assert_relative_eq!(pm.k, identity(2) * 0.5, epsilon = 1e-14);
        assert_relative_eq!(pm.kbar, identity(2) * 0.5, epsilon = 1e-14);
        assert!(matches!(
            PopulationModel::from_sigma(identity(2) * 2.0, 2.0),
            Err(Error::NotPd(_))
        ));
    }

    #[test]
    fn population_k_matches_plugin() {
        use crate::estimators::build_kx;
        let m = model(10_000, 0.3);
        let pm = population(&m).unwrap();
        let ds = generate(&m, &truth(), &mut SimRng::seed_from_u64(1)).unwrap();
        let kx = build_kx(&ds.x, 0.3, 10_000).unwrap();
        assert!(rel_frobenius(&kx.kx, &pm.k) < 0.05);
    }

    #[test]
    fn degenerate_lambda_is_zero() {
        let mut cfg = model(50, 0.0).config().clone();
        cfg.sigma_eps2 = 0.0;
        cfg.sigma_psi2 = 0.0;
        let m = Model::new(cfg).unwrap();
        let est = estimate_lambda(&m, &truth(), 1000, 3, KxSource::PlugIn).unwrap();
        assert_eq!(est.lambda, Mat::zeros(4, 4));
        assert_eq!(est.mean, Vector::zeros(4));
    }

    #[test]
    fn lambda_is_centred_and_matches_closed_form() {
        let m = model(500, 0.3);
        let b = truth();
        let est = estimate_lambda(&m, &b, 4000, 11, KxSource::PlugIn).unwrap();
        for i in 0..4 {
            assert!(est.mean[i].abs() <= 4.0 * est.mean_standard_error[i]);
        }
        let exact = gaussian_lambda(&m, &b).unwrap();
        assert!(rel_frobenius(&est.lambda, &exact) < 0.08);
        assert!(est.standard_error > 0.0);
    }

    #[test]
    fn lambda_is_stable_in_n() {
        let b = truth();
        let a = estimate_lambda(&model(2000, 0.3), &b, 2000, 5, KxSource::PlugIn).unwrap();
        let c = estimate_lambda(&model(8000, 0.3), &b, 2000, 6, KxSource::PlugIn).unwrap();
        assert!(rel_frobenius(&a.lambda, &c.lambda) < 0.10);
    }

    #[test]
    fn lambda_rejects_too_few_reps() {
        assert!(estimate_lambda(&model(50, 0.3), &truth(), 10, 1, KxSource::PlugIn).is_err());
    }

    #[test]
    fn a_matrix_examples() {
        let pm = PopulationModel::from_sigma(identity(2), 0.0).unwrap();
        let restr = restriction();
        assert_relative_eq!(
            a_matrix(&pm, &restr, &Estimator::Ue).unwrap(),
            identity(4),
            epsilon = 1e-14
        );
        let pm = population(&model(200, 0.3)).unwrap();
        let a3 = a_matrix(&pm, &restr, &Estimator::B3).unwrap();
        let ag = a_matrix(&pm, &restr, &Estimator::Generic(pm.sigma.clone())).unwrap();
        assert!((a3 - ag).abs().max() <= 1e-12);
        assert!(a_matrix(&pm, &restr, &Estimator::Lse).is_err());
    }

    #[test]
    fn restricted_a_matrices_annihilate_constraint_direction() {
        let mut rng = SimRng::seed_from_u64(4);
        let pm = population(&model(200, 0.3)).unwrap();
        let restr = Restriction::new(
            rand_mat(&mut rng, 1, 2),
            rand_mat(&mut rng, 2, 1),
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
        )
        .unwrap();
        // vec((R₁ G R₂)') = (R₁ ⊗ R₂') vec(G')
        let lift = kron(&restr.r1, &restr.r2.transpose());
        for which in [Estimator::B2, Estimator::B3, Estimator::B4] {
            let a = a_matrix(&pm, &restr, &which).unwrap();
            assert!((&lift * &a).norm() <= 1e-12 * a.norm());
        }
        let a1 = a_matrix(&pm, &restr, &Estimator::Ue).unwrap();
        assert!((&lift * a1).norm() > 1e-3);
    }

    #[test]
    fn means_examples() {
        let restr = Restriction::new(
            identity(2),
            identity(3),
            Mat::zeros(2, 3),
            Mat::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]),
        )
        .unwrap();
        let mu = restricted_mean(&identity(2), &restr, &restr.theta0).unwrap();
        assert_relative_eq!(mu, -&restr.theta0, epsilon = 1e-14);

        let restr = restriction();
        let pm = population(&model(200, 0.3)).unwrap();
        let set = [Estimator::Ue, Estimator::B2, Estimator::B3, Estimator::B4];
        let law0 = joint_law(&pm, &identity(4), &restr, &set, &Mat::zeros(1, 1)).unwrap();
        assert!(law0.means.iter().all(|m| m.norm() == 0.0));
        let law = joint_law(&pm, &identity(4), &restr, &set, &restr.theta0).unwrap();
        for mu in &law.means[1..] {
            let shifted = &restr.r1 * mu * &restr.r2;
            assert!((shifted + &restr.theta0).norm() <= 1e-10);
        }
    }

    #[test]
    fn joint_law_blocks_are_consistent() {
        let m = model(300, 0.3);
        let pm = population(&m).unwrap();
        let restr = restriction();
        let lambda = gaussian_lambda(&m, &truth()).unwrap();
        let all = [Estimator::Ue, Estimator::B2, Estimator::B3, Estimator::B4];
        let law4 = joint_law(&pm, &lambda, &restr, &all, &restr.theta0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let diff = &law4.cov_blocks[i][j].transpose() - &law4.cov_blocks[j][i];
                assert!(diff.norm() <= 1e-12 * law4.cov_blocks[i][j].norm().max(1.0));
            }
        }
        let full = law4.full_cov();
        let (lo, hi) = eig_extremes(&symmetrize(&full)).unwrap();
        assert!(lo >= -1e-8 * hi);

        let law2 = joint_law(
            &pm,
            &lambda,
            &restr,
            &[Estimator::Ue, Estimator::B3],
            &restr.theta0,
        )
        .unwrap();
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let (ia, ib) = ([0, 2][a], [0, 2][b]);
            assert_eq!(law2.cov_blocks[a][b], law4.cov_blocks[ia][ib]);
        }
        assert_eq!(law2.means[1], law4.means[2]);
    }

    #[test]
    fn restricted_limit_draws_satisfy_constraint() {
        let m = model(300, 0.3);
        let pm = population(&m).unwrap();
        let restr = restriction();
        let lambda = gaussian_lambda(&m, &truth()).unwrap();
        let law = joint_law(
            &pm,
            &lambda,
            &restr,
            &[Estimator::Ue, Estimator::B2],
            &Mat::zeros(1, 1),
        )
        .unwrap();
        let sampler = law.sampler().unwrap();
        let mut rng = SimRng::seed_from_u64(9);
        let scale = law.cov_blocks[1][1].norm();
        let mut sum_sq = 0.0;
        let draws = 2000;
        for _ in 0..draws {
            let v = sampler.sample_stacked(&mut rng);
            let zeta = crate::matcore::unvec_t(&v.rows(4, 4).into_owned(), 2, 2).unwrap();
            let c = (&restr.r1 * zeta * &restr.r2)[(0, 0)];
            sum_sq += c * c;
        }
        assert!(sum_sq / draws as f64 <= 1e-8 * scale);
        let _ = vec_t(&truth());
    }
}
