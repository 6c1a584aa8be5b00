//! Asymptotic distributional risk `E[tr(U'WU)]` of the unrestricted and
//! restricted estimators, the `f₁`/`F₁` decomposition and dominance bands.

use rayon::prelude::*;

use crate::asymptotics::{
    a_matrix, joint_law, restricted_mean, restriction_gain, right_projector, right_pseudo,
    AsymptoticLaw, PopulationModel,
};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::matcore::{
    check_shape, eig_extremes, frobenius, identity, kron, spd_inverse, symmetric_part, trace,
    vec_t, Mat,
};
use crate::model::Restriction;

/// Symmetric positive definite `p x p` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: Mat,
}

impl WeightMatrix {
    pub fn new(w: Mat) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::DimMismatch(format!(
                "weight must be square, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        let w = symmetric_part(&w)?;
        let (lo, _) = eig_extremes(&w)?;
        if lo <= 0.0 {
            return Err(Error::NotPd(format!("weight has smallest eigenvalue {lo:e}")));
        }
        Ok(Self { w })
    }

    pub fn identity(p: usize) -> Self {
        Self { w: identity(p) }
    }

    pub fn as_mat(&self) -> &Mat {
        &self.w
    }

    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    /// `W ⊗ I_q`, the weight acting on `vec(Uᵀ)`.
    pub fn lifted(&self, q: usize) -> Mat {
        kron(&self.w, &identity(q))
    }
}

/// `tr((W ⊗ I_q) Σ₁₁)` for the UE block of `law`.
pub fn adr_ue(w: &WeightMatrix, law: &AsymptoticLaw) -> Result<f64> {
    let i = law
        .index_of(Estimator::Ue.label())
        .ok_or_else(|| Error::DimMismatch("law has no UE block".into()))?;
    adr_block(w, law, i)
}

/// `tr((W ⊗ I_q) Σᵢᵢ) + tr(μᵢ'Wμᵢ)` for entry `i` of `law`.
pub fn adr_block(w: &WeightMatrix, law: &AsymptoticLaw, i: usize) -> Result<f64> {
    if w.p() != law.p {
        return Err(Error::DimMismatch(format!(
            "weight is {0}x{0} but the law has p = {1}",
            w.p(),
            law.p
        )));
    }
    let mu = &law.means[i];
    Ok(trace(&(w.lifted(law.q) * &law.cov_blocks[i][i])) + trace(&(mu.transpose() * w.as_mat() * mu)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    ReDominates,
    UeDominates,
    IndeterminateBand,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::ReDominates => "RE-dominates",
            Verdict::UeDominates => "UE-dominates",
            Verdict::IndeterminateBand => "indeterminate-band",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Risk decomposition of one restricted estimator at one `θ₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdrReport {
    pub adr_ue: f64,
    pub adr_re: f64,
    pub f1: f64,
    /// `f₁` read off the compact display with `J₁ = C₃R₁Q₀⁻¹`; diagnostic only.
    pub f1_compact: f64,
    pub f1_matrix: Mat,
    pub quadratic: f64,
    pub ch_min_f1: f64,
    pub ch_max_f1: f64,
    pub lower_threshold: f64,
    pub upper_threshold: f64,
    pub theta0_norm2: f64,
    pub verdict: Verdict,
    pub relative_efficiency: f64,
    /// `adr_re ≤ adr_ue`, reported separately from the verdict.
    pub re_not_worse: bool,
}

/// Everything that stays fixed while `Q₀` and `θ₀` vary.
#[derive(Debug, Clone)]
pub struct RiskProblem {
    pub pm: PopulationModel,
    pub lambda: Mat,
    pub restr: Restriction,
    pub weight: WeightMatrix,
    a1: Mat,
    w_lift: Mat,
}

impl RiskProblem {
    pub fn new(
        pm: PopulationModel,
        lambda: Mat,
        restr: Restriction,
        weight: WeightMatrix,
    ) -> Result<Self> {
        let p = pm.p();
        let q = restr.q();
        restr.check_dims(p, q)?;
        check_shape(&lambda, p * q, p * q, "Λ")?;
        if weight.p() != p {
            return Err(Error::DimMismatch(format!(
                "weight is {0}x{0}, expected {p}x{p}",
                weight.p()
            )));
        }
        let lambda = symmetric_part(&lambda)?;
        let a1 = a_matrix(&pm, &restr, &Estimator::Ue)?;
        let w_lift = weight.lifted(q);
        Ok(Self {
            pm,
            lambda,
            restr,
            weight,
            a1,
            w_lift,
        })
    }

    pub fn p(&self) -> usize {
        self.pm.p()
    }

    pub fn q(&self) -> usize {
        self.restr.q()
    }

    pub fn adr_ue(&self) -> f64 {
        trace(&(&self.w_lift * &self.a1 * &self.lambda * self.a1.transpose()))
    }

    /// `F₁(Q₀) = C₃'WC₃ ⊗ (R₂'R₂)⁻¹`, acting on `vec(θ₀ᵀ)`.
    pub fn f1_matrix(&self, q0: &Mat) -> Result<Mat> {
        let c3 = restriction_gain(q0, &self.restr)?;
        let r2tr2 = self.restr.r2.transpose() * &self.restr.r2;
        let inv = spd_inverse(&r2tr2, "R₂'R₂").map_err(|e| Error::RankDeficient(e.to_string()))?;
        Ok(kron(&(c3.transpose() * self.weight.as_mat() * c3), &inv))
    }

    fn three_trace(&self, d: &Mat) -> f64 {
        let wa = &self.w_lift * &self.a1;
        let wd = &self.w_lift * d;
        trace(&(&wa * &self.lambda * d.transpose())) + trace(&(wd * &self.lambda * self.a1.transpose()))
            - trace(&(&self.w_lift * d * &self.lambda * d.transpose()))
    }

    /// Variance gain `f₁(Q₀)`. The restriction removes `D g` from `A₁ g`
    /// with `D = C₃R₁(ΣK)⁻¹ ⊗ J`, so `f₁` is the three-trace expansion in `D`.
    pub fn f1(&self, q0: &Mat) -> Result<f64> {
        let c3 = restriction_gain(q0, &self.restr)?;
        let sk_inv = spd_inverse(&self.pm.sigma_k(), "ΣK")?;
        let d = kron(&(c3 * &self.restr.r1 * sk_inv), &right_projector(&self.restr)?);
        Ok(self.three_trace(&d))
    }

    /// Literal reading of the compact display, `J₁ = C₃R₁Q₀⁻¹`. It agrees
    /// with [`RiskProblem::f1`] when `Q₀ = ΣK`.
    pub fn f1_compact(&self, q0: &Mat) -> Result<f64> {
        let c3 = restriction_gain(q0, &self.restr)?;
        let q0_inv = spd_inverse(q0, "Q₀")?;
        let j1 = c3 * &self.restr.r1 * q0_inv;
        let j = right_projector(&self.restr)?;
        let w = self.weight.as_mat();
        let cross = kron(&(j1.transpose() * w), &j) * &self.a1 * &self.lambda;
        let own = kron(&(j1.transpose() * w * &j1), &j) * &self.lambda;
        Ok(2.0 * trace(&cross) - trace(&own))
    }

    /// Full decomposition and dominance report for `Q₀` at `θ₀`.
    pub fn report(&self, q0: &Mat, theta0: &Mat) -> Result<AdrReport> {
        check_shape(theta0, self.restr.r1.nrows(), self.restr.r2.ncols(), "θ₀")?;
        let adr_ue = self.adr_ue();
        let f1 = self.f1(q0)?;
        let f1_compact = self.f1_compact(q0)?;
        if (f1 - f1_compact).abs() > 1e-8 * adr_ue.abs().max(1e-300) {
            log::debug!("compact f1 reading {f1_compact:e} differs from decomposition {f1:e}");
        }
        let f1_matrix = self.f1_matrix(q0)?;
        let t = vec_t(theta0);
        let quadratic = (t.transpose() * &f1_matrix * &t)[(0, 0)];
        let adr_re = adr_ue - f1 + quadratic;
        let (ch_min_f1, ch_max_f1) = eig_extremes(&f1_matrix)?;
        let theta0_norm2 = frobenius(theta0).powi(2);
        Ok(dominance(
            adr_ue,
            adr_re,
            f1,
            f1_compact,
            f1_matrix,
            quadratic,
            ch_min_f1,
            ch_max_f1,
            theta0_norm2,
        ))
    }

    /// `tr((W⊗I_q)Σ₂₂(Q₀)) + tr(μ'Wμ)` evaluated from the joint law.
    pub fn adr_direct(&self, q0: &Mat, theta0: &Mat) -> Result<f64> {
        let law = joint_law(
            &self.pm,
            &self.lambda,
            &self.restr,
            &[Estimator::Generic(q0.clone())],
            theta0,
        )?;
        adr_block(&self.weight, &law, 0)
    }

    /// `tr(μ'Wμ)` for the restricted mean shift.
    pub fn mean_quadratic(&self, q0: &Mat, theta0: &Mat) -> Result<f64> {
        let mu = restricted_mean(q0, &self.restr, theta0)?;
        Ok(trace(&(mu.transpose() * self.weight.as_mat() * mu)))
    }

    /// Sweeps `θ₀ = s·d` for a direction `d` normalized to unit Frobenius norm.
    pub fn efficiency_curve(
        &self,
        q0: &Mat,
        direction: &Mat,
        scales: &[f64],
    ) -> Result<Vec<EfficiencyRow>> {
        let norm = frobenius(direction);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Config("efficiency direction must be nonzero".into()));
        }
        let d = direction / norm;
        scales
            .par_iter()
            .map(|&s| {
                let r = self.report(q0, &(&d * s))?;
                Ok(EfficiencyRow {
                    scale: s,
                    theta0_norm2: r.theta0_norm2,
                    adr_ue: r.adr_ue,
                    adr_re: r.adr_re,
                    relative_efficiency: r.relative_efficiency,
                    verdict: r.verdict,
                })
            })
            .collect()
    }
}

/// Thresholds, verdict and relative efficiency from the decomposition.
/// A singular `F₁` reports an infinite upper threshold.
#[allow(clippy::too_many_arguments)]
pub fn dominance(
    adr_ue: f64,
    adr_re: f64,
    f1: f64,
    f1_compact: f64,
    f1_matrix: Mat,
    quadratic: f64,
    ch_min_f1: f64,
    ch_max_f1: f64,
    theta0_norm2: f64,
) -> AdrReport {
    let lower_threshold = f1 / ch_max_f1;
    let upper_threshold = if ch_min_f1 <= 0.0 {
        f64::INFINITY
    } else {
        f1 / ch_min_f1
    };
    let verdict = if theta0_norm2 < lower_threshold {
        Verdict::ReDominates
    } else if theta0_norm2 > upper_threshold {
        Verdict::UeDominates
    } else {
        Verdict::IndeterminateBand
    };
    AdrReport {
        adr_ue,
        adr_re,
        f1,
        f1_compact,
        f1_matrix,
        quadratic,
        ch_min_f1,
        ch_max_f1,
        lower_threshold,
        upper_threshold,
        theta0_norm2,
        verdict,
        relative_efficiency: adr_ue / adr_re,
        re_not_worse: adr_re <= adr_ue,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub scale: f64,
    pub theta0_norm2: f64,
    pub adr_ue: f64,
    pub adr_re: f64,
    pub relative_efficiency: f64,
    pub verdict: Verdict,
}

/// `(R₂'R₂)⁻¹R₂'` re-exported for callers building `μ` by hand.
pub fn c4(restr: &Restriction) -> Result<Mat> {
    right_pseudo(restr)
}
