//! Naive least squares, the attenuation-corrected unrestricted estimator and
//! the weighted restricted estimators `B̃(Σ̂)`.

use crate::error::{Error, Result};
use crate::matcore::{
    check_finite, check_shape, eig_extremes, identity, solve, spd_solve, symmetric_part,
    symmetrize, Mat,
};
use crate::model::Restriction;

/// Which estimator a simulation or limit law refers to.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Lse,
    Ue,
    B2,
    B3,
    B4,
    /// `B̃(Σ̂)` with `Σ̂ = n·Q₀` for a fixed symmetric PD `Q₀`.
    Generic(Mat),
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Lse => "LSE",
            Estimator::Ue => "UE",
            Estimator::B2 => "B2",
            Estimator::B3 => "B3",
            Estimator::B4 => "B4",
            Estimator::Generic(_) => "generic",
        }
    }

    /// Parses a label; `generic` takes its `Q₀` from `generic_q0`.
    pub fn parse(label: &str, generic_q0: Option<&Mat>) -> Result<Self> {
        match label {
            "LSE" => Ok(Estimator::Lse),
            "UE" => Ok(Estimator::Ue),
            "B2" => Ok(Estimator::B2),
            "B3" => Ok(Estimator::B3),
            "B4" => Ok(Estimator::B4),
            "generic" => generic_q0
                .cloned()
                .map(Estimator::Generic)
                .ok_or_else(|| Error::Config("estimator 'generic' needs a q0 matrix".into())),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }

    pub fn is_restricted(&self) -> bool {
        matches!(
            self,
            Estimator::B2 | Estimator::B3 | Estimator::B4 | Estimator::Generic(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KxSource {
    /// `Σ_X` estimated by `X'X/n`.
    PlugIn,
    /// `Σ_X` supplied externally (e.g. the population value from a known design).
    Reference,
}

/// The attenuation correction `K_X = Σ_X⁻¹ Σ_D` and its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct KxPlugin {
    pub sigma_x_hat: Mat,
    pub sigma_d_hat: Mat,
    pub kx: Mat,
    pub sigma_delta2: f64,
    pub source: KxSource,
}

impl KxPlugin {
    fn from_parts(sigma_x: Mat, sigma_delta2: f64, source: KxSource) -> Result<Self> {
        if !(sigma_delta2 >= 0.0) || !sigma_delta2.is_finite() {
            return Err(Error::Config(format!(
                "sigma_delta2 must be finite and nonnegative, got {sigma_delta2}"
            )));
        }
        let sigma_x = symmetric_part(&sigma_x)?;
        let p = sigma_x.nrows();
        let sigma_d = &sigma_x - identity(p) * sigma_delta2;
        let (_, x_max) = eig_extremes(&sigma_x)?;
        let (d_min, _) = eig_extremes(&sigma_d)?;
        if d_min < 1e-8 * x_max {
            return Err(Error::NearSingular(format!(
                "Σ_D has smallest eigenvalue {d_min:e}; the attenuation correction breaks down"
            )));
        }
        let kx = spd_solve(&sigma_x, &sigma_d, "Σ_X")?;
        Ok(Self {
            sigma_x_hat: sigma_x,
            sigma_d_hat: sigma_d,
            kx,
            sigma_delta2,
            source,
        })
    }

    /// Uses a known `Σ_X` instead of `X'X/n`.
    pub fn from_reference(sigma_x: Mat, sigma_delta2: f64) -> Result<Self> {
        Self::from_parts(sigma_x, sigma_delta2, KxSource::Reference)
    }

    /// `(X'X) K_X`, symmetrized so it can serve as a restriction weight.
    pub fn weight(&self, xtx: &Mat) -> Mat {
        symmetrize(&(xtx * &self.kx))
    }
}

pub fn build_kx(x: &Mat, sigma_delta2: f64, n: usize) -> Result<KxPlugin> {
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let sigma_x = x.transpose() * x / n as f64;
    KxPlugin::from_parts(sigma_x, sigma_delta2, KxSource::PlugIn)
}

fn check_data(x: &Mat, z: &Mat) -> Result<()> {
    if x.nrows() != z.nrows() {
        return Err(Error::DimMismatch(format!(
            "X has {} rows, Z has {}",
            x.nrows(),
            z.nrows()
        )));
    }
    check_finite(x, "X")?;
    check_finite(z, "Z")
}

/// `(X'X)⁻¹ X'Z`.
pub fn lse(x: &Mat, z: &Mat) -> Result<Mat> {
    check_data(x, z)?;
    let xtx = x.transpose() * x;
    spd_solve(&xtx, &(x.transpose() * z), "X'X").map_err(|e| match e {
        Error::NotPd(msg) | Error::NearSingular(msg) => Error::SingularDesign(msg),
        other => other,
    })
}

/// `B̂₁ = K_X⁻¹ B̂` with the plug-in `K_X`, evaluated as `(X'X − nσ²_δ I)⁻¹ X'Z`.
pub fn ue(x: &Mat, z: &Mat, sigma_delta2: f64) -> Result<Mat> {
    check_data(x, z)?;
    let n = x.nrows();
    let kxp = build_kx(x, sigma_delta2, n)?;
    ue_with(x, z, &kxp)
}

/// `B̂₁` for an arbitrary `K_X`.
pub fn ue_with(x: &Mat, z: &Mat, kxp: &KxPlugin) -> Result<Mat> {
    check_data(x, z)?;
    let p = x.ncols();
    check_shape(&kxp.kx, p, p, "K_X")?;
    match kxp.source {
        KxSource::PlugIn => {
            let n = x.nrows() as f64;
            let corrected = x.transpose() * x - identity(p) * (n * kxp.sigma_delta2);
            spd_solve(&corrected, &(x.transpose() * z), "X'X − nσ²_δI")
        }
        KxSource::Reference => solve(&kxp.kx, &lse(x, z)?, "K_X"),
    }
}

/// `B̃(Σ̂) = B̂₁ − Σ̂⁻¹R₁'[R₁Σ̂⁻¹R₁']⁻¹(R₁B̂₁R₂ − θ)(R₂'R₂)⁻¹R₂'`.
pub fn restricted(b1: &Mat, sigma_hat: &Mat, restr: &Restriction) -> Result<Mat> {
    let (p, q) = b1.shape();
    restr.check_dims(p, q)?;
    check_shape(sigma_hat, p, p, "Σ̂")?;
    check_finite(b1, "B̂₁")?;
    let sigma_hat = symmetric_part(sigma_hat)
        .map_err(|e| Error::NotPd(format!("Σ̂ is not symmetric: {e}")))?;
    let sinv_r1t = spd_solve(&sigma_hat, &restr.r1.transpose(), "Σ̂")?;
    let middle = &restr.r1 * &sinv_r1t;
    let rank_err = |what: &'static str| {
        move |e: Error| match e {
            Error::NotPd(m) | Error::NearSingular(m) => {
                Error::RankDeficient(format!("{what}: {m}"))
            }
            other => other,
        }
    };
    let left = spd_solve(&middle, &restr.residual(b1), "R₁Σ̂⁻¹R₁'")
        .map_err(rank_err("R₁Σ̂⁻¹R₁'"))?;
    let r2tr2 = restr.r2.transpose() * &restr.r2;
    let right = spd_solve(&r2tr2, &restr.r2.transpose(), "R₂'R₂")
        .map_err(rank_err("R₂'R₂"))?;
    Ok(b1 - sinv_r1t * left * right)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    pub b_lse: Mat,
    pub b1: Mat,
    pub b_tilde: Option<Mat>,
    pub b2: Mat,
    pub b3: Mat,
    pub b4: Mat,
}

impl EstimateSet {
    pub fn get(&self, which: &Estimator) -> Option<&Mat> {
        match which {
            Estimator::Lse => Some(&self.b_lse),
            Estimator::Ue => Some(&self.b1),
            Estimator::B2 => Some(&self.b2),
            Estimator::B3 => Some(&self.b3),
            Estimator::B4 => Some(&self.b4),
            Estimator::Generic(_) => self.b_tilde.as_ref(),
        }
    }

    /// `(name, matrix)` pairs in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, &Mat)> {
        let mut out = vec![
            ("LSE", &self.b_lse),
            ("UE", &self.b1),
            ("B2", &self.b2),
            ("B3", &self.b3),
            ("B4", &self.b4),
        ];
        if let Some(bt) = &self.b_tilde {
            out.push(("generic", bt));
        }
        out
    }
}

/// All estimators for one dataset with the plug-in `K_X`.
pub fn named_res(x: &Mat, z: &Mat, sigma_delta2: f64, restr: &Restriction) -> Result<EstimateSet> {
    check_data(x, z)?;
    let kxp = build_kx(x, sigma_delta2, x.nrows())?;
    named_res_with(x, z, &kxp, restr, None)
}

/// All estimators for one dataset; `generic_q0` adds `B̃(n·Q₀)`.
pub fn named_res_with(
    x: &Mat,
    z: &Mat,
    kxp: &KxPlugin,
    restr: &Restriction,
    generic_q0: Option<&Mat>,
) -> Result<EstimateSet> {
    check_data(x, z)?;
    let (n, p) = x.shape();
    restr.check_dims(p, z.ncols())?;
    let xtx = x.transpose() * x;
    let b_lse = lse(x, z)?;
    let b1 = ue_with(x, z, kxp)?;
    let b2 = restricted(&b1, &kxp.weight(&xtx), restr)?;
    let b3 = restricted(&b1, &xtx, restr)?;
    let b4 = restricted(&b1, &(identity(p) * n as f64), restr)?;
    let b_tilde = match generic_q0 {
        Some(q0) => Some(restricted(&b1, &(q0 * n as f64), restr)?),
        None => None,
    };
    Ok(EstimateSet {
        b_lse,
        b1,
        b_tilde,
        b2,
        b3,
        b4,
    })
}

/// Two evaluations of the corrected least-squares objective at `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// `tr(Z'Z) + tr[(B̂₁ − B)'(X'X)K_X(B̂₁ − B)]`.
    pub expanded_form: f64,
    /// `tr((Z − XB)'(Z − XB)) − tr[B'(nΣ_X)(I − K_X)B]`.
    pub penalized_form: f64,
}

impl Objective {
    /// `expanded_form − penalized_form`. For the plug-in `K_X` this does
    /// not depend on `B`: it equals `tr(B̂₁'(X'X)K_X B̂₁)`.
    pub fn offset(&self) -> f64 {
        self.expanded_form - self.penalized_form
    }
}

pub fn objective_g2(b: &Mat, x: &Mat, z: &Mat, kxp: &KxPlugin, b1: &Mat) -> Result<Objective> {
    check_data(x, z)?;
    let (n, p) = x.shape();
    let q = z.ncols();
    check_shape(b, p, q, "B")?;
    check_shape(b1, p, q, "B̂₁")?;
    let xtx = x.transpose() * x;
    let d = b1 - b;
    let expanded_form =
        (z.transpose() * z).trace() + (d.transpose() * &xtx * &kxp.kx * &d).trace();
    let resid = z - x * b;
    let penalty = &kxp.sigma_x_hat * n as f64 * (identity(p) - &kxp.kx);
    let penalized_form =
        (resid.transpose() * &resid).trace() - (b.transpose() * penalty * b).trace();
    Ok(Objective {
        expanded_form,
        penalized_form,
    })
}
