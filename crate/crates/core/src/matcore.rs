//! Dense matrix helpers: vec/Kronecker algebra, symmetric eigen extremes,
//! guarded solves and matrix-normal sampling.
//!
//! Covariances of random matrices are always stated for `vec(Yᵀ)`, i.e. the
//! row-stacking of `Y`. Under that convention `vec((κ Y ι)ᵀ) = (κ ⊗ ιᵀ) vec(Yᵀ)`
//! and `tr(Yᵀ W Y) = vec(Yᵀ)ᵀ (W ⊗ I) vec(Yᵀ)`, which is the form every
//! covariance block and risk formula in this crate is written in.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative size of negative eigenvalues clipped to zero in PSD factorizations.
pub const PSD_TOL: f64 = 1e-10;
/// Condition numbers above this are reported as near singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Column-stacking vectorization.
pub fn vec(m: &Mat) -> Vector {
    // nalgebra stores column-major, so the raw slice is already column-stacked.
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows * cols {
        return Err(Error::DimMismatch(format!(
            "cannot reshape vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Mat::from_column_slice(rows, cols, v.as_slice()))
}

/// `vec(mᵀ)`: row-stacking of `m`.
pub fn vec_t(m: &Mat) -> Vector {
    vec(&m.transpose())
}

/// Inverse of [`vec_t`]: rebuilds the `rows x cols` matrix whose row-stacking is `v`.
pub fn unvec_t(v: &Vector, rows: usize, cols: usize) -> Result<Mat> {
    Ok(unvec(v, cols, rows)?.transpose())
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute gap when `b` is zero.
pub fn rel_frobenius(a: &Mat, b: &Mat) -> f64 {
    let gap = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        gap / scale
    } else {
        gap
    }
}

pub fn check_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn check_shape(m: &Mat, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimMismatch(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn symmetrize(s: &Mat) -> Mat {
    (s + s.transpose()) * 0.5
}

/// Checks symmetry within `SYMMETRY_TOL · ‖s‖_F` and returns `(s + sᵀ)/2`.
pub fn symmetric_part(s: &Mat) -> Result<Mat> {
    if !s.is_square() {
        return Err(Error::DimMismatch(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let asymmetry = (s - s.transpose()).norm();
    let tolerance = SYMMETRY_TOL * s.norm();
    if asymmetry > tolerance {
        return Err(Error::NonSymmetric {
            asymmetry,
            tolerance,
        });
    }
    Ok(symmetrize(s))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_extremes(s: &Mat) -> Result<(f64, f64)> {
    let sym = symmetric_part(s)?;
    check_finite(&sym, "eigenvalue input")?;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let ch_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let ch_max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((ch_min, ch_max))
}

/// Returns `F` with `F Fᵀ = cov`, clipping eigenvalues in `[−PSD_TOL·ch_max, 0)` to zero.
pub fn psd_factor(cov: &Mat) -> Result<Mat> {
    let sym = symmetric_part(cov)?;
    check_finite(&sym, "covariance")?;
    let eig = SymmetricEigen::new(sym);
    let ch_max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let floor = -PSD_TOL * ch_max;
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < floor {
            return Err(Error::NotPsd { min_eig: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(eig.eigenvectors * Mat::from_diagonal(&roots))
}

fn spd_condition(a: &Mat, what: &str) -> Result<()> {
    let (lo, hi) = eig_extremes(a)?;
    if lo <= 0.0 {
        return Err(Error::NotPd(format!(
            "{what} has smallest eigenvalue {lo:e}"
        )));
    }
    if hi / lo > MAX_CONDITION {
        return Err(Error::NearSingular(format!(
            "{what} has condition number {:e}",
            hi / lo
        )));
    }
    Ok(())
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    spd_condition(a, what)?;
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::NotPd(format!("{what}: Cholesky factorization failed")))?;
    Ok(chol.solve(b))
}

pub fn spd_inverse(a: &Mat, what: &str) -> Result<Mat> {
    spd_solve(a, &identity(a.nrows()), what)
}

/// Solves `a x = b` for a general square `a`, rejecting condition numbers above `MAX_CONDITION`.
pub fn solve(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimMismatch(format!(
            "{what}: cannot solve {}x{} system with {}x{} right-hand side",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let sv = a.clone().singular_values();
    let hi = sv.max();
    let lo = sv.min();
    if lo <= 0.0 || hi / lo > MAX_CONDITION {
        return Err(Error::NearSingular(format!(
            "{what} has condition number {:e}",
            if lo > 0.0 { hi / lo } else { f64::INFINITY }
        )));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::NearSingular(format!("{what}: LU solve failed")))
}

pub fn trace(m: &Mat) -> f64 {
    m.trace()
}

/// Numerical rank from singular values, relative tolerance `1e-10`.
pub fn rank(m: &Mat) -> usize {
    let sv = m.clone().singular_values();
    let hi = sv.max();
    if hi == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-10 * hi).count()
}

/// A normal law on `p x q` matrices. `cov` is the covariance of `vec(Yᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixNormal {
    mean: Mat,
    cov: Mat,
}

impl MatrixNormal {
    pub fn new(mean: Mat, cov: Mat) -> Result<Self> {
        let pq = mean.nrows() * mean.ncols();
        check_shape(&cov, pq, pq, "matrix-normal covariance")?;
        check_finite(&mean, "matrix-normal mean")?;
        let sym = symmetric_part(&cov)?;
        let (lo, hi) = eig_extremes(&sym)?;
        if lo < -PSD_TOL * hi.abs().max(sym.norm()) {
            return Err(Error::NotPsd { min_eig: lo });
        }
        Ok(Self { mean, cov: sym })
    }

    pub fn mean(&self) -> &Mat {
        &self.mean
    }

    pub fn cov(&self) -> &Mat {
        &self.cov
    }

    pub fn sampler(&self) -> Result<MatrixNormalSampler> {
        Ok(MatrixNormalSampler {
            mean: self.mean.clone(),
            factor: psd_factor(&self.cov)?,
        })
    }
}

/// Pre-factored sampler for repeated draws from one [`MatrixNormal`].
#[derive(Debug, Clone)]
pub struct MatrixNormalSampler {
    mean: Mat,
    factor: Mat,
}

impl MatrixNormalSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Mat {
        let (p, q) = self.mean.shape();
        let z = Vector::from_fn(p * q, |_, _| rng.sample(StandardNormal));
        let mut y = self.mean.clone();
        let noise = &self.factor * z;
        // noise is vec(Yᵀ): entry (i, j) sits at i*q + j
        for i in 0..p {
            for j in 0..q {
                y[(i, j)] += noise[i * q + j];
            }
        }
        y
    }
}

pub fn sample_matrix_normal<R: Rng + ?Sized>(law: &MatrixNormal, rng: &mut R) -> Result<Mat> {
    Ok(law.sampler()?.sample(rng))
}

/// The map `Y ↦ κ Y ι + α Y β + ϱ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub kappa: Mat,
    pub iota: Mat,
    pub alpha: Mat,
    pub beta: Mat,
    pub rho: Mat,
}

impl AffineTransform {
    pub fn new(kappa: Mat, iota: Mat, alpha: Mat, beta: Mat, rho: Mat) -> Result<Self> {
        let t = Self {
            kappa,
            iota,
            alpha,
            beta,
            rho,
        };
        t.check()?;
        Ok(t)
    }

    pub fn identity(p: usize, q: usize) -> Self {
        Self {
            kappa: identity(p),
            iota: identity(q),
            alpha: Mat::zeros(p, p),
            beta: Mat::zeros(q, q),
            rho: Mat::zeros(p, q),
        }
    }

    fn check(&self) -> Result<()> {
        let (a, p) = self.kappa.shape();
        let (q, b) = self.iota.shape();
        check_shape(&self.alpha, a, p, "alpha")?;
        check_shape(&self.beta, q, b, "beta")?;
        check_shape(&self.rho, a, b, "rho")?;
        Ok(())
    }

    /// Shape `(p, q)` of the matrices this transform accepts.
    pub fn input_shape(&self) -> (usize, usize) {
        (self.kappa.ncols(), self.iota.nrows())
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.kappa.nrows(), self.iota.ncols())
    }

    /// Linear part acting on `vec(Yᵀ)`: `κ ⊗ ιᵀ + α ⊗ βᵀ`.
    pub fn lift(&self) -> Mat {
        kron(&self.kappa, &self.iota.transpose()) + kron(&self.alpha, &self.beta.transpose())
    }

    pub fn apply(&self, y: &Mat) -> Mat {
        &self.kappa * y * &self.iota + &self.alpha * y * &self.beta + &self.rho
    }
}

/// `Cov(vec(Tᵢ(Y)ᵀ), vec(Tⱼ(Y)ᵀ)) = Lᵢ Λ Lⱼᵀ` for `Cov(vec(Yᵀ)) = Λ`.
pub fn transform_cov_block(
    ti: &AffineTransform,
    tj: &AffineTransform,
    lambda: &Mat,
) -> Result<Mat> {
    ti.check()?;
    tj.check()?;
    let (p, q) = ti.input_shape();
    if tj.input_shape() != (p, q) {
        return Err(Error::DimMismatch(format!(
            "transforms accept {:?} and {:?}",
            ti.input_shape(),
            tj.input_shape()
        )));
    }
    check_shape(lambda, p * q, p * q, "lambda")?;
    Ok(ti.lift() * lambda * tj.lift().transpose())
}

/// Assembles the full covariance of a stack of transforms applied to the same input.
pub fn stacked_cov(transforms: &[AffineTransform], lambda: &Mat) -> Result<Mat> {
    let sizes: Vec<usize> = transforms
        .iter()
        .map(|t| {
            let (a, b) = t.output_shape();
            a * b
        })
        .collect();
    let total: usize = sizes.iter().sum();
    let mut out = Mat::zeros(total, total);
    let mut row = 0;
    for (i, ti) in transforms.iter().enumerate() {
        let mut col = 0;
        for (j, tj) in transforms.iter().enumerate() {
            let block = transform_cov_block(ti, tj, lambda)?;
            out.view_mut((row, col), (sizes[i], sizes[j]))
                .copy_from(&block);
            col += sizes[j];
        }
        row += sizes[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_sym(rng: &mut ChaCha8Rng, k: usize) -> Mat {
        let a = rand_mat(rng, k, k);
        symmetrize(&(&a + a.transpose()))
    }

    #[test]
    fn vec_stacks_columns() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec_t(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&Mat::zeros(2, 3)), Vector::zeros(6));
    }

    #[test]
    fn vec_of_product_is_kronecker_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, x, b) = (
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
        );
        // elementwise evaluation of AXB
        let mut axb = Mat::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        axb[(i, j)] += a[(i, k)] * x[(k, l)] * b[(l, j)];
                    }
                }
            }
        }
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        assert_relative_eq!(vec(&axb), rhs, epsilon = 1e-14);
        // row-stacking counterpart used by every covariance block
        let rhs_t = kron(&a, &b.transpose()) * vec_t(&x);
        assert_relative_eq!(vec_t(&axb), rhs_t, epsilon = 1e-14);
    }

    #[test]
    fn kron_special_cases() {
        assert_eq!(kron(&identity(2), &identity(3)), identity(6));
        let b = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(kron(&Mat::from_element(1, 1, 2.0), &b), &b * 2.0);
        let k = kron(&Mat::from_row_slice(1, 2, &[1.0, -1.0]), &b);
        assert_eq!(k.shape(), (2, 6));
        assert_eq!(k[(1, 4)], -5.0);
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: Vec<Mat> = (0..4).map(|_| rand_mat(&mut rng, 2, 2)).collect();
        let lhs = kron(&m[0], &m[1]) * kron(&m[2], &m[3]);
        let rhs = kron(&(&m[0] * &m[2]), &(&m[1] * &m[3]));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn eig_extremes_examples() {
        let d = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 5.0, 3.0]));
        assert_eq!(eig_extremes(&d).unwrap(), (1.0, 5.0));
        let (lo, hi) = eig_extremes(&(identity(4) * 2.5)).unwrap();
        assert_relative_eq!(lo, 2.5, epsilon = 1e-14);
        assert_relative_eq!(hi, 2.5, epsilon = 1e-14);
    }

    #[test]
    fn eig_extremes_bracket_rayleigh_quotients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = rand_sym(&mut rng, 4);
        let (lo, hi) = eig_extremes(&s).unwrap();
        assert!(lo <= hi);
        for _ in 0..100 {
            let x = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let rq = (x.transpose() * &s * &x)[0] / x.dot(&x);
            assert!(lo - 1e-12 <= rq && rq <= hi + 1e-12);
        }
    }

    #[test]
    fn eig_extremes_rejects_asymmetry() {
        let s = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(eig_extremes(&s), Err(Error::NonSymmetric { .. })));
    }

    #[test]
    fn degenerate_matrix_normal_returns_mean() {
        let mean = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let law = MatrixNormal::new(mean.clone(), Mat::zeros(6, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(sample_matrix_normal(&law, &mut rng).unwrap(), mean);
    }

    #[test]
    fn matrix_normal_is_deterministic_per_seed() {
        let law = MatrixNormal::new(Mat::zeros(2, 2), identity(4)).unwrap();
        let a = sample_matrix_normal(&law, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_matrix_normal(&law, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_normal_rejects_indefinite_cov() {
        let cov = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -0.5, 1.0, 1.0]));
        assert!(matches!(
            MatrixNormal::new(Mat::zeros(2, 2), cov),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn matrix_normal_second_moments() {
        let law = MatrixNormal::new(Mat::zeros(2, 2), identity(4)).unwrap();
        let sampler = law.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut acc = Mat::zeros(4, 4);
        for _ in 0..draws {
            let v = vec_t(&sampler.sample(&mut rng));
            acc += &v * v.transpose();
        }
        acc /= draws as f64;
        assert!(rel_frobenius(&acc, &identity(4)) < 0.05);
    }

    #[test]
    fn identity_transform_returns_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_mat(&mut rng, 6, 6);
        let lambda = &a * a.transpose();
        let t = AffineTransform::identity(2, 3);
        assert_eq!(transform_cov_block(&t, &t, &lambda).unwrap(), lambda);
    }

    #[test]
    fn vanishing_terms_leave_single_cross_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_mat(&mut rng, 4, 4);
        let lambda = &a * a.transpose();
        let ti = AffineTransform::new(
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            Mat::zeros(2, 2),
            rand_mat(&mut rng, 2, 2),
            Mat::zeros(2, 2),
        )
        .unwrap();
        let tj = AffineTransform::new(
            Mat::zeros(2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            Mat::zeros(2, 2),
        )
        .unwrap();
        let expected = kron(&ti.kappa, &ti.iota.transpose())
            * &lambda
            * kron(&tj.alpha.transpose(), &tj.beta);
        let got = transform_cov_block(&ti, &tj, &lambda).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-13);
    }

    #[test]
    fn transform_cov_block_rejects_mismatched_inputs() {
        let t1 = AffineTransform::identity(2, 2);
        let t2 = AffineTransform::identity(3, 2);
        assert!(matches!(
            transform_cov_block(&t1, &t2, &identity(4)),
            Err(Error::DimMismatch(_))
        ));
        assert!(matches!(
            AffineTransform::new(
                identity(2),
                identity(2),
                identity(3),
                identity(2),
                Mat::zeros(2, 2)
            ),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn transform_cov_block_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let random_transform = |rng: &mut ChaCha8Rng| {
            AffineTransform::new(
                rand_mat(rng, 2, 2),
                rand_mat(rng, 2, 2),
                rand_mat(rng, 2, 2),
                rand_mat(rng, 2, 2),
                rand_mat(rng, 2, 2),
            )
            .unwrap()
        };
        let ti = random_transform(&mut rng);
        let tj = random_transform(&mut rng);
        let lambda = identity(4);
        let sampler = MatrixNormal::new(Mat::zeros(2, 2), lambda.clone())
            .unwrap()
            .sampler()
            .unwrap();
        let draws = 100_000;
        let mut sum_i = Vector::zeros(4);
        let mut sum_j = Vector::zeros(4);
        let mut cross = Mat::zeros(4, 4);
        for _ in 0..draws {
            let y = sampler.sample(&mut rng);
            // sample Y directly and evaluate the transforms entrywise
            let ui = vec_t(&ti.apply(&y));
            let uj = vec_t(&tj.apply(&y));
            cross += &ui * uj.transpose();
            sum_i += ui;
            sum_j += uj;
        }
        let nd = draws as f64;
        let empirical = cross / nd - (&sum_i / nd) * (&sum_j / nd).transpose();
        let formula = transform_cov_block(&ti, &tj, &lambda).unwrap();
        assert!(rel_frobenius(&empirical, &formula) < 0.10);
    }

    #[test]
    fn stacked_cov_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = rand_mat(&mut rng, 6, 6);
        let lambda = &a * a.transpose();
        let ts: Vec<AffineTransform> = (0..4)
            .map(|_| {
                AffineTransform::new(
                    rand_mat(&mut rng, 2, 2),
                    rand_mat(&mut rng, 3, 3),
                    rand_mat(&mut rng, 2, 2),
                    rand_mat(&mut rng, 3, 3),
                    Mat::zeros(2, 3),
                )
                .unwrap()
            })
            .collect();
        let full = stacked_cov(&ts, &lambda).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let bij = transform_cov_block(&ts[i], &ts[j], &lambda).unwrap();
                let bji = transform_cov_block(&ts[j], &ts[i], &lambda).unwrap();
                assert!((bij.transpose() - bji).norm() <= 1e-12 * bij.norm().max(1.0));
            }
        }
        let (lo, hi) = eig_extremes(&symmetrize(&full)).unwrap();
        assert!(lo >= -1e-8 * hi);
    }

    proptest! {
        #[test]
        fn vec_unvec_roundtrip(rows in 1usize..=8, cols in 1usize..=8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rand_mat(&mut rng, rows, cols);
            prop_assert_eq!(unvec(&vec(&m), rows, cols).unwrap(), m.clone());
            prop_assert_eq!(unvec_t(&vec_t(&m), rows, cols).unwrap(), m);
        }

        #[test]
        fn kron_is_associative_and_mixed(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m: Vec<Mat> = (0..4).map(|_| rand_mat(&mut rng, 3, 3)).collect();
            let l = kron(&kron(&m[0], &m[1]), &m[2]);
            let r = kron(&m[0], &kron(&m[1], &m[2]));
            prop_assert!(rel_frobenius(&l, &r) <= 1e-12);
            let lhs = kron(&m[0], &m[1]) * kron(&m[2], &m[3]);
            let rhs = kron(&(&m[0] * &m[2]), &(&m[1] * &m[3]));
            prop_assert!(rel_frobenius(&lhs, &rhs) <= 1e-12);
        }

        #[test]
        fn eig_extremes_shift_with_identity(seed in any::<u64>(), c in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = rand_sym(&mut rng, 4);
            let (lo, hi) = eig_extremes(&s).unwrap();
            let (lo2, hi2) = eig_extremes(&(&s + identity(4) * c)).unwrap();
            prop_assert!((lo2 - lo - c).abs() <= 1e-10);
            prop_assert!((hi2 - hi - c).abs() <= 1e-10);
        }

        #[test]
        fn transposed_blocks_swap(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_mat(&mut rng, 4, 4);
            let lambda = &a * a.transpose();
            let mk = |rng: &mut ChaCha8Rng| AffineTransform::new(
                rand_mat(rng, 2, 2), rand_mat(rng, 2, 2),
                rand_mat(rng, 2, 2), rand_mat(rng, 2, 2), Mat::zeros(2, 2)).unwrap();
            let ti = mk(&mut rng);
            let tj = mk(&mut rng);
            let bij = transform_cov_block(&ti, &tj, &lambda).unwrap();
            let bji = transform_cov_block(&tj, &ti, &lambda).unwrap();
            prop_assert!((bij.transpose() - bji).norm() <= 1e-12 * bij.norm().max(1.0));
        }
    }
}
