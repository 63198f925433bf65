//! Deterministic numeric substrate: normal CDF, Gauss-Hermite quadrature,
//! bounded 1-D optimization, SPD matrices, and reproducible random streams.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF, total on the extended reals (NaN maps to NaN).
///
/// Routed through `erfc` so both tails retain full relative accuracy.
#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Checked standard normal CDF: errors on NaN input.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::InvalidArgument("std_normal_cdf: NaN input".into()));
    }
    Ok(norm_cdf(z))
}

/// `ln(e^x - 1)`, stable for both small and large `x`; `-inf` at `x = 0`.
pub fn log_expm1(x: f64) -> f64 {
    if x > 1.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// `ln Φ(z)`, valid far into the lower tail where `Φ(z)` underflows.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z > -25.0 {
        norm_cdf(z).ln()
    } else {
        // Mills-ratio asymptotic: Φ(z) ≈ φ(z)/(-z) · (1 - 1/z² + 3/z⁴).
        let t = -z;
        -0.5 * t * t - (t * (2.0 * std::f64::consts::PI).sqrt()).ln()
            + (1.0 - 1.0 / (t * t) + 3.0 / (t * t * t * t)).ln()
    }
}

/// Gauss-Hermite rule in the Gaussian-expectation convention:
/// `E[f(Z)] ≈ Σ wᵢ f(zᵢ)` for `Z ~ N(0,1)`, with `Σ wᵢ = 1`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Default order for tilted-loss integrands.
pub const DEFAULT_QUAD_ORDER: usize = 80;

impl QuadratureRule {
    /// Builds the rule by Golub-Welsch: eigendecomposition of the Jacobi
    /// matrix of the (physicists') Hermite recurrence, then a change of
    /// variables to the standard-normal weight.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("quadrature order must be positive".into()));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let t = eig.eigenvalues[i];
                let q0 = eig.eigenvectors[(0, i)];
                (SQRT_2 * t, q0 * q0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // Symmetrize nodes about 0 and renormalize weights to sum exactly 1.
        let n = pairs.len();
        for i in 0..n / 2 {
            let z = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
            let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
            pairs[i] = (-z, w);
            pairs[n - 1 - i] = (z, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let wsum: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            order,
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / wsum).collect(),
        })
    }
}

/// `E[f(X)]` for `X ~ N(mean, variance)` by Gauss-Hermite quadrature.
///
/// Exact (to roundoff) for polynomials of degree `2·order − 1`.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(
    f: F,
    mean: f64,
    variance: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gaussian_expectation: variance {variance} must be positive"
        )));
    }
    let sd = variance.sqrt();
    let mut acc = 0.0;
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let x = mean + sd * z;
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { node: x });
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Minimum number of points in the coarse global scan of [`maximize_1d`].
pub const GRID_SCAN_POINTS: usize = 2048;

const GOLDEN_INV: f64 = 0.618_033_988_749_894_9;

///// Two-phase bounded maximizer: a coarse grid scan (>= 1024 points) brackets
/// the global maximum, then golden-section refines the bracketing cell.
///
/// Ties in the grid scan break toward the smallest argument. Errors with
/// `BracketFailure` when the grid maximum sits on an endpoint, so callers can
/// widen the interval. Objective values of `-inf` are tolerated (they simply
/// never win), which lets callers maximize log-transformed objectives that
/// vanish at an endpoint; `NaN` and `+inf` are rejected.
pub fn maximize_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "maximize_1d: bad interval [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("maximize_1d: tol must be positive".into()));
    }
    let n = GRID_SCAN_POINTS;
    let step = (hi - lo) / (n - 1) as f64;
    let mut best_i = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..n {
        let x = lo + step * i as f64;
        let v = f(x);
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::NonFiniteIntegrand { node: x });
        }
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    if best_i == 0 || best_i == n - 1 {
        return Err(Error::BracketFailure {
            at: lo + step * best_i as f64,
            lo,
            hi,
        });
    }
    // Golden-section on the bracketing cell.
    let mut a = lo + step * (best_i - 1) as f64;
    let mut b = lo + step * (best_i + 1) as f64;
    let mut x1 = b - GOLDEN_INV * (b - a);
    let mut x2 = a + GOLDEN_INV * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN_INV * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN_INV * (b - a);
            f1 = f(x1);
        }
    }
    let xm = 0.5 * (a + b);
    let fm = f(xm);
    // Keep whichever evaluation came out best; argmax within tol either way.
    let (xs, vs) = [(xm, fm), (x1, f1), (x2, f2)]
        .into_iter()
        .max_by(|p, q| p.1.partial_cmp(&q.1).unwrap())
        .unwrap();
    if vs >= best_v {
        Ok((xs, vs))
    } else {
        Ok((lo + step * best_i as f64, best_v))
    }
}

/// Bounded minimizer; negates and delegates to [`maximize_1d`].
pub fn minimize_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    let (x, v) = maximize_1d(|x| -f(x), lo, hi, tol)?;
    Ok((x, -v))
}

/// Seed for a value-derived random stream. Distinct `(root_seed,
/// stream_index)` pairs yield independent streams; the same pair yields a
/// bit-identical sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct StreamSeed {
    pub root_seed: u64,
    pub stream_index: u64,
}

impl StreamSeed {
    pub fn new(root_seed: u64, stream_index: u64) -> Self {
        Self { root_seed, stream_index }
    }

    /// Same root, different stream.
    pub fn stream(&self, stream_index: u64) -> Self {
        Self { root_seed: self.root_seed, stream_index }
    }
}

/// Deterministic generator for a stream seed. ChaCha8 keyed by the root seed
/// with the stream index on the dedicated stream counter.
pub fn derive_stream(seed: StreamSeed) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.root_seed);
    rng.set_stream(seed.stream_index);
    rng
}

/// Symmetric positive-definite matrix, validated on construction.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    dim: usize,
    entries: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry (1e-12 relative) and positive-definiteness
    /// (Cholesky must succeed).
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (r, c) = entries.shape();
        if r != c || r == 0 {
            return Err(Error::NotSpd(format!("shape {r}x{c}")));
        }
        let scale = entries.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1.0);
        for i in 0..r {
            for j in (i + 1)..r {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::NotSpd(format!(
                        "asymmetric at ({i},{j}): {} vs {}",
                        entries[(i, j)],
                        entries[(j, i)]
                    )));
                }
            }
        }
        if entries.clone().cholesky().is_none() {
            return Err(Error::NotSpd("Cholesky factorization failed".into()));
        }
        Ok(Self { dim: r, entries })
    }

    pub fn from_rows(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::NotSpd(format!(
                "expected {} entries, got {}",
                dim * dim,
                rows.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, rows))
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, v))
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, entries: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.entries
            .clone()
            .cholesky()
            .expect("validated SPD")
            .inverse()
    }

    /// Symmetric inverse square root via eigendecomposition.
    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        let eig = self.entries.clone().symmetric_eigen();
        let mut d = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            d[(i, i)] = 1.0 / eig.eigenvalues[i].sqrt();
        }
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    }

    /// `vᵀ A⁻¹ v`.
    pub fn quad_form_inv(&self, v: &DVector<f64>) -> f64 {
        let sol = self
            .entries
            .clone()
            .cholesky()
            .expect("validated SPD")
            .solve(v);
        v.dot(&sol)
    }

    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.entries.clone().cholesky().expect("validated SPD").l()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn cdf_trivial_points() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        assert_eq!(std_normal_cdf(f64::INFINITY).unwrap(), 1.0);
        assert_eq!(std_normal_cdf(f64::NEG_INFINITY).unwrap(), 0.0);
        assert!(std_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn cdf_matches_erfc_oracle() {
        // 40-digit reference value for Phi(-1.96).
        assert_abs_diff_eq!(
            norm_cdf(-1.96),
            0.024_997_895_148_220_434,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(norm_cdf(-1.0), 0.158_655_253_931_457_05, epsilon = 1e-15);
    }

    #[test]
    fn cdf_symmetry_and_monotone() {
        let mut z = -8.0;
        let mut prev = 0.0;
        while z <= 8.0 {
            let p = norm_cdf(z);
            assert!((p + norm_cdf(-z) - 1.0).abs() <= 1e-14, "z={z}");
            assert!(p >= prev);
            prev = p;
            z += 0.01;
        }
    }

    #[test]
    fn quadrature_polynomial_exactness() {
        let rule = QuadratureRule::gauss_hermite(8).unwrap();
        assert_abs_diff_eq!(
            gaussian_expectation(|_| 1.0, 3.0, 2.5, &rule).unwrap(),
            1.0,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            gaussian_expectation(|x| x * x, 0.0, 1.0, &rule).unwrap(),
            1.0,
            epsilon = 1e-13
        );
        // E[X^4] = 3 for N(0,1).
        assert_abs_diff_eq!(
            gaussian_expectation(|x| x.powi(4), 0.0, 1.0, &rule).unwrap(),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quadrature_mgf() {
        let rule = QuadratureRule::gauss_hermite(40).unwrap();
        let v = gaussian_expectation(f64::exp, 0.0, 1.0, &rule).unwrap();
        assert_abs_diff_eq!(v, (0.5f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn quadrature_rejects_nonfinite() {
        let rule = QuadratureRule::gauss_hermite(10).unwrap();
        assert!(matches!(
            gaussian_expectation(|x| (x - x) / (x - x), 0.0, 1.0, &rule),
            Err(Error::NonFiniteIntegrand { .. })
        ));
    }

    #[test]
    fn quadrature_shift_invariance() {
        let rule = QuadratureRule::gauss_hermite(30).unwrap();
        let f = |x: f64| (x * 0.3).sin() + x * x;
        let a = gaussian_expectation(f, 1.7, 2.0, &rule).unwrap();
        let b = gaussian_expectation(|x| f(x + 1.7), 0.0, 2.0, &rule).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_vs_monte_carlo() {
        let rule = QuadratureRule::gauss_hermite(80).unwrap();
        let f = |x: f64| ((x * x).min(25.0) / 4.0).exp();
        let q = gaussian_expectation(f, 0.0, 1.0, &rule).unwrap();
        let mut rng = derive_stream(StreamSeed::new(42, 0));
        let n = 1_000_000usize;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = f(z);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((q - mean).abs() <= 4.0 * se, "q={q} mc={mean} se={se}");
    }

    #[test]
    fn maximize_quadratic() {
        let (x, v) = maximize_1d(|x| -(x - 2.0) * (x - 2.0), 0.0, 5.0, 1e-8).unwrap();
        assert_abs_diff_eq!(x, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn maximize_x_phi_against_dense_grid() {
        let f = |x: f64| x * norm_cdf(-x);
        let (x, _) = maximize_1d(f, 0.0, 10.0, 1e-6).unwrap();
        // Independent oracle: dense grid over [0, 10], step 1e-5.
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut t = 0.0;
        while t <= 10.0 {
            let v = f(t);
            if v > best.1 {
                best = (t, v);
            }
            t += 1e-5;
        }
        assert!((x - best.0).abs() <= 2e-5, "x={x} oracle={}", best.0);
        assert_abs_diff_eq!(x, 0.751_791_524_693_564_5, epsilon = 1e-5);
    }

    #[test]
    fn maximize_plateau_and_constant() {
        // A constant has its grid argmax on the boundary: refuse rather than
        // pretend an interior maximum exists.
        assert!(matches!(
            maximize_1d(|_| 3.25, -1.0, 1.0, 1e-8),
            Err(Error::BracketFailure { .. })
        ));
        // An interior plateau is a genuine maximum.
        let (x, v) = maximize_1d(|x: f64| (1.0 - x.abs()).min(0.0), -3.0, 3.0, 1e-8).unwrap();
        assert_eq!(v, 0.0);
        assert!(x.abs() <= 1.0 + 1e-6);
    }

    #[test]
    fn maximize_boundary_is_bracket_failure() {
        assert!(matches!(
            maximize_1d(|x| x, 0.0, 1.0, 1e-8),
            Err(Error::BracketFailure { .. })
        ));
    }

    #[test]
    fn maximize_scale_invariance() {
        let f = |x: f64| (-(x - 0.7) * (x - 0.7)).exp();
        let (x1, _) = maximize_1d(f, 0.0, 2.0, 1e-9).unwrap();
        let (x2, _) = maximize_1d(|x| 37.5 * f(x), 0.0, 2.0, 1e-9).unwrap();
        assert_abs_diff_eq!(x1, x2, epsilon = 1e-8);
    }

    #[test]
    fn streams_are_deterministic() {
        let mut a = derive_stream(StreamSeed::new(7, 3));
        let mut b = derive_stream(StreamSeed::new(7, 3));
        for _ in 0..1000 {
            let x: u64 = a.random();
            let y: u64 = b.random();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn streams_are_uncorrelated() {
        let n = 100_000usize;
        let mut a = derive_stream(StreamSeed::new(11, 0));
        let mut b = derive_stream(StreamSeed::new(11, 1));
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut a);
            let y: f64 = StandardNormal.sample(&mut b);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx / nf * (sy / nf);
        let vx = sxx / nf - (sx / nf) * (sx / nf);
        let vy = syy / nf - (sy / nf) * (sy / nf);
        let corr = cov / (vx * vy).sqrt();
        // 3/sqrt(n) threshold.
        assert!(corr.abs() < 0.01, "corr = {corr}");
    }

    #[test]
    fn bernoulli_mean_within_binomial_bound() {
        let mut rng = derive_stream(StreamSeed::new(5, 9));
        let n = 1_000_000usize;
        let mut ones = 0u64;
        for _ in 0..n {
            if rng.random::<f64>() < 0.5 {
                ones += 1;
            }
        }
        let mean = ones as f64 / n as f64;
        assert!((mean - 0.5).abs() <= 0.0015, "mean = {mean}");
    }

    #[test]
    fn spd_validation() {
        assert!(SpdMatrix::from_rows(2, &[1.0, 0.8, 0.8, 4.0]).is_ok());
        assert!(SpdMatrix::from_rows(2, &[1.0, 0.8, 0.7, 4.0]).is_err());
        assert!(SpdMatrix::from_rows(2, &[1.0, 2.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn spd_inv_sqrt() {
        let m = SpdMatrix::from_rows(2, &[4.0, 0.0, 0.0, 9.0]).unwrap();
        let s = m.inv_sqrt();
        assert_abs_diff_eq!(s[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s[(1, 1)], 1.0 / 3.0, epsilon = 1e-12);
    }
}
