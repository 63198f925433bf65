//! Finite-sample experiment models, estimators, and the Monte Carlo harness
//! that checks convergence of plug-in rules to the limit-experiment values.
//!
//! Simulation runs on per-replication sufficient statistics drawn once and
//! reused across every local parameter, rule, and tilt level (common random
//! numbers): a Bernoulli replication is a single uniform pushed through the
//! binomial inverse CDF, a Gaussian-location replication stores the
//! standardized (mean, median, half-sample mean), and an over-identified
//! moment replication stores the standardized sample mean together with a
//! Wishart draw of the sample covariance. Replications partition across
//! workers in fixed-size chunks keyed by stream index, and accumulation
//! follows chunk order, so results are bit-identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::limit_exp::{
    estimation_minimax_value_for_sigma, treatment_minimax_value,
};
use crate::numeric::{derive_stream, SpdMatrix, StreamSeed};
use crate::tilt::{DiscretePrior, LossKind, TiltedLossSpec, EXP_GUARD};
use crate::{Error, Result};

const SIM_CHUNK: usize = 1024;

/// Hard bounds on Bernoulli success probabilities; local parameters that push
/// past them are an error, never silently clipped.
pub const BERNOULLI_EDGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum Family {
    Bernoulli { theta0: f64 },
    GaussianLocation { theta0: f64, noise_sd: f64 },
    /// Over-identified mean model: `m(Y, μ) = Y - μ·1` with `Y ~ N(mean, Ω)`,
    /// `dim(Y) = p > 1` moments for a scalar `μ`.
    OveridMean { mu0: f64, omega: SpdMatrix },
}

/// A sampling model at sample size `n`, localized as `θ₀ + h/√n` (parametric
/// families) or a mean shift `μ₀ + h/√n` along the model direction
/// (over-identified mean). The structural functional is `μ(θ) = θ - mu_shift`
/// for the parametric families and `μ(P)` itself for the moment model.
#[derive(Debug, Clone)]
pub struct ExperimentModel {
    pub family: Family,
    pub n: usize,
    pub mu_shift: f64,
}

impl ExperimentModel {
    pub fn new(family: Family, n: usize, mu_shift: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("ExperimentModel: n must be >= 1".into()));
        }
        match &family {
            Family::Bernoulli { theta0 } => {
                if !(*theta0 >= BERNOULLI_EDGE && *theta0 <= 1.0 - BERNOULLI_EDGE) {
                    return Err(Error::ParameterOutOfRange(format!(
                        "bernoulli theta0 = {theta0}"
                    )));
                }
            }
            Family::GaussianLocation { noise_sd, .. } => {
                if !(*noise_sd > 0.0) {
                    return Err(Error::InvalidArgument(
                        "gaussian_location: noise_sd must be positive".into(),
                    ));
                }
            }
            Family::OveridMean { omega, .. } => {
                if omega.dim() < 2 {
                    return Err(Error::InvalidArgument(
                        "overid_mean: need at least 2 moments".into(),
                    ));
                }
                if mu_shift != 0.0 {
                    return Err(Error::InvalidArgument(
                        "overid_mean: mu_shift unused; center via mu0".into(),
                    ));
                }
            }
        }
        Ok(Self {
            family,
            n,
            mu_shift,
        })
    }

    /// Effect scale `σ` of the efficient signal: `√(θ₀(1-θ₀))` (Bernoulli),
    /// the noise standard deviation (Gaussian location, unit score scale), or
    /// `√((1ᵀΩ⁻¹1)⁻¹)` (over-identified mean).
    pub fn sigma(&self) -> f64 {
        match &self.family {
            Family::Bernoulli { theta0 } => (theta0 * (1.0 - theta0)).sqrt(),
            Family::GaussianLocation { noise_sd, .. } => *noise_sd,
            Family::OveridMean { omega, .. } => {
                let ones = DVector::repeat(omega.dim(), 1.0);
                omega.quad_form_inv(&ones).recip().sqrt()
            }
        }
    }

    /// Structural value `μ` at local parameter `h`.
    pub fn mu_at(&self, h: f64) -> f64 {
        let root_n = (self.n as f64).sqrt();
        match &self.family {
            Family::Bernoulli { theta0 } => theta0 + h / root_n - self.mu_shift,
            Family::GaussianLocation { theta0, .. } => theta0 + h / root_n - self.mu_shift,
            Family::OveridMean { mu0, .. } => mu0 + h / root_n,
        }
    }

    fn bernoulli_p_at(&self, h: f64) -> Result<f64> {
        let Family::Bernoulli { theta0 } = &self.family else {
            unreachable!("bernoulli only")
        };
        let p = theta0 + h / (self.n as f64).sqrt();
        if !(BERNOULLI_EDGE..=1.0 - BERNOULLI_EDGE).contains(&p) {
            return Err(Error::ParameterOutOfRange(format!(
                "bernoulli success probability {p} at h = {h}"
            )));
        }
        Ok(p)
    }
}

/// Raw data for the dataset-level operations (score, estimate).
#[derive(Debug, Clone)]
pub enum Dataset {
    Scalar(Vec<f64>),
    /// One p-vector of moments-model observations per row.
    Vector(Vec<Vec<f64>>),
}

/// Standardized score statistic `x_n = I₀^{-1/2} n^{-1/2} Σ ψ(Y_i)`; under
/// `h = 0` its large-n distribution approaches N(0, 1).
pub fn score_statistic(model: &ExperimentModel, dataset: &Dataset) -> Result<f64> {
    match (&model.family, dataset) {
        (Family::Bernoulli { theta0 }, Dataset::Scalar(ys)) => {
            require_nonempty(ys.len())?;
            let var = theta0 * (1.0 - theta0);
            if !(var > 0.0) {
                return Err(Error::DegenerateInformation(format!(
                    "bernoulli theta0 = {theta0}"
                )));
            }
            let s: f64 = ys.iter().map(|y| y - theta0).sum();
            Ok(s / (ys.len() as f64 * var).sqrt())
        }
        (Family::GaussianLocation { theta0, noise_sd }, Dataset::Scalar(ys)) => {
            require_nonempty(ys.len())?;
            let s: f64 = ys.iter().map(|y| y - theta0).sum();
            Ok(s / (ys.len() as f64).sqrt() / noise_sd)
        }
        (Family::OveridMean { mu0, omega }, Dataset::Vector(ys)) => {
            require_nonempty(ys.len())?;
            let p = omega.dim();
            let (psi, sigma2) = influence_and_sigma(&vec![-1.0; p], omega)?;
            let mut s = 0.0;
            for y in ys {
                if y.len() != p {
                    return Err(Error::InvalidArgument(
                        "score_statistic: observation dimension mismatch".into(),
                    ));
                }
                // m(Y, μ₀) = Y - μ₀·1
                s += psi.iter().zip(y).map(|(c, v)| c * (v - mu0)).sum::<f64>();
            }
            Ok(s / (ys.len() as f64).sqrt() / sigma2.sqrt())
        }
        _ => Err(Error::InvalidArgument(
            "score_statistic: dataset shape does not match the model family".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Mle,
    SampleMedian,
    HalfSampleMean,
    GmmTwoStep,
    GmmDiag,
    GmmIdentity,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mle => "mle",
            Self::SampleMedian => "sample_median",
            Self::HalfSampleMean => "half_sample_mean",
            Self::GmmTwoStep => "gmm_two_step",
            Self::GmmDiag => "gmm_diag",
            Self::GmmIdentity => "gmm_identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        let kind = match name {
            "mle" => EstimatorKind::Mle,
            "sample_median" => EstimatorKind::SampleMedian,
            "half_sample_mean" => EstimatorKind::HalfSampleMean,
            "gmm_two_step" => EstimatorKind::GmmTwoStep,
            "gmm_diag" => EstimatorKind::GmmDiag,
            "gmm_identity" => EstimatorKind::GmmIdentity,
            other => return Err(Error::UnknownName(format!("estimator '{other}'"))),
        };
        Ok(Self { kind })
    }

    fn check_supported(&self, model: &ExperimentModel) -> Result<()> {
        let ok = match (&model.family, self.kind) {
            (Family::Bernoulli { .. }, EstimatorKind::Mle) => true,
            (
                Family::GaussianLocation { .. },
                EstimatorKind::Mle | EstimatorKind::SampleMedian | EstimatorKind::HalfSampleMean,
            ) => true,
            (
                Family::OveridMean { .. },
                EstimatorKind::GmmTwoStep | EstimatorKind::GmmDiag | EstimatorKind::GmmIdentity,
            ) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "estimator {} is not defined for this model family",
                self.kind.name()
            )))
        }
    }
}

/// Point estimate of the parameter (`θ̂` for parametric families, `μ̂` for the
/// moment model) from a raw dataset.
pub fn estimate(spec: &EstimatorSpec, model: &ExperimentModel, dataset: &Dataset) -> Result<f64> {
    spec.check_supported(model)?;
    match (dataset, spec.kind) {
        (Dataset::Scalar(ys), EstimatorKind::Mle) => {
            require_nonempty(ys.len())?;
            Ok(ys.iter().sum::<f64>() / ys.len() as f64)
        }
        (Dataset::Scalar(ys), EstimatorKind::SampleMedian) => {
            require_nonempty(ys.len())?;
            let mut buf = ys.clone();
            Ok(median_in_place(&mut buf))
        }
        (Dataset::Scalar(ys), EstimatorKind::HalfSampleMean) => {
            require_nonempty(ys.len() / 2)?;
            let half = &ys[..ys.len() / 2];
            Ok(half.iter().sum::<f64>() / half.len() as f64)
        }
        (Dataset::Vector(ys), _) => {
            require_nonempty(ys.len())?;
            let Family::OveridMean { omega, .. } = &model.family else {
                unreachable!("checked above")
            };
            let p = omega.dim();
            let n = ys.len() as f64;
            let mut ybar = DVector::zeros(p);
            for y in ys {
                if y.len() != p {
                    return Err(Error::InvalidArgument(
                        "estimate: observation dimension mismatch".into(),
                    ));
                }
                ybar += DVector::from_column_slice(y);
            }
            ybar /= n;
            let mut s = DMatrix::zeros(p, p);
            for y in ys {
                let d = DVector::from_column_slice(y) - &ybar;
                s += &d * d.transpose();
            }
            s /= n;
            gmm_from_stats(spec.kind, &ybar, &s)
        }
        _ => Err(Error::InvalidArgument(
            "estimate: dataset shape does not match the estimator".into(),
        )),
    }
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let (_, mid, _) = buf.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *mid;
    if n % 2 == 1 {
        hi
    } else {
        let lo = buf[..n / 2]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

// GMM point estimate from the sufficient pair (sample mean, sample
// covariance): μ̂(W) = (1ᵀW1)⁻¹ 1ᵀW Ȳ with W = I, diag(Ω̂)⁻¹, or Ω̂⁻¹ where
// Ω̂(μ) = S + (Ȳ-μ1)(Ȳ-μ1)ᵀ is evaluated at the first-step estimate.
fn gmm_from_stats(kind: EstimatorKind, ybar: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let p = ybar.len();
    let mu1 = ybar.sum() / p as f64;
    if kind == EstimatorKind::GmmIdentity {
        return Ok(mu1);
    }
    let ones = DVector::repeat(p, 1.0);
    let resid = ybar - mu1 * &ones;
    let omega_hat = s + &resid * resid.transpose();
    let w_ones: DVector<f64>;
    let w_ybar: f64;
    match kind {
        EstimatorKind::GmmDiag => {
            let mut inv_diag = DVector::zeros(p);
            for i in 0..p {
                let d = omega_hat[(i, i)];
                if !(d > 0.0) {
                    return Err(Error::SingularWeighting);
                }
                inv_diag[i] = 1.0 / d;
            }
            w_ones = inv_diag.clone();
            w_ybar = inv_diag.dot(ybar);
        }
        EstimatorKind::GmmTwoStep => {
            let chol = omega_hat
                .clone()
                .cholesky()
                .ok_or(Error::SingularWeighting)?;
            let w_on = chol.solve(&ones);
            w_ybar = w_on.dot(ybar);
            w_ones = w_on;
        }
        _ => unreachable!("identity handled above"),
    }
    let denom = w_ones.sum();
    if !(denom.abs() > 1e-300) {
        return Err(Error::SingularWeighting);
    }
    Ok(w_ybar / denom)
}

/// Efficient influence coefficients and asymptotic variance for a linear
/// moment model with gradient `G`: `ψ(m) = -(GᵀΩ⁻¹G)⁻¹ GᵀΩ⁻¹ m`,
/// `σ² = (GᵀΩ⁻¹G)⁻¹`. Returns the coefficient vector applied to the moment
/// vector, normalized so `μ̂ - μ₀ ≈ σ·x_n`.
pub fn influence_and_sigma(g: &[f64], omega: &SpdMatrix) -> Result<(Vec<f64>, f64)> {
    if g.len() != omega.dim() {
        return Err(Error::InvalidArgument(
            "influence_and_sigma: G dimension mismatch".into(),
        ));
    }
    let gv = DVector::from_column_slice(g);
    let quad = omega.quad_form_inv(&gv);
    if !(quad > 0.0) || !quad.is_finite() {
        return Err(Error::SingularOmega);
    }
    let sigma2 = quad.recip();
    let coef = -(omega.inverse() * gv) * sigma2;
    Ok((coef.iter().cloned().collect(), sigma2))
}

/// One finite-difference step of the pathwise-derivative check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PathwiseStep {
    pub step: f64,
    pub forward_diff: f64,
    pub forward_error: f64,
    pub richardson: f64,
    pub richardson_error: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PathwiseReport {
    /// The inner product `⟨ψ, h⟩` the derivative must match.
    pub inner_product: f64,
    pub steps: Vec<PathwiseStep>,
    /// Richardson error ratio between the largest and smallest step;
    /// second-order convergence puts it near `(step_max/step_min)²`.
    pub richardson_error_ratio: f64,
}

/// Verifies the pathwise differentiability of `μ(P)` along a smooth
/// sub-model. The path tilts `N(0, Ω)` by the score `cᵀy + γ(‖y‖² - E‖Y‖²)`:
/// `P_s = N(m_s, Σ_s)` with `Σ_s = (Ω⁻¹ - 2sγI)⁻¹` and `m_s = s·Σ_s c`, so
/// `μ(P_s) = κᵀm_s` (with `κ = Ω⁻¹1/(1ᵀΩ⁻¹1)`) is analytic but nonlinear in
/// `s`, and its derivative at 0 equals `⟨ψ, h⟩ = κᵀΩc` exactly.
pub fn pathwise_derivative_check(
    omega: &SpdMatrix,
    direction: &[f64],
    gamma: f64,
    steps: &[f64],
) -> Result<PathwiseReport> {
    let p = omega.dim();
    if direction.len() != p {
        return Err(Error::InvalidArgument(
            "pathwise_derivative_check: direction dimension mismatch".into(),
        ));
    }
    if steps.is_empty() || steps.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(
            "pathwise_derivative_check: steps must be positive".into(),
        ));
    }
    let c = DVector::from_column_slice(direction);
    let ones = DVector::repeat(p, 1.0);
    let kappa = (omega.inverse() * &ones) / omega.quad_form_inv(&ones);
    let inner = kappa.dot(&(omega.entries() * &c));
    let mu_at = |s: f64| -> Result<f64> {
        let prec = omega.inverse() - 2.0 * s * gamma * DMatrix::identity(p, p);
        let sigma_s = prec
            .cholesky()
            .ok_or_else(|| {
                Error::NotSpd(format!("sub-model covariance invalid at s = {s}"))
            })?
            .inverse();
        Ok(s * kappa.dot(&(sigma_s * &c)))
    };
    let mut rows = Vec::with_capacity(steps.len());
    for &step in steps {
        let fd = (mu_at(step)? - mu_at(0.0)?) / step;
        let fd_half = (mu_at(0.5 * step)? - mu_at(0.0)?) / (0.5 * step);
        let richardson = 2.0 * fd_half - fd;
        rows.push(PathwiseStep {
            step,
            forward_diff: fd,
            forward_error: (fd - inner).abs(),
            richardson,
            richardson_error: (richardson - inner).abs(),
        });
    }
    let max = rows
        .iter()
        .max_by(|a, b| a.step.total_cmp(&b.step))
        .expect("nonempty");
    let min = rows
        .iter()
        .min_by(|a, b| a.step.total_cmp(&b.step))
        .expect("nonempty");
    let ratio = max.richardson_error / min.richardson_error;
    Ok(PathwiseReport {
        inner_product: inner,
        steps: rows,
        richardson_error_ratio: ratio,
    })
}

/// Result of a worst-case Monte Carlo risk search.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RiskReport {
    pub value: f64,
    pub stderr: f64,
    pub worst_h: f64,
    pub reps: usize,
    pub seed: StreamSeed,
    pub n: usize,
    pub lambda: f64,
}

/// Per-grid-point Monte Carlo risk.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GridRisk {
    pub h: f64,
    pub mean: f64,
    pub stderr: f64,
}

// Per-replication sufficient statistics, independent of the local parameter.
enum BaseStats {
    /// One uniform per replication, pushed through the binomial inverse CDF.
    Bernoulli(Vec<f64>),
    /// Standardized (mean, median, half-sample mean) of n N(0,1) draws.
    Gaussian(Vec<[f64; 3]>),
    /// Standardized mean direction `L·z` and sample covariance `S ~ W/n`.
    Overid(Vec<(DVector<f64>, DMatrix<f64>)>),
}

/// Reusable simulation engine: base randomness is drawn once, then shared
/// across local parameters, rules, and losses (common random numbers).
pub struct McEngine {
    model: ExperimentModel,
    stats: BaseStats,
    reps: usize,
    seed: StreamSeed,
}

impl McEngine {
    pub fn new(model: &ExperimentModel, reps: usize, seed: StreamSeed) -> Result<Self> {
        if reps == 0 {
            return Err(Error::InvalidArgument("McEngine: reps must be >= 1".into()));
        }
        let stats = simulate_base(model, reps, seed)?;
        Ok(Self {
            model: model.clone(),
            stats,
            reps,
            seed,
        })
    }

    pub fn model(&self) -> &ExperimentModel {
        &self.model
    }

    /// Monte Carlo tilted risk of the plug-in rule at one local parameter.
    pub fn risk_at(
        &self,
        rule: &EstimatorSpec,
        loss: &TiltedLossSpec,
        h: f64,
    ) -> Result<GridRisk> {
        rule.check_supported(&self.model)?;
        loss.validate()?;
        let n = self.model.n as f64;
        let root_n = n.sqrt();
        let mu_h = self.model.mu_at(h);
        let lambda = loss.lambda;

        // Map the plug-in estimate of μ to the tilted loss.
        let loss_of = |mu_hat: f64| -> f64 {
            match loss.kind {
                LossKind::Estimation => {
                    let z = root_n * (mu_h - mu_hat);
                    (z * z).min(loss.bound_c.expect("estimation carries bound_c"))
                }
                LossKind::Treatment => {
                    let treat = mu_hat >= 0.0;
                    let wrong = treat != (mu_h >= 0.0);
                    let mut l = if wrong { root_n * mu_h.abs() } else { 0.0 };
                    if let Some(k) = loss.trunc_k {
                        l = l.min(k);
                    }
                    l
                }
                LossKind::Linex => {
                    let d = root_n * (mu_hat - mu_h);
                    ((-d).exp() + d - 1.0).min(loss.linex_m.expect("linex carries linex_m"))
                }
            }
        };
        // The untruncated treatment loss is bounded by √n|μ_h| on this grid
        // point; everything else is capped by construction.
        if loss.kind == LossKind::Treatment
            && loss.trunc_k.is_none()
            && root_n * mu_h.abs() / lambda > EXP_GUARD
        {
            return Err(Error::OverflowGuard(root_n * mu_h.abs() / lambda));
        }

        let (sum, sumsq) = match (&self.stats, &self.model.family) {
            (BaseStats::Bernoulli(us), Family::Bernoulli { .. }) => {
                let p = self.model.bernoulli_p_at(h)?;
                let cdf = binomial_cdf(self.model.n, p);
                accumulate(us.iter().map(|&u| {
                    let k = cdf.partition_point(|&c| c < u).min(self.model.n);
                    let theta_hat = k as f64 / n;
                    (loss_of(theta_hat - self.model.mu_shift) / lambda).exp()
                }))
            }
            (BaseStats::Gaussian(stats), Family::GaussianLocation { theta0, noise_sd }) => {
                let theta_h = theta0 + h / root_n;
                let idx = match rule.kind {
                    EstimatorKind::Mle => 0,
                    EstimatorKind::SampleMedian => 1,
                    EstimatorKind::HalfSampleMean => 2,
                    _ => unreachable!("checked above"),
                };
                accumulate(stats.iter().map(|s| {
                    let theta_hat = theta_h + noise_sd * s[idx];
                    (loss_of(theta_hat - self.model.mu_shift) / lambda).exp()
                }))
            }
            (BaseStats::Overid(stats), Family::OveridMean { mu0, omega }) => {
                let p = omega.dim();
                let mean_h = mu0 + h / root_n;
                let ones = DVector::repeat(p, 1.0);
                let mut acc_sum = 0.0;
                let mut acc_sq = 0.0;
                for (lz, s) in stats {
                    let ybar = mean_h * &ones + lz / root_n;
                    let mu_hat = gmm_from_stats(rule.kind, &ybar, s)?;
                    let t = (loss_of(mu_hat) / lambda).exp();
                    acc_sum += t;
                    acc_sq += t * t;
                }
                (acc_sum, acc_sq)
            }
            _ => unreachable!("stats always match the family"),
        };
        let reps = self.reps as f64;
        let mean = sum / reps;
        let var = (sumsq / reps - mean * mean).max(0.0);
        Ok(GridRisk {
            h,
            mean,
            stderr: (var / reps).sqrt(),
        })
    }

    /// Risks across a grid of local parameters under common random numbers.
    pub fn risks_on_grid(
        &self,
        rule: &EstimatorSpec,
        loss: &TiltedLossSpec,
        h_grid: &[f64],
    ) -> Result<Vec<GridRisk>> {
        h_grid.iter().map(|&h| self.risk_at(rule, loss, h)).collect()
    }

    /// Maximum risk over a grid, reported with the attaining grid point.
    pub fn worst_case(
        &self,
        rule: &EstimatorSpec,
        loss: &TiltedLossSpec,
        h_grid: &[f64],
    ) -> Result<RiskReport> {
        if h_grid.is_empty() {
            return Err(Error::InvalidArgument("worst_case: empty grid".into()));
        }
        let risks = self.risks_on_grid(rule, loss, h_grid)?;
        Ok(self.report_from(&risks, loss))
    }

    /// Worst case over the default grid (`points` equispaced effects on
    /// `[-M, M]` in σ-units), refined once at a third of the spacing around
    /// the argmax.
    pub fn worst_case_refined(
        &self,
        rule: &EstimatorSpec,
        loss: &TiltedLossSpec,
        budget_m: f64,
        points: usize,
    ) -> Result<RiskReport> {
        let grid = effect_grid(self.model.sigma(), budget_m, points);
        let mut risks = self.risks_on_grid(rule, loss, &grid)?;
        let step = if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 };
        if step > 0.0 {
            let argmax = risks
                .iter()
                .max_by(|a, b| a.mean.total_cmp(&b.mean))
                .expect("nonempty")
                .h;
            let refine: Vec<f64> = [-2.0, -1.0, 1.0, 2.0]
                .iter()
                .map(|&k| argmax + k * step / 3.0)
                .filter(|h| h.abs() <= budget_m * self.model.sigma() + 1e-12)
                .collect();
            risks.extend(self.risks_on_grid(rule, loss, &refine)?);
        }
        Ok(self.report_from(&risks, loss))
    }

    fn report_from(&self, risks: &[GridRisk], loss: &TiltedLossSpec) -> RiskReport {
        let best = risks
            .iter()
            .max_by(|a, b| a.mean.total_cmp(&b.mean))
            .expect("nonempty");
        RiskReport {
            value: best.mean,
            stderr: best.stderr,
            worst_h: best.h,
            reps: self.reps,
            seed: self.seed,
            n: self.model.n,
            lambda: loss.lambda,
        }
    }
}

/// Default worst-case search grid: `points` equispaced effects over
/// `[-M·σ, M·σ]`.
pub fn effect_grid(sigma: f64, budget_m: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points)
        .map(|i| budget_m * sigma * (2.0 * i as f64 / (points - 1) as f64 - 1.0))
        .collect()
}

/// Monte Carlo tilted risk at a single local parameter.
pub fn mc_tilted_risk(
    model: &ExperimentModel,
    rule: &EstimatorSpec,
    h: f64,
    loss: &TiltedLossSpec,
    reps: usize,
    seed: StreamSeed,
) -> Result<(f64, f64)> {
    let engine = McEngine::new(model, reps, seed)?;
    let r = engine.risk_at(rule, loss, h)?;
    Ok((r.mean, r.stderr))
}

/// Worst-case tilted risk over an explicit grid of local parameters.
pub fn worst_case_risk(
    model: &ExperimentModel,
    rule: &EstimatorSpec,
    loss: &TiltedLossSpec,
    h_grid: &[f64],
    reps: usize,
    seed: StreamSeed,
) -> Result<RiskReport> {
    McEngine::new(model, reps, seed)?.worst_case(rule, loss, h_grid)
}

/// Bayes tilted risk of a prior supported on the evaluated grid; by linearity
/// it can never exceed the grid's worst case.
pub fn bayes_risk_on_grid(prior: &DiscretePrior, risks: &[GridRisk]) -> Result<f64> {
    let mut acc = 0.0;
    for (atom, &w) in prior.support.iter().zip(&prior.weights) {
        if atom.len() != 1 {
            return Err(Error::InvalidArgument(
                "bayes_risk_on_grid: prior atoms must be scalar local parameters".into(),
            ));
        }
        let r = risks
            .iter()
            .find(|r| (r.h - atom[0]).abs() <= 1e-12)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("prior atom {} not on the grid", atom[0]))
            })?;
        acc += w * r.mean;
    }
    Ok(acc)
}

/// One sample size of a convergence study toward the limit value.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub worst_h: f64,
    pub v_star: f64,
    pub ratio: f64,
}

/// Worst-case risk per sample size against the limit-experiment value `V*`
/// at the model's signal scale.
pub fn convergence_study(
    model_at: &dyn Fn(usize) -> Result<ExperimentModel>,
    rule: &EstimatorSpec,
    loss: &TiltedLossSpec,
    budget_m: f64,
    grid_points: usize,
    n_list: &[usize],
    reps: usize,
    seed: StreamSeed,
) -> Result<Vec<ConvergenceRow>> {
    if !n_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "convergence_study: n_list must be strictly increasing".into(),
        ));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let model = model_at(n)?;
        let v_star = limit_value(model.sigma(), loss)?;
        let engine = McEngine::new(&model, reps, seed)?;
        let report = engine.worst_case_refined(rule, loss, budget_m, grid_points)?;
        rows.push(ConvergenceRow {
            n,
            value: report.value,
            stderr: report.stderr,
            worst_h: report.worst_h,
            v_star,
            ratio: report.value / v_star,
        });
    }
    Ok(rows)
}

/// Limit-experiment minimax value matching a loss specification at signal
/// scale σ.
pub fn limit_value(sigma: f64, loss: &TiltedLossSpec) -> Result<f64> {
    match loss.kind {
        LossKind::Estimation => Ok(estimation_minimax_value_for_sigma(sigma, loss)?.value),
        LossKind::Treatment => Ok(treatment_minimax_value(loss.lambda, sigma)?.value),
        LossKind::Linex => crate::limit_exp::linex_minimax_value(
            loss.lambda,
            loss.linex_m.expect("linex carries linex_m"),
            sigma * sigma,
        ),
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RuleRisk {
    pub rule: EstimatorKind,
    pub report: RiskReport,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PairwiseDiff {
    pub better: EstimatorKind,
    pub worse: EstimatorKind,
    /// worse minus better; positive when the ranking is strict.
    pub diff: f64,
    pub combined_stderr: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EfficiencyReport {
    /// Rules sorted by ascending worst-case risk.
    pub ranked: Vec<RuleRisk>,
    pub pairwise: Vec<PairwiseDiff>,
}

/// Worst-case risk per rule under common random numbers, ranked, with
/// pairwise differences and combined standard errors.
pub fn efficiency_comparison(
    model: &ExperimentModel,
    rules: &[EstimatorSpec],
    loss: &TiltedLossSpec,
    h_grid: &[f64],
    reps: usize,
    seed: StreamSeed,
) -> Result<EfficiencyReport> {
    if rules.len() < 2 {
        return Err(Error::InvalidArgument(
            "efficiency_comparison: need at least two rules".into(),
        ));
    }
    let engine = McEngine::new(model, reps, seed)?;
    let mut ranked = Vec::with_capacity(rules.len());
    for rule in rules {
        let report = engine.worst_case(rule, loss, h_grid)?;
        ranked.push(RuleRisk {
            rule: rule.kind,
            report,
        });
    }
    ranked.sort_by(|a, b| a.report.value.total_cmp(&b.report.value));
    let mut pairwise = Vec::new();
    for i in 0..ranked.len() {
        for j in i + 1..ranked.len() {
            let (a, b) = (&ranked[i], &ranked[j]);
            pairwise.push(PairwiseDiff {
                better: a.rule,
                worse: b.rule,
                diff: b.report.value - a.report.value,
                combined_stderr: (a.report.stderr.powi(2) + b.report.stderr.powi(2)).sqrt(),
            });
        }
    }
    Ok(EfficiencyReport { ranked, pairwise })
}

// Binomial CDF via the log-pmf recurrence from k = 0, normalized to guard
// against drift; O(n) build, then a binary search per replication.
fn binomial_cdf(n: usize, p: f64) -> Vec<f64> {
    let mut lp = Vec::with_capacity(n + 1);
    lp.push(n as f64 * (1.0 - p).ln());
    for k in 0..n {
        let last = *lp.last().expect("nonempty");
        lp.push(last + ((n - k) as f64 * p).ln() - ((k + 1) as f64 * (1.0 - p)).ln());
    }
    let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = lp
        .iter()
        .map(|&v| {
            acc += (v - m).exp();
            acc
        })
        .collect();
    let total = acc;
    for c in &mut cdf {
        *c /= total;
    }
    cdf
}

fn simulate_base(model: &ExperimentModel, reps: usize, seed: StreamSeed) -> Result<BaseStats> {
    let chunks = reps.div_ceil(SIM_CHUNK);
    match &model.family {
        Family::Bernoulli { .. } => {
            let us: Vec<Vec<f64>> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = derive_stream(seed.stream(c as u64));
                    let len = SIM_CHUNK.min(reps - c * SIM_CHUNK);
                    (0..len).map(|_| rng.random::<f64>()).collect()
                })
                .collect();
            Ok(BaseStats::Bernoulli(us.into_iter().flatten().collect()))
        }
        Family::GaussianLocation { .. } => {
            let n = model.n;
            let stats: Vec<Vec<[f64; 3]>> = (0..chunks)
                .into_par_iter()
                .map_init(
                    || vec![0.0f64; n],
                    |buf, c| {
                        let mut rng = derive_stream(seed.stream(c as u64));
                        let len = SIM_CHUNK.min(reps - c * SIM_CHUNK);
                        (0..len)
                            .map(|_| {
                                let mut sum = 0.0;
                                let mut half_sum = 0.0;
                                for (i, slot) in buf.iter_mut().enumerate() {
                                    let z: f64 = StandardNormal.sample(&mut rng);
                                    sum += z;
                                    if i < n / 2 {
                                        half_sum += z;
                                    }
                                    *slot = z;
                                }
                                let median = median_in_place(buf);
                                [sum / n as f64, median, half_sum / (n / 2).max(1) as f64]
                            })
                            .collect()
                    },
                )
                .collect();
            Ok(BaseStats::Gaussian(stats.into_iter().flatten().collect()))
        }
        Family::OveridMean { omega, .. } => {
            let p = omega.dim();
            let n = model.n;
            if n <= p {
                return Err(Error::InvalidArgument(
                    "overid_mean: need n > number of moments".into(),
                ));
            }
            let l = omega.cholesky_l();
            let stats: Vec<Vec<(DVector<f64>, DMatrix<f64>)>> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = derive_stream(seed.stream(c as u64));
                    let len = SIM_CHUNK.min(reps - c * SIM_CHUNK);
                    (0..len)
                        .map(|_| {
                            let z =
                                DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
                            let lz = &l * z;
                            // Bartlett decomposition of W_p(n-1, Ω); the
                            // sample covariance is W/n.
                            let mut a = DMatrix::zeros(p, p);
                            for i in 0..p {
                                let df = (n - 1 - i) as f64;
                                let chi: f64 = ChiSquared::new(df)
                                    .expect("df > 0")
                                    .sample(&mut rng);
                                a[(i, i)] = chi.sqrt();
                                for j in 0..i {
                                    a[(i, j)] = StandardNormal.sample(&mut rng);
                                }
                            }
                            let m = &l * a;
                            let s = (&m * m.transpose()) / n as f64;
                            (lz, s)
                        })
                        .collect()
                })
                .collect();
            Ok(BaseStats::Overid(stats.into_iter().flatten().collect()))
        }
    }
}

// Chunked accumulation in fixed order; the iterator order is the replication
// order, so sums are independent of how the base stats were produced.
fn accumulate(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for v in values {
        sum += v;
        sumsq += v * v;
    }
    (sum, sumsq)
}

fn require_nonempty(len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    Ok(())
}
