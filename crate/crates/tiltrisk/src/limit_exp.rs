//! Closed-form optimal rules and minimax values in the Gaussian limit
//! experiment.
//!
//! The experiment observes `x ~ N(I₀^{1/2} h, I)` for a local parameter `h`;
//! the scalar signal `s = μ̇₀ᵀ I₀^{-1/2} x` is sufficient for the effect
//! `Δ = μ̇₀ᵀ h` and satisfies `s ~ N(Δ, σ²)` with `σ² = μ̇₀ᵀ I₀⁻¹ μ̇₀`.
//! Estimation reports `s` itself; treatment assignment thresholds it at zero.
//! Minimax values under the exponential tilt come out in closed form
//! (treatment) or as a one-dimensional Gaussian integral (estimation, linex).

use nalgebra::DVector;

use crate::numeric::{log_norm_cdf, maximize_1d, minimize_1d, norm_cdf, SpdMatrix};
use crate::tilt::{DiscretePrior, LossKind, TiltedLossSpec, EXP_GUARD};
use crate::{Error, Result};

/// Geometry of the limit experiment: information matrix and the gradient of
/// the scalar structural functional.
#[derive(Debug, Clone)]
pub struct LimitSpec {
    info: SpdMatrix,
    mu_dot: DVector<f64>,
    sigma: f64,
}

impl LimitSpec {
    pub fn new(info: SpdMatrix, mu_dot: Vec<f64>) -> Result<Self> {
        if mu_dot.len() != info.dim() {
            return Err(Error::InvalidArgument(format!(
                "LimitSpec: mu_dot has length {} but info is {}x{}",
                mu_dot.len(),
                info.dim(),
                info.dim()
            )));
        }
        if !mu_dot.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("LimitSpec: non-finite mu_dot".into()));
        }
        let mu_dot = DVector::from_vec(mu_dot);
        let sigma2 = info.quad_form_inv(&mu_dot);
        if !(sigma2 > 0.0) {
            return Err(Error::DegenerateInformation(format!(
                "mu_dot' I^-1 mu_dot = {sigma2}, must be positive (mu_dot must be nonzero)"
            )));
        }
        Ok(Self {
            info,
            mu_dot,
            sigma: sigma2.sqrt(),
        })
    }

    /// One-dimensional convenience constructor.
    pub fn scalar(info: f64, mu_dot: f64) -> Result<Self> {
        Self::new(SpdMatrix::scalar(info)?, vec![mu_dot])
    }

    pub fn dim(&self) -> usize {
        self.info.dim()
    }

    pub fn info(&self) -> &SpdMatrix {
        &self.info
    }

    pub fn mu_dot(&self) -> &DVector<f64> {
        &self.mu_dot
    }

    /// Standard deviation of the efficient signal: `σ = √(μ̇₀ᵀ I₀⁻¹ μ̇₀)`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Sufficient scalar signal `s = μ̇₀ᵀ I₀^{-1/2} x`.
    pub fn signal(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "signal: x has length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("signal: non-finite x".into()));
        }
        let xv = DVector::from_column_slice(x);
        Ok((self.mu_dot.transpose() * self.info.inv_sqrt() * xv)[(0, 0)])
    }

    /// Effect `Δ = μ̇₀ᵀ h` of a local parameter.
    pub fn effect_of(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "effect_of: h has length {}, expected {}",
                h.len(),
                self.dim()
            )));
        }
        Ok(self.mu_dot.iter().zip(h).map(|(m, v)| m * v).sum())
    }

    /// Least-favorable direction scaled to a given effect:
    /// `h = (Δ/σ²) I₀⁻¹ μ̇₀`, the unique `h` with `μ̇₀ᵀh = Δ` that minimizes
    /// `hᵀI₀h`.
    pub fn h_for_effect(&self, delta: f64) -> Vec<f64> {
        let dir = self.info.inverse() * &self.mu_dot;
        let scale = delta / (self.sigma * self.sigma);
        dir.iter().map(|v| v * scale).collect()
    }
}

/// A minimax value together with the equilibrium objects that produced it.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LimitValue {
    /// The minimax tilted risk; always >= 1 for nonnegative losses.
    pub value: f64,
    /// Least-favorable effect size (treatment only).
    pub delta_star: Option<f64>,
    /// Least-favorable prior (treatment only; atoms are scalar effects).
    pub lf_prior: Option<DiscretePrior>,
}

/// Minimax-optimal effect estimate: the efficient signal `μ̇₀ᵀ I₀^{-1/2} x`.
/// Independent of the tilt parameter.
pub fn efficient_estimation_rule(spec: &LimitSpec, x: &[f64]) -> Result<f64> {
    spec.signal(x)
}

/// Minimax-optimal treatment assignment: treat iff the signal is >= 0
/// (ties resolve to treat).
pub fn efficient_treatment_rule(spec: &LimitSpec, x: &[f64]) -> Result<bool> {
    Ok(spec.signal(x)? >= 0.0)
}

/// Tilted frequentist risk of the threshold-zero rule at effect `Δ`:
/// `e^{|Δ|/λ} Φ(-|Δ|/σ) + 1 - Φ(-|Δ|/σ)`. Even in `Δ`; equals 1 at `Δ = 0`.
pub fn treatment_risk(effect: f64, lambda: f64, sigma: f64) -> Result<f64> {
    check_pos(lambda, "treatment_risk: lambda")?;
    check_pos(sigma, "treatment_risk: sigma")?;
    if !effect.is_finite() {
        return Err(Error::InvalidArgument("treatment_risk: non-finite effect".into()));
    }
    let a = effect.abs();
    if a / lambda > EXP_GUARD {
        return Err(Error::OverflowGuard(a / lambda));
    }
    let tail = norm_cdf(-a / sigma);
    // exp(a/λ)·Φ(-a/σ) in log space so a large exponent against a tiny tail
    // stays finite.
    let hit = (a / lambda + log_norm_cdf(-a / sigma)).exp();
    Ok(hit + 1.0 - tail)
}

/// Nature's gain `g(Δ) = (e^{Δ/λ} - 1)·Φ(-Δ/σ)`; `treatment_risk = 1 + g(|Δ|)`.
pub fn treatment_gain(effect: f64, lambda: f64, sigma: f64) -> f64 {
    log_treatment_gain(effect, lambda, sigma).exp()
}

fn log_treatment_gain(effect: f64, lambda: f64, sigma: f64) -> f64 {
    crate::numeric::log_expm1(effect / lambda) + log_norm_cdf(-effect / sigma)
}

/// Least-favorable effect size `Δ* = argmax_{Δ>=0} (e^{Δ/λ} - 1)·Φ(-Δ/σ)`.
/// Returns `(Δ*, g(Δ*))`.
pub fn solve_delta_star(lambda: f64, sigma: f64) -> Result<(f64, f64)> {
    check_pos(lambda, "solve_delta_star: lambda")?;
    check_pos(sigma, "solve_delta_star: sigma")?;
    let cap = 1e3 * lambda.max(sigma).max(1.0);
    // The maximizer grows roughly like λ·ln(1 + 1/λ) for small σ and like σ
    // for large; widen until interior.
    let mut hi = 10.0 * (lambda * (1.0f64 / lambda).ln_1p()).max(sigma).max(1.0);
    loop {
        match maximize_1d(|d| log_treatment_gain(d, lambda, sigma), 0.0, hi, 1e-8) {
            Ok((d, lg)) => return Ok((d, lg.exp())),
            Err(Error::BracketFailure { .. }) => {
                if hi >= cap {
                    return Err(Error::NoInteriorMaximum(cap));
                }
                hi = (hi * 2.0).min(cap);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Minimax value of the treatment problem. The value is the equalizer risk at
/// `Δ*`; the least-favorable prior puts weight 1/2 on each of the effects
/// `±Δ*` (see [`least_favorable_prior`] for the d-vector atoms).
pub fn treatment_minimax_value(lambda: f64, sigma: f64) -> Result<LimitValue> {
    let (delta_star, gain) = solve_delta_star(lambda, sigma)?;
    if !gain.is_finite() {
        return Err(Error::OverflowGuard(delta_star / lambda));
    }
    Ok(LimitValue {
        value: 1.0 + gain,
        delta_star: Some(delta_star),
        lf_prior: Some(DiscretePrior::symmetric_two_point(vec![delta_star])),
    })
}

/// Least-favorable two-point prior in the full parameter space: equal weights
/// at `±h*` with `h* = (Δ*/σ²) I₀⁻¹ μ̇₀`, so that `μ̇₀ᵀ h* = Δ*`.
pub fn least_favorable_prior(spec: &LimitSpec, lambda: f64) -> Result<DiscretePrior> {
    let (delta_star, _) = solve_delta_star(lambda, spec.sigma())?;
    Ok(DiscretePrior::symmetric_two_point(
        spec.h_for_effect(delta_star),
    ))
}

/// Minimax value of the estimation problem with truncated squared loss
/// `ℓ_c(z) = min(z², c)`: the efficient rule's risk is the constant
/// `E[e^{ℓ_c(σZ)/λ}]`, which is therefore the minimax value.
pub fn estimation_minimax_value(spec: &LimitSpec, loss: &TiltedLossSpec) -> Result<LimitValue> {
    estimation_minimax_value_for_sigma(spec.sigma(), loss)
}

/// Same as [`estimation_minimax_value`] with the signal scale given directly.
pub fn estimation_minimax_value_for_sigma(
    sigma: f64,
    loss: &TiltedLossSpec,
) -> Result<LimitValue> {
    check_pos(sigma, "estimation_minimax_value: sigma")?;
    if loss.kind != LossKind::Estimation {
        return Err(Error::InvalidArgument(
            "estimation_minimax_value: loss kind must be estimation".into(),
        ));
    }
    loss.validate()?;
    let c = loss.bound_c.expect("estimation spec carries bound_c");
    let value = capped_square_tilt_value(sigma, c, loss.lambda);
    Ok(LimitValue {
        value,
        delta_star: None,
        lf_prior: None,
    })
}

// E[e^{min((σZ)², c)/λ}] for Z ~ N(0,1). The capped tail |Z| > √c/σ is an
// exact Gaussian probability; the interior integrand e^{(σ²/λ - 1/2)z²} is
// smooth, so composite Simpson resolves it to roundoff. Gauss-Hermite is the
// wrong tool here: when σ²/λ approaches 1/2 the product is nearly flat out to
// the kink and the polynomial rule misses it by ~1e-2.
fn capped_square_tilt_value(sigma: f64, c: f64, lambda: f64) -> f64 {
    let t = c.sqrt() / sigma;
    let tail = 2.0 * (c / lambda).exp() * norm_cdf(-t);
    // The standard normal density underflows to exact zero past |z| = 41.
    let b = t.min(41.0);
    let n = 1usize << 17;
    let h = 2.0 * b / n as f64;
    let a_coef = sigma * sigma / lambda;
    let inv_norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let f = |z: f64| inv_norm * ((a_coef - 0.5) * z * z).exp();
    let mut acc = f(-b) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(-b + h * i as f64);
    }
    tail + acc * h / 3.0
}

// Boundary of the truncation region for the linex loss
// l(d) = e^{-d} + d - 1: returns (t_lo < 0, t_hi > 0) with l(t) = m at both,
// so l < m exactly on (t_lo, t_hi).
fn linex_trunc_bounds(m: f64) -> (f64, f64) {
    let l = |t: f64| (-t).exp() + t - 1.0;
    let bisect = |mut a: f64, mut b: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if (l(mid) - m) * (l(a) - m) <= 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + b)
    };
    let lo = bisect(-((2.0 * m + 2.0).ln()), 0.0);
    let hi = bisect(0.0, m + 1.0);
    (lo, hi)
}

// E[e^{min(l(Y+Δ), M)/λ}] - 1 for Y ~ N(0, σ²), computed as an expm1-form so
// the minimizer stays resolvable when λ is huge and the expectation is 1+ε.
// The capped tails are exact Gaussian probabilities; the smooth interior is
// composite Simpson (the integrand's log-slope is at most M/λ, well resolved
// by the step below).
fn linex_objective_excess(
    shift: f64,
    lambda: f64,
    m: f64,
    sigma: f64,
    bounds: (f64, f64),
) -> f64 {
    let (t_lo, t_hi) = bounds;
    let cap = (m / lambda).exp_m1();
    let tails = cap * (norm_cdf((t_lo - shift) / sigma) + norm_cdf((shift - t_hi) / sigma));
    // Restrict to where the Gaussian density is representable; outside it is
    // exactly zero in f64.
    let a = t_lo.max(shift - 41.0 * sigma);
    let b = t_hi.min(shift + 41.0 * sigma);
    if a >= b {
        return tails;
    }
    let n = 16_384usize;
    let h = (b - a) / n as f64;
    let inv_norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let f = |t: f64| {
        let loss = ((-t).exp() + t - 1.0).min(m);
        let z = (t - shift) / sigma;
        (loss / lambda).exp_m1() * inv_norm * (-0.5 * z * z).exp()
    };
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    tails + acc * h / 3.0
}

/// Minimax-optimal shift for the truncated linex loss
/// `l_M(d) = min(e^{-d} + d - 1, M)`:
/// `Δ*_M(λ) = argmin_Δ E[e^{l_M(Y+Δ)/λ}]`, `Y ~ N(0, σ²)`.
pub fn linex_optimal_shift(lambda: f64, m: f64, sigma2: f64) -> Result<f64> {
    check_pos(lambda, "linex_optimal_shift: lambda")?;
    check_pos(sigma2, "linex_optimal_shift: sigma2")?;
    let loss = TiltedLossSpec::linex(lambda, m)?;
    let m = loss.linex_m.expect("linex spec carries linex_m");
    let sigma = sigma2.sqrt();
    let bounds = linex_trunc_bounds(m);
    let lo = -1.0 - sigma2;
    let cap = 1e3 * sigma2.max(1.0);
    let mut hi = 10.0 * sigma2.max(1.0);
    loop {
        match minimize_1d(
            |d| linex_objective_excess(d, lambda, m, sigma, bounds),
            lo,
            hi,
            1e-9,
        ) {
            Ok((d, _)) => return Ok(d),
            Err(Error::BracketFailure { at, .. }) if at > 0.5 * (lo + hi) && hi < cap => {
                hi = (hi * 2.0).min(cap);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Minimized tilted linex risk `E[e^{l_M(Y+Δ*)/λ}]` at the optimal shift.
pub fn linex_minimax_value(lambda: f64, m: f64, sigma2: f64) -> Result<f64> {
    let shift = linex_optimal_shift(lambda, m, sigma2)?;
    let bounds = linex_trunc_bounds(m);
    Ok(1.0 + linex_objective_excess(shift, lambda, m, sigma2.sqrt(), bounds))
}

/// One row of a reference-parameter value profile.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ProfileRow {
    pub theta: f64,
    pub sigma: f64,
    /// Minimax value at this reference point; `None` when the point is
    /// inadmissible (treatment requires `μ(θ) = 0`).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ProfileResult {
    pub rows: Vec<ProfileRow>,
    pub sup_value: f64,
    pub arg_sup: f64,
}

/// Profile of local minimax values over a grid of reference parameters:
/// `σ_θ = |μ̇(θ)|/√(info(θ))`, one minimax value per grid point, and the
/// supremum. For the treatment loss the supremum runs only over grid points
/// with `μ(θ) ≈ 0` (the rule's sign is only pinned down at the zero set).
pub fn reference_value_profile(
    theta_grid: &[f64],
    info_at: &dyn Fn(f64) -> f64,
    mu_at: &dyn Fn(f64) -> f64,
    mu_dot_at: &dyn Fn(f64) -> f64,
    loss: &TiltedLossSpec,
) -> Result<ProfileResult> {
    if theta_grid.is_empty() {
        return Err(Error::InvalidArgument("reference_value_profile: empty grid".into()));
    }
    loss.validate()?;
    let mu_scale = theta_grid
        .iter()
        .map(|&t| mu_at(t).abs())
        .fold(0.0f64, f64::max);
    let zero_tol = 1e-6 * (1.0 + mu_scale);
    let mut rows = Vec::with_capacity(theta_grid.len());
    let mut sup: Option<(f64, f64)> = None;
    for &theta in theta_grid {
        let info = info_at(theta);
        if !(info > 0.0) || !info.is_finite() {
            return Err(Error::DegenerateInformation(format!(
                "info({theta}) = {info}"
            )));
        }
        let md = mu_dot_at(theta);
        if !(md.abs() > 0.0) || !md.is_finite() {
            return Err(Error::DegenerateInformation(format!(
                "mu_dot({theta}) = {md}"
            )));
        }
        let sigma = md.abs() / info.sqrt();
        let admissible = match loss.kind {
            LossKind::Treatment => mu_at(theta).abs() <= zero_tol,
            _ => true,
        };
        let value = if admissible {
            let v = match loss.kind {
                LossKind::Estimation => {
                    estimation_minimax_value_for_sigma(sigma, loss)?.value
                }
                LossKind::Treatment => treatment_minimax_value(loss.lambda, sigma)?.value,
                LossKind::Linex => linex_minimax_value(
                    loss.lambda,
                    loss.linex_m.expect("linex spec carries linex_m"),
                    sigma * sigma,
                )?,
            };
            if sup.is_none_or(|(_, best)| v > best) {
                sup = Some((theta, v));
            }
            Some(v)
        } else {
            None
        };
        rows.push(ProfileRow {
            theta,
            sigma,
            value,
        });
    }
    let (arg_sup, sup_value) = sup.ok_or(Error::EmptyZeroSet)?;
    Ok(ProfileResult {
        rows,
        sup_value,
        arg_sup,
    })
}

fn check_pos(v: f64, what: &str) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} = {v}, must be positive")));
    }
    Ok(())
}
