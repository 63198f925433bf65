//! The variational decision criterion: exponential tilting of losses,
//! Donsker-Varadhan risk, phi-divergence conjugates, smooth-ambiguity
//! evaluation, and geometric mixture likelihoods.

use crate::numeric::maximize_1d;
use crate::{Error, Result};

/// Hard cap on exponents fed to `exp`; anything above overflows f64.
pub const EXP_GUARD: f64 = 700.0;

/// Loss family in the limit experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Bounded bowl-shaped loss `min(z^2, bound_c)`.
    Estimation,
    /// Treatment-assignment regret.
    Treatment,
    /// Truncated linex loss.
    Linex,
}

/// Loss family plus tilt parameter and bound/truncation levels.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TiltedLossSpec {
    pub kind: LossKind,
    /// Misspecification multiplier; larger means less misspecification risk.
    pub lambda: f64,
    /// Bound for the estimation loss `min(z^2, bound_c)`.
    pub bound_c: Option<f64>,
    /// Truncation level for the treatment loss `min(K, l)`.
    pub trunc_k: Option<f64>,
    /// Truncation level for the linex loss.
    pub linex_m: Option<f64>,
}

impl TiltedLossSpec {
    pub fn estimation(lambda: f64, bound_c: f64) -> Result<Self> {
        Self::validated(Self {
            kind: LossKind::Estimation,
            lambda,
            bound_c: Some(bound_c),
            trunc_k: None,
            linex_m: None,
        })
    }

    pub fn treatment(lambda: f64, trunc_k: Option<f64>) -> Result<Self> {
        Self::validated(Self { kind: LossKind::Treatment, lambda, bound_c: None, trunc_k, linex_m: None })
    }

    pub fn linex(lambda: f64, linex_m: f64) -> Result<Self> {
        Self::validated(Self {
            kind: LossKind::Linex,
            lambda,
            bound_c: None,
            trunc_k: None,
            linex_m: Some(linex_m),
        })
    }

    /// Re-checks an already-built spec whose fields may have been edited.
    pub fn validate(&self) -> Result<()> {
        Self::validated(self.clone()).map(|_| ())
    }

    fn validated(spec: Self) -> Result<Self> {
        if !(spec.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda {} must be positive", spec.lambda)));
        }
        match spec.kind {
            LossKind::Estimation => {
                let c = spec.bound_c.ok_or_else(|| {
                    Error::InvalidArgument("estimation loss requires bound_c".into())
                })?;
                if !(c > 0.0) {
                    return Err(Error::InvalidArgument("bound_c must be positive".into()));
                }
                if c / spec.lambda > EXP_GUARD {
                    return Err(Error::OverflowGuard(c / spec.lambda));
                }
            }
            LossKind::Treatment => {
                if let Some(k) = spec.trunc_k {
                    if !(k > 0.0) {
                        return Err(Error::InvalidArgument("trunc_k must be positive".into()));
                    }
                    if k / spec.lambda > EXP_GUARD {
                        return Err(Error::OverflowGuard(k / spec.lambda));
                    }
                }
            }
            LossKind::Linex => {
                let m = spec.linex_m.ok_or_else(|| {
                    Error::InvalidArgument("linex loss requires linex_m".into())
                })?;
                if !(m > 0.0) {
                    return Err(Error::InvalidArgument("linex_m must be positive".into()));
                }
                if m / spec.lambda > EXP_GUARD {
                    return Err(Error::OverflowGuard(m / spec.lambda));
                }
            }
        }
        Ok(spec)
    }
}

/// Finitely supported prior over local parameters.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiscretePrior {
    pub support: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl DiscretePrior {
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() || support.is_empty() {
            return Err(Error::InvalidArgument("prior support/weights mismatch".into()));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("prior weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("prior weights sum to {sum}")));
        }
        let dim = support[0].len();
        for (i, a) in support.iter().enumerate() {
            if a.len() != dim {
                return Err(Error::InvalidArgument("prior support dimension mismatch".into()));
            }
            for b in support.iter().skip(i + 1) {
                if a.iter().zip(b).all(|(x, y)| x == y) {
                    return Err(Error::InvalidArgument("prior support points must be distinct".into()));
                }
            }
        }
        Ok(Self { support, weights })
    }

    pub fn point_mass(h: Vec<f64>) -> Self {
        Self { support: vec![h], weights: vec![1.0] }
    }

    /// Equal-weight atoms at `h` and `-h`.
    pub fn symmetric_two_point(h: Vec<f64>) -> Self {
        let neg = h.iter().map(|x| -x).collect();
        Self { support: vec![neg, h], weights: vec![0.5, 0.5] }
    }

    /// One-dimensional support as scalars.
    pub fn scalar_support(&self) -> Vec<f64> {
        self.support.iter().map(|h| h[0]).collect()
    }
}

/// `e^{loss/lambda}`, the exponential tilt of a single loss value.
pub fn tilted_value(loss: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let e = loss / lambda;
    if e > EXP_GUARD {
        return Err(Error::OverflowGuard(e));
    }
    Ok(e.exp())
}

/// Donsker-Varadhan criterion `-λ ln Σ wᵢ e^{-uᵢ/λ}` over a finitely
/// supported model, computed with log-sum-exp stabilization.
///
/// Never exceeds the weighted mean utility; equality iff `u` is constant on
/// the support.
pub fn dv_criterion(utilities: &[f64], weights: &[f64], lambda: f64) -> Result<f64> {
    if utilities.len() != weights.len() || utilities.is_empty() {
        return Err(Error::InvalidArgument("utilities/weights mismatch".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    for &u in utilities {
        if (u / lambda).abs() > EXP_GUARD {
            return Err(Error::OverflowGuard(u / lambda));
        }
    }
    let m = utilities
        .iter()
        .map(|&u| -u / lambda)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = utilities
        .iter()
        .zip(weights)
        .map(|(&u, &w)| w * (-u / lambda - m).exp())
        .sum();
    Ok(-lambda * (m + s.ln()))
}

/// `Σ wᵢ · risk_at(hᵢ)`: the Bayes tilted risk of a discrete prior.
pub fn bayes_tilted_risk<F>(prior: &DiscretePrior, mut risk_at: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut acc = 0.0;
    for (h, &w) in prior.support.iter().zip(&prior.weights) {
        let r = risk_at(h)?;
        if !r.is_finite() {
            return Err(Error::NonFiniteIntegrand { node: r });
        }
        acc += w * r;
    }
    Ok(acc)
}

/// Divergences admissible for the variational risk representation
/// (`φ(x)/x → ∞`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiDivergence {
    Kl,
    NeymanChi2,
}

/// Convex conjugate `φ*(y)`.
///
/// KL (`φ(x) = x ln x`): `φ*(y) = e^{y−1}`. Neyman chi-squared
/// (`φ(x) = (x−1)^2` on `x ≥ 0`): `φ*(y) = y + y²/4` for `y ≥ −2`, else `−1`.
pub fn phi_conjugate(div: PhiDivergence, y: f64) -> Result<f64> {
    match div {
        PhiDivergence::Kl => {
            if y - 1.0 > EXP_GUARD {
                return Err(Error::OverflowGuard(y - 1.0));
            }
            Ok((y - 1.0).exp())
        }
        PhiDivergence::NeymanChi2 => {
            if y >= -2.0 {
                Ok(y + y * y / 4.0)
            } else {
                Ok(-1.0)
            }
        }
    }
}

/// Per-atom conditional loss distribution: loss values and probabilities.
pub type LossSamples = (Vec<f64>, Vec<f64>);

/// Variational phi-divergence risk for a fixed prior:
/// `λ · sup_η { η − Σᵢ wᵢ Σⱼ pᵢⱼ φ*(η + lᵢⱼ/λ) }`,
/// with the inner sup solved by the bounded 1-D maximizer.
///
/// For KL this collapses analytically to the Donsker-Varadhan closed form
/// `−λ ln Σᵢ wᵢ E[e^{l/λ}]`.
pub fn phi_variational_risk<F>(
    div: PhiDivergence,
    prior: &DiscretePrior,
    mut loss_samples_at: F,
    lambda: f64,
    eta_bracket: (f64, f64),
) -> Result<f64>
where
    F: FnMut(&[f64]) -> LossSamples,
{
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let mut scaled: Vec<(f64, f64)> = Vec::new();
    for (h, &w) in prior.support.iter().zip(&prior.weights) {
        let (losses, probs) = loss_samples_at(h);
        if losses.len() != probs.len() {
            return Err(Error::InvalidArgument("loss samples/probs mismatch".into()));
        }
        let psum: f64 = probs.iter().sum();
        for (&l, &p) in losses.iter().zip(&probs) {
            scaled.push((l / lambda, w * p / psum));
        }
    }
    let objective = |eta: f64| -> f64 {
        let mut acc = 0.0;
        for &(x, wp) in &scaled {
            match phi_conjugate(div, eta + x) {
                Ok(v) => acc += wp * v,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        eta - acc
    };
    let (_, sup) = maximize_1d(objective, eta_bracket.0, eta_bracket.1, 1e-10)?;
    Ok(lambda * sup)
}

/// Smooth-ambiguity decision risk
/// `−Σⱼ ϱⱼ (Σᵢ wᵢⱼ risk_at(hᵢⱼ))^{λ/ξ}`.
///
/// At `ξ = λ` this reduces exactly to minus the Bayes tilted risk of the
/// effective prior `Σⱼ ϱⱼ πⱼ`.
pub fn smooth_ambiguity_risk<F>(
    hyperprior: &[(f64, DiscretePrior)],
    mut risk_at: F,
    lambda: f64,
    xi: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(lambda > 0.0) || !(xi > 0.0) {
        return Err(Error::InvalidArgument("lambda and xi must be positive".into()));
    }
    if hyperprior.is_empty() {
        return Err(Error::InvalidArgument("empty hyperprior".into()));
    }
    let wsum: f64 = hyperprior.iter().map(|(w, _)| w).sum();
    if (wsum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("hyperprior weights sum to {wsum}")));
    }
    let expo = lambda / xi;
    let mut acc = 0.0;
    for (w, prior) in hyperprior {
        let inner = bayes_tilted_risk(prior, &mut risk_at)?;
        let powed = if expo == 1.0 { inner } else { inner.powf(expo) };
        if !powed.is_finite() {
            return Err(Error::OverflowGuard(expo * inner.ln()));
        }
        acc += w * powed;
    }
    Ok(-acc)
}

/// Log-density of the geometric mixture `p₁^α p₂^{1−α}`, unnormalized
/// exactly as displayed in the model-selection derivation.
pub fn geometric_mixture_logpdf(logp1: f64, logp2: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0,1]")));
    }
    Ok(alpha * logp1 + (1.0 - alpha) * logp2)
}

/// Normalized variant for a finite outcome space: divides by the normalizer
/// `Σ_y p₁(y)^α p₂(y)^{1−α}` computed by explicit summation.
///
/// The normalizer is θ-dependent in general; both variants are exposed
/// because the minimax problem can be sensitive to the choice.
pub fn geometric_mixture_logpdf_normalized(
    logp1: f64,
    logp2: f64,
    alpha: f64,
    support_logps: &[(f64, f64)],
) -> Result<f64> {
    let un = geometric_mixture_logpdf(logp1, logp2, alpha)?;
    if support_logps.is_empty() {
        return Err(Error::InvalidArgument("empty support for normalizer".into()));
    }
    let logs: Vec<f64> = support_logps
        .iter()
        .map(|&(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    let m = logs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let z = m + logs.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    Ok(un - z)
}
