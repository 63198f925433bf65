//! Statistician-vs-nature zero-sum game for the treatment problem, solved by
//! a double oracle over finitely supported priors and threshold rules.
//!
//! The solver rediscovers the closed-form equilibrium (threshold-zero rule
//! against a symmetric two-point prior at `±Δ*`) without using it, which makes
//! it an independent check on the limit-experiment formulas. Nature's risk
//! depends on `h` only through the effect `Δ = μ̇₀ᵀh`, so the search over
//! priors runs on the scalar effect and symmetric atom pairs.

use crate::limit_exp::LimitSpec;
use crate::numeric::{log_expm1, log_norm_cdf, maximize_1d};
use crate::tilt::{DiscretePrior, EXP_GUARD};
use crate::{Error, Result};

/// Number of grid points for signal-space Bayes-response evaluation.
pub const SIGNAL_GRID_POINTS: usize = 4001;

/// Tolerance within which new support atoms / thresholds are considered
/// duplicates of existing ones.
pub const DEDUP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Treat iff signal >= threshold.
    Geq,
    /// Treat iff signal <= threshold.
    Leq,
}

/// A half-line treatment rule on the efficient signal. Thresholds of `-inf`
/// (with [`Direction::Geq`]) and `+inf` encode always-treat and never-treat.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ThresholdRule {
    pub threshold: f64,
    pub direction: Direction,
}

impl ThresholdRule {
    pub fn geq(threshold: f64) -> Self {
        Self {
            threshold,
            direction: Direction::Geq,
        }
    }

    pub fn always_treat() -> Self {
        Self::geq(f64::NEG_INFINITY)
    }

    pub fn treats(&self, signal: f64) -> bool {
        match self.direction {
            Direction::Geq => signal >= self.threshold,
            Direction::Leq => signal <= self.threshold,
        }
    }

    fn close_to(&self, other: &ThresholdRule) -> bool {
        self.direction == other.direction
            && (self.threshold == other.threshold
                || (self.threshold - other.threshold).abs() <= DEDUP_TOL)
    }
}

/// Tilted frequentist risk of a threshold rule at effect `Δ`:
/// `1 + (e^{|Δ|/λ} - 1)·P(wrong action)`.
pub fn rule_risk(rule: &ThresholdRule, effect: f64, lambda: f64, sigma: f64) -> Result<f64> {
    if effect.abs() / lambda > EXP_GUARD {
        return Err(Error::OverflowGuard(effect.abs() / lambda));
    }
    Ok(1.0 + log_rule_excess(rule, effect, lambda, sigma).exp())
}

// ln of (e^{|Δ|/λ} - 1)·P(rule takes the wrong action at Δ); -inf at Δ = 0.
fn log_rule_excess(rule: &ThresholdRule, effect: f64, lambda: f64, sigma: f64) -> f64 {
    if effect == 0.0 {
        return f64::NEG_INFINITY;
    }
    // P(no treat) = Φ((t-Δ)/σ) for Geq, 1 - that for Leq.
    let z_no_treat = match rule.direction {
        Direction::Geq => (rule.threshold - effect) / sigma,
        Direction::Leq => (effect - rule.threshold) / sigma,
    };
    let log_p_wrong = if effect > 0.0 {
        log_norm_cdf(z_no_treat)
    } else {
        log_norm_cdf(-z_no_treat)
    };
    log_expm1(effect.abs() / lambda) + log_p_wrong
}

/// Bayes response of the statistician to a fixed prior over local parameters.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BayesResponse {
    pub rule: ThresholdRule,
    /// Whether the optimal treat-set on the signal grid is a half-line; when
    /// it is not, `rule` is the best-fitting threshold and `table` carries the
    /// exact grid decisions.
    pub half_line: bool,
    pub table: Option<Vec<(f64, bool)>>,
}

/// Posterior decision rule against `prior` (atoms are local parameters `h` of
/// dimension `spec.dim()`): at each signal value, treat iff the
/// posterior-weighted tilted loss of treating is at most that of not
/// treating. Evaluated on a signal grid over `[-10σ, 10σ]`; a half-line
/// treat-set is refined to a threshold by bisection.
pub fn bayes_response_treatment(
    prior: &DiscretePrior,
    spec: &LimitSpec,
    lambda: f64,
) -> Result<BayesResponse> {
    let sigma = spec.sigma();
    let s2 = sigma * sigma;
    let mut effects = Vec::with_capacity(prior.support.len());
    for atom in &prior.support {
        let d = spec.effect_of(atom)?;
        if d.abs() / lambda > EXP_GUARD {
            return Err(Error::OverflowGuard(d.abs() / lambda));
        }
        effects.push(d);
    }
    // Tilted loss difference treat-vs-not at each atom.
    let diff: Vec<f64> = effects
        .iter()
        .map(|&d| ((-d).max(0.0) / lambda).exp() - (d.max(0.0) / lambda).exp())
        .collect();
    // D(s) = Σ wᵢ·f(s|Δᵢ)·diffᵢ, up to a positive factor; treat iff D <= 0.
    let d_at = |s: f64| -> f64 {
        let exps: Vec<f64> = effects.iter().map(|&d| (d * s - 0.5 * d * d) / s2).collect();
        let amax = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        effects
            .iter()
            .enumerate()
            .map(|(i, _)| prior.weights[i] * (exps[i] - amax).exp() * diff[i])
            .sum()
    };
    let n = SIGNAL_GRID_POINTS;
    let lo = -10.0 * sigma;
    let step = 20.0 * sigma / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    let treat: Vec<bool> = grid.iter().map(|&s| d_at(s) <= 0.0).collect();

    let transitions: Vec<usize> = (0..n - 1).filter(|&i| treat[i] != treat[i + 1]).collect();
    let bisect = |mut a: f64, mut b: f64| -> f64 {
        // D changes sign on [a, b]; locate the boundary.
        let fa = d_at(a);
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            if (d_at(mid) > 0.0) == (fa > 0.0) {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    match transitions.len() {
        0 => {
            let rule = if treat[0] {
                ThresholdRule::always_treat()
            } else {
                ThresholdRule::geq(f64::INFINITY)
            };
            Ok(BayesResponse {
                rule,
                half_line: true,
                table: None,
            })
        }
        1 => {
            let i = transitions[0];
            let t = bisect(grid[i], grid[i + 1]);
            let direction = if treat[i + 1] {
                Direction::Geq
            } else {
                Direction::Leq
            };
            Ok(BayesResponse {
                rule: ThresholdRule {
                    threshold: t,
                    direction,
                },
                half_line: true,
                table: None,
            })
        }
        _ => {
            // Not a half-line: fit the threshold rule with the fewest grid
            // disagreements and return the table alongside.
            let mut best = (usize::MAX, ThresholdRule::geq(0.0));
            for &i in &transitions {
                let t = 0.5 * (grid[i] + grid[i + 1]);
                for direction in [Direction::Geq, Direction::Leq] {
                    let rule = ThresholdRule {
                        threshold: t,
                        direction,
                    };
                    let miss = grid
                        .iter()
                        .zip(&treat)
                        .filter(|(&s, &d)| rule.treats(s) != d)
                        .count();
                    if miss < best.0 {
                        best = (miss, rule);
                    }
                }
            }
            Ok(BayesResponse {
                rule: best.1,
                half_line: false,
                table: Some(grid.into_iter().zip(treat).collect()),
            })
        }
    }
}

/// Nature's best response to a fixed rule: the risk-maximizing local
/// parameter with effect in `[-h_budget, h_budget]`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NatureResponse {
    pub h: Vec<f64>,
    pub effect: f64,
    pub risk: f64,
}

pub fn nature_best_response(
    rule: &ThresholdRule,
    spec: &LimitSpec,
    lambda: f64,
    h_budget: f64,
) -> Result<NatureResponse> {
    if !(h_budget > 0.0) || !h_budget.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "nature_best_response: h_budget = {h_budget}, must be positive"
        )));
    }
    if h_budget / lambda > EXP_GUARD {
        return Err(Error::OverflowGuard(h_budget / lambda));
    }
    let sigma = spec.sigma();
    let obj = |d: f64| log_rule_excess(rule, d, lambda, sigma);
    // Maximize on each sign branch; a boundary maximum is legitimate (the
    // budget binds), so a bracket failure falls back to the endpoint.
    let branch = |lo: f64, hi: f64| -> Result<(f64, f64)> {
        match maximize_1d(obj, lo, hi, 1e-9) {
            Ok(p) => Ok(p),
            Err(Error::BracketFailure { at, .. }) => Ok((at, obj(at))),
            Err(e) => Err(e),
        }
    };
    let neg = branch(-h_budget, 0.0)?;
    let pos = branch(0.0, h_budget)?;
    let (effect, log_excess) = if pos.1 >= neg.1 { pos } else { neg };
    Ok(NatureResponse {
        h: spec.h_for_effect(effect),
        effect,
        risk: 1.0 + log_excess.exp(),
    })
}

/// Approximate saddle point of the treatment game.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GameSolution {
    /// Least-favorable prior found (atoms are local parameters `h`).
    pub prior: DiscretePrior,
    pub rule: ThresholdRule,
    /// Worst-case risk of `rule` over the effect budget (upper bound on the
    /// game value).
    pub upper_value: f64,
    /// Bayes risk of the best response to `prior` (lower bound).
    pub lower_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

const FICTITIOUS_PLAY_ROUNDS: usize = 10_000;

// Solve the restricted matrix game (nature maximizes over rows, statistician
// minimizes over columns). Returns nature's mixed strategy over rows.
// A pure-saddle scan resolves these small games exactly in the common case;
// otherwise fictitious play approximates the mixture.
fn restricted_game_prior(a: &[Vec<f64>]) -> Vec<f64> {
    let (nr, nc) = (a.len(), a[0].len());
    // Pure saddle: entry that is max in its column and min in its row.
    for j in 0..nr {
        for k in 0..nc {
            let v = a[j][k];
            let col_max = (0..nr).all(|j2| a[j2][k] <= v + 1e-12);
            let row_min = (0..nc).all(|k2| a[j][k2] >= v - 1e-12);
            if col_max && row_min {
                let mut p = vec![0.0; nr];
                p[j] = 1.0;
                return p;
            }
        }
    }
    // Fictitious play.
    let mut row_counts = vec![0.0f64; nr];
    let mut col_counts = vec![0.0f64; nc];
    let mut row_payoff = vec![0.0f64; nr]; // cumulative payoff of each row vs col history
    let mut col_payoff = vec![0.0f64; nc];
    let mut row = 0usize;
    let mut col = 0usize;
    for _ in 0..FICTITIOUS_PLAY_ROUNDS {
        for j in 0..nr {
            row_payoff[j] += a[j][col];
        }
        for k in 0..nc {
            col_payoff[k] += a[row][k];
        }
        row_counts[row] += 1.0;
        col_counts[col] += 1.0;
        row = (0..nr)
            .max_by(|&x, &y| row_payoff[x].total_cmp(&row_payoff[y]))
            .unwrap();
        col = (0..nc)
            .min_by(|&x, &y| col_payoff[x].total_cmp(&col_payoff[y]))
            .unwrap();
    }
    let total: f64 = row_counts.iter().sum();
    row_counts.iter().map(|c| c / total).collect()
}

// Symmetric prior over ± each nonneg effect with pair weights p (the zero
// effect keeps its full weight), mapped into h-space.
fn pair_prior(spec: &LimitSpec, atoms: &[f64], p: &[f64]) -> Result<DiscretePrior> {
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (&d, &w) in atoms.iter().zip(p) {
        if w <= 0.0 {
            continue;
        }
        if d == 0.0 {
            support.push(spec.h_for_effect(0.0));
            weights.push(w);
        } else {
            support.push(spec.h_for_effect(-d));
            weights.push(0.5 * w);
            support.push(spec.h_for_effect(d));
            weights.push(0.5 * w);
        }
    }
    DiscretePrior::new(support, weights)
}

/// Double-oracle solver. Nature's strategies are symmetric effect pairs
/// `±Δ`, the statistician's are threshold rules; each iteration re-solves the
/// restricted matrix game, then adds both players' best responses to the
/// strategy pools. Stops when the (monotone) bound gap falls below `tol`;
/// a non-converged run returns the best solution found with
/// `converged = false`.
pub fn solve_treatment_game(
    spec: &LimitSpec,
    lambda: f64,
    h_budget: f64,
    max_iters: usize,
    tol: f64,
) -> Result<GameSolution> {
    if !(tol > 0.0) || max_iters == 0 {
        return Err(Error::InvalidArgument(
            "solve_treatment_game: need tol > 0 and max_iters >= 1".into(),
        ));
    }
    if h_budget / lambda > EXP_GUARD {
        return Err(Error::OverflowGuard(h_budget / lambda));
    }
    let sigma = spec.sigma();
    let pair_risk = |d: f64, rule: &ThresholdRule| -> f64 {
        0.5 * (1.0 + log_rule_excess(rule, d, lambda, sigma).exp())
            + 0.5 * (1.0 + log_rule_excess(rule, -d, lambda, sigma).exp())
    };

    let mut atoms: Vec<f64> = vec![0.0];
    let mut rules: Vec<ThresholdRule> = vec![ThresholdRule::geq(0.0)];
    let mut best_lower = f64::NEG_INFINITY;
    let mut best_upper = f64::INFINITY;
    let mut best_prior: Option<DiscretePrior> = None;
    let mut best_rule = rules[0];
    let mut iters = 0usize;

    for iter in 1..=max_iters {
        iters = iter;
        let matrix: Vec<Vec<f64>> = atoms
            .iter()
            .map(|&d| rules.iter().map(|r| pair_risk(d, r)).collect())
            .collect();
        let p = restricted_game_prior(&matrix);
        let prior = pair_prior(spec, &atoms, &p)?;

        let response = bayes_response_treatment(&prior, spec, lambda)?;
        let rule = response.rule;
        // Bayes risk of the exact best response: a lower bound on the value.
        let mut lower = 0.0;
        for (atom, &w) in prior.support.iter().zip(&prior.weights) {
            let d = spec.effect_of(atom)?;
            lower += w * (1.0 + log_rule_excess(&rule, d, lambda, sigma).exp());
        }
        if lower > best_lower {
            best_lower = lower;
            best_prior = Some(prior);
        }
        // Upper-bound candidates: the fresh Bayes response and the restricted
        // game's minimax pure rule. The latter matters when the response
        // degenerates (e.g. always-treat against a point mass at zero);
        // without it the upper envelope can stall far from the value.
        let j_star = (0..rules.len())
            .min_by(|&a, &b| {
                let wa = matrix.iter().map(|row| row[a]).fold(f64::NEG_INFINITY, f64::max);
                let wb = matrix.iter().map(|row| row[b]).fold(f64::NEG_INFINITY, f64::max);
                wa.total_cmp(&wb)
            })
            .expect("rule pool is nonempty");
        let mut candidates = vec![rule];
        if !rules[j_star].close_to(&rule) {
            candidates.push(rules[j_star]);
        }
        let mut grew = false;
        for cand in &candidates {
            // Worst-case risk of the candidate: an upper bound on the value.
            let nature = nature_best_response(cand, spec, lambda, h_budget)?;
            if nature.risk < best_upper {
                best_upper = nature.risk;
                best_rule = *cand;
            }
            let new_atom = nature.effect.abs();
            if !atoms.iter().any(|&d| (d - new_atom).abs() <= DEDUP_TOL) {
                atoms.push(new_atom);
                grew = true;
            }
        }
        if best_upper - best_lower <= tol {
            break;
        }
        if !rules.iter().any(|r| r.close_to(&rule)) {
            rules.push(rule);
            grew = true;
        }
        if !grew {
            // Both best responses already in the pools; the bounds cannot
            // improve further.
            break;
        }
    }
    let gap = best_upper - best_lower;
    Ok(GameSolution {
        prior: best_prior.expect("at least one iteration ran"),
        rule: best_rule,
        upper_value: best_upper,
        lower_value: best_lower,
        gap,
        iterations: iters,
        converged: gap <= tol,
    })
}

/// Equilibrium verification report: (a) is the rule a Bayes response to the
/// prior, (b) is the prior least favorable for the rule (every support atom
/// attains the rule's worst-case risk).
#[derive(Debug, Clone, serde::Serialize)]
pub struct SaddleReport {
    pub bayes_ok: bool,
    pub bayes_worst_violation: f64,
    pub equalizer_ok: bool,
    pub equalizer_worst_violation: f64,
}

impl SaddleReport {
    pub fn is_saddle(&self) -> bool {
        self.bayes_ok && self.equalizer_ok
    }
}

pub fn verify_saddle_point(
    rule: &ThresholdRule,
    prior: &DiscretePrior,
    spec: &LimitSpec,
    lambda: f64,
    tol: f64,
) -> Result<SaddleReport> {
    let sigma = spec.sigma();
    let s2 = sigma * sigma;
    let mut effects = Vec::with_capacity(prior.support.len());
    for atom in &prior.support {
        let d = spec.effect_of(atom)?;
        if d.abs() / lambda > EXP_GUARD {
            return Err(Error::OverflowGuard(d.abs() / lambda));
        }
        effects.push(d);
    }
    let tilt_treat: Vec<f64> = effects.iter().map(|&d| ((-d).max(0.0) / lambda).exp()).collect();
    let tilt_no: Vec<f64> = effects.iter().map(|&d| (d.max(0.0) / lambda).exp()).collect();

    // (a) Bayes-response check on the signal grid: the rule's action must be
    // within tol of the posterior-optimal tilted loss everywhere.
    let n = SIGNAL_GRID_POINTS;
    let lo = -10.0 * sigma;
    let step = 20.0 * sigma / (n - 1) as f64;
    let mut bayes_worst = 0.0f64;
    for i in 0..n {
        let s = lo + step * i as f64;
        let exps: Vec<f64> = effects.iter().map(|&d| (d * s - 0.5 * d * d) / s2).collect();
        let amax = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        let mut loss_treat = 0.0;
        let mut loss_no = 0.0;
        for j in 0..effects.len() {
            let w = prior.weights[j] * (exps[j] - amax).exp();
            norm += w;
            loss_treat += w * tilt_treat[j];
            loss_no += w * tilt_no[j];
        }
        loss_treat /= norm;
        loss_no /= norm;
        let chosen = if rule.treats(s) { loss_treat } else { loss_no };
        bayes_worst = bayes_worst.max(chosen - loss_treat.min(loss_no));
    }

    // (b) Equalizer check: every prior atom must attain the rule's maximum
    // risk over the effect grid.
    let max_effect = effects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let budget = 2.0 * max_effect + 5.0 * sigma;
    let mut max_risk = f64::NEG_INFINITY;
    for i in 0..n {
        let d = -budget + 2.0 * budget * i as f64 / (n - 1) as f64;
        max_risk = max_risk.max(1.0 + log_rule_excess(rule, d, lambda, sigma).exp());
    }
    let mut equalizer_worst = 0.0f64;
    for &d in &effects {
        let r = 1.0 + log_rule_excess(rule, d, lambda, sigma).exp();
        equalizer_worst = equalizer_worst.max(max_risk - r);
    }

    Ok(SaddleReport {
        bayes_ok: bayes_worst <= tol,
        bayes_worst_violation: bayes_worst,
        equalizer_ok: equalizer_worst <= tol,
        equalizer_worst_violation: equalizer_worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_exp::{solve_delta_star, treatment_minimax_value};
    use crate::numeric::SpdMatrix;
    use approx::assert_abs_diff_eq;

    fn unit_spec() -> LimitSpec {
        LimitSpec::scalar(1.0, 1.0).unwrap()
    }

    #[test]
    fn rule_risk_matches_equalizer_formula() {
        // The threshold-zero rule's risk must match the closed form.
        let rule = ThresholdRule::geq(0.0);
        for &d in &[-2.0, -0.5, 0.0, 0.7, 3.0] {
            let a = rule_risk(&rule, d, 1.3, 1.1).unwrap();
            let b = crate::limit_exp::treatment_risk(d, 1.3, 1.1).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn bayes_response_symmetric_two_point() {
        let spec = unit_spec();
        let (d_star, _) = solve_delta_star(1.0, 1.0).unwrap();
        let prior = DiscretePrior::symmetric_two_point(vec![d_star]);
        let resp = bayes_response_treatment(&prior, &spec, 1.0).unwrap();
        assert!(resp.half_line);
        assert_eq!(resp.rule.direction, Direction::Geq);
        assert_abs_diff_eq!(resp.rule.threshold, 0.0, epsilon = 1e-9);
        assert!(resp.rule.treats(0.0));
    }

    #[test]
    fn bayes_response_symmetric_multi_atom() {
        let spec = unit_spec();
        let prior = DiscretePrior::new(
            vec![vec![-2.0], vec![-0.7], vec![0.7], vec![2.0]],
            vec![0.3, 0.2, 0.2, 0.3],
        )
        .unwrap();
        let resp = bayes_response_treatment(&prior, &spec, 0.8).unwrap();
        assert!(resp.half_line);
        assert_abs_diff_eq!(resp.rule.threshold, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn bayes_response_positive_priors_always_treat() {
        let spec = unit_spec();
        let point = DiscretePrior::point_mass(vec![1.5]);
        let resp = bayes_response_treatment(&point, &spec, 1.0).unwrap();
        assert!(resp.half_line);
        assert_eq!(resp.rule.threshold, f64::NEG_INFINITY);

        let (d_star, _) = solve_delta_star(1.0, 1.0).unwrap();
        let shifted = DiscretePrior::new(
            vec![vec![0.5 * d_star], vec![2.5 * d_star]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let resp = bayes_response_treatment(&shifted, &spec, 1.0).unwrap();
        assert!(resp.half_line);
        assert_eq!(resp.rule.threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn nature_response_to_threshold_zero() {
        let spec = unit_spec();
        let rule = ThresholdRule::geq(0.0);
        let resp = nature_best_response(&rule, &spec, 1.0, 10.0).unwrap();
        let (d_star, _) = solve_delta_star(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(resp.effect.abs(), d_star, epsilon = 1e-5);
        assert_abs_diff_eq!(
            resp.risk,
            treatment_minimax_value(1.0, 1.0).unwrap().value,
            epsilon = 1e-9
        );
    }

    #[test]
    fn nature_response_to_always_treat_hits_budget() {
        let spec = unit_spec();
        let resp =
            nature_best_response(&ThresholdRule::always_treat(), &spec, 2.0, 6.0).unwrap();
        assert_abs_diff_eq!(resp.effect, -6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(resp.risk, (6.0f64 / 2.0).exp(), epsilon = 1e-9);
    }

    #[test]
    fn nature_response_untilted_limit() {
        let spec = unit_spec();
        let resp =
            nature_best_response(&ThresholdRule::geq(0.0), &spec, 1e8, 10.0).unwrap();
        assert_abs_diff_eq!(resp.effect.abs(), 0.751_791_524_693_564_5, epsilon = 1e-4);
    }

    #[test]
    fn game_recovers_closed_form() {
        for &lambda in &[1.0, 5.0] {
            let spec = unit_spec();
            let sol = solve_treatment_game(&spec, lambda, 10.0 * lambda, 50, 1e-4).unwrap();
            assert!(sol.converged, "lambda={lambda}: gap {}", sol.gap);
            assert!(sol.gap <= 1e-4);
            assert!(sol.lower_value <= sol.upper_value + 1e-12);
            let lv = treatment_minimax_value(lambda, 1.0).unwrap();
            assert_abs_diff_eq!(sol.upper_value, lv.value, epsilon = 1e-3);
            // Final prior concentrates near ±Δ*.
            let d_star = lv.delta_star.unwrap();
            let mut mass_near = 0.0;
            for (atom, &w) in sol.prior.support.iter().zip(&sol.prior.weights) {
                if (spec.effect_of(atom).unwrap().abs() - d_star).abs() < 1e-3 {
                    mass_near += w;
                }
            }
            assert!(mass_near > 0.99, "lambda={lambda}: mass near delta* = {mass_near}");
            assert_abs_diff_eq!(sol.rule.threshold, 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn game_value_matches_across_lambdas() {
        for &lambda in &[0.5, 2.0] {
            let spec = unit_spec();
            let sol = solve_treatment_game(&spec, lambda, 10.0 * lambda, 50, 1e-4).unwrap();
            let lv = treatment_minimax_value(lambda, 1.0).unwrap();
            assert!((sol.upper_value - lv.value).abs() <= 10.0 * 1e-4);
        }
    }

    #[test]
    fn game_degenerate_budget() {
        let spec = unit_spec();
        let sol = solve_treatment_game(&spec, 1.0, 1e-6, 50, 1e-4).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.upper_value, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn game_scaling_invariance() {
        // Rescaling μ̇₀ leaves the sign rule unchanged and rescales the
        // least-favorable effect per the σ-substitution identity.
        let c = 2.5;
        let spec = LimitSpec::new(SpdMatrix::identity(1), vec![c]).unwrap();
        let sol = solve_treatment_game(&spec, 1.0, 10.0 * c, 50, 1e-4).unwrap();
        assert_abs_diff_eq!(sol.rule.threshold, 0.0, epsilon = 1e-6);
        let (d1, _) = solve_delta_star(1.0 / c, 1.0).unwrap();
        let max_effect = sol
            .prior
            .support
            .iter()
            .map(|h| spec.effect_of(h).unwrap().abs())
            .fold(0.0f64, f64::max);
        assert_abs_diff_eq!(max_effect, c * d1, epsilon = 1e-3);
    }

    #[test]
    fn saddle_verifies_at_equilibrium() {
        let spec = unit_spec();
        let (d_star, _) = solve_delta_star(1.0, 1.0).unwrap();
        let rule = ThresholdRule::geq(0.0);
        let prior = DiscretePrior::symmetric_two_point(vec![d_star]);
        let report = verify_saddle_point(&rule, &prior, &spec, 1.0, 1e-6).unwrap();
        assert!(report.is_saddle(), "{report:?}");
    }

    #[test]
    fn saddle_detects_wrong_prior() {
        let spec = unit_spec();
        let (d_star, _) = solve_delta_star(1.0, 1.0).unwrap();
        let rule = ThresholdRule::geq(0.0);
        let prior = DiscretePrior::symmetric_two_point(vec![d_star + 0.5]);
        let report = verify_saddle_point(&rule, &prior, &spec, 1.0, 1e-6).unwrap();
        assert!(!report.equalizer_ok);
        assert!(report.equalizer_worst_violation > 1e-3);
    }

    #[test]
    fn saddle_detects_non_bayes_rule() {
        let spec = unit_spec();
        let (d_star, _) = solve_delta_star(1.0, 1.0).unwrap();
        let prior = DiscretePrior::symmetric_two_point(vec![d_star]);
        let report =
            verify_saddle_point(&ThresholdRule::always_treat(), &prior, &spec, 1.0, 1e-6)
                .unwrap();
        assert!(!report.bayes_ok);
    }

    #[test]
    fn double_oracle_bounds_ordered_and_monotone() {
        let spec = unit_spec();
        // Tiny tol forces the full iteration budget; bounds stay ordered.
        let sol = solve_treatment_game(&spec, 1.0, 10.0, 3, 1e-16).unwrap();
        assert!(sol.lower_value <= sol.upper_value);
        assert!(sol.gap >= 0.0);
    }
}
