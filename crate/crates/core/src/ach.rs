//! Achievability (upper) bounds on the minimum excess probability.
//!
//! Every evaluator here is a valid bound for any parameter choice in range;
//! the `optimize_*` wrappers only pick the smallest value from finite
//! candidate sets.

use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::function::gamma::ln_gamma;

use crate::curve::{BoundCurve, Direction, Evaluation};
use crate::error::{Error, Result};
use crate::rd::{solve_joint, solve_r2, Layout, RdSolution};
use crate::source::{build_binomial_class_source, Alphabet, DistortionSpec, ProblemInstance};

/// Spacing of the default γ grid, in bits.
pub const GAMMA_STEP: f64 = 0.1;
const MASS_SUM_TOL: f64 = 1e-9;
/// Largest product alphabet for which every point mass is tried as a Q
/// candidate.
const POINT_MASS_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchParams {
    pub output_distribution: Vec<f64>,
    pub epsilon_prime: f64,
    pub gamma: f64,
}

impl AchParams {
    pub fn validate(&self, expected_len: usize) -> Result<()> {
        check_distribution(&self.output_distribution, expected_len)?;
        check_eps_prime(self.epsilon_prime)?;
        check_gamma(self.gamma)
    }
}

/// Explicit candidate grids; `None` selects the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub gamma: Option<Vec<f64>>,
    pub eps_prime: Option<Vec<f64>>,
}

fn check_distribution(q: &[f64], expected_len: usize) -> Result<()> {
    if q.len() != expected_len {
        return Err(Error::invalid(format!(
            "output distribution has {} entries, expected {expected_len}",
            q.len()
        )));
    }
    if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("output distribution has a negative or non-finite entry"));
    }
    let s: f64 = q.iter().sum();
    if (s - 1.0).abs() > MASS_SUM_TOL {
        return Err(Error::invalid(format!("output distribution sums to {s}")));
    }
    Ok(())
}

fn check_eps_prime(e: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::invalid(format!("epsilon' = {e} outside [0, 1]")));
    }
    Ok(())
}

fn check_gamma(g: f64) -> Result<()> {
    if !(g >= 0.0) || g.is_infinite() {
        return Err(Error::invalid(format!("gamma = {g} must be finite and >= 0")));
    }
    Ok(())
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn point_mass(n: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[at] = 1.0;
    v
}

/// `{0, 0.1, 0.2, ...}` up to `max`, built from integer steps so values
/// like 1.0 are exact.
pub fn default_gamma_grid(max: f64) -> Vec<f64> {
    let steps = if max > 0.0 { (max / GAMMA_STEP).ceil() as usize } else { 0 };
    (0..=steps).map(|k| k as f64 / 10.0).collect()
}

/// Sorted, deduplicated union of finite nonnegative values.
pub(crate) fn merge_grid(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = a
        .into_iter()
        .chain(b)
        .filter(|g| g.is_finite() && *g >= 0.0)
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn pow_m(base: f64, m: usize) -> f64 {
    if m <= i32::MAX as usize {
        base.powi(m as i32)
    } else {
        base.powf(m as f64)
    }
}

// --- general achievability -------------------------------------------------

/// `∫_0^1 E[P[π(X, X̂, Ŷ) > t | X]^M] dt` with optional gradient in `Q`.
fn integral_tail_power(
    pi: &[Vec<f64>],
    p_x: &[f64],
    q: &[f64],
    m: usize,
    mut grad: Option<&mut Vec<f64>>,
) -> f64 {
    let mut total = 0.0;
    let mut order: Vec<usize> = Vec::with_capacity(q.len());
    for (x, row) in pi.iter().enumerate() {
        order.clear();
        order.extend((0..q.len()).filter(|&r| q[r] > 0.0));
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        // Walk breakpoints left to right; `above` is the Q-mass with π > t.
        let mut above: f64 = order.iter().map(|&r| q[r]).sum();
        let mut left = 0.0f64;
        let mut i = 0;
        // Entries at or below 0 never exceed any t in [0, 1).
        while i < order.len() && row[order[i]] <= 0.0 {
            above -= q[order[i]];
            i += 1;
        }
        let mut acc = 0.0;
        loop {
            let right = if i < order.len() { row[order[i]].min(1.0) } else { 1.0 };
            let len = right - left;
            if len > 0.0 {
                let a = above.max(0.0);
                acc += len * pow_m(a, m);
                if let Some(g) = grad.as_deref_mut() {
                    let d = p_x[x] * len * m as f64 * pow_m(a, m - 1);
                    for &r in &order[i..] {
                        g[r] += d;
                    }
                }
            }
            if i >= order.len() || right >= 1.0 {
                break;
            }
            let v = row[order[i]];
            while i < order.len() && row[order[i]] == v {
                above -= q[order[i]];
                i += 1;
            }
            left = right;
        }
        total += p_x[x] * acc;
    }
    total
}

fn thm1_params(m: usize, q: &[f64]) -> serde_json::Value {
    json!({ "theorem": "thm1", "m": m, "output_distribution": q })
}

/// General random-coding bound for a fixed product output distribution `Q`
/// over `X̂ × Ŷ` (entry `a * |Ŷ| + b`).
pub fn thm1_bound(instance: &ProblemInstance, q: &[f64]) -> Result<Evaluation> {
    if instance.is_logloss() {
        return Err(Error::invalid(
            "general achievability needs a finite direct alphabet; use thm5_bound for log-loss",
        ));
    }
    let pi = instance.pi_table()?;
    check_distribution(q, pi[0].len())?;
    let m = instance.codewords();
    let raw = integral_tail_power(&pi, instance.p_x(), q, m, None);
    Ok(Evaluation {
        raw,
        params: thm1_params(m, q),
    })
}

/// Candidate `Q`s: uniform, the joint achiever's output and the product of
/// its marginals, and (on small alphabets) every point mass.
pub fn thm1_candidates(instance: &ProblemInstance) -> Result<Vec<(String, Vec<f64>)>> {
    let sol = solve_joint(
        instance.source(),
        instance.d1(),
        instance.d2(),
        instance.d1_level(),
        instance.d2_level(),
    )
    .ok();
    thm1_candidates_from(instance, sol.as_ref())
}

/// [`thm1_candidates`] with the joint achiever supplied by the caller, so
/// that sweeps over `M` solve it once.
pub fn thm1_candidates_from(
    instance: &ProblemInstance,
    joint: Option<&RdSolution>,
) -> Result<Vec<(String, Vec<f64>)>> {
    let na = instance
        .x_hat_len()
        .ok_or_else(|| Error::invalid("general achievability needs a finite direct alphabet"))?;
    let nb = instance.y_hat_len();
    let n = na * nb;
    let mut out = vec![("uniform".to_string(), uniform(n))];
    if let Some(sol) = joint {
        if !matches!(sol.layout, Layout::Joint { direct, indirect } if direct == na && indirect == nb) {
            return Err(Error::invalid("joint solution does not match the instance alphabets"));
        }
        let joint = sol.output_marginal(instance.p_x());
        let mut ma = vec![0.0; na];
        let mut mb = vec![0.0; nb];
        for (r, v) in joint.iter().enumerate() {
            ma[r / nb] += v;
            mb[r % nb] += v;
        }
        let product = (0..n).map(|r| ma[r / nb] * mb[r % nb]).collect();
        out.push(("joint_output".to_string(), joint));
        out.push(("product_of_marginals".to_string(), product));
    }
    if n <= POINT_MASS_LIMIT {
        out.extend((0..n).map(|r| (format!("point_{r}"), point_mass(n, r))));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thm1Search {
    pub q: Vec<f64>,
    pub eval: Evaluation,
    pub source: String,
}

/// Best `Q` over the candidate set plus `extra`, followed by
/// `refinement_steps` exponentiated-gradient steps from the best
/// full-support candidate.
pub fn thm1_optimize_q(
    instance: &ProblemInstance,
    extra: &[Vec<f64>],
    refinement_steps: usize,
) -> Result<Thm1Search> {
    let mut cands = thm1_candidates(instance)?;
    cands.extend(extra.iter().enumerate().map(|(i, q)| (format!("extra_{i}"), q.clone())));
    thm1_optimize_over(instance, &cands, refinement_steps)
}

/// Best labelled `Q` from `cands`, then refined as in [`thm1_optimize_q`].
pub fn thm1_optimize_over(
    instance: &ProblemInstance,
    cands: &[(String, Vec<f64>)],
    refinement_steps: usize,
) -> Result<Thm1Search> {
    if cands.is_empty() {
        return Err(Error::invalid("no output distribution candidates"));
    }
    let pi = instance.pi_table()?;
    let p_x = instance.p_x();
    let m = instance.codewords();
    let n = pi[0].len();

    let mut best: Option<(f64, usize)> = None;
    let mut best_full: Option<(f64, usize)> = None;
    for (i, (_, q)) in cands.iter().enumerate() {
        check_distribution(q, n)?;
        let v = integral_tail_power(&pi, p_x, q, m, None);
        if best.map_or(true, |(b, _)| v < b) {
            best = Some((v, i));
        }
        if q.iter().all(|&w| w > 0.0) && best_full.map_or(true, |(b, _)| v < b) {
            best_full = Some((v, i));
        }
    }
    let (mut best_v, bi) = best.expect("nonempty candidate list");
    let mut best_q = cands[bi].1.clone();
    let mut label = cands[bi].0.clone();

    if let (Some((_, fi)), true) = (best_full, refinement_steps > 0) {
        let mut q = cands[fi].1.clone();
        let mut step = 1.0;
        let mut grad = vec![0.0; n];
        let mut current = integral_tail_power(&pi, p_x, &q, m, None);
        for _ in 0..refinement_steps {
            grad.iter_mut().for_each(|g| *g = 0.0);
            integral_tail_power(&pi, p_x, &q, m, Some(&mut grad));
            let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            if scale == 0.0 {
                break;
            }
            let mut trial: Vec<f64> = q
                .iter()
                .zip(&grad)
                .map(|(w, g)| w * (-step * g / scale).exp())
                .collect();
            let s: f64 = trial.iter().sum();
            trial.iter_mut().for_each(|w| *w /= s);
            let v = integral_tail_power(&pi, p_x, &trial, m, None);
            if v < current {
                q = trial;
                current = v;
                step *= 1.2;
            } else {
                step *= 0.5;
            }
        }
        // Renormalize exactly once more so the stored Q passes validation.
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|w| *w /= s);
        let v = integral_tail_power(&pi, p_x, &q, m, None);
        if v < best_v {
            best_v = v;
            best_q = q;
            label = "refined".to_string();
        }
    }
    Ok(Thm1Search {
        eval: Evaluation {
            raw: best_v,
            params: thm1_params(m, &best_q),
        },
        q: best_q,
        source: label,
    })
}

// --- threshold-encoder bounds -------------------------------------------

/// `η_x(ε') = P_Ŷ[π'(x, Ŷ) > ε']` for every source symbol.
fn eta(instance: &ProblemInstance, p_y_hat: &[f64], eps_prime: f64) -> Vec<f64> {
    instance
        .indirect_excess_table()
        .iter()
        .map(|row| {
            row.iter()
                .zip(p_y_hat)
                .filter(|(v, _)| **v > eps_prime)
                .map(|(_, w)| w)
                .sum::<f64>()
                .min(1.0)
        })
        .collect()
}

/// Distinct `π'` values in `[0, 1]` together with 0 and 1: `η` is constant
/// between consecutive entries, and the bounds increase in `ε'` there.
pub fn eps_prime_candidates(instance: &ProblemInstance) -> Vec<f64> {
    let vals = instance
        .indirect_excess_table()
        .iter()
        .flatten()
        .copied()
        .filter(|v| *v <= 1.0);
    merge_grid([0.0, 1.0], vals)
}

/// Candidate `P_Ŷ`s: uniform, the indirect achiever's output, and (on small
/// alphabets) every point mass.
pub fn indirect_candidates(instance: &ProblemInstance) -> Vec<(String, Vec<f64>)> {
    let nb = instance.y_hat_len();
    let mut out = vec![("uniform".to_string(), uniform(nb))];
    let level = instance.d2_level();
    if level.is_finite() {
        if let Ok(sol) = solve_r2(instance.source(), instance.d2(), level) {
            out.push(("indirect_output".to_string(), sol.output_marginal(instance.p_x())));
        }
    }
    if nb <= POINT_MASS_LIMIT {
        out.extend((0..nb).map(|b| (format!("point_{b}"), point_mass(nb, b))));
    }
    out
}

fn expected_power(p_x: &[f64], eta: &[f64], m: usize) -> f64 {
    p_x.iter().zip(eta).map(|(p, e)| p * pow_m(*e, m)).sum()
}

fn thm4_raw(e_pow: f64, eps_prime: f64) -> f64 {
    eps_prime * (1.0 - e_pow) + e_pow
}

/// Threshold-encoder bound for the indirect problem (`D1 = ∞`).
pub fn thm4_bound(instance: &ProblemInstance, p_y_hat: &[f64], eps_prime: f64) -> Result<Evaluation> {
    if instance.d1_level() != f64::INFINITY {
        return Err(Error::invalid("indirect achievability needs D1 = inf"));
    }
    check_distribution(p_y_hat, instance.y_hat_len())?;
    check_eps_prime(eps_prime)?;
    let m = instance.codewords();
    let e_pow = expected_power(instance.p_x(), &eta(instance, p_y_hat, eps_prime), m);
    Ok(Evaluation {
        raw: thm4_raw(e_pow, eps_prime),
        params: json!({
            "theorem": "thm4",
            "m": m,
            "output_distribution": p_y_hat,
            "epsilon_prime": eps_prime,
        }),
    })
}

/// Smallest [`thm4_bound`] over `P_Ŷ` candidates (defaults plus `extra`) and
/// the `ε'` grid.
pub fn thm4_optimize(
    instance: &ProblemInstance,
    extra: &[Vec<f64>],
    eps_grid: Option<&[f64]>,
) -> Result<Evaluation> {
    let mut cands: Vec<Vec<f64>> = indirect_candidates(instance).into_iter().map(|c| c.1).collect();
    cands.extend_from_slice(extra);
    let eps = eps_grid.map_or_else(|| eps_prime_candidates(instance), <[f64]>::to_vec);
    if eps.is_empty() {
        return Err(Error::invalid("empty epsilon' grid"));
    }
    let mut best: Option<Evaluation> = None;
    for q in &cands {
        for &e in &eps {
            let ev = thm4_bound(instance, q, e)?;
            if best.as_ref().map_or(true, |b| ev.raw < b.raw) {
                best = Some(ev);
            }
        }
    }
    Ok(best.expect("nonempty candidate sets"))
}

/// `ln(a · b)` where `a` is a count multiplying `ln b`, with `0 · ln 0 = 0`.
fn times_ln(count: f64, ln_base: f64) -> f64 {
    if count == 0.0 {
        0.0
    } else {
        count * ln_base
    }
}

/// `Σ_{k=1}^{M} C(M, k) (M / k) η^{M-k} (1 - η)^k` in the log domain, summed
/// in descending order of magnitude.
pub fn coverage_sum(eta: f64, m: usize) -> f64 {
    binomial_weighted_sum(m, eta.ln(), (1.0 - eta).ln())
}

/// The same sum with `η^k` in place of `(1 - η)^k`.
fn printed_variant_sum(eta: f64, m: usize) -> f64 {
    binomial_weighted_sum(m, eta.ln(), eta.ln())
}

fn binomial_weighted_sum(m: usize, ln_a: f64, ln_b: f64) -> f64 {
    let mf = m as f64;
    let ln_fact_m = ln_gamma(mf + 1.0);
    let mut terms: Vec<f64> = (1..=m)
        .map(|k| {
            let kf = k as f64;
            ln_fact_m - ln_gamma(kf + 1.0) - ln_gamma(mf - kf + 1.0) + mf.ln() - kf.ln()
                + times_ln(mf - kf, ln_a)
                + times_ln(kf, ln_b)
        })
        .filter(|t| *t > f64::NEG_INFINITY)
        .collect();
    if terms.is_empty() {
        return 0.0;
    }
    terms.sort_by(|a, b| b.total_cmp(a));
    let top = terms[0];
    top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>()
}

/// Parts of the log-loss bound that do not depend on `γ`.
#[derive(Debug, Clone)]
struct Thm5Fixed {
    m: usize,
    eps_prime: f64,
    e_pow: f64,
    e_coverage: f64,
    /// `D1 + log2 M - ι_X(x)`: the typical-set term counts `x` once `γ`
    /// exceeds this.
    slack: Vec<f64>,
    p_x: Vec<f64>,
    e_printed: Option<f64>,
}

impl Thm5Fixed {
    fn new(instance: &ProblemInstance, p_y_hat: &[f64], eps_prime: f64, printed: bool) -> Self {
        let m = instance.codewords();
        let p_x = instance.p_x().to_vec();
        let etas = eta(instance, p_y_hat, eps_prime);
        // Group by η so each binomial sum is computed once.
        let mut cache: Vec<(f64, f64, f64)> = Vec::new();
        let mut e_cov = 0.0;
        let mut e_print = 0.0;
        for (p, &e) in p_x.iter().zip(&etas) {
            let (c, pr) = match cache.iter().find(|(k, _, _)| *k == e) {
                Some(&(_, c, pr)) => (c, pr),
                None => {
                    let c = coverage_sum(e, m);
                    let pr = if printed { printed_variant_sum(e, m) } else { 0.0 };
                    cache.push((e, c, pr));
                    (c, pr)
                }
            };
            e_cov += p * c;
            e_print += p * pr;
        }
        let log2_m = (m as f64).log2();
        let d1 = instance.d1_level();
        let slack = instance.info_density().iter().map(|i| d1 + log2_m - i).collect();
        Self {
            m,
            eps_prime,
            e_pow: expected_power(&p_x, &etas, m),
            e_coverage: e_cov,
            slack,
            p_x,
            e_printed: printed.then_some(e_print),
        }
    }

    fn atypical(&self, gamma: f64) -> f64 {
        self.slack
            .iter()
            .zip(&self.p_x)
            .filter(|(s, _)| **s < gamma)
            .map(|(_, p)| p)
            .sum()
    }

    fn terms(&self, gamma: f64) -> [f64; 4] {
        let f = (1.0 - gamma).exp2();
        [
            self.eps_prime * (1.0 - self.e_pow),
            self.e_pow * (1.0 + f),
            f * self.e_coverage,
            self.atypical(gamma),
        ]
    }

    fn raw(&self, gamma: f64) -> f64 {
        self.terms(gamma).iter().sum()
    }

    fn evaluation(&self, gamma: f64, p_y_hat: &[f64]) -> Evaluation {
        let t = self.terms(gamma);
        let raw = t.iter().sum();
        let mut params = json!({
            "theorem": "thm5",
            "m": self.m,
            "output_distribution": p_y_hat,
            "epsilon_prime": self.eps_prime,
            "gamma": gamma,
            "terms": {
                "threshold": t[0],
                "no_acceptable_codeword": t[1],
                "bin_collision": t[2],
                "atypical": t[3],
            },
        });
        if let Some(p) = self.e_printed {
            let f = (1.0 - gamma).exp2();
            params["printed_variant_raw"] = json!(t[0] + t[1] + f * p + t[3]);
        }
        Evaluation { raw, params }
    }

    /// γ values at which the infimum over an interval is attained.
    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.slack.iter().copied()
    }
}

fn check_thm5_instance(instance: &ProblemInstance) -> Result<()> {
    if !instance.is_logloss() {
        return Err(Error::invalid("log-loss achievability needs a log-loss direct distortion"));
    }
    if instance.d1_level().is_nan() || instance.d1_level() < 0.0 {
        return Err(Error::invalid("D1 must be >= 0"));
    }
    Ok(())
}

/// Log-loss joint bound at fixed `(P_Ŷ, ε', γ)`.
pub fn thm5_bound(
    instance: &ProblemInstance,
    p_y_hat: &[f64],
    eps_prime: f64,
    gamma: f64,
) -> Result<Evaluation> {
    check_thm5_instance(instance)?;
    check_distribution(p_y_hat, instance.y_hat_len())?;
    check_eps_prime(eps_prime)?;
    check_gamma(gamma)?;
    Ok(Thm5Fixed::new(instance, p_y_hat, eps_prime, false).evaluation(gamma, p_y_hat))
}

/// Default γ grid for an instance: up to `max ι_X + log2 M`.
pub fn instance_gamma_grid(instance: &ProblemInstance) -> Vec<f64> {
    let max_i = instance.info_density().into_iter().fold(0.0f64, f64::max);
    default_gamma_grid(max_i + (instance.codewords() as f64).log2())
}

/// Smallest [`thm5_bound`] over `P_Ŷ` candidates, the `ε'` grid and the γ
/// grid. The γ candidates always include the breakpoints of the typical-set
/// term, where the infimum over each constant piece is attained.
pub fn thm5_optimize(
    instance: &ProblemInstance,
    extra: &[Vec<f64>],
    grids: &Grids,
) -> Result<Evaluation> {
    let mut cands: Vec<Vec<f64>> = indirect_candidates(instance).into_iter().map(|c| c.1).collect();
    cands.extend_from_slice(extra);
    thm5_search(instance, &cands, grids, false)
}

fn thm5_search(
    instance: &ProblemInstance,
    cands: &[Vec<f64>],
    grids: &Grids,
    printed: bool,
) -> Result<Evaluation> {
    check_thm5_instance(instance)?;
    let eps = grids
        .eps_prime
        .clone()
        .unwrap_or_else(|| eps_prime_candidates(instance));
    if eps.is_empty() {
        return Err(Error::invalid("empty epsilon' grid"));
    }
    let base_gamma = grids.gamma.clone().unwrap_or_else(|| instance_gamma_grid(instance));
    if base_gamma.is_empty() {
        return Err(Error::invalid("empty gamma grid"));
    }
    for g in &base_gamma {
        check_gamma(*g)?;
    }
    let mut best: Option<(f64, Thm5Fixed, f64, usize)> = None;
    for (ci, q) in cands.iter().enumerate() {
        check_distribution(q, instance.y_hat_len())?;
        for &e in &eps {
            check_eps_prime(e)?;
            let fixed = Thm5Fixed::new(instance, q, e, printed);
            let gammas = merge_grid(base_gamma.iter().copied(), fixed.breakpoints());
            for g in gammas {
                let v = fixed.raw(g);
                if best.as_ref().map_or(true, |b| v < b.0) {
                    best = Some((v, fixed.clone(), g, ci));
                }
            }
        }
    }
    let (_, fixed, g, ci) = best.expect("nonempty grids");
    Ok(fixed.evaluation(g, &cands[ci]))
}

// --- worked example ---------------------------------------------------------

/// Log-loss instance over the binomial class source with Hamming inference.
pub fn example_instance(
    m: usize,
    n: usize,
    p: f64,
    d1: f64,
    d2: f64,
    codewords: usize,
) -> Result<ProblemInstance> {
    let source = build_binomial_class_source(m, n, p)?;
    let d2_spec = DistortionSpec::hamming(Alphabet::indexed(m)?);
    ProblemInstance::new(source, DistortionSpec::LogLoss, d2_spec, d1, d2, codewords)
}

/// Upper curve for the binomial class example: uniform `P_Ŷ`, `ε' = 0`, and
/// the infimum over γ of the generic log-loss bound. Each point also records
/// the value obtained with the summand as it is sometimes displayed,
/// `η^{M-k} η^k`, under `printed_variant_raw`.
pub fn example_ach_curve(
    m: usize,
    n: usize,
    p: f64,
    d1: f64,
    d2: f64,
    codewords: &[usize],
    gamma_grid: Option<&[f64]>,
) -> Result<BoundCurve> {
    if !(d2 < 1.0) {
        return Err(Error::invalid(format!("example needs D2 < 1, got {d2}")));
    }
    let mut curve = BoundCurve::new("example_ach", Direction::Upper);
    let grids = Grids {
        gamma: gamma_grid.map(<[f64]>::to_vec),
        eps_prime: Some(vec![0.0]),
    };
    for &mc in codewords {
        let inst = example_instance(m, n, p, d1, d2, mc)?;
        let ev = thm5_search(&inst, &[uniform(m)], &grids, true)?;
        curve.push(mc as u64, ev);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::JointSource;

    fn ham(n: usize) -> DistortionSpec {
        DistortionSpec::hamming(Alphabet::indexed(n).unwrap())
    }

    fn bsc_instance(d1: f64, d2: f64, m: usize) -> ProblemInstance {
        let src = JointSource::new(
            Alphabet::indexed(2).unwrap(),
            Alphabet::indexed(2).unwrap(),
            vec![vec![0.45, 0.05], vec![0.05, 0.45]],
        )
        .unwrap();
        ProblemInstance::new(src, ham(2), ham(2), d1, d2, m).unwrap()
    }

    fn identity_instance(n: usize, d1: f64, d2: f64, m: usize) -> ProblemInstance {
        let p = 1.0 / n as f64;
        let src = JointSource::new(
            Alphabet::indexed(n).unwrap(),
            Alphabet::indexed(n).unwrap(),
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { p } else { 0.0 }).collect())
                .collect(),
        )
        .unwrap();
        ProblemInstance::new(src, ham(n), ham(n), d1, d2, m).unwrap()
    }

    /// Midpoint-rule integral of the tail power, as an independent check of
    /// the breakpoint sum.
    fn quadrature(inst: &ProblemInstance, q: &[f64]) -> f64 {
        let pi = inst.pi_table().unwrap();
        let steps = 200_000;
        let m = inst.codewords() as i32;
        let mut total = 0.0;
        for (x, row) in pi.iter().enumerate() {
            let mut acc = 0.0;
            for s in 0..steps {
                let t = (s as f64 + 0.5) / steps as f64;
                let tail: f64 = row.iter().zip(q).filter(|(v, _)| **v > t).map(|(_, w)| w).sum();
                acc += tail.powi(m);
            }
            total += inst.p_x()[x] * acc / steps as f64;
        }
        total
    }

    #[test]
    fn thm1_point_mass_hand_value() {
        for m in [1, 2, 7] {
            let inst = bsc_instance(0.0, 0.0, m);
            let ev = thm1_bound(&inst, &[1.0, 0.0, 0.0, 0.0]).unwrap();
            assert!((ev.raw - 0.55).abs() < 1e-12, "{}", ev.raw);
        }
    }

    #[test]
    fn thm1_matches_quadrature_and_trivial_cases() {
        let inst = bsc_instance(0.0, 0.0, 3);
        let q = [0.1, 0.2, 0.3, 0.4];
        let exact = thm1_bound(&inst, &q).unwrap().raw;
        assert!((exact - quadrature(&inst, &q)).abs() < 1e-6);

        let inst = bsc_instance(f64::INFINITY, f64::INFINITY, 2);
        assert_eq!(thm1_bound(&inst, &q).unwrap().raw, 0.0);

        // M = 1: linear in Q, so the bound is E_Q E_X[π].
        let inst = bsc_instance(0.0, 0.0, 1);
        let pi = inst.pi_table().unwrap();
        let lin: f64 = (0..2)
            .map(|x| inst.p_x()[x] * (0..4).map(|r| q[r] * pi[x][r]).sum::<f64>())
            .sum();
        assert!((thm1_bound(&inst, &q).unwrap().raw - lin).abs() < 1e-12);
    }

    #[test]
    fn thm1_large_m_limit() {
        let inst = bsc_instance(0.0, 0.0, 1 << 20);
        let q = [0.25; 4];
        let pi = inst.pi_table().unwrap();
        let limit: f64 = (0..2)
            .map(|x| inst.p_x()[x] * pi[x].iter().copied().fold(1.0, f64::min))
            .sum();
        assert!((thm1_bound(&inst, &q).unwrap().raw - limit).abs() < 1e-6);
    }

    #[test]
    fn thm1_optimizer_selection() {
        let inst = bsc_instance(0.0, 0.0, 2);
        let cands = thm1_candidates(&inst).unwrap();
        let min = cands
            .iter()
            .map(|(_, q)| thm1_bound(&inst, q).unwrap().raw)
            .fold(f64::INFINITY, f64::min);
        let s = thm1_optimize_q(&inst, &[], 0).unwrap();
        assert_eq!(s.eval.raw, min);
        let r = thm1_optimize_q(&inst, &[], 50).unwrap();
        assert!(r.eval.raw <= min);
        // Re-evaluation from the recorded Q reproduces the value.
        assert_eq!(thm1_bound(&inst, &r.q).unwrap().raw, r.eval.raw);
    }

    #[test]
    fn thm4_examples() {
        let inst = identity_instance(2, f64::INFINITY, 0.0, 2);
        assert_eq!(thm4_bound(&inst, &[0.5, 0.5], 1.0).unwrap().raw, 1.0);
        assert!((thm4_bound(&inst, &[0.5, 0.5], 0.0).unwrap().raw - 0.25).abs() < 1e-15);
        assert!(thm4_bound(&identity_instance(2, 0.0, 0.0, 2), &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn thm4_equals_thm1_when_y_is_x() {
        for m in 1..6 {
            let inst = identity_instance(3, f64::INFINITY, 0.0, m);
            let p = [0.2, 0.5, 0.3];
            let t4 = thm4_bound(&inst, &p, 0.0).unwrap().raw;
            // Q = δ_0 × P_Ŷ; the direct coordinate is irrelevant at D1 = inf.
            let mut q = vec![0.0; 9];
            q[..3].copy_from_slice(&p);
            let t1 = thm1_bound(&inst, &q).unwrap().raw;
            assert!((t4 - t1).abs() < 1e-12, "{t4} vs {t1}");
        }
    }

    #[test]
    fn bounds_nonincreasing_in_m() {
        let q = [0.1, 0.2, 0.3, 0.4];
        let mut prev = f64::INFINITY;
        for m in 1..20 {
            let v = thm1_bound(&bsc_instance(0.0, 0.0, m), &q).unwrap().raw;
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for m in 1..20 {
            let v = thm4_bound(&bsc_instance(f64::INFINITY, 0.0, m), &[0.3, 0.7], 0.1)
                .unwrap()
                .raw;
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn coverage_sum_matches_direct_expansion() {
        fn direct(eta: f64, m: usize) -> f64 {
            let mut c = 1.0f64;
            let mut s = 0.0;
            for k in 1..=m {
                c *= (m - k + 1) as f64 / k as f64;
                s += c * (m as f64 / k as f64) * eta.powi((m - k) as i32) * (1.0 - eta).powi(k as i32);
            }
            s
        }
        for &e in &[0.0, 0.1, 0.5, 0.9, 1.0] {
            for m in [1, 2, 5, 30] {
                let a = coverage_sum(e, m);
                let b = direct(e, m);
                assert!((a - b).abs() < 1e-10 * b.max(1.0), "eta {e} m {m}: {a} vs {b}");
            }
        }
        // Stays finite far past the point where C(M, k) overflows.
        let big = coverage_sum(0.9, 5000);
        assert!(big.is_finite() && big > 9.0 && big < 11.0, "{big}");
    }

    #[test]
    fn thm5_example_structure() {
        let inst = example_instance(10, 6, 0.1, 6.0, 0.5, 4).unwrap();
        let ev = thm5_bound(&inst, &uniform(10), 0.0, 3.0).unwrap();
        assert_eq!(ev.params["terms"]["threshold"], 0.0);
        let e = 0.9f64.powi(4);
        let want_second = e * (1.0 + 0.25);
        let got = ev.params["terms"]["no_acceptable_codeword"].as_f64().unwrap();
        assert!((got - want_second).abs() < 1e-15);

        // γ = 0 doubles everything and is clipped.
        let ev0 = thm5_bound(&inst, &uniform(10), 0.0, 0.0).unwrap();
        assert!(ev0.raw > 1.0 && ev0.value() == 1.0);
    }

    #[test]
    fn thm5_optimizer_reproducible() {
        let inst = example_instance(10, 6, 0.1, 6.0, 0.5, 40).unwrap();
        let ev = thm5_optimize(&inst, &[], &Grids::default()).unwrap();
        let q: Vec<f64> = serde_json::from_value(ev.params["output_distribution"].clone()).unwrap();
        let e = ev.params["epsilon_prime"].as_f64().unwrap();
        let g = ev.params["gamma"].as_f64().unwrap();
        assert_eq!(thm5_bound(&inst, &q, e, g).unwrap().raw, ev.raw);
        assert!(ev.raw < 1.0);
    }

    #[test]
    fn gamma_grid_exact_points() {
        let g = default_gamma_grid(1.0);
        assert_eq!(g.len(), 11);
        assert_eq!(g[10], 1.0);
        assert_eq!(default_gamma_grid(0.0), vec![0.0]);
    }

    #[test]
    fn example_curve_properties() {
        let ms: Vec<usize> = (1..=60).collect();
        let c = example_ach_curve(10, 6, 0.1, 6.0, 0.5, &ms, None).unwrap();
        let below = c.points.iter().filter(|p| p.value < 1.0).count();
        assert!(below >= 30, "{below}");
        for p in &c.points {
            assert!(p.value >= (1.0 - p.m as f64 / 10.0).max(0.0));
            assert!(p.params["printed_variant_raw"].is_f64());
        }
    }
}
