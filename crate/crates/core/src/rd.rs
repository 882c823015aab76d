//! Rate-distortion solvers for the direct, indirect and joint problems.
//!
//! Everything is built on a slope-parameterised Blahut–Arimoto iteration
//! ([`ba_fixed_slope`]). A distortion target is met by bisecting the slope
//! and then time-sharing (mixing) the two bracketing conditionals so that
//! the constraint holds with equality; mixing can only lower the mutual
//! information below the chord, so the reported rate stays an upper bound on
//! the true value while the Blahut dual gives a matching lower bound.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::source::{entropy_unchecked, DistortionSpec, JointSource, ProblemInstance};

pub type Matrix = Vec<Vec<f64>>;

/// Slope reported at the left end of a curve, where the true slope is
/// unbounded.
pub const LAMBDA_MAX: f64 = 60.0;

const MAX_ITER: usize = 10_000;
const LAGRANGIAN_TOL: f64 = 1e-12;
const GAP_TOL: f64 = 1e-12;
const TARGET_TOL: f64 = 1e-10;
const BISECTION_STEPS: usize = 96;
const MERGE_TOL: f64 = 1e-10;
const PRUNE_MASS: f64 = 1e-7;

/// One Blahut–Arimoto fixed point for an arbitrary per-pair cost (in bits).
#[derive(Debug, Clone, Serialize)]
pub struct BaPoint {
    pub rate: f64,
    /// `I + E[cost]` at the returned conditional.
    pub lagrangian: f64,
    /// Blahut lower bound on the minimum of the Lagrangian.
    pub lower_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub conditional: Matrix,
    pub output: Vec<f64>,
}

/// Result of [`ba_fixed_slope`].
#[derive(Debug, Clone, Serialize)]
pub struct SlopePoint {
    pub rate: f64,
    pub distortion: f64,
    pub conditional: Matrix,
    pub output: Vec<f64>,
    pub iterations: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Levels {
    pub direct: Option<f64>,
    pub indirect: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Slopes {
    pub direct: f64,
    pub indirect: f64,
}

/// What the columns of an achieving conditional stand for.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// No certificate (closed-form rate).
    RateOnly,
    Direct { size: usize },
    Indirect { size: usize },
    /// Column `a * indirect + b` is the pair `(a, b)`.
    Joint { direct: usize, indirect: usize },
    /// Column `b` is the pair `(posteriors[b], b)`; `None` marks columns
    /// carrying no mass.
    LogLossJoint { posteriors: Vec<Option<Vec<f64>>> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// `rate` minus the best dual lower bound found.
    pub duality_gap: f64,
    pub converged: bool,
    pub unclipped_rate: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdSolution {
    pub rate: f64,
    pub targets: Levels,
    pub achieved: Levels,
    pub conditional: Matrix,
    pub layout: Layout,
    pub slopes: Slopes,
    pub diagnostics: Diagnostics,
}

impl RdSolution {
    /// Output marginal `Σ_x p(x) W(r|x)` of the achieving conditional.
    pub fn output_marginal(&self, p_x: &[f64]) -> Vec<f64> {
        output_marginal(p_x, &self.conditional)
    }
}

pub fn output_marginal(p_x: &[f64], w: &Matrix) -> Vec<f64> {
    let nr = w.first().map_or(0, Vec::len);
    let mut q = vec![0.0; nr];
    for (p, row) in p_x.iter().zip(w) {
        for (qr, wr) in q.iter_mut().zip(row) {
            *qr += p * wr;
        }
    }
    q
}

/// `I(X; R)` in bits for input `p_x` and channel `w`.
pub fn mutual_information(p_x: &[f64], w: &Matrix) -> f64 {
    let q = output_marginal(p_x, w);
    let mut i = 0.0;
    for (p, row) in p_x.iter().zip(w) {
        if *p == 0.0 {
            continue;
        }
        for (wr, qr) in row.iter().zip(&q) {
            if *wr > 0.0 {
                i += p * wr * (wr / qr).log2();
            }
        }
    }
    i.max(0.0)
}

pub fn expected_distortion(p_x: &[f64], w: &Matrix, d: &Matrix) -> f64 {
    let mut e = 0.0;
    for ((p, row), drow) in p_x.iter().zip(w).zip(d) {
        for (wr, dr) in row.iter().zip(drow) {
            if *wr > 0.0 {
                e += p * wr * dr;
            }
        }
    }
    e
}

/// `D_min = Σ_x p(x) min_r d(x, r)`.
pub fn d_min(p_x: &[f64], d: &Matrix) -> f64 {
    p_x.iter()
        .zip(d)
        .map(|(p, row)| p * row.iter().copied().fold(f64::INFINITY, f64::min))
        .sum()
}

fn validate_inputs(p_x: &[f64], d: &Matrix) -> Result<()> {
    if d.len() != p_x.len() {
        return Err(Error::invalid(format!(
            "distortion has {} rows, source has {} symbols",
            d.len(),
            p_x.len()
        )));
    }
    let nr = d.first().map_or(0, Vec::len);
    if nr == 0 {
        return Err(Error::invalid("reconstruction alphabet is empty"));
    }
    for row in d {
        if row.len() != nr || row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("distortion must be a finite nonnegative matrix"));
        }
    }
    Ok(())
}

/// Scratch state for one evaluation of the Blahut–Arimoto map at `q`.
struct BaState {
    w: Matrix,
    log_c: Vec<f64>,
    ratio: Vec<f64>,
}

impl BaState {
    /// Fills the conditional, `log2 c_x` and `D_r`; returns
    /// `U(q) = -Σ_x p(x) log2 c_x`.
    fn evaluate(&mut self, p_x: &[f64], cost: &Matrix, q: &[f64]) -> f64 {
        let nr = q.len();
        for (x, row) in cost.iter().enumerate() {
            let shift = row
                .iter()
                .zip(q)
                .filter(|(c, qr)| c.is_finite() && **qr > 0.0)
                .map(|(c, _)| *c)
                .fold(f64::INFINITY, f64::min);
            let wx = &mut self.w[x];
            let mut s = 0.0;
            for r in 0..nr {
                let v = if row[r].is_finite() && q[r] > 0.0 {
                    q[r] * (shift - row[r]).exp2()
                } else {
                    0.0
                };
                wx[r] = v;
                s += v;
            }
            wx.iter_mut().for_each(|v| *v /= s);
            self.log_c[x] = s.log2() - shift;
        }
        for r in 0..nr {
            self.ratio[r] = (0..p_x.len())
                .filter(|&x| p_x[x] > 0.0 && cost[x][r].is_finite())
                .map(|x| p_x[x] * (-cost[x][r] - self.log_c[x]).exp2())
                .sum();
        }
        -p_x
            .iter()
            .zip(&self.log_c)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, c)| p * c)
            .sum::<f64>()
    }

    /// Classical update `q ∝ q·D`. Columns off the optimal support can decay
    /// very slowly, so tiny shrinking columns are dropped and empty columns
    /// whose ratio exceeds one are brought back.
    fn step(&self, q: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = q
            .iter()
            .zip(&self.ratio)
            .map(|(&qr, &d)| {
                if qr > 0.0 {
                    let v = qr * d;
                    if v < PRUNE_MASS && d < 1.0 {
                        0.0
                    } else {
                        v
                    }
                } else if d > 1.0 + GAP_TOL {
                    PRUNE_MASS
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }

    fn log_ratio_max(&self) -> f64 {
        self.ratio.iter().copied().fold(0.0, f64::max).log2()
    }
}

/// Blahut–Arimoto on an arbitrary cost matrix in bits; `+inf` entries are
/// forbidden pairs. Every row must have at least one finite entry.
///
/// The map is accelerated with squared extrapolation (SQUAREM) and a
/// monotone safeguard. Blahut's bound `U(q) - log2 max_r D_r` holds at
/// every `q`, so the gap is certified whatever the path.
fn ba_core(p_x: &[f64], cost: &Matrix, init: Option<&[f64]>) -> BaPoint {
    let nx = p_x.len();
    let nr = cost[0].len();
    let mut q: Vec<f64> = match init {
        Some(q0) => {
            let u = 1.0 / nr as f64;
            q0.iter().map(|v| 0.9 * v + 0.1 * u).collect()
        }
        None => vec![1.0 / nr as f64; nr],
    };
    let mut st = BaState {
        w: vec![vec![0.0; nr]; nx],
        log_c: vec![0.0; nx],
        ratio: vec![0.0; nr],
    };
    let mut prev = f64::INFINITY;
    let mut lower_bound = f64::NEG_INFINITY;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let upper = st.evaluate(p_x, cost, &q);
        iterations += 1;
        let log_ratio = st.log_ratio_max();
        lower_bound = lower_bound.max(upper - log_ratio);
        gap = log_ratio.max(0.0);
        if gap <= GAP_TOL || (prev - upper).abs() < LAGRANGIAN_TOL {
            converged = true;
            break;
        }
        prev = upper;
        let q1 = st.step(&q);
        st.evaluate(p_x, cost, &q1);
        let q2 = st.step(&q1);
        let r: Vec<f64> = q1.iter().zip(&q).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = q2
            .iter()
            .zip(&q1)
            .zip(&q)
            .map(|((c, b), a)| c - 2.0 * b + a)
            .collect();
        let norm = |u: &[f64]| u.iter().map(|t| t * t).sum::<f64>().sqrt();
        let nv = norm(&v);
        if nv == 0.0 {
            q = q2;
            iterations += 1;
            continue;
        }
        let alpha = (-norm(&r) / nv).min(-1.0);
        let mut jump: Vec<f64> = q
            .iter()
            .zip(&r)
            .zip(&v)
            .map(|((a, b), c)| (a - 2.0 * alpha * b + alpha * alpha * c).max(0.0))
            .collect();
        let total: f64 = jump.iter().sum();
        jump.iter_mut().for_each(|t| *t /= total);
        st.evaluate(p_x, cost, &jump);
        let stabilised = st.step(&jump);
        let f_jump = st.evaluate(p_x, cost, &stabilised);
        let f_plain = st.evaluate(p_x, cost, &q2);
        iterations += 4;
        q = if f_jump <= f_plain { stabilised } else { q2 };
    }
    // The conditional in `st.w` belongs to the last evaluated `q`.
    if iterations >= MAX_ITER && !converged {
        st.evaluate(p_x, cost, &q);
    }
    let w = st.w;
    let rate = mutual_information(p_x, &w);
    let mut lagrangian = rate;
    for x in 0..nx {
        for r in 0..nr {
            if w[x][r] > 0.0 {
                lagrangian += p_x[x] * w[x][r] * cost[x][r];
            }
        }
    }
    BaPoint {
        rate,
        lagrangian,
        lower_bound,
        gap,
        iterations,
        converged,
        output: output_marginal(p_x, &w),
        conditional: w,
    }
}

fn scaled_cost(d: &Matrix, slope: f64) -> Matrix {
    d.iter()
        .map(|row| row.iter().map(|v| slope * v).collect())
        .collect()
}

/// Column minimising `E[d(X, r)]`, lowest index on ties.
fn best_single_column(p_x: &[f64], d: &Matrix) -> usize {
    let nr = d[0].len();
    let mut best = (0, f64::INFINITY);
    for r in 0..nr {
        let e: f64 = p_x.iter().zip(d).map(|(p, row)| p * row[r]).sum();
        if e < best.1 {
            best = (r, e);
        }
    }
    best.0
}

fn point_mass(nx: usize, nr: usize, r: usize) -> Matrix {
    (0..nx)
        .map(|_| (0..nr).map(|c| if c == r { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Point of the rate-distortion curve with slope `-slope`.
///
/// Slope zero returns the best single reconstruction (rate 0).
pub fn ba_fixed_slope(p_x: &[f64], d: &Matrix, slope: f64) -> Result<SlopePoint> {
    validate_inputs(p_x, d)?;
    if !(slope >= 0.0) || slope.is_infinite() {
        return Err(Error::invalid(format!("slope must be finite and >= 0, got {slope}")));
    }
    if slope == 0.0 {
        let r = best_single_column(p_x, d);
        let w = point_mass(p_x.len(), d[0].len(), r);
        return Ok(SlopePoint {
            rate: 0.0,
            distortion: expected_distortion(p_x, &w, d),
            output: output_marginal(p_x, &w),
            conditional: w,
            iterations: 0,
            gap: 0.0,
        });
    }
    let point = ba_core(p_x, &scaled_cost(d, slope), None);
    if !point.converged {
        return Err(Error::NotConverged {
            last: Box::new(point),
        });
    }
    Ok(SlopePoint {
        rate: point.rate,
        distortion: expected_distortion(p_x, &point.conditional, d),
        conditional: point.conditional,
        output: point.output,
        iterations: point.iterations,
        gap: point.gap,
    })
}

/// Outcome of a constrained slope search.
#[derive(Debug, Clone)]
struct Searched {
    conditional: Matrix,
    slope: f64,
    iterations: usize,
    /// Lower bound on `min { I + E[base] : E[d] <= target }`.
    dual: f64,
    converged: bool,
    at_minimum: bool,
}

struct Evaluated {
    s: f64,
    point: BaPoint,
    distortion: f64,
}

fn slope_of(s: f64) -> f64 {
    if s >= 1.0 {
        f64::INFINITY
    } else {
        s / (1.0 - s)
    }
}

/// Next probe inside `(lo_s, hi_s)` for a decreasing distortion curve:
/// false position clamped away from the ends, or the midpoint.
fn probe(lo_s: f64, lo_d: f64, hi_s: f64, hi_d: f64, target: f64, bisect: bool) -> f64 {
    let width = hi_s - lo_s;
    if bisect || !(lo_d > hi_d) || !hi_d.is_finite() {
        return lo_s + 0.5 * width;
    }
    let t = ((lo_d - target) / (lo_d - hi_d)).clamp(0.02, 0.98);
    lo_s + t * width
}

/// Minimise `I + E[base]` subject to `E[d] <= target` over conditionals
/// whose support avoids infinite `base` entries.
fn search_slope(
    p_x: &[f64],
    base: Option<&Matrix>,
    d: &Matrix,
    target: f64,
    which: &'static str,
) -> Result<Searched> {
    let nx = p_x.len();
    let nr = d[0].len();
    let allowed = |x: usize, r: usize| base.map_or(true, |b| b[x][r].is_finite());
    let row_min: Vec<f64> = (0..nx)
        .map(|x| {
            (0..nr)
                .filter(|&r| allowed(x, r))
                .map(|r| d[x][r])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let minimum: f64 = p_x.iter().zip(&row_min).map(|(p, m)| p * m).sum();
    if target < minimum - TARGET_TOL {
        return Err(Error::Infeasible {
            which,
            target,
            minimum,
        });
    }

    let mut iterations = 0;
    let mut run = |s: f64, init: Option<&[f64]>| -> Evaluated {
        let cost: Matrix = if s >= 1.0 {
            (0..nx)
                .map(|x| {
                    (0..nr)
                        .map(|r| {
                            if allowed(x, r) && d[x][r] <= row_min[x] + 1e-12 {
                                base.map_or(0.0, |b| b[x][r])
                            } else {
                                f64::INFINITY
                            }
                        })
                        .collect()
                })
                .collect()
        } else {
            let lam = slope_of(s);
            (0..nx)
                .map(|x| {
                    (0..nr)
                        .map(|r| base.map_or(0.0, |b| b[x][r]) + lam * d[x][r])
                        .collect()
                })
                .collect()
        };
        let point = ba_core(p_x, &cost, init);
        iterations += point.iterations;
        let distortion = expected_distortion(p_x, &point.conditional, d);
        Evaluated { s, point, distortion }
    };

    // Zero slope.
    let zero = match base {
        None => {
            let r = best_single_column(p_x, d);
            let w = point_mass(nx, nr, r);
            let distortion = expected_distortion(p_x, &w, d);
            Evaluated {
                s: 0.0,
                point: BaPoint {
                    rate: 0.0,
                    lagrangian: 0.0,
                    lower_bound: 0.0,
                    gap: 0.0,
                    iterations: 0,
                    converged: true,
                    output: output_marginal(p_x, &w),
                    conditional: w,
                },
                distortion,
            }
        }
        Some(_) => run(0.0, None),
    };
    if zero.distortion <= target + TARGET_TOL {
        return Ok(Searched {
            dual: zero.point.lower_bound,
            conditional: zero.point.conditional,
            slope: 0.0,
            iterations,
            converged: zero.point.converged,
            at_minimum: false,
        });
    }

    let top = run(1.0, None);
    if top.distortion > target + TARGET_TOL && top.distortion > minimum + TARGET_TOL {
        return Err(Error::SlopeSearch(format!(
            "{which}: restricted solution reaches {} but target is {target}",
            top.distortion
        )));
    }
    if target <= top.distortion + TARGET_TOL {
        // Left endpoint of the curve; the slope is unbounded there.
        return Ok(Searched {
            // Constraint forces the restricted support: the restricted
            // Lagrangian bound is a lower bound on the constrained minimum.
            dual: top.point.lower_bound,
            conditional: top.point.conditional,
            slope: LAMBDA_MAX,
            iterations,
            converged: top.point.converged,
            at_minimum: true,
        });
    }

    let mut lo = zero;
    let mut hi = top;
    let mut dual = f64::NEG_INFINITY;
    let mut bisect = false;
    for _ in 0..BISECTION_STEPS {
        let width = hi.s - lo.s;
        let mid = probe(lo.s, lo.distortion, hi.s, hi.distortion, target, bisect);
        let init = hi.point.output.clone();
        let e = run(mid, Some(&init));
        let lam = slope_of(mid);
        dual = dual.max(e.point.lower_bound - lam * target);
        if e.distortion > target {
            lo = e;
        } else {
            hi = e;
        }
        bisect = hi.s - lo.s > 0.5 * width;
        if (hi.distortion - target).abs() <= TARGET_TOL || hi.s - lo.s < 1e-12 {
            break;
        }
    }

    let converged = lo.point.converged && hi.point.converged;
    let slope = if hi.s < 1.0 { slope_of(hi.s) } else { slope_of(lo.s) };
    let conditional = if (hi.distortion - target).abs() <= TARGET_TOL {
        hi.point.conditional
    } else {
        let theta = (target - hi.distortion) / (lo.distortion - hi.distortion);
        let w: Matrix = lo
            .point
            .conditional
            .iter()
            .zip(&hi.point.conditional)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| theta * u + (1.0 - theta) * v).collect())
            .collect();
        w
    };
    Ok(Searched {
        conditional,
        slope,
        iterations,
        dual,
        converged,
        at_minimum: false,
    })
}

fn single_solution(
    p_x: &[f64],
    d: &Matrix,
    target: f64,
    which: &'static str,
    indirect: bool,
) -> Result<RdSolution> {
    validate_inputs(p_x, d)?;
    if target.is_nan() || target < 0.0 {
        return Err(Error::invalid("distortion target must be >= 0"));
    }
    let s = search_slope(p_x, None, d, target, which)?;
    let rate = mutual_information(p_x, &s.conditional);
    let achieved = expected_distortion(p_x, &s.conditional, d);
    let nr = d[0].len();
    let mut warnings = Vec::new();
    if s.at_minimum {
        warnings.push(format!(
            "target at minimum distortion; slope capped at {LAMBDA_MAX}"
        ));
    }
    let (levels, done, layout, slopes) = if indirect {
        (
            Levels {
                direct: None,
                indirect: Some(target),
            },
            Levels {
                direct: None,
                indirect: Some(achieved),
            },
            Layout::Indirect { size: nr },
            Slopes {
                direct: 0.0,
                indirect: s.slope,
            },
        )
    } else {
        (
            Levels {
                direct: Some(target),
                indirect: None,
            },
            Levels {
                direct: Some(achieved),
                indirect: None,
            },
            Layout::Direct { size: nr },
            Slopes {
                direct: s.slope,
                indirect: 0.0,
            },
        )
    };
    Ok(RdSolution {
        rate,
        targets: levels,
        achieved: done,
        conditional: s.conditional,
        layout,
        slopes,
        diagnostics: Diagnostics {
            iterations: s.iterations,
            duality_gap: (rate - s.dual.max(0.0)).max(0.0),
            converged: s.converged,
            unclipped_rate: None,
            warnings,
        },
    })
}

/// Direct rate-distortion function `R1(D1)`; log-loss is routed to
/// [`logloss_r1`].
pub fn solve_r1(p_x: &[f64], d1: &DistortionSpec, target: f64) -> Result<RdSolution> {
    if d1.is_logloss() {
        return logloss_r1(p_x, target);
    }
    let d = d1.table(p_x.len())?.into_owned();
    single_solution(p_x, &d, target, "direct", false)
}

/// Indirect rate-distortion function `R2(D2)`: the direct problem on `X`
/// under the surrogate distortion.
pub fn solve_r2(source: &JointSource, d2: &DistortionSpec, target: f64) -> Result<RdSolution> {
    let d = crate::source::surrogate_distortion(source, d2)?;
    single_solution(source.p_x(), &d, target, "indirect", true)
}

/// Joint rate-distortion function `R(D1, D2)` over the product alphabet.
pub fn solve_joint(
    source: &JointSource,
    d1: &DistortionSpec,
    d2: &DistortionSpec,
    d1_target: f64,
    d2_target: f64,
) -> Result<RdSolution> {
    if d1.is_logloss() {
        return Err(Error::invalid(
            "joint solver needs a finite direct distortion; use construct_logloss_achiever",
        ));
    }
    if d1_target.is_nan() || d1_target < 0.0 || d2_target.is_nan() || d2_target < 0.0 {
        return Err(Error::invalid("distortion targets must be >= 0"));
    }
    let p_x = source.p_x();
    let d1t = d1.table(p_x.len())?.into_owned();
    validate_inputs(p_x, &d1t)?;
    let sur = crate::source::surrogate_distortion(source, d2)?;
    let na = d1t[0].len();
    let nb = sur[0].len();
    let nx = p_x.len();
    let d1p: Matrix = d1t
        .iter()
        .map(|row| row.iter().flat_map(|&v| std::iter::repeat(v).take(nb)).collect())
        .collect();
    let d2p: Matrix = sur
        .iter()
        .map(|row| (0..na).flat_map(|_| row.iter().copied()).collect())
        .collect();

    let d1_minimum = d_min(p_x, &d1t);
    if d1_target < d1_minimum - TARGET_TOL {
        return Err(Error::Infeasible {
            which: "direct",
            target: d1_target,
            minimum: d1_minimum,
        });
    }
    let d2_row_min: Vec<f64> = sur
        .iter()
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let d2_minimum: f64 = p_x.iter().zip(&d2_row_min).map(|(p, m)| p * m).sum();
    if d2_target < d2_minimum - TARGET_TOL {
        return Err(Error::Infeasible {
            which: "indirect",
            target: d2_target,
            minimum: d2_minimum,
        });
    }

    struct Outer {
        s: f64,
        inner: Searched,
        d2: f64,
    }
    let mut iterations = 0usize;
    let mut inner = |s: f64| -> Result<Outer> {
        let found = if s == 0.0 {
            search_slope(p_x, None, &d1p, d1_target, "direct")?
        } else {
            let base: Matrix = if s >= 1.0 {
                (0..nx)
                    .map(|x| {
                        (0..na * nb)
                            .map(|r| {
                                if d2p[x][r] <= d2_row_min[x] + 1e-12 {
                                    0.0
                                } else {
                                    f64::INFINITY
                                }
                            })
                            .collect()
                    })
                    .collect()
            } else {
                scaled_cost(&d2p, slope_of(s))
            };
            search_slope(p_x, Some(&base), &d1p, d1_target, "direct")?
        };
        iterations += found.iterations;
        let d2 = expected_distortion(p_x, &found.conditional, &d2p);
        Ok(Outer { s, inner: found, d2 })
    };

    let zero = inner(0.0)?;
    let mut warnings = Vec::new();
    let (chosen, lambda2, dual) = if zero.d2 <= d2_target + TARGET_TOL {
        let dual = zero.inner.dual;
        (zero.inner, 0.0, dual)
    } else {
        let top = inner(1.0)?;
        if top.d2 > d2_target + TARGET_TOL {
            return Err(Error::SlopeSearch(format!(
                "cannot bracket both constraints; frontier corners: (D1={}, D2={}) at zero indirect slope, (D1={}, D2={}) at infinite indirect slope",
                expected_distortion(p_x, &zero.inner.conditional, &d1p),
                zero.d2,
                expected_distortion(p_x, &top.inner.conditional, &d1p),
                top.d2
            )));
        }
        if d2_target <= top.d2 + TARGET_TOL {
            warnings.push(format!(
                "indirect target at minimum distortion; slope capped at {LAMBDA_MAX}"
            ));
            let dual = top.inner.dual;
            (top.inner, LAMBDA_MAX, dual)
        } else {
            let mut lo = zero;
            let mut hi = top;
            let mut dual = f64::NEG_INFINITY;
            let mut bisect = false;
            for _ in 0..BISECTION_STEPS {
                let width = hi.s - lo.s;
                let mid = inner(probe(lo.s, lo.d2, hi.s, hi.d2, d2_target, bisect))?;
                dual = dual.max(mid.inner.dual - slope_of(mid.s) * d2_target);
                if mid.d2 > d2_target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                bisect = hi.s - lo.s > 0.5 * width;
                if (hi.d2 - d2_target).abs() <= TARGET_TOL || hi.s - lo.s < 1e-12 {
                    break;
                }
            }
            let lambda2 = if hi.s < 1.0 { slope_of(hi.s) } else { slope_of(lo.s) };
            let mixed = if (hi.d2 - d2_target).abs() <= TARGET_TOL {
                hi.inner
            } else {
                let theta = (d2_target - hi.d2) / (lo.d2 - hi.d2);
                let w: Matrix = lo
                    .inner
                    .conditional
                    .iter()
                    .zip(&hi.inner.conditional)
                    .map(|(a, b)| {
                        a.iter()
                            .zip(b)
                            .map(|(u, v)| theta * u + (1.0 - theta) * v)
                            .collect()
                    })
                    .collect();
                Searched {
                    conditional: w,
                    slope: hi.inner.slope,
                    iterations: 0,
                    dual: hi.inner.dual,
                    converged: lo.inner.converged && hi.inner.converged,
                    at_minimum: false,
                }
            };
            (mixed, lambda2, dual)
        }
    };
    if chosen.at_minimum {
        warnings.push(format!(
            "direct target at minimum distortion; slope capped at {LAMBDA_MAX}"
        ));
    }
    let rate = mutual_information(p_x, &chosen.conditional);
    let achieved = Levels {
        direct: Some(expected_distortion(p_x, &chosen.conditional, &d1p)),
        indirect: Some(expected_distortion(p_x, &chosen.conditional, &d2p)),
    };
    Ok(RdSolution {
        rate,
        targets: Levels {
            direct: Some(d1_target),
            indirect: Some(d2_target),
        },
        achieved,
        conditional: chosen.conditional,
        layout: Layout::Joint {
            direct: na,
            indirect: nb,
        },
        slopes: Slopes {
            direct: chosen.slope,
            indirect: lambda2,
        },
        diagnostics: Diagnostics {
            iterations,
            duality_gap: (rate - dual.max(0.0)).max(0.0),
            converged: chosen.converged,
            unclipped_rate: None,
            warnings,
        },
    })
}

/// `R1(D1) = max(0, H(X) - D1)` under log-loss.
pub fn logloss_r1(p_x: &[f64], target: f64) -> Result<RdSolution> {
    if target.is_nan() || target < 0.0 {
        return Err(Error::invalid("distortion target must be >= 0"));
    }
    let raw = entropy_unchecked(p_x) - target;
    Ok(RdSolution {
        rate: raw.max(0.0),
        targets: Levels {
            direct: Some(target),
            indirect: None,
        },
        achieved: Levels {
            direct: None,
            indirect: None,
        },
        conditional: Vec::new(),
        layout: Layout::RateOnly,
        slopes: Slopes {
            direct: if raw > 0.0 { 1.0 } else { 0.0 },
            indirect: 0.0,
        },
        diagnostics: Diagnostics {
            converged: true,
            unclipped_rate: Some(raw),
            ..Diagnostics::default()
        },
    })
}

/// Which converse applies under log-loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConverseCase {
    /// `R2(D2) < H(X) - D1`: the converse is driven by `ι_X`.
    CaseA,
    /// `R2(D2) >= H(X) - D1`: the converse is the indirect one.
    CaseB,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLossRegime {
    pub case: ConverseCase,
    /// `R2(D2_min) >= H(X) - D1` and `D2 >= D2_min`.
    pub joint_equality_applies: bool,
    pub entropy_x: f64,
    pub r1: f64,
    pub r2: f64,
    pub r2_at_min: f64,
    pub d2_min: f64,
}

pub fn check_logloss_regime(
    source: &JointSource,
    d2: &DistortionSpec,
    d1_target: f64,
    d2_target: f64,
) -> Result<LogLossRegime> {
    let sur = crate::source::surrogate_distortion(source, d2)?;
    let p_x = source.p_x();
    let d2_min = d_min(p_x, &sur);
    let entropy_x = entropy_unchecked(p_x);
    let at_min = single_solution(p_x, &sur, d2_min, "indirect", true)?;
    let r2 = if d2_target + TARGET_TOL < d2_min {
        f64::INFINITY
    } else {
        single_solution(p_x, &sur, d2_target, "indirect", true)?.rate
    };
    let r1_raw = entropy_x - d1_target;
    Ok(LogLossRegime {
        case: if r2 < r1_raw {
            ConverseCase::CaseA
        } else {
            ConverseCase::CaseB
        },
        joint_equality_applies: at_min.rate >= r1_raw && d2_target + TARGET_TOL >= d2_min,
        entropy_x,
        r1: r1_raw.max(0.0),
        r2,
        r2_at_min: at_min.rate,
        d2_min,
    })
}

/// Joint achiever under log-loss: an indirect achiever paired with its own
/// posterior as the soft reconstruction.
///
/// When `R2(D2) < R1(D1)` the indirect problem is re-solved at the smaller
/// level `D2' <= D2` where the two rates meet. Reconstruction symbols with
/// identical posteriors are merged onto the one with the smaller expected
/// surrogate distortion (lower index on ties).
pub fn construct_logloss_achiever(
    instance: &ProblemInstance,
    r2: &RdSolution,
) -> Result<RdSolution> {
    if !instance.is_logloss() {
        return Err(Error::invalid("log-loss achiever needs a log-loss direct distortion"));
    }
    if !matches!(r2.layout, Layout::Indirect { .. }) {
        return Err(Error::invalid("expected an indirect rate-distortion solution"));
    }
    let source = instance.source();
    let p_x = source.p_x();
    let d1_target = instance.d1_level();
    let d2_target = instance.d2_level();
    let regime = check_logloss_regime(source, instance.d2(), d1_target, d2_target)?;
    if !regime.joint_equality_applies {
        return Err(Error::Regime(format!(
            "R2(D2_min) = {} < H(X) - D1 = {}; solve the joint problem directly",
            regime.r2_at_min,
            regime.entropy_x - d1_target
        )));
    }
    let sur = instance.surrogate().to_vec();
    let r1 = regime.r1;

    let (base, slopes, d2_used) = if r2.rate >= r1 {
        (
            r2.clone(),
            Slopes {
                direct: 0.0,
                indirect: r2.slopes.indirect,
            },
            d2_target,
        )
    } else {
        // Bisection on D2' over [D2_min, D2]; keep the side with R2 >= R1.
        let mut lo = regime.d2_min;
        let mut lo_sol = single_solution(p_x, &sur, lo, "indirect", true)?;
        let mut hi = d2_target;
        for _ in 0..80 {
            if hi - lo < 1e-13 || lo_sol.rate - r1 < 1e-10 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let sol = single_solution(p_x, &sur, mid, "indirect", true)?;
            if sol.rate >= r1 {
                lo = mid;
                lo_sol = sol;
            } else {
                hi = mid;
            }
        }
        (
            lo_sol,
            Slopes {
                direct: 1.0,
                indirect: 0.0,
            },
            lo,
        )
    };

    let nb = sur[0].len();
    let q = output_marginal(p_x, &base.conditional);
    let posterior = |b: usize| -> Vec<f64> {
        p_x.iter()
            .zip(&base.conditional)
            .map(|(p, row)| p * row[b] / q[b])
            .collect()
    };
    let mut posteriors: Vec<Option<Vec<f64>>> =
        (0..nb).map(|b| (q[b] > 0.0).then(|| posterior(b))).collect();
    let expected_sur = |post: &[f64], b: usize| -> f64 {
        post.iter().zip(&sur).map(|(p, row)| p * row[b]).sum()
    };
    let mut w = base.conditional.clone();
    let mut merged = 0;
    for b1 in 0..nb {
        let Some(p1) = posteriors[b1].clone() else { continue };
        for b2 in (b1 + 1)..nb {
            let same = posteriors[b2]
                .as_ref()
                .is_some_and(|p2| p1.iter().zip(p2).all(|(u, v)| (u - v).abs() <= MERGE_TOL));
            if !same {
                continue;
            }
            let (keep, drop) = if expected_sur(&p1, b2) < expected_sur(&p1, b1) {
                (b2, b1)
            } else {
                (b1, b2)
            };
            for row in &mut w {
                row[keep] += row[drop];
                row[drop] = 0.0;
            }
            posteriors[drop] = None;
            merged += 1;
            if drop == b1 {
                break;
            }
        }
    }
    let rate = mutual_information(p_x, &w);
    let direct: f64 = p_x
        .iter()
        .enumerate()
        .map(|(x, p)| {
            (0..nb)
                .filter(|&b| w[x][b] > 0.0)
                .map(|b| {
                    let post = posteriors[b].as_ref().expect("used column has a posterior");
                    p * w[x][b] * -post[x].log2()
                })
                .sum::<f64>()
        })
        .sum();
    let indirect = expected_distortion(p_x, &w, &sur);
    let mut diagnostics = base.diagnostics.clone();
    if merged > 0 {
        diagnostics
            .warnings
            .push(format!("merged {merged} reconstruction symbols with identical posteriors"));
    }
    if d2_used < d2_target {
        diagnostics
            .warnings
            .push(format!("indirect problem re-solved at D2' = {d2_used}"));
    }
    Ok(RdSolution {
        rate,
        targets: Levels {
            direct: Some(d1_target),
            indirect: Some(d2_target),
        },
        achieved: Levels {
            direct: Some(direct),
            indirect: Some(indirect),
        },
        conditional: w,
        layout: Layout::LogLossJoint { posteriors },
        slopes,
        diagnostics,
    })
}
