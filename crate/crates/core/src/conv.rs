//! Converse (lower) bounds on the minimum excess probability.
//!
//! Each bound has the form `P[j ≥ log2 M + γ] - 2^{-γ}` minimized over the
//! code's reconstruction choice. For a fixed γ the minimum decouples over
//! source symbols; the sup over γ of those per-γ values is the default
//! (sup-inf) mode. The LP mode swaps the order over a finite γ set.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ach::{default_gamma_grid, merge_grid};
use crate::curve::{BoundCurve, Direction, Evaluation};
use crate::error::{Error, Result};
use crate::rd::{check_logloss_regime, solve_r2, ConverseCase, Layout, RdSolution};
use crate::source::ProblemInstance;
use crate::tilted::TiltedEvaluator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConverseMode {
    #[default]
    SupInf,
    ExactLp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseReport {
    pub theorem: &'static str,
    pub m: usize,
    /// Unclipped bound in the requested mode.
    pub raw: f64,
    pub mode: ConverseMode,
    pub case: Option<ConverseCase>,
    /// Maximizing γ of the sup-inf mode.
    pub best_gamma: f64,
    /// Sup-inf value at the best γ (equal to `raw` in sup-inf mode).
    pub sup_inf: f64,
    /// `(γ, value)` for every γ evaluated; each is a valid bound on its own.
    pub per_gamma: Vec<(f64, f64)>,
}

impl ConverseReport {
    pub fn value(&self) -> f64 {
        crate::curve::clip(self.raw)
    }

    pub fn evaluation(&self) -> Evaluation {
        let mut params = json!({
            "theorem": self.theorem,
            "m": self.m,
            "mode": self.mode,
            "gamma": self.best_gamma,
            "sup_inf": self.sup_inf,
        });
        if let Some(c) = self.case {
            params["case"] = json!(c);
        }
        Evaluation {
            raw: self.raw,
            params,
        }
    }
}

/// Tilted information tabulated as `j[x][y][column]`, independent of `M`.
#[derive(Debug, Clone)]
pub struct ConverseProblem {
    theorem: &'static str,
    case: Option<ConverseCase>,
    p_x: Vec<f64>,
    p_y_given_x: Vec<Vec<f64>>,
    tilted: Vec<Vec<Vec<f64>>>,
}

impl ConverseProblem {
    /// General converse from a joint rate-distortion achiever.
    pub fn thm2(instance: &ProblemInstance, rd: &RdSolution) -> Result<Self> {
        if instance.is_logloss() {
            return Err(Error::invalid(
                "general converse needs a finite direct alphabet; use cor1_bound for log-loss",
            ));
        }
        if !matches!(rd.layout, Layout::Joint { .. }) {
            return Err(Error::invalid("general converse needs a joint rate-distortion solution"));
        }
        let ev = TiltedEvaluator::new(instance, rd)?;
        Ok(Self::from_evaluator(instance, &ev, "thm2", None))
    }

    /// Log-loss converse; the case is picked from the rate comparison.
    pub fn cor1(instance: &ProblemInstance) -> Result<Self> {
        if !instance.is_logloss() {
            return Err(Error::invalid("log-loss converse needs a log-loss direct distortion"));
        }
        let regime = check_logloss_regime(
            instance.source(),
            instance.d2(),
            instance.d1_level(),
            instance.d2_level(),
        )?;
        if !regime.joint_equality_applies {
            return Err(Error::Regime(format!(
                "R2(D2_min) = {} < H(X) - D1 = {} or D2 below {}",
                regime.r2_at_min,
                regime.entropy_x - instance.d1_level(),
                regime.d2_min
            )));
        }
        match regime.case {
            ConverseCase::CaseA => {
                let d1 = instance.d1_level();
                let p_x = instance.p_x().to_vec();
                let tilted = instance
                    .info_density()
                    .into_iter()
                    .map(|i| vec![vec![i - d1]])
                    .collect();
                Ok(Self {
                    theorem: "cor1",
                    case: Some(ConverseCase::CaseA),
                    p_y_given_x: vec![vec![1.0]; p_x.len()],
                    p_x,
                    tilted,
                })
            }
            ConverseCase::CaseB => {
                let r2 = solve_r2(instance.source(), instance.d2(), instance.d2_level())?;
                let ev = TiltedEvaluator::new(instance, &r2)?;
                Ok(Self::from_evaluator(instance, &ev, "cor1", Some(ConverseCase::CaseB)))
            }
        }
    }

    /// Tabulate an evaluator's converse form over its converse columns.
    pub fn from_evaluator(
        instance: &ProblemInstance,
        ev: &TiltedEvaluator,
        theorem: &'static str,
        case: Option<ConverseCase>,
    ) -> Self {
        let nx = instance.x_len();
        let ny = instance.y_len();
        let tilted = (0..nx)
            .map(|x| {
                (0..ny)
                    .map(|y| {
                        ev.converse_columns()
                            .iter()
                            .map(|&r| ev.converse_tilted(x, y, r))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            theorem,
            case,
            p_x: instance.p_x().to_vec(),
            p_y_given_x: (0..nx).map(|x| instance.p_y_given_x(x).to_vec()).collect(),
            tilted,
        }
    }

    pub fn case(&self) -> Option<ConverseCase> {
        self.case
    }

    fn columns(&self) -> usize {
        self.tilted[0][0].len()
    }

    /// `j - log2 M` for every (x, y) of positive mass; breakpoints in γ.
    fn slacks(&self, log2_m: f64) -> impl Iterator<Item = f64> + '_ {
        self.tilted.iter().enumerate().flat_map(move |(x, rows)| {
            rows.iter()
                .enumerate()
                .filter(move |(y, _)| self.p_y_given_x[x][*y] > 0.0)
                .flat_map(move |(_, row)| row.iter().map(move |j| j - log2_m))
        })
    }

    /// `Σ_y P(y|x) 1{j(x, y, c) - log2 M ≥ γ}`.
    fn fire_mass(&self, x: usize, c: usize, log2_m: f64, gamma: f64) -> f64 {
        self.tilted[x]
            .iter()
            .zip(&self.p_y_given_x[x])
            .filter(|(row, p)| **p > 0.0 && row[c] - log2_m >= gamma)
            .map(|(_, p)| p)
            .sum()
    }

    fn value_at(&self, log2_m: f64, gamma: f64) -> f64 {
        let nc = self.columns();
        let inner: f64 = (0..self.p_x.len())
            .map(|x| {
                let best = (0..nc)
                    .map(|c| self.fire_mass(x, c, log2_m, gamma))
                    .fold(f64::INFINITY, f64::min);
                self.p_x[x] * best
            })
            .sum();
        inner - (-gamma).exp2()
    }

    /// γ set: the supplied grid (or `{0, 0.1, ...}` up to the largest slack)
    /// together with every nonnegative slack, where the sup over each piece
    /// is attained.
    pub fn gamma_set(&self, m: usize, grid: Option<&[f64]>) -> Vec<f64> {
        let log2_m = (m as f64).log2();
        let base = match grid {
            Some(g) => g.to_vec(),
            None => {
                let top = self.slacks(log2_m).filter(|s| s.is_finite()).fold(0.0f64, f64::max);
                default_gamma_grid(top)
            }
        };
        merge_grid(base, self.slacks(log2_m))
    }

    pub fn evaluate(
        &self,
        m: usize,
        grid: Option<&[f64]>,
        mode: ConverseMode,
    ) -> Result<ConverseReport> {
        if m == 0 {
            return Err(Error::invalid("codebook size must be >= 1"));
        }
        if let Some(g) = grid {
            if g.is_empty() {
                return Err(Error::invalid("empty gamma grid"));
            }
            if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("gamma grid values must be finite and >= 0"));
            }
        }
        let log2_m = (m as f64).log2();
        let gammas = self.gamma_set(m, grid);
        let per_gamma: Vec<(f64, f64)> =
            gammas.iter().map(|&g| (g, self.value_at(log2_m, g))).collect();
        let (best_gamma, sup_inf) = per_gamma
            .iter()
            .copied()
            .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let raw = match mode {
            ConverseMode::SupInf => sup_inf,
            ConverseMode::ExactLp => self.inf_sup_lp(log2_m, &gammas)?.max(sup_inf),
        };
        Ok(ConverseReport {
            theorem: self.theorem,
            m,
            raw,
            mode,
            case: self.case,
            best_gamma,
            sup_inf,
            per_gamma,
        })
    }

    /// `min_W max_γ Σ_x P(x) Σ_c W(c|x) a_{x,c}(γ) - 2^{-γ}` as a linear program.
    fn inf_sup_lp(&self, log2_m: f64, gammas: &[f64]) -> Result<f64> {
        let nx = self.p_x.len();
        let nc = self.columns();
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
        let w: Vec<Vec<_>> = (0..nx)
            .map(|_| (0..nc).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect())
            .collect();
        for row in &w {
            let expr: Vec<_> = row.iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, 1.0);
        }
        for &g in gammas {
            let mut expr = vec![(t, -1.0)];
            for x in 0..nx {
                for c in 0..nc {
                    let a = self.p_x[x] * self.fire_mass(x, c, log2_m, g);
                    if a != 0.0 {
                        expr.push((w[x][c], a));
                    }
                }
            }
            lp.add_constraint(expr.as_slice(), ComparisonOp::Le, (-g).exp2());
        }
        lp.solve()
            .map(|s| s.objective())
            .map_err(|e| Error::invalid(format!("converse LP failed: {e}")))
    }
}

/// General converse at the instance's codebook size.
pub fn thm2_bound(
    instance: &ProblemInstance,
    rd: &RdSolution,
    grid: Option<&[f64]>,
    mode: ConverseMode,
) -> Result<ConverseReport> {
    ConverseProblem::thm2(instance, rd)?.evaluate(instance.codewords(), grid, mode)
}

/// Log-loss converse at the instance's codebook size.
pub fn cor1_bound(
    instance: &ProblemInstance,
    grid: Option<&[f64]>,
    mode: ConverseMode,
) -> Result<ConverseReport> {
    ConverseProblem::cor1(instance)?.evaluate(instance.codewords(), grid, mode)
}

/// `max(0, 1 - M/m)` for the binomial class example.
pub fn example_conv_curve(m: usize, codewords: &[usize]) -> Result<BoundCurve> {
    if m < 2 {
        return Err(Error::invalid("class count m must be >= 2"));
    }
    let mut curve = BoundCurve::new("example_conv", Direction::Lower);
    for &mc in codewords {
        let raw = if mc >= m { 0.0 } else { (m - mc) as f64 / m as f64 };
        curve.push(
            mc as u64,
            Evaluation {
                raw,
                params: json!({ "closed_form": "max(0, 1 - M/m)", "m": m, "M": mc }),
            },
        );
    }
    Ok(curve)
}
