//! One function per subcommand. Each returns the curves for the CSV and a
//! JSON value for the summary.

use excess_bounds::ach::{
    example_ach_curve, example_instance, thm1_candidates_from, thm1_optimize_over, thm4_optimize,
    thm5_optimize, Grids,
};
use excess_bounds::conv::{example_conv_curve, ConverseMode, ConverseProblem};
use excess_bounds::curve::{BoundCurve, Direction, Evaluation};
use excess_bounds::oracle::exact;
use excess_bounds::rd::{
    check_logloss_regime, construct_logloss_achiever, logloss_r1, solve_joint, solve_r1, solve_r2,
};
use excess_bounds::sim::{simulate_thm1_code, simulate_thm4_code, simulate_thm5_code, SimReport};
use excess_bounds::source::ProblemInstance;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Command, ExampleParams, RunConfig};
use crate::error::{CliError, CliResult};
use crate::instance::InstanceSpec;

/// Exponentiated-gradient steps applied to the best general-bound `Q`.
const REFINEMENT_STEPS: usize = 30;
/// Agreement required between the example converse and `max(0, 1 - M/m)`.
const CLOSED_FORM_TOL: f64 = 1e-12;

pub struct Outcome {
    pub curves: Vec<BoundCurve>,
    pub results: Value,
}

pub fn execute(cfg: &RunConfig) -> CliResult<Outcome> {
    match cfg.command {
        Command::Rd => rd(instance_spec(cfg)?),
        Command::Ach => ach(cfg),
        Command::Conv => conv(cfg),
        Command::Oracle => oracle(cfg),
        Command::Simulate => simulate(cfg),
        Command::Example => example(cfg),
    }
}

fn instance_spec(cfg: &RunConfig) -> CliResult<&InstanceSpec> {
    cfg.instance
        .as_ref()
        .ok_or_else(|| CliError::config("no instance given"))
}

fn base_instance(cfg: &RunConfig) -> CliResult<ProblemInstance> {
    let m = cfg.m_codewords.first().copied().unwrap_or(1);
    Ok(instance_spec(cfg)?.to_instance(m)?)
}

fn mode(cfg: &RunConfig) -> ConverseMode {
    if cfg.exact_lp {
        ConverseMode::ExactLp
    } else {
        ConverseMode::SupInf
    }
}

fn grids(cfg: &RunConfig) -> Grids {
    Grids {
        gamma: cfg.gamma_grid.clone(),
        eps_prime: cfg.eps_prime_grid.clone(),
    }
}

/// Evaluates `f` for every `M` in parallel; results keep the input order.
fn sweep<T: Send>(
    ms: &[usize],
    f: impl Fn(usize) -> CliResult<T> + Sync,
) -> CliResult<Vec<(usize, T)>> {
    ms.par_iter().map(|&m| f(m).map(|v| (m, v))).collect()
}

fn curve_from(tag: &str, direction: Direction, points: Vec<(usize, Evaluation)>) -> BoundCurve {
    let mut c = BoundCurve::new(tag, direction);
    for (m, ev) in points {
        c.push(m as u64, ev);
    }
    c.sort();
    c
}

/// Splits user candidates between the product alphabet and `Ŷ`.
fn split_candidates(
    cfg: &RunConfig,
    inst: &ProblemInstance,
) -> CliResult<(Vec<(String, Vec<f64>)>, Vec<Vec<f64>>)> {
    let nb = inst.y_hat_len();
    let joint_len = inst.x_hat_len().map(|na| na * nb);
    let mut joint = Vec::new();
    let mut indirect = Vec::new();
    for (i, q) in cfg.candidates.iter().enumerate() {
        let mut used = false;
        if Some(q.len()) == joint_len {
            joint.push((format!("extra_{i}"), q.clone()));
            used = true;
        }
        if q.len() == nb {
            indirect.push(q.clone());
            used = true;
        }
        if !used {
            return Err(CliError::config(format!(
                "candidate {i} has {} entries; expected {} (reconstruction pairs) or {nb} (inference symbols)",
                q.len(),
                joint_len.map_or("n/a".to_string(), |n| n.to_string())
            )));
        }
    }
    Ok((joint, indirect))
}

fn rd(spec: &InstanceSpec) -> CliResult<Outcome> {
    let inst = spec.to_instance(1)?;
    let source = inst.source();
    let p_x = source.p_x();
    let (l1, l2) = (inst.d1_level(), inst.d2_level());
    let results = if inst.is_logloss() {
        let r1 = logloss_r1(p_x, l1)?;
        let r2 = solve_r2(source, inst.d2(), l2)?;
        let regime = check_logloss_regime(source, inst.d2(), l1, l2)?;
        let joint = if regime.joint_equality_applies {
            Some(construct_logloss_achiever(&inst, &r2)?)
        } else {
            None
        };
        json!({ "family": "logloss", "r1": r1, "r2": r2, "regime": regime, "joint": joint })
    } else {
        let r1 = solve_r1(p_x, inst.d1(), l1)?;
        let r2 = solve_r2(source, inst.d2(), l2)?;
        let joint = solve_joint(source, inst.d1(), inst.d2(), l1, l2)?;
        json!({ "family": "finite", "r1": r1, "r2": r2, "joint": joint })
    };
    Ok(Outcome {
        curves: Vec::new(),
        results,
    })
}

fn ach(cfg: &RunConfig) -> CliResult<Outcome> {
    let base = base_instance(cfg)?;
    let (joint_extra, indirect_extra) = split_candidates(cfg, &base)?;
    let ms = &cfg.m_codewords;
    let mut curves = Vec::new();
    if base.is_logloss() {
        let g = grids(cfg);
        let pts = sweep(ms, |m| {
            Ok(thm5_optimize(&base.with_codewords(m)?, &indirect_extra, &g)?)
        })?;
        curves.push(curve_from("thm5", Direction::Upper, pts));
    } else {
        let joint = solve_joint(
            base.source(),
            base.d1(),
            base.d2(),
            base.d1_level(),
            base.d2_level(),
        )
        .ok();
        let mut cands = thm1_candidates_from(&base, joint.as_ref())?;
        cands.extend(joint_extra);
        let pts = sweep(ms, |m| {
            let found = thm1_optimize_over(&base.with_codewords(m)?, &cands, REFINEMENT_STEPS)?;
            let mut ev = found.eval;
            ev.params["candidate"] = json!(found.source);
            Ok(ev)
        })?;
        curves.push(curve_from("thm1", Direction::Upper, pts));
        if base.d1_level() == f64::INFINITY {
            let eps = cfg.eps_prime_grid.as_deref();
            let pts = sweep(ms, |m| {
                Ok(thm4_optimize(&base.with_codewords(m)?, &indirect_extra, eps)?)
            })?;
            curves.push(curve_from("thm4", Direction::Upper, pts));
        }
    }
    Ok(Outcome {
        results: curve_summary(&curves),
        curves,
    })
}

fn converse_problem(base: &ProblemInstance) -> CliResult<(&'static str, ConverseProblem, Value)> {
    if base.is_logloss() {
        let p = ConverseProblem::cor1(base)?;
        let info = json!({ "case": p.case() });
        Ok(("cor1", p, info))
    } else {
        let rd = solve_joint(
            base.source(),
            base.d1(),
            base.d2(),
            base.d1_level(),
            base.d2_level(),
        )?;
        let info = json!({ "rate": rd.rate, "slopes": rd.slopes });
        Ok(("thm2", ConverseProblem::thm2(base, &rd)?, info))
    }
}

fn conv(cfg: &RunConfig) -> CliResult<Outcome> {
    let base = base_instance(cfg)?;
    let (tag, problem, info) = converse_problem(&base)?;
    let grid = cfg.gamma_grid.as_deref();
    let mode = mode(cfg);
    let pts = sweep(&cfg.m_codewords, |m| {
        Ok(problem.evaluate(m, grid, mode)?.evaluation())
    })?;
    let curves = vec![curve_from(tag, Direction::Lower, pts)];
    let mut results = curve_summary(&curves);
    results["converse"] = info;
    Ok(Outcome { curves, results })
}

fn oracle(cfg: &RunConfig) -> CliResult<Outcome> {
    let base = base_instance(cfg)?;
    let pts = sweep(&cfg.m_codewords, |m| {
        let found = exact(&base.with_codewords(m)?, cfg.budget)?;
        Ok(Evaluation {
            raw: found.eps_star,
            params: json!({
                "m": m,
                "code": found.code,
                "partitions_visited": found.partitions_visited,
            }),
        })
    })?;
    let curves = vec![curve_from("oracle", Direction::Exact, pts)];
    Ok(Outcome {
        results: curve_summary(&curves),
        curves,
    })
}

fn sim_evaluation(construction: &str, bound: &Evaluation, report: &SimReport) -> Evaluation {
    let mut params = bound.params.clone();
    params["construction"] = json!(construction);
    params["trials"] = json!(report.trials);
    params["seed"] = json!(report.seed);
    params["excess_count"] = json!(report.excess_count);
    params["std_error"] = json!(report.std_error);
    params["bound"] = json!(bound.value());
    Evaluation {
        raw: report.estimate,
        params,
    }
}

fn param_vec(ev: &Evaluation, key: &str) -> CliResult<Vec<f64>> {
    serde_json::from_value(ev.params[key].clone())
        .map_err(|e| CliError::config(format!("bound record lacks {key}: {e}")))
}

fn param_f64(ev: &Evaluation, key: &str) -> CliResult<f64> {
    ev.params[key]
        .as_f64()
        .ok_or_else(|| CliError::config(format!("bound record lacks {key}")))
}

fn simulate(cfg: &RunConfig) -> CliResult<Outcome> {
    let base = base_instance(cfg)?;
    let trials = cfg.trials.ok_or_else(|| CliError::config("simulation needs --trials"))?;
    let seed = cfg.seed.ok_or_else(|| CliError::config("simulation needs --seed"))?;
    let (joint_extra, indirect_extra) = split_candidates(cfg, &base)?;
    let ms = &cfg.m_codewords;
    let mut curves = Vec::new();
    let mut push_pair = |name: &str, pts: Vec<(usize, (Evaluation, Evaluation))>| {
        let (bounds, sims): (Vec<_>, Vec<_>) =
            pts.into_iter().map(|(m, (b, s))| ((m, b), (m, s))).unzip();
        curves.push(curve_from(name, Direction::Upper, bounds));
        curves.push(curve_from(&format!("sim_{name}"), Direction::Estimate, sims));
    };
    if base.is_logloss() {
        let g = grids(cfg);
        let pts = sweep(ms, |m| {
            let inst = base.with_codewords(m)?;
            let bound = thm5_optimize(&inst, &indirect_extra, &g)?;
            let p = param_vec(&bound, "output_distribution")?;
            let e = param_f64(&bound, "epsilon_prime")?;
            let gamma = param_f64(&bound, "gamma")?;
            let report = simulate_thm5_code(&inst, &p, e, gamma, trials, seed)?;
            let sim = sim_evaluation("thm5", &bound, &report);
            Ok((bound, sim))
        })?;
        push_pair("thm5", pts);
    } else {
        let joint = solve_joint(
            base.source(),
            base.d1(),
            base.d2(),
            base.d1_level(),
            base.d2_level(),
        )
        .ok();
        let mut cands = thm1_candidates_from(&base, joint.as_ref())?;
        cands.extend(joint_extra);
        let pts = sweep(ms, |m| {
            let inst = base.with_codewords(m)?;
            let found = thm1_optimize_over(&inst, &cands, REFINEMENT_STEPS)?;
            let report = simulate_thm1_code(&inst, &found.q, trials, seed)?;
            let sim = sim_evaluation("thm1", &found.eval, &report);
            Ok((found.eval, sim))
        })?;
        push_pair("thm1", pts);
        if base.d1_level() == f64::INFINITY {
            let eps = cfg.eps_prime_grid.as_deref();
            let pts = sweep(ms, |m| {
                let inst = base.with_codewords(m)?;
                let bound = thm4_optimize(&inst, &indirect_extra, eps)?;
                let p = param_vec(&bound, "output_distribution")?;
                let e = param_f64(&bound, "epsilon_prime")?;
                let report = simulate_thm4_code(&inst, &p, e, trials, seed)?;
                let sim = sim_evaluation("thm4", &bound, &report);
                Ok((bound, sim))
            })?;
            push_pair("thm4", pts);
        }
    }
    Ok(Outcome {
        results: curve_summary(&curves),
        curves,
    })
}

fn example(cfg: &RunConfig) -> CliResult<Outcome> {
    let ExampleParams { m, n, p, d1, d2 } = cfg.example.unwrap_or_default();
    let ms = &cfg.m_codewords;
    let lower = example_conv_curve(m, ms)?;
    let upper = example_ach_curve(m, n, p, d1, d2, ms, cfg.gamma_grid.as_deref())?;
    let inst = example_instance(m, n, p, d1, d2, 1)?;
    let generic = ConverseProblem::cor1(&inst)?;
    let grid = cfg.gamma_grid.as_deref();
    let mode = mode(cfg);
    let pts = sweep(ms, |mc| Ok(generic.evaluate(mc, grid, mode)?.evaluation()))?;
    let cor1 = curve_from("cor1", Direction::Lower, pts);

    let ordered = |c: &BoundCurve| {
        let mut c = c.clone();
        c.sort();
        c
    };
    let (lo, up) = (ordered(&lower), ordered(&upper));
    let lower_below_upper = lo
        .points
        .iter()
        .zip(&up.points)
        .all(|(a, b)| a.value <= b.value);
    let closed_form = lo
        .points
        .iter()
        .all(|pt| (pt.value - (1.0 - pt.m as f64 / m as f64).max(0.0)).abs() <= CLOSED_FORM_TOL);
    let curves = vec![lower, upper, cor1];
    let mut results = curve_summary(&curves);
    results["checks"] = json!({
        "lower_below_upper": lower_below_upper,
        "lower_matches_closed_form": closed_form,
    });
    results["converse_case"] = json!(generic.case());
    Ok(Outcome { curves, results })
}

/// Clipped values per curve, keyed by tag.
fn curve_summary(curves: &[BoundCurve]) -> Value {
    let mut map = serde_json::Map::new();
    for c in curves {
        let mut c = c.clone();
        c.sort();
        map.insert(
            c.tag.clone(),
            json!({
                "direction": c.direction,
                "m": c.points.iter().map(|p| p.m).collect::<Vec<_>>(),
                "value": c.values(),
            }),
        );
    }
    json!({ "curves": Value::Object(map) })
}
