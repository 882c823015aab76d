//! Exhaustive minimum excess probability on small instances.
//!
//! Encoders are enumerated as restricted growth strings (cell labels in
//! order of first use), so relabelings of the same partition are visited
//! once. Given the partition, the best decoder is chosen cell by cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{logloss_cover_count, DirectReconstruction, ProblemInstance};

/// Default cap on `M^{|X|} · (decoder choices per cell)`.
pub const DEFAULT_BUDGET: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderEntry {
    pub direct: DirectReconstruction,
    pub indirect: usize,
}

/// A concrete code. Indices are 0-based; `encoder` is indexed by the
/// instance's (support-pruned) source alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeRealization {
    pub encoder: Vec<usize>,
    pub decoder: Vec<DecoderEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cover: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub eps_star: f64,
    pub code: CodeRealization,
    pub partitions_visited: u64,
}

/// `ε` of a specific code.
pub fn code_excess_probability(instance: &ProblemInstance, code: &CodeRealization) -> Result<f64> {
    if code.encoder.len() != instance.x_len() {
        return Err(Error::invalid("encoder must cover every source symbol"));
    }
    let mut total = 0.0;
    for (x, &i) in code.encoder.iter().enumerate() {
        let entry = code
            .decoder
            .get(i)
            .ok_or_else(|| Error::invalid(format!("encoder uses index {i} without decoder entry")))?;
        total += instance.p_x()[x] * instance.excess_kernel_pi(x, &entry.direct, entry.indirect)?;
    }
    Ok(total)
}

fn check_budget(instance: &ProblemInstance, per_cell: f64, budget: f64) -> Result<()> {
    let required = (instance.codewords() as f64).powi(instance.x_len() as i32) * per_cell;
    if required > budget {
        return Err(Error::Budget { required, budget });
    }
    Ok(())
}

/// Visit every partition of `0..n` into at most `k` labelled-by-first-use
/// cells, in lexicographic order of the label string.
fn for_each_partition(n: usize, k: usize, mut visit: impl FnMut(&[usize], usize)) -> u64 {
    let mut labels = vec![0usize; n];
    let mut count = 0u64;
    fn rec(
        pos: usize,
        used: usize,
        k: usize,
        labels: &mut [usize],
        visit: &mut dyn FnMut(&[usize], usize),
        count: &mut u64,
    ) {
        if pos == labels.len() {
            *count += 1;
            visit(labels, used);
            return;
        }
        let top = (used + 1).min(k);
        for c in 0..top {
            labels[pos] = c;
            rec(pos + 1, used.max(c + 1), k, labels, visit, count);
        }
    }
    rec(0, 0, k, &mut labels, &mut visit, &mut count);
    count
}

/// Best decoder entry for one cell and its excess mass.
type CellSolver<'a> = dyn Fn(&[usize]) -> (f64, DecoderEntry) + 'a;

fn search(
    instance: &ProblemInstance,
    cell: &CellSolver<'_>,
    idle: DecoderEntry,
    cover: Option<usize>,
) -> OracleResult {
    let nx = instance.x_len();
    let m = instance.codewords();
    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    let mut members: Vec<Vec<usize>> = Vec::new();
    let visited = for_each_partition(nx, m, |labels, used| {
        members.iter_mut().for_each(Vec::clear);
        members.resize(used.max(members.len()), Vec::new());
        for (x, &c) in labels.iter().enumerate() {
            members[c].push(x);
        }
        let total: f64 = members[..used].iter().map(|s| cell(s).0).sum();
        if best.as_ref().map_or(true, |b| total < b.0) {
            best = Some((total, labels.to_vec(), used));
        }
    });
    let (eps, encoder, used) = best.expect("at least one partition");
    let mut decoder: Vec<DecoderEntry> = (0..used)
        .map(|c| {
            let xs: Vec<usize> = (0..nx).filter(|&x| encoder[x] == c).collect();
            cell(&xs).1
        })
        .collect();
    decoder.resize(m, idle);
    OracleResult {
        eps_star: eps,
        code: CodeRealization {
            encoder,
            decoder,
            bins: None,
            cover,
        },
        partitions_visited: visited,
    }
}

/// Exact `ε*(M, D1, D2)` for a finite direct alphabet.
pub fn exact_eps_star(instance: &ProblemInstance, budget: f64) -> Result<OracleResult> {
    if instance.is_logloss() {
        return Err(Error::invalid("use exact_eps_star_logloss for log-loss instances"));
    }
    let pi = instance.pi_table()?;
    let ncols = pi[0].len();
    check_budget(instance, ncols as f64, budget)?;
    let nb = instance.y_hat_len();
    let p_x = instance.p_x();
    let cell = |xs: &[usize]| {
        let mut best = (f64::INFINITY, 0);
        for c in 0..ncols {
            let v: f64 = xs.iter().map(|&x| p_x[x] * pi[x][c]).sum();
            if v < best.0 {
                best = (v, c);
            }
        }
        (
            best.0,
            DecoderEntry {
                direct: DirectReconstruction::Symbol(best.1 / nb),
                indirect: best.1 % nb,
            },
        )
    };
    let idle = DecoderEntry {
        direct: DirectReconstruction::Symbol(0),
        indirect: 0,
    };
    Ok(search(instance, &cell, idle, None))
}

/// Log-loss reconstruction covering `covered` with mass at least `2^{-D1}`
/// each (capped at `1/|covered|`); the remainder goes to the covered symbol
/// of largest prior mass.
fn cover_distribution(p_x: &[f64], covered: &[usize], d1: f64) -> Vec<f64> {
    if covered.is_empty() {
        return p_x.to_vec();
    }
    let each = (-d1).exp2().min(1.0 / covered.len() as f64);
    let mut q = vec![0.0; p_x.len()];
    for &x in covered {
        q[x] = each;
    }
    let heavy = *covered
        .iter()
        .max_by(|&&a, &&b| p_x[a].total_cmp(&p_x[b]).then(b.cmp(&a)))
        .expect("nonempty");
    q[heavy] += (1.0 - each * covered.len() as f64).max(0.0);
    q
}

/// Exact `ε*` under log-loss: each cell covers its `⌊2^{D1}⌋` symbols of
/// largest `P(x) · P[d2(Y, ŷ) ≤ D2 | X = x]`.
pub fn exact_eps_star_logloss(instance: &ProblemInstance, budget: f64) -> Result<OracleResult> {
    if !instance.is_logloss() {
        return Err(Error::invalid("exact_eps_star_logloss needs a log-loss direct distortion"));
    }
    let nx = instance.x_len();
    let nb = instance.y_hat_len();
    check_budget(instance, (nb * nx) as f64, budget)?;
    let d1 = instance.d1_level();
    let cover = logloss_cover_count(d1);
    let p_x = instance.p_x();
    let excess = instance.indirect_excess_table();
    let cell = |xs: &[usize]| {
        let mass: f64 = xs.iter().map(|&x| p_x[x]).sum();
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        let mut order = xs.to_vec();
        for b in 0..nb {
            let w = |x: usize| p_x[x] * (1.0 - excess[x][b]);
            order.sort_by(|&u, &v| w(v).total_cmp(&w(u)).then(u.cmp(&v)));
            let take = cover.min(order.len());
            let success: f64 = order[..take].iter().map(|&x| w(x)).sum();
            let v = mass - success;
            if best.as_ref().map_or(true, |bb| v < bb.0) {
                let mut covered = order[..take].to_vec();
                covered.sort_unstable();
                best = Some((v, b, covered));
            }
        }
        let (v, b, covered) = best.expect("nonempty indirect alphabet");
        (
            v.max(0.0),
            DecoderEntry {
                direct: DirectReconstruction::Distribution(cover_distribution(p_x, &covered, d1)),
                indirect: b,
            },
        )
    };
    let idle = DecoderEntry {
        direct: DirectReconstruction::Distribution(p_x.to_vec()),
        indirect: 0,
    };
    Ok(search(instance, &cell, idle, Some(cover)))
}

/// Dispatch on the direct distortion kind.
pub fn exact(instance: &ProblemInstance, budget: f64) -> Result<OracleResult> {
    if instance.is_logloss() {
        exact_eps_star_logloss(instance, budget)
    } else {
        exact_eps_star(instance, budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{Alphabet, DistortionSpec, JointSource};
    use proptest::prelude::*;

    fn ham(n: usize) -> DistortionSpec {
        DistortionSpec::hamming(Alphabet::indexed(n).unwrap())
    }

    fn bsc(d1: f64, d2: f64, m: usize) -> ProblemInstance {
        let src = JointSource::new(
            Alphabet::indexed(2).unwrap(),
            Alphabet::indexed(2).unwrap(),
            vec![vec![0.45, 0.05], vec![0.05, 0.45]],
        )
        .unwrap();
        ProblemInstance::new(src, ham(2), ham(2), d1, d2, m).unwrap()
    }

    fn identity(n: usize, m: usize) -> ProblemInstance {
        let p = 1.0 / n as f64;
        let src = JointSource::new(
            Alphabet::indexed(n).unwrap(),
            Alphabet::indexed(n).unwrap(),
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { p } else { 0.0 }).collect())
                .collect(),
        )
        .unwrap();
        ProblemInstance::new(src, ham(n), ham(n), 0.0, 0.0, m).unwrap()
    }

    /// Independent check: minimum over partitions into at most `k` cells by
    /// dynamic programming over subsets.
    fn subset_dp(instance: &ProblemInstance) -> f64 {
        let pi = instance.pi_table().unwrap();
        let nx = instance.x_len();
        let full = (1usize << nx) - 1;
        let cost: Vec<f64> = (0..=full)
            .map(|s| {
                (0..pi[0].len())
                    .map(|c| {
                        (0..nx)
                            .filter(|x| s >> x & 1 == 1)
                            .map(|x| instance.p_x()[x] * pi[x][c])
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut f = vec![f64::INFINITY; full + 1];
        f[0] = 0.0;
        for _ in 0..instance.codewords() {
            let mut g = f.clone();
            for s in 1..=full {
                let low = s & s.wrapping_neg();
                let rest = s ^ low;
                let mut t = rest;
                loop {
                    let cell = t | low;
                    let v = cost[cell] + f[s ^ cell];
                    if v < g[s] {
                        g[s] = v;
                    }
                    if t == 0 {
                        break;
                    }
                    t = (t - 1) & rest;
                }
            }
            f = g;
        }
        f[full]
    }

    #[test]
    fn bsc_values() {
        let r1 = exact_eps_star(&bsc(0.0, 0.0, 1), DEFAULT_BUDGET).unwrap();
        assert!((r1.eps_star - 0.55).abs() < 1e-12);
        let r2 = exact_eps_star(&bsc(0.0, 0.0, 2), DEFAULT_BUDGET).unwrap();
        assert!((r2.eps_star - 0.1).abs() < 1e-12);
        assert_eq!(r2.code.encoder, vec![0, 1]);
        assert_eq!(r2.code.decoder[0].indirect, 0);
        assert_eq!(r2.code.decoder[1].direct, DirectReconstruction::Symbol(1));
        let r = exact_eps_star(&bsc(f64::INFINITY, f64::INFINITY, 2), DEFAULT_BUDGET).unwrap();
        assert_eq!(r.eps_star, 0.0);
    }

    #[test]
    fn lossless_with_enough_codewords() {
        for m in 3..6 {
            assert_eq!(exact_eps_star(&identity(3, m), DEFAULT_BUDGET).unwrap().eps_star, 0.0);
        }
        assert_eq!(exact_eps_star(&identity(3, 4), DEFAULT_BUDGET).unwrap().code.decoder.len(), 4);
    }

    #[test]
    fn budget_refusal() {
        let err = exact_eps_star(&identity(4, 3), 10.0).unwrap_err();
        assert!(matches!(err, Error::Budget { required, .. } if required == 81.0 * 16.0));
    }

    #[test]
    fn partitions_are_canonical() {
        // Bell numbers restricted to at most k blocks.
        let mut n = 0;
        let c = for_each_partition(4, 4, |_, _| n += 1);
        assert_eq!((c, n), (15, 15));
        assert_eq!(for_each_partition(4, 2, |_, _| {}), 8);
    }

    #[test]
    fn logloss_reductions() {
        let src = JointSource::new(
            Alphabet::indexed(4).unwrap(),
            Alphabet::indexed(2).unwrap(),
            vec![vec![0.3, 0.05], vec![0.1, 0.1], vec![0.05, 0.2], vec![0.15, 0.05]],
        )
        .unwrap();
        for m in 1..4 {
            // D1 = 0: one symbol per cell, same as point reconstructions.
            let ll = ProblemInstance::new(src.clone(), DistortionSpec::LogLoss, ham(2), 0.0, 0.0, m)
                .unwrap();
            let fin = ProblemInstance::new(src.clone(), ham(4), ham(2), 0.0, 0.0, m).unwrap();
            let a = exact_eps_star_logloss(&ll, DEFAULT_BUDGET).unwrap();
            let b = exact_eps_star(&fin, DEFAULT_BUDGET).unwrap();
            assert!((a.eps_star - b.eps_star).abs() < 1e-12);
            assert!((code_excess_probability(&ll, &a.code).unwrap() - a.eps_star).abs() < 1e-12);

            // D1 = log2 |X|: full cover, only the indirect part matters.
            let ll = ProblemInstance::new(src.clone(), DistortionSpec::LogLoss, ham(2), 2.0, 0.0, m)
                .unwrap();
            let fin =
                ProblemInstance::new(src.clone(), ham(4), ham(2), f64::INFINITY, 0.0, m).unwrap();
            let a = exact_eps_star_logloss(&ll, DEFAULT_BUDGET).unwrap();
            let b = exact_eps_star(&fin, DEFAULT_BUDGET).unwrap();
            assert!((a.eps_star - b.eps_star).abs() < 1e-12);
            assert!((code_excess_probability(&ll, &a.code).unwrap() - a.eps_star).abs() < 1e-12);
            for e in &a.code.decoder {
                if let DirectReconstruction::Distribution(q) = &e.direct {
                    assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    fn arb_instance() -> impl Strategy<Value = ProblemInstance> {
        (2usize..=4, 1usize..=3, 1usize..=3, 1usize..=3, 1usize..=3)
            .prop_flat_map(|(nx, ny, na, nb, m)| {
                (
                    proptest::collection::vec(0.01f64..1.0, nx * ny),
                    proptest::collection::vec(0.0f64..1.0, nx * na),
                    proptest::collection::vec(0.0f64..1.0, ny * nb),
                    0.0f64..0.6,
                    0.0f64..0.6,
                    Just((nx, ny, na, nb, m)),
                )
            })
            .prop_map(|(w, d1, d2, l1, l2, (nx, ny, na, nb, m))| {
                let s: f64 = w.iter().sum();
                let p: Vec<Vec<f64>> = w.chunks(ny).map(|r| r.iter().map(|v| v / s).collect()).collect();
                let src = JointSource::new(
                    Alphabet::indexed(nx).unwrap(),
                    Alphabet::indexed(ny).unwrap(),
                    p,
                )
                .unwrap();
                let d1 = DistortionSpec::matrix(
                    d1.chunks(na).map(<[f64]>::to_vec).collect(),
                    Alphabet::indexed(na).unwrap(),
                )
                .unwrap();
                let d2 = DistortionSpec::matrix(
                    d2.chunks(nb).map(<[f64]>::to_vec).collect(),
                    Alphabet::indexed(nb).unwrap(),
                )
                .unwrap();
                ProblemInstance::new(src, d1, d2, l1, l2, m).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_subset_dp_and_is_monotone(inst in arb_instance()) {
            let r = exact_eps_star(&inst, DEFAULT_BUDGET).unwrap();
            prop_assert!((r.eps_star - subset_dp(&inst)).abs() < 1e-12);
            let achieved = code_excess_probability(&inst, &r.code).unwrap();
            prop_assert!((achieved - r.eps_star).abs() < 1e-12);
            let more = exact_eps_star(&inst.with_codewords(inst.codewords() + 1).unwrap(), DEFAULT_BUDGET)
                .unwrap();
            prop_assert!(more.eps_star <= r.eps_star + 1e-15);
        }

        #[test]
        fn decoder_perturbations_never_help(inst in arb_instance()) {
            let r = exact_eps_star(&inst, DEFAULT_BUDGET).unwrap();
            let na = inst.x_hat_len().unwrap();
            let nb = inst.y_hat_len();
            for i in 0..r.code.decoder.len() {
                for a in 0..na {
                    for b in 0..nb {
                        let mut code = r.code.clone();
                        code.decoder[i] = DecoderEntry { direct: DirectReconstruction::Symbol(a), indirect: b };
                        let e = code_excess_probability(&inst, &code).unwrap();
                        prop_assert!(e >= r.eps_star - 1e-12);
                    }
                }
            }
        }
    }
}
