//! Finite-alphabet joint sources, distortion measures and the excess-event
//! kernels that every bound is built from.
//!
//! All information quantities are in bits. Distortion comparisons use a
//! fixed absolute tolerance ([`DISTORTION_TOL`]) so that a reconstruction
//! sitting exactly on its level (for instance a log-loss mass of exactly
//! `2^-D1`) counts as meeting it.

use std::borrow::Cow;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Slack applied to every `d > D` excess test.
pub const DISTORTION_TOL: f64 = 1e-12;

/// Tolerance on the total mass of a joint distribution.
pub const MASS_TOL: f64 = 1e-12;

/// `true` when distortion `d` exceeds level `level`.
#[inline]
pub fn exceeds(d: f64, level: f64) -> bool {
    d > level + DISTORTION_TOL
}

/// Number of symbols a single log-loss reconstruction can give mass
/// `2^-D1` to, i.e. `floor(2^D1)` under the same tolerance as [`exceeds`].
pub fn logloss_cover_count(d1: f64) -> usize {
    if d1.is_infinite() {
        return usize::MAX;
    }
    let v = (d1 + DISTORTION_TOL).exp2().floor();
    if v >= usize::MAX as f64 {
        usize::MAX
    } else {
        (v as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::invalid("alphabet must be nonempty"));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("alphabet labels must be distinct"));
        }
        Ok(Self { labels })
    }

    /// Alphabet `{0, 1, ..., n-1}`.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl Serialize for Alphabet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.labels.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Alphabet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        // Labels may be given as strings or numbers.
        let raw: Vec<serde_json::Value> = Vec::deserialize(d)?;
        let labels = raw
            .into_iter()
            .map(|v| match v {
                serde_json::Value::String(s) => Ok(s),
                serde_json::Value::Number(n) => Ok(n.to_string()),
                other => Err(serde::de::Error::custom(format!(
                    "alphabet label must be a string or number, got {other}"
                ))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Alphabet::new(labels).map_err(serde::de::Error::custom)
    }
}

/// Joint pmf `P_XY` with rows indexed by `X` and columns by `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSource {
    x_alphabet: Alphabet,
    y_alphabet: Alphabet,
    p_xy: Vec<Vec<f64>>,
    p_x: Vec<f64>,
    p_y: Vec<f64>,
}

impl JointSource {
    pub fn new(x_alphabet: Alphabet, y_alphabet: Alphabet, p_xy: Vec<Vec<f64>>) -> Result<Self> {
        if p_xy.len() != x_alphabet.len() {
            return Err(Error::invalid(format!(
                "p_xy has {} rows but |X| = {}",
                p_xy.len(),
                x_alphabet.len()
            )));
        }
        let mut total = 0.0;
        for (i, row) in p_xy.iter().enumerate() {
            if row.len() != y_alphabet.len() {
                return Err(Error::invalid(format!(
                    "p_xy row {i} has {} entries but |Y| = {}",
                    row.len(),
                    y_alphabet.len()
                )));
            }
            for &v in row {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!("p_xy row {i} has invalid mass {v}")));
                }
                total += v;
            }
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("p_xy sums to {total}, expected 1")));
        }
        let p_x: Vec<f64> = p_xy.iter().map(|r| r.iter().sum()).collect();
        let p_y = (0..y_alphabet.len())
            .map(|j| p_xy.iter().map(|r| r[j]).sum())
            .collect();
        Ok(Self {
            x_alphabet,
            y_alphabet,
            p_xy,
            p_x,
            p_y,
        })
    }

    pub fn x_alphabet(&self) -> &Alphabet {
        &self.x_alphabet
    }

    pub fn y_alphabet(&self) -> &Alphabet {
        &self.y_alphabet
    }

    pub fn p_xy(&self) -> &[Vec<f64>] {
        &self.p_xy
    }

    pub fn p_x(&self) -> &[f64] {
        &self.p_x
    }

    pub fn p_y(&self) -> &[f64] {
        &self.p_y
    }

    pub fn in_support(&self, x: usize) -> bool {
        self.p_x.get(x).is_some_and(|&p| p > 0.0)
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.p_x.len()).filter(|&x| self.p_x[x] > 0.0).collect()
    }

    /// `P_{Y|X}(. | x)`; only defined on the support of `P_X`.
    pub fn p_y_given_x(&self, x: usize) -> Result<Vec<f64>> {
        if !self.in_support(x) {
            return Err(Error::UndefinedDensity {
                x,
                reason: "conditional P(Y|X=x) needs P_X(x) > 0",
            });
        }
        let px = self.p_x[x];
        Ok(self.p_xy[x].iter().map(|&v| v / px).collect())
    }

    /// Copy of the source with zero-mass `X` symbols removed. Returns the
    /// kept original indices alongside.
    pub fn restrict_to_support(&self) -> (JointSource, Vec<usize>) {
        let keep = self.support();
        let labels: Vec<String> = keep
            .iter()
            .map(|&x| self.x_alphabet.labels[x].clone())
            .collect();
        let p_xy: Vec<Vec<f64>> = keep.iter().map(|&x| self.p_xy[x].clone()).collect();
        let p_x = keep.iter().map(|&x| self.p_x[x]).collect();
        let source = JointSource {
            x_alphabet: Alphabet { labels },
            y_alphabet: self.y_alphabet.clone(),
            p_xy,
            p_x,
            p_y: self.p_y.clone(),
        };
        (source, keep)
    }
}

/// Distortion measure between a source alphabet and a reconstruction
/// alphabet.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionSpec {
    /// Explicit nonnegative matrix, source symbols by reconstruction symbols.
    Matrix {
        matrix: Vec<Vec<f64>>,
        reconstruction_alphabet: Alphabet,
    },
    /// `1{a != b}` with the reconstruction alphabet equal to the source one.
    Hamming { alphabet: Alphabet },
    /// `log2(1 / q(x))` for a reconstruction distribution `q`. Only valid as
    /// the direct measure.
    LogLoss,
}

impl DistortionSpec {
    pub fn matrix(matrix: Vec<Vec<f64>>, reconstruction_alphabet: Alphabet) -> Result<Self> {
        for row in &matrix {
            if row.len() != reconstruction_alphabet.len() {
                return Err(Error::invalid(format!(
                    "distortion row has {} entries, reconstruction alphabet has {}",
                    row.len(),
                    reconstruction_alphabet.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("distortion entries must be finite and >= 0"));
            }
        }
        Ok(DistortionSpec::Matrix {
            matrix,
            reconstruction_alphabet,
        })
    }

    pub fn hamming(alphabet: Alphabet) -> Self {
        DistortionSpec::Hamming { alphabet }
    }

    pub fn is_logloss(&self) -> bool {
        matches!(self, DistortionSpec::LogLoss)
    }

    pub fn reconstruction_len(&self) -> Option<usize> {
        match self {
            DistortionSpec::Matrix {
                reconstruction_alphabet,
                ..
            } => Some(reconstruction_alphabet.len()),
            DistortionSpec::Hamming { alphabet } => Some(alphabet.len()),
            DistortionSpec::LogLoss => None,
        }
    }

    pub fn reconstruction_alphabet(&self) -> Option<&Alphabet> {
        match self {
            DistortionSpec::Matrix {
                reconstruction_alphabet,
                ..
            } => Some(reconstruction_alphabet),
            DistortionSpec::Hamming { alphabet } => Some(alphabet),
            DistortionSpec::LogLoss => None,
        }
    }

    /// Explicit matrix for the finite kinds, checked against the number of
    /// source symbols.
    pub fn table(&self, source_len: usize) -> Result<Cow<'_, [Vec<f64>]>> {
        match self {
            DistortionSpec::Matrix { matrix, .. } => {
                if matrix.len() != source_len {
                    return Err(Error::invalid(format!(
                        "distortion matrix has {} rows, source alphabet has {source_len}",
                        matrix.len()
                    )));
                }
                Ok(Cow::Borrowed(matrix.as_slice()))
            }
            DistortionSpec::Hamming { alphabet } => {
                if alphabet.len() != source_len {
                    return Err(Error::invalid(
                        "hamming distortion needs the reconstruction alphabet to equal the source alphabet",
                    ));
                }
                let n = alphabet.len();
                Ok(Cow::Owned(
                    (0..n)
                        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                        .collect(),
                ))
            }
            DistortionSpec::LogLoss => Err(Error::invalid(
                "log-loss has no finite distortion matrix",
            )),
        }
    }
}

/// Log-loss distortion `log2(1 / q(x))`.
pub fn logloss(q: &[f64], x: usize) -> f64 {
    -q[x].log2()
}

/// `d̃2(x, ŷ) = E[d2(Y, ŷ) | X = x]`, rows for every `x` in the support
/// (rows outside the support are left at zero).
pub fn surrogate_distortion(source: &JointSource, d2: &DistortionSpec) -> Result<Vec<Vec<f64>>> {
    if d2.is_logloss() {
        return Err(Error::invalid(
            "indirect distortion must be an explicit matrix or hamming",
        ));
    }
    let d = d2.table(source.y_alphabet().len())?;
    let cols = d2.reconstruction_len().unwrap_or(0);
    let mut out = vec![vec![0.0; cols]; source.x_alphabet().len()];
    for (x, row) in out.iter_mut().enumerate() {
        if !source.in_support(x) {
            continue;
        }
        let py = source.p_y_given_x(x)?;
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = py.iter().zip(d.iter()).map(|(p, dy)| p * dy[b]).sum();
        }
    }
    Ok(out)
}

/// Information `ι_X(x) = log2(1 / P_X(x))` for every symbol; errors on any
/// requested symbol outside the support.
pub fn info_density(source: &JointSource) -> Vec<Option<f64>> {
    source
        .p_x()
        .iter()
        .map(|&p| (p > 0.0).then(|| -p.log2()))
        .collect()
}

pub fn info_density_at(source: &JointSource, x: usize) -> Result<f64> {
    match source.p_x().get(x) {
        Some(&p) if p > 0.0 => Ok(-p.log2()),
        _ => Err(Error::UndefinedDensity {
            x,
            reason: "symbol has zero probability",
        }),
    }
}

/// Shannon entropy in bits with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("probability masses must be finite and >= 0"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("masses sum to {s}, expected 1")));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum()
}

pub fn binary_entropy(q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("binary entropy argument {q} outside [0, 1]")));
    }
    Ok(entropy_unchecked(&[q, 1.0 - q]))
}

/// Direct-part reconstruction: a symbol of a finite alphabet, or a pmf over
/// the source alphabet for log-loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectReconstruction {
    Symbol(usize),
    Distribution(Vec<f64>),
}

/// A single-shot problem: source, both distortion measures, both levels and
/// the codebook size. Zero-mass source symbols are dropped at construction.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    source: JointSource,
    original_support: Vec<usize>,
    d1: DistortionSpec,
    d2: DistortionSpec,
    d1_level: f64,
    d2_level: f64,
    codewords: usize,
    // Derived tables, indexed by the pruned source alphabet.
    d1_table: Option<Vec<Vec<f64>>>,
    d2_table: Vec<Vec<f64>>,
    surrogate: Vec<Vec<f64>>,
    p_y_given_x: Vec<Vec<f64>>,
    indirect_excess: Vec<Vec<f64>>,
}

impl ProblemInstance {
    pub fn new(
        source: JointSource,
        d1: DistortionSpec,
        d2: DistortionSpec,
        d1_level: f64,
        d2_level: f64,
        codewords: usize,
    ) -> Result<Self> {
        if d1_level.is_nan() || d1_level < 0.0 || d2_level.is_nan() || d2_level < 0.0 {
            return Err(Error::invalid("distortion levels must be >= 0"));
        }
        if codewords == 0 {
            return Err(Error::invalid("codebook size M must be >= 1"));
        }
        if d2.is_logloss() {
            return Err(Error::invalid("log-loss is only allowed as the direct distortion"));
        }
        let full_len = source.x_alphabet().len();
        let d1_full = if d1.is_logloss() {
            None
        } else {
            Some(d1.table(full_len)?.into_owned())
        };
        let d2_table = d2.table(source.y_alphabet().len())?.into_owned();
        let (source, keep) = source.restrict_to_support();
        let d1 = match (d1, &d1_full) {
            (DistortionSpec::Matrix {
                reconstruction_alphabet,
                ..
            }, Some(full)) => DistortionSpec::Matrix {
                matrix: keep.iter().map(|&x| full[x].clone()).collect(),
                reconstruction_alphabet,
            },
            (DistortionSpec::Hamming { alphabet }, Some(full)) if keep.len() != full_len => {
                // Hamming over a pruned alphabet is an explicit matrix.
                DistortionSpec::Matrix {
                    matrix: keep.iter().map(|&x| full[x].clone()).collect(),
                    reconstruction_alphabet: alphabet,
                }
            }
            (d1, _) => d1,
        };
        let d1_table = d1_full.map(|full| keep.iter().map(|&x| full[x].clone()).collect());
        let surrogate = surrogate_distortion(&source, &d2)?;
        let p_y_given_x: Vec<Vec<f64>> = (0..source.x_alphabet().len())
            .map(|x| source.p_y_given_x(x))
            .collect::<Result<_>>()?;
        let indirect_excess = p_y_given_x
            .iter()
            .map(|py| {
                (0..d2_table.first().map_or(0, Vec::len))
                    .map(|b| {
                        py.iter()
                            .zip(&d2_table)
                            .filter(|(_, dy)| exceeds(dy[b], d2_level))
                            .map(|(p, _)| p)
                            .sum::<f64>()
                            .min(1.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            source,
            original_support: keep,
            d1,
            d2,
            d1_level,
            d2_level,
            codewords,
            d1_table,
            d2_table,
            surrogate,
            p_y_given_x,
            indirect_excess,
        })
    }

    pub fn with_codewords(&self, codewords: usize) -> Result<Self> {
        if codewords == 0 {
            return Err(Error::invalid("codebook size M must be >= 1"));
        }
        let mut out = self.clone();
        out.codewords = codewords;
        Ok(out)
    }

    /// Same instance with different distortion levels.
    pub fn with_levels(&self, d1_level: f64, d2_level: f64) -> Result<Self> {
        // Levels feed the excess tables, so rebuild through the constructor.
        ProblemInstance::new(
            self.source.clone(),
            self.d1.clone(),
            self.d2.clone(),
            d1_level,
            d2_level,
            self.codewords,
        )
    }

    pub fn source(&self) -> &JointSource {
        &self.source
    }

    /// Original indices of the kept source symbols.
    pub fn original_support(&self) -> &[usize] {
        &self.original_support
    }

    pub fn d1(&self) -> &DistortionSpec {
        &self.d1
    }

    pub fn d2(&self) -> &DistortionSpec {
        &self.d2
    }

    pub fn d1_level(&self) -> f64 {
        self.d1_level
    }

    pub fn d2_level(&self) -> f64 {
        self.d2_level
    }

    pub fn codewords(&self) -> usize {
        self.codewords
    }

    pub fn x_len(&self) -> usize {
        self.source.x_alphabet().len()
    }

    pub fn y_len(&self) -> usize {
        self.source.y_alphabet().len()
    }

    /// `|X̂|`, or `None` for log-loss.
    pub fn x_hat_len(&self) -> Option<usize> {
        self.d1_table.as_ref().map(|t| t.first().map_or(0, Vec::len))
    }

    pub fn y_hat_len(&self) -> usize {
        self.d2_table.first().map_or(0, Vec::len)
    }

    pub fn is_logloss(&self) -> bool {
        self.d1.is_logloss()
    }

    pub fn p_x(&self) -> &[f64] {
        self.source.p_x()
    }

    pub fn d1_table(&self) -> Result<&[Vec<f64>]> {
        self.d1_table
            .as_deref()
            .ok_or_else(|| Error::invalid("operation needs a finite direct distortion"))
    }

    pub fn d2_table(&self) -> &[Vec<f64>] {
        &self.d2_table
    }

    /// Surrogate distortion `d̃2` over the pruned support.
    pub fn surrogate(&self) -> &[Vec<f64>] {
        &self.surrogate
    }

    pub fn p_y_given_x(&self, x: usize) -> &[f64] {
        &self.p_y_given_x[x]
    }

    /// `π'(x, ŷ) = P[d2(Y, ŷ) > D2 | X = x]`.
    pub fn indirect_excess(&self, x: usize, y_hat: usize) -> f64 {
        self.indirect_excess[x][y_hat]
    }

    pub fn indirect_excess_table(&self) -> &[Vec<f64>] {
        &self.indirect_excess
    }

    /// Direct distortion of `x` under a reconstruction.
    pub fn direct_distortion(&self, x: usize, x_hat: &DirectReconstruction) -> Result<f64> {
        match (x_hat, &self.d1_table) {
            (DirectReconstruction::Symbol(a), Some(t)) => t[x]
                .get(*a)
                .copied()
                .ok_or_else(|| Error::invalid(format!("reconstruction symbol {a} out of range"))),
            (DirectReconstruction::Distribution(q), None) => {
                if q.len() != self.x_len() {
                    return Err(Error::invalid(format!(
                        "log-loss reconstruction has {} entries, |X| = {}",
                        q.len(),
                        self.x_len()
                    )));
                }
                Ok(logloss(q, x))
            }
            (DirectReconstruction::Symbol(_), None) => Err(Error::invalid(
                "log-loss instance needs a distribution reconstruction",
            )),
            (DirectReconstruction::Distribution(_), Some(_)) => Err(Error::invalid(
                "finite direct distortion needs a symbol reconstruction",
            )),
        }
    }

    /// `π(x, x̂, ŷ) = P[{d1(x, x̂) > D1} ∪ {d2(Y, ŷ) > D2} | X = x]`.
    pub fn excess_kernel_pi(
        &self,
        x: usize,
        x_hat: &DirectReconstruction,
        y_hat: usize,
    ) -> Result<f64> {
        if x >= self.x_len() {
            return Err(Error::invalid(format!("source symbol {x} out of range")));
        }
        if y_hat >= self.y_hat_len() {
            return Err(Error::invalid(format!("indirect reconstruction {y_hat} out of range")));
        }
        let d = self.direct_distortion(x, x_hat)?;
        Ok(if exceeds(d, self.d1_level) {
            1.0
        } else {
            self.indirect_excess[x][y_hat]
        })
    }

    /// Dense `π` table over the finite product alphabet, column `a * |Ŷ| + b`.
    pub fn pi_table(&self) -> Result<Vec<Vec<f64>>> {
        let d1 = self.d1_table()?;
        let ny = self.y_hat_len();
        Ok((0..self.x_len())
            .map(|x| {
                d1[x]
                    .iter()
                    .flat_map(|&d| {
                        let direct_fail = exceeds(d, self.d1_level);
                        (0..ny).map(move |b| (direct_fail, b))
                    })
                    .map(|(fail, b)| if fail { 1.0 } else { self.indirect_excess[x][b] })
                    .collect()
            })
            .collect())
    }

    /// `ι_X(x)` over the pruned support (always finite).
    pub fn info_density(&self) -> Vec<f64> {
        self.p_x().iter().map(|p| -p.log2()).collect()
    }

    pub fn entropy_x(&self) -> f64 {
        entropy_unchecked(self.p_x())
    }
}

/// `Y ~ Uniform{0..m-1}` and, given `Y = y`, `X` is Binomial(n, p) placed in
/// the block `y(n+1) ..= y(n+1)+n`.
pub fn build_binomial_class_source(m: usize, n: usize, p: f64) -> Result<JointSource> {
    if m < 2 {
        return Err(Error::invalid("class count m must be >= 2"));
    }
    if n < 1 {
        return Err(Error::invalid("binomial size n must be >= 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("binomial parameter {p} outside [0, 1]")));
    }
    let phi = binomial_pmf(n, p);
    let block = n + 1;
    let mut p_xy = vec![vec![0.0; m]; m * block];
    for y in 0..m {
        for (k, &mass) in phi.iter().enumerate() {
            p_xy[y * block + k][y] = mass / m as f64;
        }
    }
    JointSource::new(
        Alphabet::new((0..m * block).map(|x| format!("{}:{}", x / block, x % block)))?,
        Alphabet::indexed(m)?,
        p_xy,
    )
}

pub(crate) fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut coeff = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            coeff = coeff * (n - k + 1) as f64 / k as f64;
        }
        out.push(coeff * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32));
    }
    out
}
