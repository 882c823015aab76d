//! Bound curves over the codebook size.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Upper,
    Lower,
    /// Exhaustive optimum.
    Exact,
    /// Monte Carlo estimate.
    Estimate,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Upper => "upper",
            Direction::Lower => "lower",
            Direction::Exact => "exact",
            Direction::Estimate => "estimate",
        }
    }
}

/// A single bound evaluation: the unclipped value plus everything needed to
/// evaluate it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub raw: f64,
    pub params: Value,
}

impl Evaluation {
    pub fn value(&self) -> f64 {
        clip(self.raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub m: u64,
    pub value: f64,
    pub raw_value: f64,
    pub params: Value,
}

impl CurvePoint {
    pub fn from_evaluation(m: u64, eval: Evaluation) -> Self {
        Self {
            m,
            value: eval.value(),
            raw_value: eval.raw,
            params: eval.params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub tag: String,
    pub direction: Direction,
    pub points: Vec<CurvePoint>,
}

impl BoundCurve {
    pub fn new(tag: impl Into<String>, direction: Direction) -> Self {
        Self {
            tag: tag.into(),
            direction,
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, m: u64, eval: Evaluation) {
        self.points.push(CurvePoint::from_evaluation(m, eval));
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn sort(&mut self) {
        self.points.sort_by_key(|p| p.m);
    }
}

/// Clamp to a probability. NaN is passed through so callers notice it.
pub fn clip(v: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn clipping_keeps_raw() {
        let mut c = BoundCurve::new("t", Direction::Lower);
        c.push(3, Evaluation { raw: -0.25, params: json!({}) });
        c.push(1, Evaluation { raw: 1.5, params: json!({}) });
        c.sort();
        assert_eq!(c.points[0].m, 1);
        assert_eq!(c.values(), vec![1.0, 0.0]);
        assert_eq!(c.points[1].raw_value, -0.25);
        assert_eq!(Direction::Upper.as_str(), "upper");
    }
}
