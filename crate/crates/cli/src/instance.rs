//! JSON instance schema.

use excess_bounds::source::{Alphabet, DistortionSpec, JointSource, ProblemInstance};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    Matrix,
    Hamming,
    Logloss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionJson {
    pub kind: DistortionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction_alphabet: Option<Alphabet>,
}

impl DistortionJson {
    /// `source` is the alphabet the measure is defined on; Hamming defaults
    /// to it as the reconstruction alphabet.
    fn to_spec(&self, source: &Alphabet, which: &str) -> excess_bounds::Result<DistortionSpec> {
        match self.kind {
            DistortionKind::Logloss => {
                if self.matrix.is_some() || self.reconstruction_alphabet.is_some() {
                    return Err(excess_bounds::Error::InvalidInput(format!(
                        "{which}: log-loss takes no matrix or reconstruction alphabet"
                    )));
                }
                Ok(DistortionSpec::LogLoss)
            }
            DistortionKind::Hamming => Ok(DistortionSpec::hamming(
                self.reconstruction_alphabet.clone().unwrap_or_else(|| source.clone()),
            )),
            DistortionKind::Matrix => {
                let matrix = self.matrix.clone().ok_or_else(|| {
                    excess_bounds::Error::InvalidInput(format!("{which}: matrix kind needs \"matrix\""))
                })?;
                let alphabet = match &self.reconstruction_alphabet {
                    Some(a) => a.clone(),
                    None => Alphabet::indexed(matrix.first().map_or(0, Vec::len))?,
                };
                DistortionSpec::matrix(matrix, alphabet)
            }
        }
    }
}

/// Source, both distortion measures and both levels. Levels accept
/// `"inf"` for an inactive constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub x_alphabet: Alphabet,
    pub y_alphabet: Alphabet,
    pub p_xy: Vec<Vec<f64>>,
    pub d1: DistortionJson,
    pub d2: DistortionJson,
    #[serde(rename = "D1", with = "level")]
    pub d1_level: f64,
    #[serde(rename = "D2", with = "level")]
    pub d2_level: f64,
}

impl InstanceSpec {
    pub fn to_instance(&self, codewords: usize) -> excess_bounds::Result<ProblemInstance> {
        let source = JointSource::new(
            self.x_alphabet.clone(),
            self.y_alphabet.clone(),
            self.p_xy.clone(),
        )?;
        let d1 = self.d1.to_spec(&self.x_alphabet, "d1")?;
        let d2 = self.d2.to_spec(&self.y_alphabet, "d2")?;
        ProblemInstance::new(source, d1, d2, self.d1_level, self.d2_level, codewords)
    }
}

mod level {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
                _ => Err(serde::de::Error::custom(format!(
                    "distortion level must be a number or \"inf\", got {t:?}"
                ))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn bsc() -> serde_json::Value {
        json!({
            "x_alphabet": [0, 1],
            "y_alphabet": ["a", "b"],
            "p_xy": [[0.45, 0.05], [0.05, 0.45]],
            "d1": {"kind": "hamming"},
            "d2": {"kind": "matrix", "matrix": [[0, 1], [1, 0]]},
            "D1": 0,
            "D2": "inf"
        })
    }

    #[test]
    fn parses_and_builds() {
        let spec: InstanceSpec = serde_json::from_value(bsc()).unwrap();
        assert_eq!(spec.d2_level, f64::INFINITY);
        let inst = spec.to_instance(2).unwrap();
        assert_eq!(inst.x_len(), 2);
        assert_eq!(inst.y_hat_len(), 2);
        assert_eq!(inst.codewords(), 2);
    }

    #[test]
    fn round_trips_infinite_levels() {
        let spec: InstanceSpec = serde_json::from_value(bsc()).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"D2\":\"inf\""));
        let back: InstanceSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rejects_logloss_inference() {
        let mut v = bsc();
        v["d2"] = json!({"kind": "logloss"});
        let spec: InstanceSpec = serde_json::from_value(v).unwrap();
        assert!(spec.to_instance(1).is_err());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_levels() {
        let mut v = bsc();
        v["extra"] = json!(1);
        assert!(serde_json::from_value::<InstanceSpec>(v).is_err());
        let mut v = bsc();
        v["D1"] = json!("large");
        assert!(serde_json::from_value::<InstanceSpec>(v).is_err());
    }
}
