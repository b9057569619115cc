use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AggregateError;

/// Convex weights over (HA, consistency, contrastivity, robustness).
///
/// Serialized as the array `[w_ha, w_cn, w_ct, w_r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct WeightVector {
    w_ha: f64,
    w_cn: f64,
    w_ct: f64,
    w_r: f64,
}

impl WeightVector {
    pub fn new(w_ha: f64, w_cn: f64, w_ct: f64, w_r: f64) -> Result<Self, AggregateError> {
        let all = [w_ha, w_cn, w_ct, w_r];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(AggregateError::WeightInvalid("weights must be finite and non-negative".into()));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AggregateError::WeightInvalid(format!("weights must sum to 1 (got {sum})")));
        }
        Ok(Self { w_ha, w_cn, w_ct, w_r })
    }

    pub fn equal() -> Self {
        Self {
            w_ha: 0.25,
            w_cn: 0.25,
            w_ct: 0.25,
            w_r: 0.25,
        }
    }

    pub fn ha(&self) -> f64 {
        self.w_ha
    }

    pub fn cn(&self) -> f64 {
        self.w_cn
    }

    pub fn ct(&self) -> f64 {
        self.w_ct
    }

    pub fn r(&self) -> f64 {
        self.w_r
    }
}

impl Default for WeightVector {
    fn default() -> Self {
        Self::equal()
    }
}

impl TryFrom<[f64; 4]> for WeightVector {
    type Error = AggregateError;

    fn try_from(w: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(w[0], w[1], w[2], w[3])
    }
}

impl From<WeightVector> for [f64; 4] {
    fn from(w: WeightVector) -> Self {
        [w.w_ha, w.w_cn, w.w_ct, w.w_r]
    }
}

/// Parses `"ha,cn,ct,r"`.
impl FromStr for WeightVector {
    type Err = AggregateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(AggregateError::WeightInvalid(format!(
                "expected 4 comma-separated weights (ha,cn,ct,r), got {}",
                parts.len()
            )));
        }
        let mut w = [0.0; 4];
        for (slot, p) in w.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| AggregateError::WeightInvalid(format!("not a number: {p:?}")))?;
        }
        Self::try_from(w)
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.w_ha, self.w_cn, self.w_ct, self.w_r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_validate() {
        let w: WeightVector = "0.4,0.2,0.2,0.2".parse().unwrap();
        assert_eq!(w.ha(), 0.4);
        let err = "0.3,0.3,0.3,0.2".parse::<WeightVector>().unwrap_err();
        assert!(err.to_string().contains("weights must sum to 1"));
        assert!("0.5,0.5,0.5,-0.5".parse::<WeightVector>().is_err());
        assert!("1,0,0".parse::<WeightVector>().is_err());
    }

    #[test]
    fn serde_as_array() {
        let s = serde_json::to_string(&WeightVector::equal()).unwrap();
        assert_eq!(s, "[0.25,0.25,0.25,0.25]");
        assert!(serde_json::from_str::<WeightVector>("[0.5,0.5,0.5,0.5]").is_err());
    }
}
