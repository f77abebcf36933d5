use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A ratio or statistic that may be mathematically undefined.
///
/// Degenerate inputs (zero denominators, zero variance) produce
/// [`Score::Undefined`] instead of a NaN. Only the rendering layer turns it
/// into the literal `NaN`; JSON carries it as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Score {
    Defined(f64),
    #[default]
    Undefined,
}

impl Score {
    /// `num / den`, undefined when `den == 0`.
    pub fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Score::Undefined
        } else {
            Score::Defined(num / den)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Score::Defined(v) => Some(v),
            Score::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Score::Defined(_))
    }

    /// True only when defined and strictly greater than `threshold`.
    pub fn exceeds(self, threshold: f64) -> bool {
        matches!(self, Score::Defined(v) if v > threshold)
    }

    /// Render with a fixed number of decimals, `NaN` when undefined.
    pub fn render(self, decimals: usize) -> String {
        match self {
            Score::Defined(v) => format!("{v:.decimals$}"),
            Score::Undefined => "NaN".to_string(),
        }
    }
}

impl From<Option<f64>> for Score {
    fn from(v: Option<f64>) -> Self {
        match v {
            Some(v) if v.is_finite() => Score::Defined(v),
            _ => Score::Undefined,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Defined(v) => write!(f, "{v}"),
            Score::Undefined => f.write_str("NaN"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(Option::<f64>::deserialize(deserializer)?.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_denominator_is_undefined() {
        assert_eq!(Score::ratio(0.0, 0.0), Score::Undefined);
        assert_eq!(Score::ratio(1.0, 4.0), Score::Defined(0.25));
    }

    #[test]
    fn undefined_never_exceeds() {
        assert!(!Score::Undefined.exceeds(-1.0));
        assert!(!Score::Defined(0.5).exceeds(0.5));
        assert!(Score::Defined(0.51).exceeds(0.5));
    }

    #[test]
    fn serde_uses_null() {
        let json = serde_json::to_string(&[Score::Defined(1.5), Score::Undefined]).unwrap();
        assert_eq!(json, "[1.5,null]");
        let back: Vec<Score> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Score::Defined(1.5), Score::Undefined]);
    }

    #[test]
    fn renders_nan_token() {
        assert_eq!(Score::Undefined.render(3), "NaN");
        assert_eq!(Score::Defined(0.12345).render(3), "0.123");
    }
}
