//! 17-significant-digit number encoding shared by every text artifact.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Scientific notation with 17 significant digits; round-trips any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// `f64` that serializes to JSON with exactly 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom(format!(
                "cannot encode non-finite value {}",
                self.0
            )));
        }
        serde_json::Number::from_string_unchecked(fmt_f64(self.0)).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let n = serde_json::Number::deserialize(deserializer)?;
        n.as_str()
            .parse::<f64>()
            .map(F17)
            .map_err(|e| serde::de::Error::custom(format!("bad number {n}: {e}")))
    }
}

pub fn to_f17(xs: &[f64]) -> Vec<F17> {
    xs.iter().copied().map(F17).collect()
}

pub fn from_f17(xs: &[F17]) -> Vec<f64> {
    xs.iter().map(|x| x.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let json = serde_json::to_string(&F17(x)).unwrap();
            assert_eq!(json, s);
            let back: F17 = serde_json::from_str(&json).unwrap();
            assert_eq!(back.0.to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(serde_json::to_string(&F17(f64::NAN)).is_err());
    }
}
