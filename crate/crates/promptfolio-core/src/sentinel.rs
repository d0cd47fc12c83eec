//! String sentinels for non-finite numbers in JSON artifacts.
//!
//! Plain JSON has no NaN or infinity; serializing them through
//! serde_json silently yields null, losing the distinction. Fields that
//! can legitimately be non-finite (unavailable estimates) use these
//! helpers to serialize as the strings "nan", "inf", "-inf" and to read
//! them back.

use serde::de::{Error as DeError, Unexpected, Visitor};
use serde::{Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    struct V;
    impl Visitor<'_> for V {
        type Value = f64;
        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or one of the sentinels \"nan\", \"inf\", \"-inf\"")
        }
        fn visit_f64<E: DeError>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }
        fn visit_u64<E: DeError>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_i64<E: DeError>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_str<E: DeError>(self, v: &str) -> Result<f64, E> {
            match v {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::invalid_value(Unexpected::Str(other), &self)),
            }
        }
    }
    d.deserialize_any(V)
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    struct Wrapped {
        #[serde(with = "crate::sentinel")]
        v: f64,
    }

    #[test]
    fn finite_values_stay_numbers() {
        let json = serde_json::to_string(&Wrapped { v: 1.25 }).unwrap();
        assert_eq!(json, r#"{"v":1.25}"#);
        let back: Wrapped = serde_json::from_str(&json).unwrap();
        assert_eq!(back.v, 1.25);
    }

    #[test]
    fn nonfinite_values_round_trip_through_sentinels() {
        let json = serde_json::to_string(&Wrapped { v: f64::NAN }).unwrap();
        assert_eq!(json, r#"{"v":"nan"}"#);
        let back: Wrapped = serde_json::from_str(&json).unwrap();
        assert!(back.v.is_nan());
        let json = serde_json::to_string(&Wrapped {
            v: f64::NEG_INFINITY,
        })
        .unwrap();
        assert_eq!(json, r#"{"v":"-inf"}"#);
        let back: Wrapped = serde_json::from_str(&json).unwrap();
        assert_eq!(back.v, f64::NEG_INFINITY);
    }

    #[test]
    fn unknown_strings_are_rejected() {
        assert!(serde_json::from_str::<Wrapped>(r#"{"v":"none"}"#).is_err());
    }
}
