//! Serde helpers for floats that may be infinite.
//!
//! JSON has no infinity literal, so infinite values are written as the string
//! `"inf"`. Reading accepts numbers, `"inf"`/`"infinity"` and TOML's native `inf`.

use serde::{Deserialize, Deserializer, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum FloatOrText {
    Float(f64),
    Text(String),
}

pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.is_infinite() {
        s.serialize_str(if *value > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*value)
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match FloatOrText::deserialize(d)? {
        FloatOrText::Float(v) => Ok(v),
        FloatOrText::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| serde::de::Error::custom(format!("expected a number or \"inf\", found \"{t}\""))),
        },
    }
}
