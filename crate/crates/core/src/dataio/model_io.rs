//! Versioned JSON model documents.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "dims": {"K": 2, "T": 365, "d": 1},
//!   "beta": [[[1.0, 0.7, 0.5]], [[-1.0, -0.6, 0.7]]],
//!   "pi": [0.5, 0.5],
//!   "emissions": {"family": "gaussian_periodic_mean", "period": 365, ...}
//! }
//! ```
//!
//! `beta[i][j]` holds the `2d + 1` coefficients of the logit of `Q_ij` relative
//! to the last state, which has no entry. Floats are written in shortest
//! round-trip form, so loading a saved model reproduces it bitwise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emissions::Emissions;
use crate::error::{Result, ShmmError};
use crate::model::{ModelDims, PeriodicLogitTransition, SeasonalHMM};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub dims: ModelDims,
    pub beta: Vec<Vec<Vec<f64>>>,
    pub pi: Vec<f64>,
    pub emissions: Emissions,
}

impl ModelDocument {
    pub fn from_model(model: &SeasonalHMM) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dims: model.dims,
            beta: model.transition.to_nested(),
            pi: model.pi.clone(),
            emissions: model.emissions.clone(),
        }
    }

    pub fn into_model(self) -> Result<SeasonalHMM> {
        let dims = ModelDims::new(self.dims.states, self.dims.period, self.dims.degree)?;
        let transition = PeriodicLogitTransition::from_nested(dims, &self.beta)?;
        SeasonalHMM::new(transition, self.emissions, self.pi)
    }
}

pub fn to_json_string(model: &SeasonalHMM) -> String {
    serde_json::to_string_pretty(&ModelDocument::from_model(model)).expect("model serializes")
}

pub fn from_json_str(text: &str) -> Result<SeasonalHMM> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| ShmmError::Schema("missing or non-integer schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(ShmmError::Schema(format!(
            "unsupported schema_version {version} (supported: {SCHEMA_VERSION})"
        )));
    }
    let family = value
        .get("emissions")
        .and_then(|e| e.get("family"))
        .ok_or_else(|| ShmmError::Schema("emissions.family is missing".into()))?;
    match family.as_str() {
        Some(tag) if Emissions::FAMILY_TAGS.contains(&tag) => {}
        _ => {
            return Err(ShmmError::Schema(format!(
                "unknown emission family {family} (known: {})",
                Emissions::FAMILY_TAGS.join(", ")
            )))
        }
    }
    let doc: ModelDocument = serde_json::from_value(value)?;
    doc.into_model()
}

pub fn save_model(model: &SeasonalHMM, path: &Path) -> Result<()> {
    let mut text = to_json_string(model);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SeasonalHMM> {
    from_json_str(&fs::read_to_string(path)?)
}

/// SHA-256 (hex) of the serialized model.
pub fn fingerprint(model: &SeasonalHMM) -> String {
    hex::encode(Sha256::digest(to_json_string(model).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn round_trip_is_bitwise() {
        for m in [presets::simulation_study(), presets::precipitation()] {
            let back = from_json_str(&to_json_string(&m)).unwrap();
            assert_eq!(back, m);
            for (a, b) in back.transition.beta().iter().zip(m.transition.beta()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(fingerprint(&back), fingerprint(&m));
        }
    }

    #[test]
    fn unknown_family_is_named() {
        let text = to_json_string(&presets::simulation_study())
            .replace("gaussian_periodic_mean", "student_t");
        match from_json_str(&text) {
            Err(ShmmError::Schema(msg)) => assert!(msg.contains("student_t"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = to_json_string(&presets::simulation_study())
            .replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(from_json_str(&text), Err(ShmmError::Schema(_))));
    }
}
