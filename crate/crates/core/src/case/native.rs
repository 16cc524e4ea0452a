//! Native JSON case format.
//!
//! The document mirrors [`PowerSystemCase`] directly:
//!
//! ```json
//! {
//!   "base_mva": 100.0,
//!   "angle_unit": "rad",
//!   "buses":  [ {"id": 1, "bus_kind": "dynamic", "V_setpoint": 1.0,
//!                "theta_setpoint": 0.0, "P_load": 0.0, "Q_load": 0.0} ],
//!   "lines":  [ {"from_bus": 1, "to_bus": 2, "r": 0.01, "x": 0.3, "b_shunt": 0.04} ],
//!   "devices": { "1": {"device_kind": "SG", "params": { ... },
//!                      "setpoints": {"P": 0.5, "Q": 0.1, "theta": 0.0, "V": 1.0}} }
//! }
//! ```
//!
//! `angle_unit` is optional and defaults to `"rad"`; with `"deg"`, every
//! angle in the document (`theta_setpoint` and device setpoint `theta`) is
//! converted to radians while loading. In memory and on re-serialization
//! angles are always radians, so `serialize` followed by `parse_str` round-trips
//! to a structurally equal case.

use std::path::Path;

use serde::Deserialize;

use super::PowerSystemCase;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AngleUnit {
    Rad,
    Deg,
}

/// Parse a native-format case from a JSON string.
pub fn parse_str(text: &str) -> Result<PowerSystemCase> {
    // Two stages: syntax first (with line/column in errors), then the typed
    // decode. The `angle_unit` marker is peeled off before the typed stage.
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let unit = match value.as_object_mut().and_then(|o| o.remove("angle_unit")) {
        None => AngleUnit::Rad,
        Some(raw) => serde_json::from_value(raw).map_err(|e| Error::Parse {
            location: "angle_unit".into(),
            message: e.to_string(),
        })?,
    };
    let mut case: PowerSystemCase = serde_json::from_value(value).map_err(|e| Error::Parse {
        location: "document".into(),
        message: e.to_string(),
    })?;
    if unit == AngleUnit::Deg {
        let to_rad = std::f64::consts::PI / 180.0;
        for b in &mut case.buses {
            b.theta_setpoint *= to_rad;
        }
        for spec in case.devices.values_mut() {
            spec.setpoints_mut().theta *= to_rad;
        }
    }
    case.normalize_order();
    Ok(case)
}

/// Load a native-format case from disk.
pub fn load(path: &Path) -> Result<PowerSystemCase> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_str(&text)
}

/// Serialize a case to pretty-printed native JSON (always radians).
pub fn to_json_string(case: &PowerSystemCase) -> Result<String> {
    serde_json::to_string_pretty(case)
        .map_err(|e| Error::Parse { location: "serializer".into(), message: e.to_string() })
}
