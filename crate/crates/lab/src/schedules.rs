//! Named Newton-Schulz coefficient schedules loaded from TOML.

use std::collections::BTreeMap;
use std::path::Path;

use muonlab_core::orthogonalize::{NsCoeffSchedule, NsCoeffs};
use serde::Deserialize;

use crate::error::{LabError, Result};

/// The schedule file shipped with the binary.
pub const BUNDLED: &str = include_str!("../schedules.toml");

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    coefficients: Vec<[f64; 3]>,
}

/// Parse a schedule document. `origin` names the source in errors.
pub fn parse_schedules(text: &str, origin: &str) -> Result<BTreeMap<String, NsCoeffSchedule>> {
    let raw: BTreeMap<String, Entry> =
        toml::from_str(text).map_err(|e| LabError::config(origin, e.to_string()))?;
    if raw.is_empty() {
        return Err(LabError::config(origin, "no schedules defined"));
    }
    raw.into_iter()
        .map(|(name, e)| {
            if e.coefficients.is_empty() {
                return Err(LabError::config(origin, format!("schedule `{name}` is empty")));
            }
            if let Some(t) = e.coefficients.iter().find(|t| t.iter().any(|v| !v.is_finite())) {
                return Err(LabError::config(origin, format!("schedule `{name}` has non-finite triple {t:?}")));
            }
            let steps = e.coefficients.iter().map(|&[a, b, c]| NsCoeffs::new(a, b, c)).collect();
            let s = NsCoeffSchedule::new(name.clone(), steps).map_err(|e| LabError::config(origin, e.to_string()))?;
            Ok((name, s))
        })
        .collect()
}

pub fn load_schedule_file(path: &Path) -> Result<BTreeMap<String, NsCoeffSchedule>> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_schedules(&text, &path.display().to_string())
}

pub fn bundled() -> BTreeMap<String, NsCoeffSchedule> {
    parse_schedules(BUNDLED, "bundled schedules").expect("bundled schedule file is valid")
}

pub fn bundled_schedule(name: &str) -> Result<NsCoeffSchedule> {
    let all = bundled();
    let names: Vec<&str> = all.keys().map(String::as_str).collect();
    all.get(name).cloned().ok_or_else(|| {
        LabError::Usage(format!("unknown schedule `{name}`; available: {}", names.join(", ")))
    })
}
