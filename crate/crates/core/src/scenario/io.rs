use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::Scenario;

/// Serializes a scenario as a pretty-printed JSON document.
pub fn scenario_to_string(s: &Scenario) -> String {
    serde_json::to_string_pretty(s).expect("scenario serialization is infallible")
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let mut text = scenario_to_string(s);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parses a scenario document. Headings outside `(-pi, pi]` are normalized;
/// each normalization is returned as a warning message.
pub fn parse_scenario(text: &str) -> Result<(Scenario, Vec<String>)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse(format!(
            "line {} column {} at `{}`: {}",
            inner.line(),
            inner.column(),
            path,
            inner
        ))
    })?;
    let warnings = s.normalize_headings();
    s.validate()?;
    Ok((s, warnings))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let (s, warnings) = parse_scenario(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(s)
}
