//! Case and scenario documents.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Deserialize;
use synctrack_core::comms::CommsConfig;
use synctrack_core::engine::{IntegrationConfig, RecordConfig, Scenario, ScheduledEvent};
use synctrack_core::netmodel::{Case, CaseDocument};
use synctrack_core::wacs::ControllerConfig;

/// Cases shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("smib", include_str!("../cases/smib.json")),
    ("two_machine", include_str!("../cases/two_machine.json")),
    ("ninebus", include_str!("../cases/ninebus.json")),
];

pub fn parse_case(text: &str) -> Result<Case> {
    let doc: CaseDocument = serde_json::from_str(text).context("case document")?;
    Ok(Case::from_document(&doc)?)
}

pub fn bundled_case(name: &str) -> Option<Case> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_case(text).expect("bundled cases are valid"))
}

/// Reads a case file; a path that does not exist is looked up among the
/// bundled case names.
pub fn load_case(path: &Path) -> Result<Case> {
    if !path.exists() {
        if let Some(c) = path.to_str().and_then(bundled_case) {
            return Ok(c);
        }
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_case(&text).with_context(|| format!("in {}", path.display()))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CaseSource {
    Path(String),
    Inline(Box<CaseDocument>),
}

/// Scenario file layout. `case` is a path (relative to the scenario file),
/// a bundled case name, or an inline case document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    #[serde(default)]
    case: Option<CaseSource>,
    #[serde(default)]
    events: Vec<ScheduledEvent>,
    #[serde(default)]
    controller: Option<ControllerConfig>,
    #[serde(default)]
    comms: CommsConfig,
    #[serde(default)]
    integration: IntegrationConfig,
    #[serde(default)]
    record: RecordConfig,
    #[serde(default)]
    seed: u64,
}

/// Parses a scenario. `base` resolves relative case paths; `case` overrides
/// the document's case.
pub fn parse_scenario(text: &str, base: Option<&Path>, case: Option<Case>) -> Result<Scenario> {
    let doc: ScenarioDocument = serde_json::from_str(text).context("scenario document")?;
    let case = match (case, doc.case) {
        (Some(c), _) => c,
        (None, Some(CaseSource::Inline(d))) => Case::from_document(&d)?,
        (None, Some(CaseSource::Path(p))) => {
            let mut path = PathBuf::from(&p);
            if path.is_relative() {
                if let Some(b) = base {
                    let joined = b.join(&path);
                    if joined.exists() {
                        path = joined;
                    }
                }
            }
            load_case(&path)?
        }
        (None, None) => return Err(anyhow!("scenario has no case and none was given")),
    };
    let s = Scenario {
        case,
        events: doc.events,
        controller: doc.controller,
        comms: doc.comms,
        integration: doc.integration,
        record: doc.record,
        seed: doc.seed,
    };
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(path: &Path, case: Option<Case>) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text, path.parent(), case).with_context(|| format!("in {}", path.display()))
}
