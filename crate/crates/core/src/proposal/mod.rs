//! The seven-key research proposal: parsing model output, rendering, prompt
//! builders, document assembly and export.

mod document;
mod export;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prompts;

pub use document::{assemble_document, field_title, ResearchDocument, RESERVED_HEADERS};
pub use export::{
    csv_header, csv_row, document_csv, document_slug, export_document, ExportOptions,
    ExportedFiles, CSV_COLUMNS,
};

/// Canonical proposal keys, in document order.
pub const PROPOSAL_KEYS: [&str; 7] = [
    "hypothesis",
    "outcome",
    "mechanisms",
    "design_principles",
    "unexpected_properties",
    "comparison",
    "novelty",
];

/// Closed alias table applied after numbering, case and separator
/// normalization.
const KEY_ALIASES: &[(&str, &str)] = &[
    ("hypotheses", "hypothesis"),
    ("research_hypothesis", "hypothesis"),
    ("outcomes", "outcome"),
    ("expected_outcome", "outcome"),
    ("expected_outcomes", "outcome"),
    ("mechanism", "mechanisms"),
    ("design_principle", "design_principles"),
    ("designprinciples", "design_principles"),
    ("unexpected_property", "unexpected_properties"),
    ("unexpectedproperties", "unexpected_properties"),
    ("comparision", "comparison"),
    ("comparisons", "comparison"),
    ("novelties", "novelty"),
];

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("no JSON object found in model output: {message}")]
    Parse { message: String, raw: String },
    #[error("proposal is missing required key(s): {}", missing.join(", "))]
    Schema { missing: Vec<String>, raw: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("cannot assemble document: missing {0}")]
    Assembly(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("document conversion failed: {0}")]
    Convert(String),
}

impl ProposalError {
    /// Raw model output attached to parse and schema errors.
    pub fn raw(&self) -> Option<&str> {
        match self {
            ProposalError::Parse { raw, .. } | ProposalError::Schema { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

/// A validated proposal: the seven canonical fields in order, plus any
/// unrecognised keys kept aside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProposalRepr", into = "ProposalRepr")]
pub struct ResearchProposal {
    fields: IndexMap<String, String>,
    extras: IndexMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct ProposalRepr {
    #[serde(flatten)]
    fields: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    extras: IndexMap<String, Value>,
}

impl From<ResearchProposal> for ProposalRepr {
    fn from(p: ResearchProposal) -> Self {
        ProposalRepr {
            fields: p.fields,
            extras: p.extras,
        }
    }
}

impl TryFrom<ProposalRepr> for ResearchProposal {
    type Error = ProposalError;

    fn try_from(r: ProposalRepr) -> Result<Self, ProposalError> {
        let mut p = ResearchProposal::new(r.fields.iter().map(|(k, v)| (k.as_str(), v.clone())))?;
        p.extras = r.extras;
        Ok(p)
    }
}

impl ResearchProposal {
    /// Builds a proposal from canonical key/value pairs in any order.
    pub fn new<'a>(
        values: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<Self, ProposalError> {
        let given: IndexMap<&str, String> = values.into_iter().collect();
        if let Some(k) = given.keys().find(|k| !PROPOSAL_KEYS.contains(k)) {
            return Err(ProposalError::Argument(format!(
                "`{k}` is not a proposal key"
            )));
        }
        let missing: Vec<String> = PROPOSAL_KEYS
            .iter()
            .filter(|k| given.get(*k).is_none_or(|v| v.trim().is_empty()))
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(ProposalError::Schema {
                missing,
                raw: String::new(),
            });
        }
        let fields = PROPOSAL_KEYS
            .iter()
            .map(|k| (k.to_string(), given[k].clone()))
            .collect();
        Ok(Self {
            fields,
            extras: IndexMap::new(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    /// Canonical fields in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn extras(&self) -> &IndexMap<String, Value> {
        &self.extras
    }

    pub fn hypothesis(&self) -> &str {
        &self.fields["hypothesis"]
    }
}

/// Maps a model-written key to its canonical form, e.g. `"4- design
/// principles"` to `design_principles`. Unknown keys come back normalized
/// but not canonical.
pub fn normalize_key(key: &str) -> String {
    let mut k = key.trim();
    let digits = k.len() - k.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = k[digits..].trim_start();
        if let Some(stripped) = rest.strip_prefix(['-', '.', ')', ':']) {
            k = stripped;
        }
    }
    let mut out = String::with_capacity(k.len());
    for c in k.trim().chars() {
        if c.is_whitespace() || c == '-' || c == '_' {
            if !out.ends_with('_') && !out.is_empty() {
                out.push('_');
            }
        } else {
            out.extend(c.to_lowercase());
        }
    }
    let out = out.trim_end_matches('_').to_string();
    KEY_ALIASES
        .iter()
        .find(|(alias, _)| *alias == out)
        .map(|(_, canon)| canon.to_string())
        .unwrap_or(out)
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn remove_trailing_commas(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    let chars: Vec<char> = s.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// The first complete JSON object in `text`, tolerating code fences,
/// surrounding prose and trailing commas.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let cleaned = strip_fences(text);
    for candidate in [cleaned.clone(), remove_trailing_commas(&cleaned)] {
        for (start, _) in candidate.match_indices('{') {
            let mut de =
                serde_json::Deserializer::from_str(&candidate[start..]).into_iter::<Value>();
            if let Some(Ok(Value::Object(map))) = de.next() {
                return Some(map);
            }
        }
    }
    None
}

/// Plain text for a JSON value: strings as-is, lists as bullet lines,
/// objects as `key: value` lines.
pub fn value_to_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        Value::Null => String::new(),
        Value::Array(items) => items
            .iter()
            .map(|i| format!("- {}", value_to_text(i).replace('\n', "\n  ")))
            .collect::<Vec<_>>()
            .join("\n"),
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| format!("{k}: {}", value_to_text(v)))
            .collect::<Vec<_>>()
            .join("\n"),
        other => other.to_string(),
    }
}

/// Parses model output into a proposal.
pub fn parse_proposal(text: &str) -> Result<ResearchProposal, ProposalError> {
    if text.trim().is_empty() {
        return Err(ProposalError::Argument("proposal text is empty".into()));
    }
    let mut map = extract_json_object(text).ok_or_else(|| ProposalError::Parse {
        message: "no parsable JSON object".into(),
        raw: text.to_string(),
    })?;

    let has_canonical = map
        .keys()
        .any(|k| PROPOSAL_KEYS.contains(&normalize_key(k).as_str()));
    if !has_canonical && map.len() == 1 {
        if let Some(Value::Object(inner)) = map.values().next() {
            map = inner.clone();
        }
    }

    let mut fields: IndexMap<String, String> = IndexMap::new();
    let mut extras = IndexMap::new();
    for (k, v) in map {
        let norm = normalize_key(&k);
        if PROPOSAL_KEYS.contains(&norm.as_str()) && !fields.contains_key(&norm) {
            fields.insert(norm, value_to_text(&v));
        } else {
            extras.insert(k, v);
        }
    }
    let missing: Vec<String> = PROPOSAL_KEYS
        .iter()
        .filter(|k| fields.get(**k).is_none_or(|v| v.is_empty()))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ProposalError::Schema {
            missing,
            raw: text.to_string(),
        });
    }
    let mut p = ResearchProposal::new(fields.iter().map(|(k, v)| (k.as_str(), v.clone())))?;
    p.extras = extras;
    Ok(p)
}

/// Canonical JSON text of a proposal; [`parse_proposal`] inverts it.
pub fn render_proposal(p: &ResearchProposal) -> String {
    let mut map = serde_json::Map::new();
    for (k, v) in p.iter() {
        map.insert(k.to_string(), Value::String(v.to_string()));
    }
    for (k, v) in &p.extras {
        if !map.contains_key(k) {
            map.insert(k.clone(), v.clone());
        }
    }
    serde_json::to_string_pretty(&Value::Object(map)).expect("proposal serializes")
}

/// The per-field expansion prompt.
pub fn build_field_expansion_prompt(field: &str, content: &str) -> Result<String, ProposalError> {
    if !PROPOSAL_KEYS.contains(&field) {
        return Err(ProposalError::Argument(format!(
            "`{field}` is not a proposal key"
        )));
    }
    if content.trim().is_empty() {
        return Err(ProposalError::Argument(format!(
            "content for `{field}` is empty"
        )));
    }
    prompts::PIPELINE_EXPANSION
        .render(&[("field", field), ("content", content)])
        .map_err(|e| ProposalError::Argument(e.to_string()))
}
