use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ProposalError, ResearchProposal, PROPOSAL_KEYS};
use crate::novelty::NoveltyReport;

/// Section headers in document order. The title line precedes them.
pub const RESERVED_HEADERS: [&str; 8] = [
    "### KNOWLEDGE GRAPH:",
    "### EXPANDED GRAPH:",
    "### PROPOSED RESEARCH:",
    "### EXPANDED DESCRIPTIONS:",
    "### SUMMARY, CRITICAL REVIEW, AND IMPROVEMENTS",
    "### MODELING AND SIMULATION PRIORITIES",
    "### SYNTHETIC BIOLOGY EXPERIMENTAL PRIORITIES",
    "### NOVELTY AND FEASIBILITY",
];

const TITLE_PREFIX: &str = "# Research concept between ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchDocument {
    pub start_node: String,
    pub end_node: String,
    pub path_string: String,
    pub expanded_graph: String,
    pub proposal: ResearchProposal,
    /// Expanded text per proposal key.
    pub expansions: IndexMap<String, String>,
    pub critique: String,
    pub modeling_priorities: String,
    pub synbio_priorities: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novelty_report: Option<NoveltyReport>,
}

/// Display form of a proposal key: `design_principles` becomes
/// `Design Principles`.
pub fn field_title(key: &str) -> String {
    key.split('_')
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut cs = w.chars();
            match cs.next() {
                Some(first) => first.to_uppercase().chain(cs).collect::<String>(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keeps model text from forging document structure: a line that equals a
/// reserved header (or looks like the title) is demoted one level.
fn sanitize(text: &str) -> String {
    text.trim()
        .lines()
        .map(|line| {
            let t = line.trim();
            if RESERVED_HEADERS.contains(&t) || t.starts_with(TITLE_PREFIX) {
                format!("#{t}")
            } else {
                line.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn has_expanded_heading(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| {
            let l = l.trim_start_matches('#').trim().to_lowercase();
            l.starts_with("expanded")
        })
        .unwrap_or(false)
}

fn require(name: &str, value: &str) -> Result<(), ProposalError> {
    if value.trim().is_empty() {
        return Err(ProposalError::Assembly(name.to_string()));
    }
    Ok(())
}

impl ResearchDocument {
    pub fn validate(&self) -> Result<(), ProposalError> {
        require("start_node", &self.start_node)?;
        require("end_node", &self.end_node)?;
        require("path_string", &self.path_string)?;
        require("expanded_graph", &self.expanded_graph)?;
        require("critique", &self.critique)?;
        require("modeling_priorities", &self.modeling_priorities)?;
        require("synbio_priorities", &self.synbio_priorities)?;
        if self.expansions.is_empty() {
            return Err(ProposalError::Assembly("expansions".into()));
        }
        if let Some(k) = self
            .expansions
            .keys()
            .find(|k| !PROPOSAL_KEYS.contains(&k.as_str()))
        {
            return Err(ProposalError::Assembly(format!(
                "proposal key for expansion `{k}`"
            )));
        }
        for (k, v) in &self.expansions {
            require(&format!("expansion `{k}`"), v)?;
        }
        Ok(())
    }

    /// The proposal as bold-headed paragraphs in canonical order.
    pub fn formatted_proposal(&self) -> String {
        self.proposal
            .iter()
            .map(|(k, v)| format!("**{}:**\n\n{}", field_title(k), sanitize(v)))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Expansions in canonical order, each under an `### Expanded ...`
    /// heading.
    pub fn formatted_expansions(&self) -> String {
        PROPOSAL_KEYS
            .iter()
            .filter_map(|k| self.expansions.get(*k).map(|v| (k, v)))
            .map(|(k, v)| {
                let body = sanitize(v);
                if has_expanded_heading(&body) {
                    body
                } else {
                    format!("### Expanded {}\n\n{body}", field_title(k))
                }
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Everything up to and including the expanded descriptions; this is
    /// what the critique and priority steps read.
    pub fn draft(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{TITLE_PREFIX}{} and {}\n",
            self.start_node, self.end_node
        ));
        out.push_str(&format!(
            "{}\n{}\n\n",
            RESERVED_HEADERS[0],
            sanitize(&self.path_string)
        ));
        out.push_str(&format!(
            "{}\n{}\n\n",
            RESERVED_HEADERS[1],
            sanitize(&self.expanded_graph)
        ));
        out.push_str(&format!(
            "{}\n{}\n\n",
            RESERVED_HEADERS[2],
            self.formatted_proposal()
        ));
        out.push_str(&format!(
            "{}\n{}\n",
            RESERVED_HEADERS[3],
            self.formatted_expansions()
        ));
        out
    }
}

/// Renders the full Markdown document with the fixed header sequence.
pub fn assemble_document(doc: &ResearchDocument) -> Result<String, ProposalError> {
    doc.validate()?;
    let mut out = doc.draft();
    let sections = [
        (RESERVED_HEADERS[4], doc.critique.as_str()),
        (RESERVED_HEADERS[5], doc.modeling_priorities.as_str()),
        (RESERVED_HEADERS[6], doc.synbio_priorities.as_str()),
    ];
    for (header, body) in sections {
        out.push_str(&format!("\n{header}\n{}\n", sanitize(body)));
    }
    if let Some(report) = &doc.novelty_report {
        out.push_str(&format!(
            "\n{}\n{}\n",
            RESERVED_HEADERS[7],
            sanitize(&report.to_markdown())
        ));
    }
    Ok(out)
}
