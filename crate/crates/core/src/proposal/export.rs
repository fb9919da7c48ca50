use std::path::{Path, PathBuf};
use std::process::Command;

use super::document::{assemble_document, ResearchDocument};
use super::{ProposalError, PROPOSAL_KEYS};

/// CSV columns, in order.
pub const CSV_COLUMNS: [&str; 15] = [
    "start_node",
    "end_node",
    "path_string",
    "hypothesis",
    "outcome",
    "mechanisms",
    "design_principles",
    "unexpected_properties",
    "comparison",
    "novelty",
    "critique",
    "modeling_priorities",
    "synbio_priorities",
    "novelty_score",
    "feasibility_score",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExportOptions {
    /// External Markdown-to-PDF converter. `{input}` and `{output}` in the
    /// arguments are replaced with the file paths.
    pub pdf_command: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub json: PathBuf,
    pub pdf: Option<PathBuf>,
}

/// Lower-cased endpoint labels, non-alphanumeric runs collapsed to `-`,
/// joined with `-`.
pub fn document_slug(start: &str, end: &str) -> String {
    let part = |s: &str| {
        let mut out = String::new();
        for c in s.chars().flat_map(char::to_lowercase) {
            if c.is_alphanumeric() {
                out.push(c);
            } else if !out.ends_with('-') {
                out.push('-');
            }
        }
        out.trim_matches('-').to_string()
    };
    let parts: Vec<String> = [part(start), part(end)]
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect();
    if parts.is_empty() {
        "research-concept".into()
    } else {
        parts.join("-")
    }
}

pub fn csv_header() -> Vec<&'static str> {
    CSV_COLUMNS.to_vec()
}

/// One CSV record for `doc`, aligned with [`CSV_COLUMNS`].
pub fn csv_row(doc: &ResearchDocument) -> Vec<String> {
    let mut row = vec![
        doc.start_node.clone(),
        doc.end_node.clone(),
        doc.path_string.clone(),
    ];
    for k in PROPOSAL_KEYS {
        row.push(doc.proposal.get(k).unwrap_or_default().to_string());
    }
    row.push(doc.critique.clone());
    row.push(doc.modeling_priorities.clone());
    row.push(doc.synbio_priorities.clone());
    match &doc.novelty_report {
        Some(r) => {
            row.push(r.novelty.to_string());
            row.push(r.feasibility.to_string());
        }
        None => {
            row.push(String::new());
            row.push(String::new());
        }
    }
    row
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ProposalError + '_ {
    move |source| ProposalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// RFC 4180 text: CRLF line endings, fields quoted only when needed.
pub fn document_csv(doc: &ResearchDocument) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(csv_header()).expect("in-memory write");
    w.write_record(csv_row(doc)).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush"))
        .expect("utf-8 input gives utf-8 output")
}

/// Writes `{slug}.md`, `{slug}.csv` and `{slug}.json` into `dir`,
/// overwriting earlier exports.
pub fn export_document(
    doc: &ResearchDocument,
    dir: &Path,
    opts: &ExportOptions,
) -> Result<ExportedFiles, ProposalError> {
    let markdown = assemble_document(doc)?;
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let slug = document_slug(&doc.start_node, &doc.end_node);
    let files = ExportedFiles {
        markdown: dir.join(format!("{slug}.md")),
        csv: dir.join(format!("{slug}.csv")),
        json: dir.join(format!("{slug}.json")),
        pdf: None,
    };
    std::fs::write(&files.markdown, markdown).map_err(io(&files.markdown))?;
    std::fs::write(&files.csv, document_csv(doc)).map_err(io(&files.csv))?;
    let mut json = serde_json::to_string_pretty(doc).expect("document serializes");
    json.push('\n');
    std::fs::write(&files.json, json).map_err(io(&files.json))?;

    let Some(cmd) = opts.pdf_command.as_ref().filter(|c| !c.is_empty()) else {
        return Ok(files);
    };
    let pdf = dir.join(format!("{slug}.pdf"));
    let fill = |a: &String| {
        a.replace("{input}", &files.markdown.display().to_string())
            .replace("{output}", &pdf.display().to_string())
    };
    let status = Command::new(fill(&cmd[0]))
        .args(cmd[1..].iter().map(fill))
        .status()
        .map_err(|e| ProposalError::Convert(format!("cannot run `{}`: {e}", cmd[0])))?;
    if !status.success() {
        return Err(ProposalError::Convert(format!(
            "`{}` exited with {status}",
            cmd[0]
        )));
    }
    Ok(ExportedFiles {
        pdf: Some(pdf),
        ..files
    })
}
