use std::collections::BTreeSet;

use hypograph_core::proposal::{
    assemble_document, build_field_expansion_prompt, csv_row, export_document, parse_proposal,
    render_proposal, ExportOptions, ProposalError, ResearchDocument, ResearchProposal, CSV_COLUMNS,
    PROPOSAL_KEYS, RESERVED_HEADERS,
};
use proptest::prelude::*;
use regex::Regex;

fn proposal(values: &[String]) -> ResearchProposal {
    ResearchProposal::new(
        PROPOSAL_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| (*k, v.clone())),
    )
    .unwrap()
}

fn document(p: ResearchProposal, critique: &str) -> ResearchDocument {
    ResearchDocument {
        start_node: "silk".into(),
        end_node: "energy-intensive".into(),
        path_string: "silk --> provides --> biocompatibility".into(),
        expanded_graph: "definitions".into(),
        expansions: PROPOSAL_KEYS
            .iter()
            .map(|k| (k.to_string(), format!("more {k}")))
            .collect(),
        proposal: p,
        critique: critique.into(),
        modeling_priorities: "model".into(),
        synbio_priorities: "express".into(),
        novelty_report: None,
    }
}

/// RFC 4180 grammar check written independently of the exporter.
fn rfc4180_records(text: &str) -> Option<Vec<Vec<String>>> {
    let field = r#"(?:"(?:[^"]|"")*"|[^",\r\n]*)"#;
    let record = Regex::new(&format!(r"^{field}(?:,{field})*\r\n")).unwrap();
    let cell = Regex::new(&format!(r"^({field})(,|\r\n)")).unwrap();
    let mut rest = text;
    let mut out = Vec::new();
    while !rest.is_empty() {
        let m = record.find(rest)?;
        let mut line = &rest[..m.end()];
        let mut cells = Vec::new();
        while let Some(c) = cell.captures(line) {
            let raw = c.get(1).unwrap().as_str();
            let value = if raw.starts_with('"') {
                raw[1..raw.len() - 1].replace("\"\"", "\"")
            } else {
                raw.to_string()
            };
            cells.push(value);
            line = &line[c.get(0).unwrap().end()..];
        }
        out.push(cells);
        rest = &rest[m.end()..];
    }
    Some(out)
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(values in proptest::collection::vec("[ -~\n\u{e9}\u{3b1}]{1,40}", 7)) {
        // Canonical values carry no surrounding whitespace.
        let values: Vec<String> = values.iter().map(|v| v.trim().to_string()).collect();
        prop_assume!(values.iter().all(|v| !v.is_empty()));
        let p = proposal(&values);
        prop_assert_eq!(parse_proposal(&render_proposal(&p)).unwrap(), p);
    }

    #[test]
    fn csv_is_rfc4180(critique in "[ -~\r\n]{1,60}") {
        prop_assume!(!critique.trim().is_empty());
        let values: Vec<String> = PROPOSAL_KEYS.iter().map(|k| format!("{k}, \"quoted\"")).collect();
        let doc = document(proposal(&values), &critique);
        let dir = tempfile::tempdir().unwrap();
        let files = export_document(&doc, dir.path(), &ExportOptions::default()).unwrap();
        let text = std::fs::read_to_string(&files.csv).unwrap();
        let records = rfc4180_records(&text).expect("valid RFC 4180");
        prop_assert_eq!(records.len(), 2);
        prop_assert!(records.iter().all(|r| r.len() == CSV_COLUMNS.len()));
        prop_assert_eq!(&records[1], &csv_row(&doc));
    }

    #[test]
    fn headers_appear_once_in_order(critique in "[ -~\n#]{1,80}") {
        prop_assume!(!critique.trim().is_empty());
        let values: Vec<String> = PROPOSAL_KEYS.iter().map(|k| format!("{k} text")).collect();
        let mut critique = critique;
        critique.push_str("\n### MODELING AND SIMULATION PRIORITIES\n");
        let md = assemble_document(&document(proposal(&values), &critique)).unwrap();
        let found: Vec<&str> = md.lines().filter(|l| RESERVED_HEADERS.contains(l)).collect();
        prop_assert_eq!(found, RESERVED_HEADERS[..7].to_vec());
    }
}

#[test]
fn numbered_keys_and_schema_errors() {
    let text = r#"Sure! {"1- hypothesis": "h", "2- outcome": "o", "3- mechanisms": "m", "4- design principles": "d", "5- unexpected properties": "u", "6- comparison": "c", "7- novelty": "n"} Thanks."#;
    let p = parse_proposal(text).unwrap();
    assert_eq!(p.iter().map(|(k, _)| k).collect::<Vec<_>>(), PROPOSAL_KEYS);
    let missing = text.replace(r#""6- comparison": "c", "#, "");
    match parse_proposal(&missing) {
        Err(ProposalError::Schema { missing, .. }) => {
            assert_eq!(missing, vec!["comparison".to_string()])
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        parse_proposal("no json here"),
        Err(ProposalError::Parse { .. })
    ));
}

#[test]
fn expansion_prompts_are_distinct() {
    let prompts: BTreeSet<String> = PROPOSAL_KEYS
        .iter()
        .map(|k| build_field_expansion_prompt(k, "same content").unwrap())
        .collect();
    assert_eq!(prompts.len(), 7);
    let m = build_field_expansion_prompt("mechanisms", "M").unwrap();
    assert!(m.contains("Expand on the following aspect: mechanisms.") && m.contains('M'));
    assert!(build_field_expansion_prompt("mechanisms", " ").is_err());
    assert!(build_field_expansion_prompt("title", "x").is_err());
}
