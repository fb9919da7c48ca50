use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use super::PathSample;
use crate::graph::{write_graphml, GraphMlOptions};

/// The sample's context subgraph as GraphML.
pub fn subgraph_graphml(sample: &PathSample, opts: &GraphMlOptions) -> String {
    write_graphml(&sample.subgraph, opts)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Self-contained HTML page drawing the subgraph with the path highlighted.
///
/// Nodes sit on a circle in id order, so the picture depends only on the
/// sample.
pub fn path_html(sample: &PathSample) -> String {
    let g = &sample.subgraph;
    let mut ids: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
    ids.sort_unstable();
    let n = ids.len().max(1) as f64;
    let radius = 120.0 + 12.0 * n.min(200.0);
    let size = 2.0 * radius + 240.0;
    let center = size / 2.0;
    let pos = |id: &str| {
        let i = ids.binary_search(&id).unwrap_or(0) as f64;
        let angle = 2.0 * PI * i / n - PI / 2.0;
        (center + radius * angle.cos(), center + radius * angle.sin())
    };

    let on_path: HashSet<&str> = sample.nodes.iter().map(String::as_str).collect();
    let path_pairs: HashSet<(&str, &str)> = sample
        .nodes
        .windows(2)
        .flat_map(|w| {
            [
                (w[0].as_str(), w[1].as_str()),
                (w[1].as_str(), w[0].as_str()),
            ]
        })
        .collect();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0}" height="{size:.0}" viewBox="0 0 {size:.0} {size:.0}">"#
    );
    for e in g.edges() {
        let (x1, y1) = pos(&e.source);
        let (x2, y2) = pos(&e.target);
        let hot = path_pairs.contains(&(e.source.as_str(), e.target.as_str()));
        let (color, width) = if hot {
            ("#d62728", 3.0)
        } else {
            ("#bbbbbb", 1.0)
        };
        let _ = writeln!(
            svg,
            r#"  <line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{color}" stroke-width="{width}"><title>{}</title></line>"#,
            esc(&e.relation)
        );
        if hot {
            let _ = writeln!(
                svg,
                r#"  <text x="{:.1}" y="{:.1}" font-size="11" fill="{color}" text-anchor="middle">{}</text>"#,
                (x1 + x2) / 2.0,
                (y1 + y2) / 2.0 - 4.0,
                esc(&e.relation)
            );
        }
    }
    for node in g.nodes() {
        let (x, y) = pos(&node.id);
        let hot = on_path.contains(node.id.as_str());
        let (fill, r) = if hot {
            ("#d62728", 9.0)
        } else {
            ("#1f77b4", 5.0)
        };
        let _ = writeln!(
            svg,
            r#"  <circle cx="{x:.1}" cy="{y:.1}" r="{r}" fill="{fill}"><title>{}</title></circle>"#,
            esc(&node.id)
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{x:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
            y - r - 4.0,
            esc(&node.label)
        );
    }
    svg.push_str("</svg>\n");

    let title = format!(
        "{} to {}",
        sample
            .labels
            .first()
            .map(String::as_str)
            .unwrap_or_default(),
        sample.labels.last().map(String::as_str).unwrap_or_default()
    );
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{t}</title>\n\
         <style>body{{font-family:sans-serif;margin:1em}} pre{{white-space:pre-wrap}}</style>\n\
         </head>\n<body>\n<h1>{t}</h1>\n<pre>{p}</pre>\n<p>{nodes} nodes, {edges} edges</p>\n{svg}</body>\n</html>\n",
        t = esc(&title),
        p = esc(&sample.path_string),
        nodes = g.node_count(),
        edges = g.edge_count(),
    )
}
