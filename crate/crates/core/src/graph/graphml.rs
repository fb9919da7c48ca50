use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{EdgeRecord, GraphError, KnowledgeGraph, NodeRecord};

/// Attribute names used to find node labels and edge relations.
///
/// Keys are matched against the `attr.name` of `<key>` declarations (or the
/// key id when no name is declared). A node without a label falls back to its
/// id. An edge without the configured relation attribute falls back to a
/// `relation` attribute, then to its `id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphMlOptions {
    pub label_key: String,
    pub relation_key: String,
}

impl Default for GraphMlOptions {
    fn default() -> Self {
        Self {
            label_key: "label".into(),
            relation_key: "title".into(),
        }
    }
}

const FALLBACK_RELATION_KEY: &str = "relation";

struct KeyDecl {
    domain: String,
    name: String,
}

fn parse_error(doc: &roxmltree::Document, pos: usize, message: String) -> GraphError {
    let p = doc.text_pos_at(pos);
    GraphError::Parse {
        line: p.row,
        column: p.col,
        message,
    }
}

fn line_col(bytes: &[u8], offset: usize) -> (u32, u32) {
    let before = &bytes[..offset.min(bytes.len())];
    let line = before.iter().filter(|&&b| b == b'\n').count() as u32 + 1;
    let col = match before.iter().rposition(|&b| b == b'\n') {
        Some(nl) => (offset - nl) as u32,
        None => offset as u32 + 1,
    };
    (line, col)
}

/// Parses a GraphML document into a [`KnowledgeGraph`].
pub fn load_graph(source: &[u8], opts: &GraphMlOptions) -> Result<KnowledgeGraph, GraphError> {
    if source.iter().all(u8::is_ascii_whitespace) {
        return Err(GraphError::EmptyInput("GraphML source is empty".into()));
    }
    let text = std::str::from_utf8(source).map_err(|e| {
        let (line, column) = line_col(source, e.valid_up_to());
        GraphError::Parse {
            line,
            column,
            message: format!("invalid UTF-8: {e}"),
        }
    })?;
    let doc = roxmltree::Document::parse_with_options(
        text,
        roxmltree::ParsingOptions {
            allow_dtd: true,
            ..Default::default()
        },
    )
    .map_err(|e| {
        let p = e.pos();
        GraphError::Parse {
            line: p.row,
            column: p.col,
            message: e.to_string(),
        }
    })?;

    let root = doc.root_element();
    if root.tag_name().name() != "graphml" {
        return Err(parse_error(
            &doc,
            root.range().start,
            format!(
                "expected <graphml> root element, found <{}>",
                root.tag_name().name()
            ),
        ));
    }

    let mut keys: HashMap<&str, KeyDecl> = HashMap::new();
    for k in root.children().filter(|n| n.has_tag_name_local("key")) {
        let Some(id) = k.attribute("id") else {
            return Err(parse_error(
                &doc,
                k.range().start,
                "<key> without id".into(),
            ));
        };
        keys.insert(
            id,
            KeyDecl {
                domain: k.attribute("for").unwrap_or("all").to_string(),
                name: k.attribute("attr.name").unwrap_or(id).to_string(),
            },
        );
    }

    let Some(graph) = root.children().find(|n| n.has_tag_name_local("graph")) else {
        return Err(GraphError::EmptyInput(
            "GraphML document has no <graph> element".into(),
        ));
    };

    let data_value = |el: roxmltree::Node, domain: &str, name: &str| -> Option<String> {
        el.children()
            .filter(|c| c.has_tag_name_local("data"))
            .find(|c| {
                let key = c.attribute("key").unwrap_or_default();
                match keys.get(key) {
                    Some(decl) => {
                        decl.name == name && (decl.domain == domain || decl.domain == "all")
                    }
                    None => key == name,
                }
            })
            .map(|c| c.text().unwrap_or_default().trim().to_string())
            .filter(|v| !v.is_empty())
    };

    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for el in graph.children().filter(|n| n.is_element()) {
        match el.tag_name().name() {
            "node" => {
                let Some(id) = el.attribute("id") else {
                    return Err(parse_error(
                        &doc,
                        el.range().start,
                        "<node> without id".into(),
                    ));
                };
                let label =
                    data_value(el, "node", &opts.label_key).unwrap_or_else(|| id.to_string());
                nodes.push(NodeRecord {
                    id: id.to_string(),
                    label,
                });
            }
            "edge" => {
                let (Some(s), Some(t)) = (el.attribute("source"), el.attribute("target")) else {
                    return Err(parse_error(
                        &doc,
                        el.range().start,
                        "<edge> without source or target".into(),
                    ));
                };
                let relation = data_value(el, "edge", &opts.relation_key)
                    .or_else(|| data_value(el, "edge", FALLBACK_RELATION_KEY))
                    .or_else(|| el.attribute("id").map(str::to_string))
                    .ok_or_else(|| {
                        GraphError::Integrity(format!(
                            "edge {s} -> {t} (line {}) carries no relation label",
                            doc.text_pos_at(el.range().start).row
                        ))
                    })?;
                edges.push(EdgeRecord {
                    source: s.to_string(),
                    target: t.to_string(),
                    relation,
                });
            }
            _ => {}
        }
    }

    if nodes.is_empty() {
        return Err(GraphError::EmptyInput("GraphML graph has no nodes".into()));
    }
    KnowledgeGraph::new(nodes, edges)
}

pub fn load_graph_file(path: &Path, opts: &GraphMlOptions) -> Result<KnowledgeGraph, GraphError> {
    let bytes = std::fs::read(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_graph(&bytes, opts)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Serializes a graph as GraphML using the attribute names in `opts`.
pub fn write_graphml(g: &KnowledgeGraph, opts: &GraphMlOptions) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    let _ = writeln!(
        out,
        "  <key id=\"d0\" for=\"node\" attr.name=\"{}\" attr.type=\"string\"/>",
        escape(&opts.label_key)
    );
    let _ = writeln!(
        out,
        "  <key id=\"d1\" for=\"edge\" attr.name=\"{}\" attr.type=\"string\"/>",
        escape(&opts.relation_key)
    );
    out.push_str("  <graph id=\"G\" edgedefault=\"directed\">\n");
    for n in g.nodes() {
        let _ = writeln!(
            out,
            "    <node id=\"{}\"><data key=\"d0\">{}</data></node>",
            escape(&n.id),
            escape(&n.label)
        );
    }
    for e in g.edges() {
        let _ = writeln!(
            out,
            "    <edge source=\"{}\" target=\"{}\"><data key=\"d1\">{}</data></edge>",
            escape(&e.source),
            escape(&e.target),
            escape(&e.relation)
        );
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

trait LocalName {
    fn has_tag_name_local(&self, name: &str) -> bool;
}

impl LocalName for roxmltree::Node<'_, '_> {
    fn has_tag_name_local(&self, name: &str) -> bool {
        self.is_element() && self.tag_name().name() == name
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"<?xml version="1.0"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <key id="k0" for="node" attr.name="label" attr.type="string"/>
  <key id="k1" for="edge" attr.name="title" attr.type="string"/>
  <graph edgedefault="directed">
    <node id="n0"><data key="k0">silk</data></node>
    <node id="n1"><data key="k0">biocompatibility</data></node>
    <node id="n2"/>
    <edge source="n0" target="n1"><data key="k1">provides</data></edge>
    <edge source="n2" target="n1" id="binds"/>
  </graph>
</graphml>"#;

    #[test]
    fn reads_labels_relations_and_fallbacks() {
        let g = load_graph(SMALL.as_bytes(), &GraphMlOptions::default()).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.nodes()[0].label, "silk");
        assert_eq!(g.nodes()[2].label, "n2");
        assert_eq!(g.edges()[0].relation, "provides");
        assert_eq!(g.edges()[1].relation, "binds");
    }

    #[test]
    fn custom_keys() {
        let doc = r#"<graphml><key id="a" for="node" attr.name="name"/><key id="b" for="edge" attr.name="rel"/>
<graph><node id="x"><data key="a">X</data></node><node id="y"><data key="a">Y</data></node>
<edge source="x" target="y"><data key="b">likes</data></edge></graph></graphml>"#;
        let opts = GraphMlOptions {
            label_key: "name".into(),
            relation_key: "rel".into(),
        };
        let g = load_graph(doc.as_bytes(), &opts).unwrap();
        assert_eq!(g.nodes()[1].label, "Y");
        assert_eq!(g.edges()[0].relation, "likes");
    }

    #[test]
    fn malformed_xml_reports_position() {
        let doc = "<graphml>\n  <graph>\n    <node id=\"a\">\n  </graph>\n</graphml>";
        match load_graph(doc.as_bytes(), &GraphMlOptions::default()) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_bytes_is_empty_input() {
        assert!(matches!(
            load_graph(b"", &GraphMlOptions::default()),
            Err(GraphError::EmptyInput(_))
        ));
        assert!(matches!(
            load_graph(b"<graphml><graph/></graphml>", &GraphMlOptions::default()),
            Err(GraphError::EmptyInput(_))
        ));
    }

    #[test]
    fn escapes_round_trip() {
        let g = load_graph(SMALL.as_bytes(), &GraphMlOptions::default()).unwrap();
        let mut nodes = g.nodes().to_vec();
        nodes[0].label = "a <b> & \"c\" 'd'".into();
        let g = KnowledgeGraph::new(nodes, g.edges().to_vec()).unwrap();
        let text = write_graphml(&g, &GraphMlOptions::default());
        let back = load_graph(text.as_bytes(), &GraphMlOptions::default()).unwrap();
        assert_eq!(back.nodes(), g.nodes());
        assert_eq!(back.edges(), g.edges());
    }
}
