//! Canonical XML form:
//!
//! ```text
//! <dot>
//!   <node id="0" role="proposition">
//!     <text>gpu-3 frequency is low</text>
//!   </node>
//!   <node id="1" role="verification" target="0">
//!     <code>read gpu-3 freq</code>
//!   </node>
//! </dot>
//! ```
//!
//! Segment bodies escape `&`, `<`, `>` and `"`. Node ids are creation
//! sequence numbers and must appear in order.

use std::fmt::Write as _;

use super::{DoTGraph, DoTNode, DotError, NodeId, Role, SegmentKind, TaggedSegment};

fn escape_into(out: &mut String, body: &str) {
    for c in body.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
}

pub(crate) fn write_node(out: &mut String, node: &DoTNode) {
    let _ = write!(out, "  <node id=\"{}\" role=\"{}\"", node.id, node.role);
    if let Some(t) = node.target {
        let _ = write!(out, " target=\"{t}\"");
    }
    out.push_str(">\n");
    for seg in &node.content {
        let tag = seg.kind.tag();
        let _ = write!(out, "    <{tag}>");
        escape_into(out, &seg.body);
        let _ = writeln!(out, "</{tag}>");
    }
    out.push_str("  </node>\n");
}

pub(crate) fn serialize(graph: &DoTGraph) -> String {
    let mut out = String::from("<dot>\n");
    for node in graph.nodes() {
        write_node(&mut out, node);
    }
    out.push_str("</dot>\n");
    out
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn error(&self, expected: impl Into<String>) -> DotError {
        DotError::Parse {
            line: self.line,
            col: self.col,
            expected: expected.into(),
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn expect(&mut self, literal: &str) -> Result<(), DotError> {
        for want in literal.chars() {
            if self.peek() != Some(want) {
                return Err(self.error(format!("`{literal}`")));
            }
            self.bump();
        }
        Ok(())
    }

    fn name(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_') {
            s.push(c);
            self.bump();
        }
        s
    }

    /// Text up to the next `<`, with entities decoded.
    fn text(&mut self) -> Result<String, DotError> {
        let mut out = String::new();
        loop {
            match self.peek() {
                None | Some('<') => return Ok(out),
                Some('&') => {
                    let (line, col) = (self.line, self.col);
                    self.bump();
                    let mut entity = String::new();
                    while let Some(c) = self.peek().filter(|c| *c != ';' && *c != '<') {
                        entity.push(c);
                        self.bump();
                        if entity.len() > 8 {
                            break;
                        }
                    }
                    let decoded = match entity.as_str() {
                        "amp" => '&',
                        "lt" => '<',
                        "gt" => '>',
                        "quot" => '"',
                        "apos" => '\'',
                        _ => {
                            return Err(DotError::Parse {
                                line,
                                col,
                                expected: "one of &amp; &lt; &gt; &quot; &apos;".into(),
                            })
                        }
                    };
                    self.expect(";")?;
                    out.push(decoded);
                }
                Some(c) => {
                    out.push(c);
                    self.bump();
                }
            }
        }
    }
}

pub fn parse(text: &str) -> Result<DoTGraph, DotError> {
    let mut cur = Cursor::new(text);
    let mut graph = DoTGraph::new();
    cur.skip_ws();
    cur.expect("<dot>")?;
    loop {
        cur.skip_ws();
        cur.expect("<")?;
        if cur.peek() == Some('/') {
            cur.expect("/dot>")?;
            break;
        }
        let tag = cur.name();
        if tag != "node" {
            return Err(cur.error("`<node` or `</dot>`"));
        }
        let expected_id = graph.len() as NodeId;
        let (role, target) = parse_node_attrs(&mut cur, expected_id)?;
        let mut content = Vec::new();
        loop {
            cur.skip_ws();
            cur.expect("<")?;
            if cur.peek() == Some('/') {
                if content.is_empty() {
                    return Err(cur.error("a segment tag"));
                }
                cur.expect("/node>")?;
                break;
            }
            let tag = cur.name();
            let kind = SegmentKind::from_tag(&tag)
                .ok_or_else(|| cur.error("one of <text> <symbol> <code> <formula> <rule>"))?;
            cur.expect(">")?;
            let body = cur.text()?;
            cur.expect(&format!("</{tag}>"))?;
            content.push(TaggedSegment { kind, body });
        }
        graph.push_unchecked(role, content, target);
    }
    cur.skip_ws();
    if cur.peek().is_some() {
        return Err(cur.error("end of input"));
    }
    Ok(graph)
}

fn parse_node_attrs(
    cur: &mut Cursor<'_>,
    expected_id: NodeId,
) -> Result<(Role, Option<NodeId>), DotError> {
    let mut id = None;
    let mut role = None;
    let mut target = None;
    loop {
        cur.skip_ws();
        if cur.peek() == Some('>') {
            cur.bump();
            break;
        }
        let (line, col) = (cur.line, cur.col);
        let name = cur.name();
        cur.expect("=\"")?;
        let mut value = String::new();
        loop {
            match cur.peek() {
                Some('"') => {
                    cur.bump();
                    break;
                }
                Some(c) if c != '<' && c != '\n' => {
                    value.push(c);
                    cur.bump();
                }
                _ => return Err(cur.error("closing `\"`")),
            }
        }
        let value = value.as_str();
        let at = |expected: &str| DotError::Parse {
            line,
            col,
            expected: expected.into(),
        };
        match name.as_str() {
            "id" if id.is_none() => {
                let n: NodeId = value.parse().map_err(|_| at("a numeric id"))?;
                if n != expected_id {
                    return Err(at(&format!("id=\"{expected_id}\"")));
                }
                id = Some(n);
            }
            "role" if role.is_none() => {
                role = Some(Role::parse(value).ok_or_else(|| {
                    at("role proposition, critique, refinement or verification")
                })?);
            }
            "target" if target.is_none() => {
                target = Some(value.parse::<NodeId>().map_err(|_| at("a numeric target"))?);
            }
            _ => return Err(at("attribute id, role or target")),
        }
    }
    if id.is_none() {
        return Err(cur.error("attribute id"));
    }
    let role = role.ok_or_else(|| cur.error("attribute role"))?;
    Ok((role, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaping_round_trip() {
        let mut g = DoTGraph::new();
        let p = g
            .add_node(
                Role::Proposition,
                vec![
                    TaggedSegment::text("ratio < 0.9 & \"slow\""),
                    TaggedSegment::new(SegmentKind::Formula, "t = m / n"),
                ],
                None,
            )
            .unwrap();
        g.add_node(Role::Verification, vec![TaggedSegment::code("read gpu-3 freq")], Some(p))
            .unwrap();
        let xml = g.serialize();
        assert!(xml.contains("<text>ratio &lt; 0.9 &amp; &quot;slow&quot;</text>"));
        assert_eq!(parse(&xml).unwrap(), g);
        assert_eq!(parse(&DoTGraph::new().serialize()).unwrap(), DoTGraph::new());
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse("<dot>\n  <node id=\"0\" role=\"proposition\">\n    <para>x</para>\n").unwrap_err();
        assert!(matches!(err, DotError::Parse { line: 3, .. }), "{err:?}");
        let err = parse("<dot>\n  <node id=\"1\" role=\"proposition\"><text>x</text></node></dot>").unwrap_err();
        assert!(matches!(err, DotError::Parse { line: 2, col: 9, .. }), "{err:?}");
        assert!(parse("<dot><node id=\"0\" role=\"proposition\"></node></dot>").is_err());
        assert!(parse("<dot><node id=\"0\" role=\"proposition\"><text>a &bogus; b</text></node></dot>").is_err());
        assert!(parse("<dot></dot> trailing").is_err());
    }

    #[test]
    fn lenient_layout_is_accepted() {
        let g = parse("<dot><node role=\"proposition\" id=\"0\"><text> a\nb </text></node></dot>").unwrap();
        assert_eq!(g.nodes()[0].content[0].body, " a\nb ");
    }
}
