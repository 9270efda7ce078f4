//! Diagram-of-Thought reasoning graphs: propositions, critiques,
//! refinements and verifications with XML-tagged content.

mod graph;
mod xml;

pub use graph::{
    DoTGraph, DoTNode, Edge, NodeId, Relation, Role, SegmentKind, TaggedSegment, ValidityReport,
    Violation,
};
pub use xml::parse;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DotError {
    #[error("grammar violation: {rule}")]
    Grammar { rule: &'static str },
    #[error("{role} needs a target")]
    MissingTarget { role: Role },
    #[error("target {0} does not exist")]
    UnknownTarget(NodeId),
    #[error("node content must not be empty")]
    EmptyContent,
    #[error("parse error at {line}:{col}: expected {expected}")]
    Parse {
        line: usize,
        col: usize,
        expected: String,
    },
}
