use std::fmt;

use serde::{Deserialize, Serialize};

use super::DotError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    PlainText,
    Symbol,
    Code,
    Formula,
    Rule,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 5] = [
        SegmentKind::PlainText,
        SegmentKind::Symbol,
        SegmentKind::Code,
        SegmentKind::Formula,
        SegmentKind::Rule,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SegmentKind::PlainText => "text",
            SegmentKind::Symbol => "symbol",
            SegmentKind::Code => "code",
            SegmentKind::Formula => "formula",
            SegmentKind::Rule => "rule",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedSegment {
    pub kind: SegmentKind,
    pub body: String,
}

impl TaggedSegment {
    pub fn new(kind: SegmentKind, body: impl Into<String>) -> Self {
        Self {
            kind,
            body: body.into(),
        }
    }

    pub fn text(body: impl Into<String>) -> Self {
        Self::new(SegmentKind::PlainText, body)
    }

    pub fn code(body: impl Into<String>) -> Self {
        Self::new(SegmentKind::Code, body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Proposition,
    Critique,
    Refinement,
    Verification,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Proposition,
        Role::Critique,
        Role::Refinement,
        Role::Verification,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Proposition => "proposition",
            Role::Critique => "critique",
            Role::Refinement => "refinement",
            Role::Verification => "verification",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == text)
    }

    /// Grammar for the target role, or `None` for propositions.
    fn check_target(self, target: Option<Role>) -> Result<(), DotError> {
        use Role::*;
        match (self, target) {
            (Proposition, None) => Ok(()),
            (Proposition, Some(_)) => Err(DotError::Grammar {
                rule: "proposition takes no target",
            }),
            (role, None) => Err(DotError::MissingTarget { role }),
            (Critique, Some(Proposition | Refinement)) => Ok(()),
            (Critique, Some(_)) => Err(DotError::Grammar {
                rule: "critique must target proposition or refinement",
            }),
            (Refinement, Some(Critique)) => Ok(()),
            (Refinement, Some(_)) => Err(DotError::Grammar {
                rule: "refinement must target critique",
            }),
            (Verification, Some(Proposition | Refinement)) => Ok(()),
            (Verification, Some(_)) => Err(DotError::Grammar {
                rule: "verification must target proposition or refinement",
            }),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Node ids are creation sequence numbers.
pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DoTNode {
    pub id: NodeId,
    pub role: Role,
    pub target: Option<NodeId>,
    pub content: Vec<TaggedSegment>,
}

impl DoTNode {
    /// Segment bodies joined by single spaces.
    pub fn plain(&self) -> String {
        self.content
            .iter()
            .map(|s| s.body.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Critiques,
    Refines,
    Verifies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: NodeId,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub acyclic: bool,
    pub violations: Vec<Violation>,
    pub accepted: Vec<NodeId>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.acyclic && self.violations.is_empty()
    }
}

/// Reasoning graph. Every edge points from a node to a strictly earlier
/// one, so the graph is acyclic by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DoTGraph {
    nodes: Vec<DoTNode>,
}

impl DoTGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[DoTNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&DoTNode> {
        self.nodes.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(
        &mut self,
        role: Role,
        content: Vec<TaggedSegment>,
        target: Option<NodeId>,
    ) -> Result<NodeId, DotError> {
        if content.is_empty() {
            return Err(DotError::EmptyContent);
        }
        let target_role = match target {
            Some(t) => Some(self.node(t).ok_or(DotError::UnknownTarget(t))?.role),
            None => None,
        };
        role.check_target(target_role)?;
        Ok(self.push_unchecked(role, content, target))
    }

    /// Appends without grammar checks; parsed documents go through here and
    /// are judged by [`DoTGraph::validate`].
    pub(crate) fn push_unchecked(
        &mut self,
        role: Role,
        content: Vec<TaggedSegment>,
        target: Option<NodeId>,
    ) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(DoTNode {
            id,
            role,
            target,
            content,
        });
        id
    }

    pub fn edges(&self) -> Vec<Edge> {
        self.nodes
            .iter()
            .filter_map(|n| {
                let relation = match n.role {
                    Role::Proposition => return None,
                    Role::Critique => Relation::Critiques,
                    Role::Refinement => Relation::Refines,
                    Role::Verification => Relation::Verifies,
                };
                n.target.map(|to| Edge {
                    from: n.id,
                    to,
                    relation,
                })
            })
            .collect()
    }

    fn incoming(&self, id: NodeId, role: Role) -> impl Iterator<Item = &DoTNode> {
        self.nodes
            .iter()
            .skip(id as usize + 1)
            .filter(move |n| n.role == role && n.target == Some(id))
    }

    /// Acceptance flags by node index.
    ///
    /// A node is accepted when it is verified and every critique of it is
    /// answered. A critique is answered by a refinement that resolves: it is
    /// verified itself, or one of its own critiques is answered by a
    /// resolving refinement. Everything a node depends on was created after
    /// it, so one pass in reverse creation order suffices.
    pub fn acceptance(&self) -> Vec<bool> {
        let n = self.nodes.len();
        let mut verified = vec![false; n];
        for node in &self.nodes {
            if node.role == Role::Verification {
                if let Some(t) = node.target.filter(|&t| (t as usize) < node.id as usize) {
                    verified[t as usize] = true;
                }
            }
        }
        let mut resolves = vec![false; n];
        let mut answered = vec![false; n];
        let mut accepted = vec![false; n];
        for i in (0..n).rev() {
            let id = i as NodeId;
            match self.nodes[i].role {
                Role::Critique => {
                    answered[i] = self
                        .incoming(id, Role::Refinement)
                        .any(|r| resolves[r.id as usize]);
                }
                Role::Refinement => {
                    resolves[i] = verified[i]
                        || self
                            .incoming(id, Role::Critique)
                            .any(|c| answered[c.id as usize]);
                }
                _ => {}
            }
            accepted[i] = verified[i]
                && self
                    .incoming(id, Role::Critique)
                    .all(|c| answered[c.id as usize]);
        }
        accepted
    }

    pub fn accepted(&self) -> Vec<NodeId> {
        self.acceptance()
            .into_iter()
            .enumerate()
            .filter(|(_, a)| *a)
            .map(|(i, _)| i as NodeId)
            .collect()
    }

    pub fn is_accepted(&self, id: NodeId) -> bool {
        self.acceptance().get(id as usize).copied().unwrap_or(false)
    }

    pub fn validate(&self) -> ValidityReport {
        let mut violations = Vec::new();
        let mut acyclic = true;
        for node in &self.nodes {
            let mut flag = |rule: String| {
                violations.push(Violation {
                    node: node.id,
                    rule,
                })
            };
            if node.content.is_empty() {
                flag("node content must not be empty".into());
            }
            let target_role = match node.target {
                Some(t) if t >= node.id => {
                    acyclic = false;
                    flag(format!("target {t} is not an earlier node"));
                    continue;
                }
                Some(t) => Some(self.nodes[t as usize].role),
                None => None,
            };
            if let Err(e) = node.role.check_target(target_role) {
                flag(e.to_string());
            }
        }
        ValidityReport {
            acyclic,
            violations,
            accepted: self.accepted(),
        }
    }

    /// Accepted propositions and refinements in creation order, leaving out
    /// any that a later critique superseded.
    pub fn summarize(&self) -> Vec<&DoTNode> {
        let accepted = self.acceptance();
        self.nodes
            .iter()
            .filter(|n| matches!(n.role, Role::Proposition | Role::Refinement))
            .filter(|n| accepted[n.id as usize])
            .filter(|n| self.incoming(n.id, Role::Critique).next().is_none())
            .collect()
    }

    /// Newest nodes first, as long as their segments fit in `budget`. The
    /// newest node is always included.
    pub fn render_prompt(&self, budget: usize) -> String {
        let mut used = 0;
        let mut out = String::new();
        for node in self.nodes.iter().rev() {
            let size = node.content.len();
            if !out.is_empty() && used + size > budget {
                break;
            }
            used += size;
            super::xml::write_node(&mut out, node);
        }
        out
    }

    pub fn serialize(&self) -> String {
        super::xml::serialize(self)
    }
}
