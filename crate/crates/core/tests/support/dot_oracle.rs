use clusterdiag_core::dot_engine::{DoTGraph, NodeId, Role, SegmentKind, TaggedSegment};
use proptest::prelude::*;

/// Acceptance via explicit chains: a critique is answered when some path
/// critique <- refinement (<- critique <- refinement)* ends at a verified
/// refinement.
pub fn oracle_accepted(g: &DoTGraph) -> Vec<NodeId> {
    let nodes = g.nodes();
    let targeting = |id: NodeId, role: Role| -> Vec<NodeId> {
        nodes
            .iter()
            .filter(|n| n.role == role && n.target == Some(id))
            .map(|n| n.id)
            .collect()
    };
    let verified = |id: NodeId| !targeting(id, Role::Verification).is_empty();
    fn chain_ends_verified(
        critique: NodeId,
        targeting: &dyn Fn(NodeId, Role) -> Vec<NodeId>,
        verified: &dyn Fn(NodeId) -> bool,
    ) -> bool {
        targeting(critique, Role::Refinement).into_iter().any(|r| {
            verified(r)
                || targeting(r, Role::Critique)
                    .into_iter()
                    .any(|c| chain_ends_verified(c, targeting, verified))
        })
    }
    nodes
        .iter()
        .filter(|n| {
            verified(n.id)
                && targeting(n.id, Role::Critique)
                    .into_iter()
                    .all(|c| chain_ends_verified(c, &targeting, &verified))
        })
        .map(|n| n.id)
        .collect()
}

#[derive(Debug, Clone)]
struct Step {
    role: u8,
    pick: usize,
    segments: Vec<(u8, String)>,
}

fn step() -> impl Strategy<Value = Step> {
    (
        0u8..4,
        any::<usize>(),
        prop::collection::vec((0u8..5, "[ -~\n]{0,12}"), 1..3),
    )
        .prop_map(|(role, pick, segments)| Step { role, pick, segments })
}

/// Applies each step if some earlier node can serve as its target.
fn build(steps: &[Step]) -> DoTGraph {
    let mut g = DoTGraph::new();
    for s in steps {
        let role = Role::ALL[s.role as usize];
        let content = s
            .segments
            .iter()
            .map(|(k, body)| TaggedSegment::new(SegmentKind::ALL[*k as usize], body.clone()))
            .collect();
        let allowed: &[Role] = match role {
            Role::Proposition => &[],
            Role::Critique | Role::Verification => &[Role::Proposition, Role::Refinement],
            Role::Refinement => &[Role::Critique],
        };
        let target = if role == Role::Proposition {
            None
        } else {
            let candidates: Vec<NodeId> = g
                .nodes()
                .iter()
                .filter(|n| allowed.contains(&n.role))
                .map(|n| n.id)
                .collect();
            if candidates.is_empty() {
                continue;
            }
            Some(candidates[s.pick % candidates.len()])
        };
        g.add_node(role, content, target).unwrap();
    }
    g
}

pub fn graphs() -> impl Strategy<Value = DoTGraph> {
    prop::collection::vec(step(), 0..14).prop_map(|s| build(&s))
}

