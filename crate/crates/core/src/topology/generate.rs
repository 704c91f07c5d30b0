//! Random valid topologies for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{NetworkTopology, NodeId, NodeKind};

/// Random univariate/linear network with `node_count` nodes in total, the
/// first `input_dim` of which are inputs. The last node is a linear output
/// that absorbs every node left without a consumer, so the result always
/// validates. Linear nodes draw up to three distinct sources, including
/// skip connections straight from inputs.
pub fn random_smooth<R: Rng + ?Sized>(
    input_dim: usize,
    node_count: usize,
    rng: &mut R,
) -> NetworkTopology {
    assert!(input_dim >= 1, "need at least one input");
    assert!(node_count > input_dim, "need at least one non-input node");
    let mut nodes: Vec<NodeKind> = (0..input_dim).map(|index| NodeKind::Input { index }).collect();
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    let mut out_degree = vec![0usize; node_count];

    for id in input_dim..node_count - 1 {
        let kind = if rng.gen_bool(0.6) {
            NodeKind::Univariate
        } else {
            NodeKind::Linear
        };
        let fan_in = match kind {
            NodeKind::Univariate => 1,
            _ => rng.gen_range(1..=3usize).min(id),
        };
        let mut pool: Vec<NodeId> = (0..id).collect();
        pool.shuffle(rng);
        let mut sources: Vec<NodeId> = pool.into_iter().take(fan_in).collect();
        sources.sort_unstable();
        for s in sources {
            edges.push((s, id));
            out_degree[s] += 1;
        }
        nodes.push(kind);
    }

    let output = node_count - 1;
    nodes.push(NodeKind::Linear);
    for s in 0..output {
        if out_degree[s] == 0 {
            edges.push((s, output));
        }
    }
    NetworkTopology {
        input_dim,
        nodes,
        edges,
        output,
    }
}
