//! Graph rewrites that preserve the computed function.
//!
//! `simplify` merges maximal chains of consecutive affine nodes: a dense
//! layer following another dense layer, an embedding, an enum table, or a
//! dispatch whose branch roots are themselves affine, composes into the
//! earlier node with `L' = L2 L1`, `b' = b2 + L2 b1` (per case or branch
//! where applicable). Chains interrupted by activations or multilinear
//! interaction nodes are left alone, and a node consumed by more than one
//! parent is never absorbed.
//!
//! `share_weights` aliases one subgraph for another that is structurally
//! identical, rewiring consumers of the duplicate onto the kept copy.

use crate::error::GraphError;
use crate::params::ParamStore;

use super::{DenseInput, EncoderGraph, GraphBuilder, Node, NodeId, NodeKind};

/// Merge consecutive affine nodes; returns the rewritten graph and the
/// transformed parameters. The forward function is unchanged.
pub fn simplify(
    graph: &EncoderGraph,
    params: &ParamStore,
) -> Result<(EncoderGraph, ParamStore), GraphError> {
    let mut nodes: Vec<Node> = graph.nodes().to_vec();
    let mut params = params.clone();
    let mut alive = vec![true; nodes.len()];
    let mut output = graph.output();

    loop {
        let consumers = consumer_counts(&nodes, &alive);
        let mut merged = false;
        for d in 0..nodes.len() {
            if !alive[d] {
                continue;
            }
            let NodeKind::Dense {
                input: DenseInput::Node(c),
                out,
                ..
            } = nodes[d].kind
            else {
                continue;
            };
            if consumers[c] != 1 || !can_absorb(&nodes, &consumers, c) {
                continue;
            }
            let l = params.expect(d, "L").unwrap().to_vec();
            let b = params.expect(d, "b").unwrap().to_vec();
            compose_into(&mut nodes, &mut params, &l, &b, out, c);
            params.remove(d, "L");
            params.remove(d, "b");
            redirect(&mut nodes, d, c);
            if output == d {
                output = c;
            }
            alive[d] = false;
            merged = true;
            break;
        }
        if !merged {
            break;
        }
    }
    rebuild(graph, nodes, params, alive, output)
}

fn consumer_counts(nodes: &[Node], alive: &[bool]) -> Vec<usize> {
    let mut counts = vec![0usize; nodes.len()];
    for (id, node) in nodes.iter().enumerate() {
        if !alive[id] {
            continue;
        }
        for c in node.kind.children() {
            counts[c] += 1;
        }
    }
    counts
}

/// Can an affine map be pushed into this node? Dense, embedding and enum
/// tables absorb directly; a dispatch absorbs when every branch root is
/// singly consumed and absorbable itself.
fn can_absorb(nodes: &[Node], consumers: &[usize], id: NodeId) -> bool {
    match &nodes[id].kind {
        NodeKind::Dense { .. } | NodeKind::Embedding { .. } | NodeKind::EnumTable { .. } => true,
        NodeKind::SumDispatch { branches, .. } => branches
            .iter()
            .all(|&b| consumers[b] == 1 && can_absorb(nodes, consumers, b)),
        _ => false,
    }
}

/// Rewrite node `c` in place into `affine(L, b) . c`, with output width
/// `out`.
fn compose_into(
    nodes: &mut [Node],
    params: &mut ParamStore,
    l: &[f64],
    b: &[f64],
    out: usize,
    c: NodeId,
) {
    let mid = nodes[c].kind.out_dim();
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut y = b.to_vec();
        for (k, yk) in y.iter_mut().enumerate() {
            *yk += l[k * mid..(k + 1) * mid]
                .iter()
                .zip(v)
                .map(|(a, x)| a * x)
                .sum::<f64>();
        }
        y
    };
    match nodes[c].kind.clone() {
        NodeKind::Dense { input, in_dim, .. } => {
            let lc = params.expect(c, "L").unwrap().to_vec();
            let bc = params.expect(c, "b").unwrap().to_vec();
            let mut l_new = vec![0.0; out * in_dim];
            for k in 0..out {
                for j in 0..in_dim {
                    let mut acc = 0.0;
                    for m in 0..mid {
                        acc += l[k * mid + m] * lc[m * in_dim + j];
                    }
                    l_new[k * in_dim + j] = acc;
                }
            }
            params.set(c, "L", vec![out, in_dim], l_new);
            params.set(c, "b", vec![out], apply(&bc));
            nodes[c].kind = NodeKind::Dense { input, in_dim, out };
        }
        NodeKind::Embedding { .. } => {
            let bc = params.expect(c, "b").unwrap().to_vec();
            params.set(c, "b", vec![out], apply(&bc));
            nodes[c].kind = NodeKind::Embedding { out };
        }
        NodeKind::EnumTable { cases, .. } => {
            for i in 1..=cases {
                let name = format!("b{i}");
                let bc = params.expect(c, &name).unwrap().to_vec();
                params.set(c, &name, vec![out], apply(&bc));
            }
            nodes[c].kind = NodeKind::EnumTable { cases, out };
        }
        NodeKind::SumDispatch { branches, .. } => {
            for &root in &branches {
                compose_into(nodes, params, l, b, out, root);
            }
            nodes[c].kind = NodeKind::SumDispatch { branches, out };
        }
        other => unreachable!("compose_into on non-affine node {other:?}"),
    }
}

/// Point every reference to `from` at `to`.
fn redirect(nodes: &mut [Node], from: NodeId, to: NodeId) {
    for node in nodes.iter_mut() {
        match &mut node.kind {
            NodeKind::Dense {
                input: DenseInput::Node(c),
                ..
            } => {
                if *c == from {
                    *c = to;
                }
            }
            NodeKind::SumDispatch { branches, .. } => {
                for b in branches {
                    if *b == from {
                        *b = to;
                    }
                }
            }
            NodeKind::Product { inputs, .. } => {
                for i in inputs {
                    if *i == from {
                        *i = to;
                    }
                }
            }
            NodeKind::MsetPool { elem, .. } => {
                if *elem == from {
                    *elem = to;
                }
            }
            NodeKind::Recurrent { body, .. } => {
                if *body == from {
                    *body = to;
                }
            }
            NodeKind::Activation { input, .. } => {
                if *input == from {
                    *input = to;
                }
            }
            _ => {}
        }
    }
}

/// Drop dead nodes, remap ids, and rebuild a validated graph plus a store
/// containing exactly the surviving slots.
fn rebuild(
    graph: &EncoderGraph,
    nodes: Vec<Node>,
    params: ParamStore,
    alive: Vec<bool>,
    output: NodeId,
) -> Result<(EncoderGraph, ParamStore), GraphError> {
    // drop anything no longer reachable from the output
    let mut reachable = vec![false; nodes.len()];
    let mut stack = vec![output];
    while let Some(id) = stack.pop() {
        if reachable[id] || !alive[id] {
            if !alive[id] {
                return Err(GraphError::Invalid(format!(
                    "rewrite left a dangling reference to node {id}"
                )));
            }
            continue;
        }
        reachable[id] = true;
        stack.extend(nodes[id].kind.children());
    }
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut kept: Vec<Node> = Vec::new();
    for (id, node) in nodes.iter().enumerate() {
        if reachable[id] {
            remap[id] = kept.len();
            kept.push(node.clone());
        }
    }
    for node in kept.iter_mut() {
        match &mut node.kind {
            NodeKind::Dense {
                input: DenseInput::Node(c),
                ..
            } => *c = remap[*c],
            NodeKind::SumDispatch { branches, .. } => {
                for b in branches.iter_mut() {
                    *b = remap[*b];
                }
            }
            NodeKind::Product { inputs, .. } => {
                for i in inputs.iter_mut() {
                    *i = remap[*i];
                }
            }
            NodeKind::MsetPool { elem, .. } => *elem = remap[*elem],
            NodeKind::Recurrent { body, .. } => *body = remap[*body],
            NodeKind::Activation { input, .. } => *input = remap[*input],
            _ => {}
        }
    }
    let mut builder = GraphBuilder::new(graph.source().clone(), graph.env().clone());
    for node in &kept {
        builder.add(node.kind.clone());
    }
    let new_graph = builder.finish(remap[output])?;
    let mut new_params = ParamStore::default();
    for (new_id, node) in kept.iter().enumerate() {
        let old_id = remap.iter().position(|&m| m == new_id).unwrap();
        for (name, shape) in node.kind.slots() {
            let data = params
                .get(old_id, &name)
                .unwrap_or_else(|| panic!("missing slot ({old_id}, {name}) after rewrite"))
                .to_vec();
            new_params.set(new_id, &name, shape, data);
        }
    }
    Ok((new_graph, new_params))
}

/// Alias the `keep` subgraph for each structurally identical `drop`
/// subgraph: every consumer of `drop` is rewired onto `keep`, and the
/// duplicate's nodes and parameters are discarded. Pairing subgraphs of
/// different shapes is an error.
pub fn share_weights(
    graph: &EncoderGraph,
    params: &ParamStore,
    pairs: &[(NodeId, NodeId)],
) -> Result<(EncoderGraph, ParamStore), GraphError> {
    let mut nodes: Vec<Node> = graph.nodes().to_vec();
    for &(keep, drop) in pairs {
        structurally_equal(graph, keep, drop)?;
        if drop == graph.output() {
            return Err(GraphError::ShareShape(
                "cannot replace the output node".into(),
            ));
        }
        redirect(&mut nodes, drop, keep);
    }
    let alive = vec![true; nodes.len()];
    rebuild(graph, nodes, params.clone(), alive, graph.output())
}

/// Two subgraphs are shareable when their node kinds, dimensions and slot
/// shapes agree recursively.
pub fn structurally_equal(
    graph: &EncoderGraph,
    a: NodeId,
    b: NodeId,
) -> Result<(), GraphError> {
    let (na, nb) = (&graph.node(a).kind, &graph.node(b).kind);
    let mismatch = |what: &str| {
        Err(GraphError::ShareShape(format!(
            "node {a} vs {b}: {what} ({} vs {})",
            na.kind_name(),
            nb.kind_name()
        )))
    };
    if std::mem::discriminant(na) != std::mem::discriminant(nb) {
        return mismatch("different kinds");
    }
    if na.out_dim() != nb.out_dim() {
        return mismatch("different output dims");
    }
    if na.slots() != nb.slots() {
        return mismatch("different slot shapes");
    }
    if let (
        NodeKind::Recurrent { name: n1, .. },
        NodeKind::Recurrent { name: n2, .. },
    ) = (na, nb)
    {
        if n1 != n2 {
            return mismatch("different cell names");
        }
    }
    let (ca, cb) = (na.children(), nb.children());
    if ca.len() != cb.len() {
        return mismatch("different child counts");
    }
    for (x, y) in ca.iter().zip(&cb) {
        structurally_equal(graph, *x, *y)?;
    }
    Ok(())
}
