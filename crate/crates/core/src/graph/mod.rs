//! The encoder-graph intermediate representation.
//!
//! A compiled encoder is a DAG of typed nodes, one per flattening step of the
//! source type tree. Evaluation is structural: a node consumes the value at
//! its position and produces a yector of its output width. Recurrent cells
//! are the only back-references; their self-ports re-enter the cell body and
//! are unrolled per value at evaluation time.
//!
//! Every node declares named parameter slots with shapes; a slot is owned by
//! exactly one node, and weight sharing means reusing a node, never aliasing
//! slots across nodes.

pub mod compile;
pub mod dot;
pub mod reference;
pub mod relations;
pub mod simplify;

pub(crate) mod forward;

pub use compile::compile;
pub use dot::{manifest, to_dot};
pub use forward::{
    product_mfl_forward, recurrent_forward, sum_dispatch_forward, tensor_mfl_forward,
};
pub use simplify::{share_weights, simplify};

use std::fmt;

use crate::error::GraphError;
use crate::schema::{SchemaEnv, TypeExpr};

pub type NodeId = usize;

/// Pointwise activation functions; applied between layers, never inside one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActFn {
    Relu,
    Tanh,
    Sigmoid,
}

impl ActFn {
    pub fn parse(name: &str) -> Option<ActFn> {
        match name {
            "relu" => Some(ActFn::Relu),
            "tanh" => Some(ActFn::Tanh),
            "sigmoid" => Some(ActFn::Sigmoid),
            _ => None,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            ActFn::Relu => x.max(0.0),
            ActFn::Tanh => x.tanh(),
            ActFn::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ActFn::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActFn::Tanh => 1.0 - x.tanh().powi(2),
            ActFn::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for ActFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ActFn::Relu => "relu",
            ActFn::Tanh => "tanh",
            ActFn::Sigmoid => "sigmoid",
        };
        write!(f, "{name}")
    }
}

/// Where a dense layer reads its input vector from: the raw leaf value at its
/// position, or another node's yector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseInput {
    Leaf,
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// A single learned vector; flattens the unit type (and empty products).
    /// Slot `b: [out]`.
    Embedding { out: usize },
    /// Affine map `y = b + L v`. Slots `L: [out, in]`, `b: [out]`.
    Dense {
        input: DenseInput,
        in_dim: usize,
        out: usize,
    },
    /// Low-rank flattening of a tensor leaf of order >= 2: one weight matrix
    /// and one weight vector per axis, one shared bias.
    /// Slots `b: [out]`, `L{r}: [out, l_r]`, and for order >= 2 `w{r}: [l_r]`.
    TensorMfl { shape: Vec<usize>, out: usize },
    /// Tag-selected dispatch over branch subgraphs; the per-branch affine
    /// layers are the branch root nodes. No own slots.
    SumDispatch { branches: Vec<NodeId>, out: usize },
    /// Per-case embeddings for all-unit sums. Slots `b{i}: [out]`.
    EnumTable { cases: usize, out: usize },
    /// Product interaction up to `max_order`: one weight tensor per nonempty
    /// field subset of size <= max_order. Slots `b: [out]`, `L{r}: [out, l_r]`
    /// for singletons, `C{r}_{s}...: [out, l_r, l_s, ...]` for larger subsets.
    Product {
        inputs: Vec<NodeId>,
        arities: Vec<usize>,
        out: usize,
        max_order: usize,
    },
    /// Sum (or mean, when normalized) of a shared dense encoding over bag
    /// elements. Slots `L: [out, elem_dim]`, `b: [out]`.
    MsetPool {
        elem: NodeId,
        elem_dim: usize,
        out: usize,
        normalized: bool,
    },
    /// Compiled form of a guarded recursive type: evaluates `body` on the
    /// value; self-ports inside the body re-enter this cell with tied
    /// weights. No own slots.
    Recurrent {
        name: String,
        body: NodeId,
        out: usize,
    },
    /// Recursive occurrence marker inside a cell body.
    SelfPort { name: String, out: usize },
    /// Pointwise activation of another node's output.
    Activation {
        input: NodeId,
        f: ActFn,
        dim: usize,
    },
}

impl NodeKind {
    pub fn out_dim(&self) -> usize {
        match self {
            NodeKind::Embedding { out }
            | NodeKind::Dense { out, .. }
            | NodeKind::TensorMfl { out, .. }
            | NodeKind::SumDispatch { out, .. }
            | NodeKind::EnumTable { out, .. }
            | NodeKind::Product { out, .. }
            | NodeKind::MsetPool { out, .. }
            | NodeKind::Recurrent { out, .. }
            | NodeKind::SelfPort { out, .. } => *out,
            NodeKind::Activation { dim, .. } => *dim,
        }
    }

    /// Child edges in evaluation order. Self-ports contribute no edge; the
    /// back-reference is resolved through the enclosing cell at evaluation.
    pub fn children(&self) -> Vec<NodeId> {
        match self {
            NodeKind::Embedding { .. }
            | NodeKind::TensorMfl { .. }
            | NodeKind::EnumTable { .. }
            | NodeKind::SelfPort { .. } => vec![],
            NodeKind::Dense { input, .. } => match input {
                DenseInput::Leaf => vec![],
                DenseInput::Node(c) => vec![*c],
            },
            NodeKind::SumDispatch { branches, .. } => branches.clone(),
            NodeKind::Product { inputs, .. } => inputs.clone(),
            NodeKind::MsetPool { elem, .. } => vec![*elem],
            NodeKind::Recurrent { body, .. } => vec![*body],
            NodeKind::Activation { input, .. } => vec![*input],
        }
    }

    /// Declared parameter slots, as (name, shape) in a fixed order.
    pub fn slots(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            NodeKind::Embedding { out } => vec![("b".into(), vec![*out])],
            NodeKind::Dense { in_dim, out, .. } => vec![
                ("L".into(), vec![*out, *in_dim]),
                ("b".into(), vec![*out]),
            ],
            NodeKind::TensorMfl { shape, out } => {
                let mut slots = vec![("b".to_string(), vec![*out])];
                for (r, &l) in shape.iter().enumerate() {
                    slots.push((format!("L{}", r + 1), vec![*out, l]));
                }
                if shape.len() >= 2 {
                    for (r, &l) in shape.iter().enumerate() {
                        slots.push((format!("w{}", r + 1), vec![l]));
                    }
                }
                slots
            }
            NodeKind::SumDispatch { .. } => vec![],
            NodeKind::EnumTable { cases, out } => (1..=*cases)
                .map(|i| (format!("b{i}"), vec![*out]))
                .collect(),
            NodeKind::Product {
                arities,
                out,
                max_order,
                ..
            } => {
                let mut slots = vec![("b".to_string(), vec![*out])];
                for subset in field_subsets(arities.len(), *max_order) {
                    let mut shape = vec![*out];
                    shape.extend(subset.iter().map(|&r| arities[r]));
                    slots.push((subset_slot_name(&subset), shape));
                }
                slots
            }
            NodeKind::MsetPool { elem_dim, out, .. } => vec![
                ("L".into(), vec![*out, *elem_dim]),
                ("b".into(), vec![*out]),
            ],
            NodeKind::Recurrent { .. }
            | NodeKind::SelfPort { .. }
            | NodeKind::Activation { .. } => vec![],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NodeKind::Embedding { .. } => "Embedding",
            NodeKind::Dense { .. } => "Dense",
            NodeKind::TensorMfl { .. } => "TensorMFL",
            NodeKind::SumDispatch { .. } => "SumDispatch",
            NodeKind::EnumTable { .. } => "EnumTable",
            NodeKind::Product { .. } => "ProductInteraction",
            NodeKind::MsetPool { .. } => "MultisetPool",
            NodeKind::Recurrent { .. } => "RecurrentCell",
            NodeKind::SelfPort { .. } => "SelfPort",
            NodeKind::Activation { .. } => "Activation",
        }
    }
}

/// All nonempty subsets of `{0, .., n-1}` with size <= max_order, ordered by
/// size then lexicographically. This is the canonical slot order of a
/// product-interaction node.
pub fn field_subsets(n: usize, max_order: usize) -> Vec<Vec<usize>> {
    let cap = max_order.min(n);
    let mut out = Vec::new();
    for size in 1..=cap {
        let mut c: Vec<usize> = (0..size).collect();
        'combos: loop {
            out.push(c.clone());
            let mut i = size;
            loop {
                if i == 0 {
                    break 'combos;
                }
                i -= 1;
                if c[i] < i + n - size {
                    c[i] += 1;
                    for j in i + 1..size {
                        c[j] = c[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }
    out
}

/// Slot name for a field subset (fields are 1-based in names).
pub fn subset_slot_name(subset: &[usize]) -> String {
    if subset.len() == 1 {
        format!("L{}", subset[0] + 1)
    } else {
        let parts: Vec<String> = subset.iter().map(|r| (r + 1).to_string()).collect();
        format!("C{}", parts.join("_"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
}

/// Compilation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct CompileOptions {
    /// Output yector width of the whole encoder.
    pub out_dim: usize,
    /// Highest retained interaction order in product nodes.
    pub max_order: usize,
    /// Mean pooling instead of sum pooling for multisets.
    pub normalized_pool: bool,
    /// Optional pointwise activation after each internal yector.
    pub activation: Option<ActFn>,
    /// Yector width for nested composite children.
    pub intermediate_width: usize,
}

impl CompileOptions {
    pub fn new(out_dim: usize) -> Self {
        CompileOptions {
            out_dim,
            max_order: 2,
            normalized_pool: false,
            activation: None,
            intermediate_width: out_dim,
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.out_dim == 0 || self.intermediate_width == 0 {
            return Err(GraphError::ZeroWidth);
        }
        if self.max_order == 0 {
            return Err(GraphError::Invalid("max_order must be >= 1".into()));
        }
        Ok(())
    }
}

/// A validated encoder graph plus the type and environment it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGraph {
    nodes: Vec<Node>,
    output: NodeId,
    source: TypeExpr,
    env: SchemaEnv,
}

impl EncoderGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn out_dim(&self) -> usize {
        self.nodes[self.output].kind.out_dim()
    }

    pub fn source(&self) -> &TypeExpr {
        &self.source
    }

    pub fn env(&self) -> &SchemaEnv {
        &self.env
    }

    /// Total number of learnable parameters: the sum of slot sizes over all
    /// nodes. Shared subgraphs are single nodes, so shared slots count once.
    pub fn param_count(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| n.kind.slots())
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }

    fn validate(&self) -> Result<(), GraphError> {
        let n = self.nodes.len();
        let invalid = |msg: String| Err(GraphError::Invalid(msg));
        if self.output >= n {
            return invalid(format!("output id {} out of range", self.output));
        }
        for (id, node) in self.nodes.iter().enumerate() {
            for c in node.kind.children() {
                if c >= n {
                    return invalid(format!("node {id} references missing node {c}"));
                }
            }
            match &node.kind {
                NodeKind::Dense {
                    input: DenseInput::Node(c),
                    in_dim,
                    ..
                } => {
                    if self.nodes[*c].kind.out_dim() != *in_dim {
                        return invalid(format!(
                            "node {id}: dense in_dim {} != child {} out {}",
                            in_dim,
                            c,
                            self.nodes[*c].kind.out_dim()
                        ));
                    }
                }
                NodeKind::SumDispatch { branches, out } => {
                    if branches.is_empty() {
                        return invalid(format!("node {id}: dispatch with no branches"));
                    }
                    for b in branches {
                        if self.nodes[*b].kind.out_dim() != *out {
                            return invalid(format!(
                                "node {id}: branch {} out {} != {}",
                                b,
                                self.nodes[*b].kind.out_dim(),
                                out
                            ));
                        }
                    }
                }
                NodeKind::Product {
                    inputs, arities, ..
                } => {
                    if inputs.len() != arities.len() || inputs.is_empty() {
                        return invalid(format!("node {id}: product field mismatch"));
                    }
                    for (c, a) in inputs.iter().zip(arities) {
                        if self.nodes[*c].kind.out_dim() != *a {
                            return invalid(format!(
                                "node {id}: field arity {} != child {} out {}",
                                a,
                                c,
                                self.nodes[*c].kind.out_dim()
                            ));
                        }
                    }
                }
                NodeKind::MsetPool { elem, elem_dim, .. } => {
                    if self.nodes[*elem].kind.out_dim() != *elem_dim {
                        return invalid(format!(
                            "node {id}: pool elem dim {} != child out {}",
                            elem_dim,
                            self.nodes[*elem].kind.out_dim()
                        ));
                    }
                }
                NodeKind::Recurrent { body, out, name } => {
                    if self.nodes[*body].kind.out_dim() != *out {
                        return invalid(format!("node {id}: cell body width mismatch"));
                    }
                    if name.is_empty() {
                        return invalid(format!("node {id}: unnamed cell"));
                    }
                }
                NodeKind::SelfPort { name, out } => {
                    let cell = self.nodes.iter().find(|m| {
                        matches!(&m.kind, NodeKind::Recurrent { name: c, .. } if c == name)
                    });
                    match cell {
                        None => {
                            return invalid(format!("node {id}: self port `{name}` has no cell"))
                        }
                        Some(c) if c.kind.out_dim() != *out => {
                            return invalid(format!("node {id}: self port width mismatch"));
                        }
                        _ => {}
                    }
                }
                NodeKind::Activation { input, dim, .. } => {
                    if self.nodes[*input].kind.out_dim() != *dim {
                        return invalid(format!("node {id}: activation dim mismatch"));
                    }
                }
                _ => {}
            }
            if node.kind.out_dim() == 0 {
                return Err(GraphError::ZeroWidth);
            }
        }
        // acyclic over child edges (self-ports carry no edge), all reachable
        let mut color = vec![0u8; n]; // 0 white, 1 grey, 2 black
        fn dfs(id: NodeId, nodes: &[Node], color: &mut [u8]) -> Result<(), GraphError> {
            if color[id] == 1 {
                return Err(GraphError::Invalid(format!("cycle through node {id}")));
            }
            if color[id] == 2 {
                return Ok(());
            }
            color[id] = 1;
            for c in nodes[id].kind.children() {
                dfs(c, nodes, color)?;
            }
            color[id] = 2;
            Ok(())
        }
        dfs(self.output, &self.nodes, &mut color)?;
        if let Some(unreachable) = color.iter().position(|&c| c == 0) {
            return invalid(format!("node {unreachable} unreachable from output"));
        }
        Ok(())
    }
}

/// Builder for hand-assembled graphs (tests, demos, rewrite passes).
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    source: TypeExpr,
    env: SchemaEnv,
}

impl GraphBuilder {
    pub fn new(source: TypeExpr, env: SchemaEnv) -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            source,
            env,
        }
    }

    pub fn add(&mut self, kind: NodeKind) -> NodeId {
        self.nodes.push(Node { kind });
        self.nodes.len() - 1
    }

    pub fn finish(self, output: NodeId) -> Result<EncoderGraph, GraphError> {
        let graph = EncoderGraph {
            nodes: self.nodes,
            output,
            source: self.source,
            env: self.env,
        };
        graph.validate()?;
        Ok(graph)
    }
}
