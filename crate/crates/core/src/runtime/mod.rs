//! Graph evaluation with a tape for reverse-mode differentiation.
//!
//! Evaluation is structural recursion over the value guided by the graph, so
//! one node can be invoked many times per datum (shared subgraphs, bag
//! elements, recurrence steps). The tape records one frame per invocation in
//! post-order: children appear before their parent, and every frame's output
//! is consumed by exactly one parent frame. Replaying the tape reproduces
//! the recorded outputs bit for bit.

mod backward;
mod gradcheck;

pub use backward::backward;
pub use gradcheck::{grad_check, GradCheckReport};

use std::collections::BTreeMap;

use crate::error::RuntimeError;
use crate::graph::forward::{dense_eval, pool_eval, product_eval, tensor_mfl_eval};
use crate::graph::{DenseInput, EncoderGraph, NodeId, NodeKind};
use crate::params::ParamStore;
use crate::schema::check_value;
use crate::tensor::Yector;
use crate::value::Value;

/// Cached per-invocation inputs needed by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    /// Dense on a leaf: the raw input vector.
    VectorLeaf(Vec<f64>),
    /// Tensor MFL: the raw input tensor and the per-axis partial vectors.
    TensorLeaf {
        data: Vec<f64>,
        partials: Vec<Vec<f64>>,
    },
    /// Dispatch and enum nodes: the selected tag.
    Tag(usize),
}

/// One node invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub node: NodeId,
    pub output: Vec<f64>,
    pub children: Vec<usize>,
    pub aux: Aux,
}

/// Topologically ordered record of a forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    frames: Vec<Frame>,
}

impl Tape {
    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn root(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn output(&self) -> &[f64] {
        &self.frames[self.root()].output
    }

    /// Recompute every frame from its recorded leaf inputs and structure.
    /// The result must be bit-identical to the recorded outputs.
    pub fn replay(
        &self,
        graph: &EncoderGraph,
        params: &ParamStore,
    ) -> Result<Yector, RuntimeError> {
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.frames.len());
        for frame in &self.frames {
            let kind = &graph.node(frame.node).kind;
            let child_out = |i: usize| -> &[f64] { &outputs[frame.children[i]] };
            let y = match kind {
                NodeKind::Embedding { .. } => params.expect(frame.node, "b")?.to_vec(),
                NodeKind::Dense { input, .. } => {
                    let l = params.expect(frame.node, "L")?;
                    let b = params.expect(frame.node, "b")?;
                    let v: &[f64] = match (input, &frame.aux) {
                        (DenseInput::Leaf, Aux::VectorLeaf(v)) => v,
                        (DenseInput::Node(_), _) => child_out(0),
                        _ => {
                            return Err(RuntimeError::Eval {
                                node: frame.node,
                                message: "tape frame does not match node".into(),
                            })
                        }
                    };
                    dense_eval(l, b, v)
                }
                NodeKind::TensorMfl { shape, .. } => {
                    let Aux::TensorLeaf { data, .. } = &frame.aux else {
                        return Err(RuntimeError::Eval {
                            node: frame.node,
                            message: "tape frame does not match node".into(),
                        });
                    };
                    let (b, ls, ws) = tensor_mfl_params(graph, params, frame.node, shape)?;
                    let lrefs: Vec<&[f64]> = ls.iter().map(|x| *x).collect();
                    let wrefs: Vec<&[f64]> = ws.iter().map(|x| *x).collect();
                    tensor_mfl_eval(shape, b, &lrefs, &wrefs, data).0
                }
                NodeKind::SumDispatch { .. } | NodeKind::Recurrent { .. } | NodeKind::SelfPort { .. } => {
                    child_out(0).to_vec()
                }
                NodeKind::EnumTable { .. } => {
                    let Aux::Tag(tag) = frame.aux else {
                        return Err(RuntimeError::Eval {
                            node: frame.node,
                            message: "tape frame does not match node".into(),
                        });
                    };
                    params.expect(frame.node, &format!("b{tag}"))?.to_vec()
                }
                NodeKind::Product {
                    arities, max_order, ..
                } => {
                    let b = params.expect(frame.node, "b")?;
                    let vs: Vec<&[f64]> =
                        (0..frame.children.len()).map(child_out).collect();
                    product_eval(arities, *max_order, b, |name| {
                        params
                            .get(frame.node, name)
                            .map(|s| s.to_vec())
                            .unwrap_or_default()
                    }, &vs)
                }
                NodeKind::MsetPool { normalized, .. } => {
                    let l = params.expect(frame.node, "L")?;
                    let b = params.expect(frame.node, "b")?;
                    let vs: Vec<&[f64]> =
                        (0..frame.children.len()).map(child_out).collect();
                    pool_eval(l, b, &vs, *normalized)
                }
                NodeKind::Activation { f, .. } => {
                    child_out(0).iter().map(|&x| f.apply(x)).collect()
                }
            };
            outputs.push(y);
        }
        Ok(Yector(outputs.pop().unwrap_or_default()))
    }
}

pub(crate) fn tensor_mfl_params<'p>(
    graph: &EncoderGraph,
    params: &'p ParamStore,
    node: NodeId,
    shape: &[usize],
) -> Result<(&'p [f64], Vec<&'p [f64]>, Vec<&'p [f64]>), RuntimeError> {
    let _ = graph;
    let b = params.expect(node, "b")?;
    let mut ls = Vec::new();
    let mut ws = Vec::new();
    for r in 1..=shape.len() {
        ls.push(params.expect(node, &format!("L{r}"))?);
        if shape.len() >= 2 {
            ws.push(params.expect(node, &format!("w{r}"))?);
        }
    }
    Ok((b, ls, ws))
}

/// Evaluate the graph on a value after checking conformance against the
/// graph's source type; returns the output yector and the tape.
pub fn forward(
    graph: &EncoderGraph,
    params: &ParamStore,
    value: &Value,
) -> Result<(Yector, Tape), RuntimeError> {
    check_value(graph.source(), value, graph.env())?;
    forward_unchecked(graph, params, value)
}

/// Evaluate without the conformance pre-check (the evaluator still fails
/// cleanly on structural mismatches).
pub fn forward_unchecked(
    graph: &EncoderGraph,
    params: &ParamStore,
    value: &Value,
) -> Result<(Yector, Tape), RuntimeError> {
    let mut ev = Evaluator::new(graph, params);
    let root = ev.eval(graph.output(), value)?;
    let output = ev.frames[root].output.clone();
    Ok((Yector(output), Tape { frames: ev.frames }))
}

/// Evaluate rooted at an arbitrary node (used for per-node entry points).
pub fn forward_at(
    graph: &EncoderGraph,
    params: &ParamStore,
    node: NodeId,
    value: &Value,
) -> Result<Yector, RuntimeError> {
    let mut ev = Evaluator::new(graph, params);
    let root = ev.eval(node, value)?;
    Ok(Yector(ev.frames[root].output.clone()))
}

struct Evaluator<'g> {
    graph: &'g EncoderGraph,
    params: &'g ParamStore,
    /// (cell name, width) -> body node, for resolving self-ports.
    cells: BTreeMap<(String, usize), NodeId>,
    frames: Vec<Frame>,
}

impl<'g> Evaluator<'g> {
    fn new(graph: &'g EncoderGraph, params: &'g ParamStore) -> Self {
        let mut cells = BTreeMap::new();
        for node in graph.nodes() {
            if let NodeKind::Recurrent { name, body, out } = &node.kind {
                cells.insert((name.clone(), *out), *body);
            }
        }
        Evaluator {
            graph,
            params,
            cells,
            frames: Vec::new(),
        }
    }

    fn push(&mut self, node: NodeId, output: Vec<f64>, children: Vec<usize>, aux: Aux) -> usize {
        self.frames.push(Frame {
            node,
            output,
            children,
            aux,
        });
        self.frames.len() - 1
    }

    fn type_err(&self, node: NodeId, expected: &str, value: &Value) -> RuntimeError {
        RuntimeError::Eval {
            node,
            message: format!("expected {expected}, found {value:?}"),
        }
    }

    fn eval(&mut self, node: NodeId, value: &Value) -> Result<usize, RuntimeError> {
        let kind = self.graph.node(node).kind.clone();
        match kind {
            NodeKind::Embedding { .. } => {
                let b = self.params.expect(node, "b")?.to_vec();
                Ok(self.push(node, b, vec![], Aux::None))
            }
            NodeKind::Dense { input, in_dim, .. } => {
                let l = self.params.expect(node, "L")?;
                let b = self.params.expect(node, "b")?;
                match input {
                    DenseInput::Leaf => {
                        let t = match value {
                            Value::TensorV(t) if t.shape() == [in_dim] => t,
                            _ => {
                                return Err(self.type_err(
                                    node,
                                    &format!("a vector of dim {in_dim}"),
                                    value,
                                ))
                            }
                        };
                        let y = dense_eval(l, b, t.data());
                        let aux = Aux::VectorLeaf(t.data().to_vec());
                        Ok(self.push(node, y, vec![], aux))
                    }
                    DenseInput::Node(c) => {
                        let (y, child) = {
                            let child = self.eval(c, value)?;
                            let l = self.params.expect(node, "L")?;
                            let b = self.params.expect(node, "b")?;
                            (dense_eval(l, b, &self.frames[child].output), child)
                        };
                        Ok(self.push(node, y, vec![child], Aux::None))
                    }
                }
            }
            NodeKind::TensorMfl { ref shape, .. } => {
                let t = match value {
                    Value::TensorV(t) if t.shape() == shape.as_slice() => t,
                    _ => {
                        return Err(self.type_err(
                            node,
                            &format!("a tensor of shape {shape:?}"),
                            value,
                        ))
                    }
                };
                let (b, ls, ws) = tensor_mfl_params(self.graph, self.params, node, shape)?;
                let (y, partials) = tensor_mfl_eval(shape, b, &ls, &ws, t.data());
                let aux = Aux::TensorLeaf {
                    data: t.data().to_vec(),
                    partials,
                };
                Ok(self.push(node, y, vec![], aux))
            }
            NodeKind::SumDispatch { ref branches, .. } => {
                let (tag, payload) = match value {
                    Value::Tagged { tag, payload } => (*tag, payload.as_ref()),
                    _ => return Err(self.type_err(node, "a tagged value", value)),
                };
                if tag < 1 || tag > branches.len() {
                    return Err(RuntimeError::Eval {
                        node,
                        message: format!(
                            "tag {tag} out of range for {} branch(es)",
                            branches.len()
                        ),
                    });
                }
                let child = self.eval(branches[tag - 1], payload)?;
                let y = self.frames[child].output.clone();
                Ok(self.push(node, y, vec![child], Aux::Tag(tag)))
            }
            NodeKind::EnumTable { cases, .. } => {
                let tag = match value {
                    Value::Tagged { tag, .. } => *tag,
                    _ => return Err(self.type_err(node, "a tagged value", value)),
                };
                if tag < 1 || tag > cases {
                    return Err(RuntimeError::Eval {
                        node,
                        message: format!("tag {tag} out of range for {cases} case(s)"),
                    });
                }
                let y = self.params.expect(node, &format!("b{tag}"))?.to_vec();
                Ok(self.push(node, y, vec![], Aux::Tag(tag)))
            }
            NodeKind::Product {
                ref inputs,
                ref arities,
                max_order,
                ..
            } => {
                let items = match value {
                    Value::Tuple(items) if items.len() == inputs.len() => items,
                    _ => {
                        return Err(self.type_err(
                            node,
                            &format!("a tuple of arity {}", inputs.len()),
                            value,
                        ))
                    }
                };
                let mut children = Vec::with_capacity(inputs.len());
                for (c, item) in inputs.iter().zip(items) {
                    children.push(self.eval(*c, item)?);
                }
                let b = self.params.expect(node, "b")?;
                let vs: Vec<&[f64]> = children
                    .iter()
                    .map(|&f| self.frames[f].output.as_slice())
                    .collect();
                let y = product_eval(arities, max_order, b, |name| {
                    self.params
                        .get(node, name)
                        .map(|s| s.to_vec())
                        .unwrap_or_default()
                }, &vs);
                Ok(self.push(node, y, children, Aux::None))
            }
            NodeKind::MsetPool { elem, normalized, .. } => {
                let items = match value {
                    Value::Bag(items) => items,
                    _ => return Err(self.type_err(node, "a bag value", value)),
                };
                let mut children = Vec::with_capacity(items.len());
                for item in items {
                    children.push(self.eval(elem, item)?);
                }
                let l = self.params.expect(node, "L")?;
                let b = self.params.expect(node, "b")?;
                let vs: Vec<&[f64]> = children
                    .iter()
                    .map(|&f| self.frames[f].output.as_slice())
                    .collect();
                let y = pool_eval(l, b, &vs, normalized);
                Ok(self.push(node, y, children, Aux::None))
            }
            NodeKind::Recurrent { body, .. } => {
                let child = self.eval(body, value)?;
                let y = self.frames[child].output.clone();
                Ok(self.push(node, y, vec![child], Aux::None))
            }
            NodeKind::SelfPort { ref name, out } => {
                let body = *self.cells.get(&(name.clone(), out)).ok_or_else(|| {
                    RuntimeError::Eval {
                        node,
                        message: format!("self port `{name}` has no cell of width {out}"),
                    }
                })?;
                let child = self.eval(body, value)?;
                let y = self.frames[child].output.clone();
                Ok(self.push(node, y, vec![child], Aux::None))
            }
            NodeKind::Activation { input, f, .. } => {
                let child = self.eval(input, value)?;
                let y = self.frames[child].output.iter().map(|&x| f.apply(x)).collect();
                Ok(self.push(node, y, vec![child], Aux::None))
            }
        }
    }
}
