//! Lowering from a type expression to an encoder graph.
//!
//! The graph mirrors the type tree. Tensor leaves flatten directly
//! (embedding for the unit shape, a dense layer for vectors, a tensor MFL
//! for order >= 2); sums dispatch over per-branch affine layers, applied to
//! raw vector branches directly and to flattened composite branches through
//! an adapter; all-unit sums collapse to a case-embedding table; product and
//! multiset nodes consume their children's yectors at the intermediate
//! width.
//!
//! Written sub-types that are identical (including reference names, which
//! carry the schema's semantics) compile to one shared subgraph. A recursive
//! reference becomes a recurrent cell whose body re-enters itself through
//! self-ports, so the cell's weights are tied across the unrolling.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::GraphError;
use crate::schema::{SchemaEnv, TypeExpr};

use super::{
    CompileOptions, DenseInput, EncoderGraph, GraphBuilder, Node, NodeId, NodeKind,
};

pub fn compile(
    t: &TypeExpr,
    opts: &CompileOptions,
    env: &SchemaEnv,
) -> Result<EncoderGraph, GraphError> {
    opts.validate()?;
    env.check_guard()?;
    let mut compiler = Compiler {
        nodes: Vec::new(),
        memo: BTreeMap::new(),
        act_memo: BTreeMap::new(),
        cell_stack: Vec::new(),
        recursive: env.recursive_names(),
        opts: opts.clone(),
        env: env.clone(),
    };
    let output = compiler.flatten(t, opts.out_dim)?;
    let mut builder = GraphBuilder::new(t.clone(), env.clone());
    for node in compiler.nodes {
        builder.add(node.kind);
    }
    builder.finish(output)
}

struct Compiler {
    nodes: Vec<Node>,
    /// Written type (references intact) and width -> flattening node.
    memo: BTreeMap<(TypeExpr, usize), NodeId>,
    /// Base node -> its activation wrapper.
    act_memo: BTreeMap<NodeId, NodeId>,
    /// Recursive definitions currently being compiled, with cell widths.
    cell_stack: Vec<(String, usize)>,
    recursive: BTreeSet<String>,
    opts: CompileOptions,
    env: SchemaEnv,
}

impl Compiler {
    fn add(&mut self, kind: NodeKind) -> NodeId {
        self.nodes.push(Node { kind });
        self.nodes.len() - 1
    }

    fn out_dim(&self, id: NodeId) -> usize {
        self.nodes[id].kind.out_dim()
    }

    /// Flatten `t` to a yector of `width`, sharing previously compiled
    /// subgraphs for identical written types.
    fn flatten(&mut self, t: &TypeExpr, width: usize) -> Result<NodeId, GraphError> {
        if width == 0 {
            return Err(GraphError::ZeroWidth);
        }
        if let TypeExpr::Ref(name) = t {
            // a reference back into a cell under construction becomes a port
            if let Some((_, cell_width)) =
                self.cell_stack.iter().find(|(n, _)| n == name).cloned()
            {
                return Ok(self.add(NodeKind::SelfPort {
                    name: name.clone(),
                    out: cell_width,
                }));
            }
        }
        let key = (t.clone(), width);
        if let Some(&id) = self.memo.get(&key) {
            return Ok(id);
        }
        let id = self.build(t, width)?;
        self.memo.insert(key, id);
        Ok(id)
    }

    /// Construct the flattening node for `t` without consulting the memo for
    /// the root, so distinct names never collapse onto one submodel.
    fn build(&mut self, t: &TypeExpr, width: usize) -> Result<NodeId, GraphError> {
        match t {
            TypeExpr::Ref(name) => {
                let def = self
                    .env
                    .get(name)
                    .ok_or_else(|| {
                        GraphError::Schema(crate::error::SchemaError::UnknownType {
                            name: name.clone(),
                        })
                    })?
                    .clone();
                if self.recursive.contains(name) {
                    self.cell_stack.push((name.clone(), width));
                    let body = self.build(&def, width);
                    self.cell_stack.pop();
                    let body = self.wrap_activation(body?);
                    Ok(self.add(NodeKind::Recurrent {
                        name: name.clone(),
                        body,
                        out: width,
                    }))
                } else {
                    self.build(&def, width)
                }
            }
            TypeExpr::Tensor(shape) => match shape.len() {
                0 => Err(GraphError::Invalid(
                    "order-0 tensors are not encodable; use Unit = Tensor[0]".into(),
                )),
                1 if shape[0] == 0 => Ok(self.add(NodeKind::Embedding { out: width })),
                1 => Ok(self.add(NodeKind::Dense {
                    input: DenseInput::Leaf,
                    in_dim: shape[0],
                    out: width,
                })),
                _ => Ok(self.add(NodeKind::TensorMfl {
                    shape: shape.clone(),
                    out: width,
                })),
            },
            TypeExpr::Sum(args) => {
                if args.is_empty() {
                    return Err(GraphError::Uninhabited);
                }
                let resolved: Vec<TypeExpr> = args
                    .iter()
                    .map(|a| self.env.resolve(a).map(Clone::clone))
                    .collect::<Result<_, _>>()
                    .map_err(GraphError::Schema)?;
                if resolved.iter().all(|r| r == &TypeExpr::unit()) {
                    return Ok(self.add(NodeKind::EnumTable {
                        cases: args.len(),
                        out: width,
                    }));
                }
                let mut branches = Vec::with_capacity(args.len());
                for (arg, r) in args.iter().zip(&resolved) {
                    let root = match r.as_vector_dim() {
                        Some(0) => self.add(NodeKind::Embedding { out: width }),
                        Some(dim) => self.add(NodeKind::Dense {
                            input: DenseInput::Leaf,
                            in_dim: dim,
                            out: width,
                        }),
                        None => {
                            let child = self.flatten_nested(arg)?;
                            let in_dim = self.out_dim(child);
                            self.add(NodeKind::Dense {
                                input: DenseInput::Node(child),
                                in_dim,
                                out: width,
                            })
                        }
                    };
                    branches.push(root);
                }
                Ok(self.add(NodeKind::SumDispatch {
                    branches,
                    out: width,
                }))
            }
            TypeExpr::Prod(args) => {
                if args.is_empty() {
                    return Ok(self.add(NodeKind::Embedding { out: width }));
                }
                let inputs: Vec<NodeId> = args
                    .iter()
                    .map(|a| self.flatten_nested(a))
                    .collect::<Result<_, _>>()?;
                let arities: Vec<usize> = inputs.iter().map(|&c| self.out_dim(c)).collect();
                Ok(self.add(NodeKind::Product {
                    inputs,
                    arities,
                    out: width,
                    max_order: self.opts.max_order,
                }))
            }
            TypeExpr::MSet(e) => {
                let elem = self.flatten_nested(e)?;
                let elem_dim = self.out_dim(elem);
                Ok(self.add(NodeKind::MsetPool {
                    elem,
                    elem_dim,
                    out: width,
                    normalized: self.opts.normalized_pool,
                }))
            }
        }
    }

    /// Flatten a nested child at the intermediate width, wrapping it in the
    /// optional activation. Self-ports are returned bare: their value is a
    /// hidden state that the cell body already activates.
    fn flatten_nested(&mut self, t: &TypeExpr) -> Result<NodeId, GraphError> {
        let base = self.flatten(t, self.opts.intermediate_width)?;
        if matches!(self.nodes[base].kind, NodeKind::SelfPort { .. }) {
            return Ok(base);
        }
        Ok(self.wrap_activation(base))
    }

    fn wrap_activation(&mut self, base: NodeId) -> NodeId {
        let Some(f) = self.opts.activation else {
            return base;
        };
        if let Some(&wrapped) = self.act_memo.get(&base) {
            return wrapped;
        }
        let dim = self.out_dim(base);
        let wrapped = self.add(NodeKind::Activation {
            input: base,
            f,
            dim,
        });
        self.act_memo.insert(base, wrapped);
        wrapped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ActFn;
    use crate::schema::parse_schema;

    fn compile_str(type_text: &str, opts: &CompileOptions) -> Result<EncoderGraph, GraphError> {
        let mut env = SchemaEnv::new();
        let t = env.parse_type(type_text).unwrap();
        compile(&t, opts, &env)
    }

    #[test]
    fn tensor_mfl_param_count_matches_formula() {
        // l + (1 + l) * sum(l_i) with l = 4, sum = 5
        let g = compile_str("Tensor[2,3]", &CompileOptions::new(4)).unwrap();
        assert_eq!(g.param_count(), 29);
        assert_eq!(g.nodes().len(), 1);
        assert!(matches!(
            g.node(g.output()).kind,
            NodeKind::TensorMfl { .. }
        ));
    }

    #[test]
    fn unit_compiles_to_embedding() {
        let g = compile_str("Unit", &CompileOptions::new(3)).unwrap();
        assert_eq!(g.param_count(), 3);
        assert!(matches!(g.node(g.output()).kind, NodeKind::Embedding { .. }));
    }

    #[test]
    fn vector_compiles_to_dense() {
        let g = compile_str("Vector[5]", &CompileOptions::new(2)).unwrap();
        assert!(matches!(g.node(g.output()).kind, NodeKind::Dense { .. }));
        assert_eq!(g.param_count(), 12); // L: 2x5, b: 2
        // 1-in dense has 4 params, not the 5 the order->=2 census would give
        let g = compile_str("Scal", &CompileOptions::new(2)).unwrap();
        assert_eq!(g.param_count(), 4);
    }

    #[test]
    fn option_feature_product_structure() {
        let g = compile_str(
            "Prod[Option[Scal], Option[Bool]]",
            &CompileOptions::new(4),
        )
        .unwrap();
        assert_eq!(g.nodes().len(), 8);
        let count = |pred: &dyn Fn(&NodeKind) -> bool| {
            g.nodes().iter().filter(|n| pred(&n.kind)).count()
        };
        assert_eq!(count(&|k| matches!(k, NodeKind::Embedding { .. })), 2);
        assert_eq!(count(&|k| matches!(k, NodeKind::EnumTable { .. })), 1);
        assert_eq!(count(&|k| matches!(k, NodeKind::SumDispatch { .. })), 2);
        assert_eq!(count(&|k| matches!(k, NodeKind::Dense { .. })), 2);
        let product = g
            .nodes()
            .iter()
            .find(|n| matches!(n.kind, NodeKind::Product { .. }))
            .unwrap();
        match &product.kind {
            NodeKind::Product {
                arities, max_order, ..
            } => {
                assert_eq!(arities, &vec![4, 4]);
                assert_eq!(*max_order, 2);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn bool_lowers_to_enum_table() {
        let g = compile_str("Bool", &CompileOptions::new(3)).unwrap();
        assert!(matches!(
            g.node(g.output()).kind,
            NodeKind::EnumTable { cases: 2, .. }
        ));
        assert_eq!(g.param_count(), 6);
    }

    #[test]
    fn empty_sum_is_uninhabited() {
        assert!(matches!(
            compile_str("Sum[]", &CompileOptions::new(3)),
            Err(GraphError::Uninhabited)
        ));
        assert!(matches!(
            compile_str("Prod[Scal, Sum[]]", &CompileOptions::new(3)),
            Err(GraphError::Uninhabited)
        ));
    }

    #[test]
    fn zero_width_is_rejected() {
        assert!(matches!(
            compile_str("Scal", &CompileOptions::new(0)),
            Err(GraphError::ZeroWidth)
        ));
    }

    #[test]
    fn identical_written_fields_share_one_submodel() {
        let g = compile_str("Prod[Scal, Scal]", &CompileOptions::new(3)).unwrap();
        // one dense child used twice plus the interaction node
        assert_eq!(g.nodes().len(), 2);
        match &g.node(g.output()).kind {
            NodeKind::Product { inputs, .. } => assert_eq!(inputs[0], inputs[1]),
            other => panic!("expected a product root, got {other:?}"),
        }
    }

    #[test]
    fn distinct_names_keep_distinct_submodels() {
        let env = parse_schema(
            "price = Scal\nweight = Scal\ninput = Prod[price, weight]\ntwice = Prod[price, price]",
        )
        .unwrap();
        let opts = CompileOptions::new(3);
        let g = compile(env.get("input").unwrap(), &opts, &env).unwrap();
        match &g.node(g.output()).kind {
            NodeKind::Product { inputs, .. } => assert_ne!(inputs[0], inputs[1]),
            _ => unreachable!(),
        }
        let g = compile(env.get("twice").unwrap(), &opts, &env).unwrap();
        match &g.node(g.output()).kind {
            NodeKind::Product { inputs, .. } => assert_eq!(inputs[0], inputs[1]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn list_compiles_to_recurrent_cell() {
        let env = parse_schema("t = List[Scal]").unwrap();
        let g = compile(env.get("t").unwrap(), &CompileOptions::new(4), &env).unwrap();
        let cell = g
            .nodes()
            .iter()
            .find(|n| matches!(n.kind, NodeKind::Recurrent { .. }))
            .expect("list must compile to a cell");
        match &cell.kind {
            NodeKind::Recurrent { out, .. } => assert_eq!(*out, 4),
            _ => unreachable!(),
        }
        assert!(g
            .nodes()
            .iter()
            .any(|n| matches!(n.kind, NodeKind::SelfPort { .. })));
        // the cons product takes the element yector and the hidden state
        let product = g
            .nodes()
            .iter()
            .find(|n| matches!(n.kind, NodeKind::Product { .. }))
            .unwrap();
        match &product.kind {
            NodeKind::Product { arities, .. } => assert_eq!(arities, &vec![4, 4]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn mset_pool_structure_and_normalization_flag() {
        let mut opts = CompileOptions::new(2);
        let g = compile_str("MSet[Vector[3]]", &opts).unwrap();
        match &g.node(g.output()).kind {
            NodeKind::MsetPool {
                elem_dim,
                normalized,
                ..
            } => {
                assert_eq!(*elem_dim, 2); // element flattened to intermediate width
                assert!(!normalized);
            }
            _ => unreachable!(),
        }
        opts.normalized_pool = true;
        let g = compile_str("MSet[Vector[3]]", &opts).unwrap();
        assert!(matches!(
            g.node(g.output()).kind,
            NodeKind::MsetPool { normalized: true, .. }
        ));
    }

    #[test]
    fn activation_wraps_internal_yectors_only() {
        let mut opts = CompileOptions::new(3);
        opts.activation = Some(ActFn::Tanh);
        let g = compile_str("Prod[Scal, Bool]", &opts).unwrap();
        // children are activated, the product output is not
        assert!(matches!(g.node(g.output()).kind, NodeKind::Product { .. }));
        let act_count = g
            .nodes()
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Activation { .. }))
            .count();
        assert_eq!(act_count, 2);
    }

    #[test]
    fn intermediate_width_is_respected() {
        let mut opts = CompileOptions::new(5);
        opts.intermediate_width = 3;
        let g = compile_str("Prod[Option[Scal], Scal]", &opts).unwrap();
        match &g.node(g.output()).kind {
            NodeKind::Product { arities, out, .. } => {
                assert_eq!(arities, &vec![3, 3]);
                assert_eq!(*out, 5);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn nothing_ref_is_rejected() {
        let env = parse_schema("nothing = Sum[]").unwrap();
        let err = compile(
            env.get("nothing").unwrap(),
            &CompileOptions::new(2),
            &env,
        );
        assert!(matches!(err, Err(GraphError::Uninhabited)));
    }
}
