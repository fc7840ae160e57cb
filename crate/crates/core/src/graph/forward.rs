//! Per-node forward evaluation kernels.
//!
//! The tensor MFL is evaluated in factored form: for each axis `r` the input
//! is contracted with the weight vectors of every other axis, leaving a
//! per-axis partial vector `t_r`; the output is `b + sum_r L_r t_r`. The full
//! coefficient tensor is never materialized, so memory stays linear in the
//! sum of axis lengths and time is O(order * input size) for the partials.

use crate::error::RuntimeError;
use crate::params::ParamStore;
use crate::tensor::{DenseTensor, Yector};
use crate::value::Value;

use super::{field_subsets, subset_slot_name, DenseInput, EncoderGraph, NodeId, NodeKind};

/// Visit every multi-index of `dims` in row-major order with its flat index.
pub(crate) fn for_each_multi_index(dims: &[usize], mut f: impl FnMut(&[usize], usize)) {
    let total: usize = dims.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; dims.len()];
    for flat in 0..total {
        f(&idx, flat);
        for d in (0..dims.len()).rev() {
            idx[d] += 1;
            if idx[d] < dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Contract `data` (shape `shape`) with per-axis weight vectors over every
/// axis not in `free` (sorted); returns a row-major tensor over the free
/// axes. For an empty `free` this is a full contraction to one number.
pub(crate) fn contract_except(
    data: &[f64],
    shape: &[usize],
    weights: &[&[f64]],
    free: &[usize],
) -> Vec<f64> {
    let free_dims: Vec<usize> = free.iter().map(|&r| shape[r]).collect();
    let out_len: usize = free_dims.iter().product::<usize>().max(1);
    let mut out = vec![0.0; out_len];
    for_each_multi_index(shape, |idx, flat| {
        let mut coeff = 1.0;
        for (s, &l) in shape.iter().enumerate() {
            let _ = l;
            if !free.contains(&s) {
                coeff *= weights[s][idx[s]];
            }
        }
        if coeff == 0.0 {
            return;
        }
        let mut pos = 0usize;
        for &r in free {
            pos = pos * shape[r] + idx[r];
        }
        out[pos] += coeff * data[flat];
    });
    out
}

pub(crate) fn dense_eval(l: &[f64], b: &[f64], v: &[f64]) -> Vec<f64> {
    let out = b.len();
    let in_dim = if out == 0 { 0 } else { l.len() / out };
    debug_assert_eq!(in_dim, v.len());
    let mut y = b.to_vec();
    for (k, yk) in y.iter_mut().enumerate() {
        let row = &l[k * in_dim..(k + 1) * in_dim];
        *yk += row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>();
    }
    y
}

/// Factored tensor-MFL forward; returns the output and the per-axis partial
/// vectors `t_r` (cached for the backward pass).
pub(crate) fn tensor_mfl_eval(
    shape: &[usize],
    b: &[f64],
    ls: &[&[f64]],
    ws: &[&[f64]],
    data: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let out = b.len();
    let n = shape.len();
    let mut y = b.to_vec();
    let mut partials = Vec::with_capacity(n);
    for r in 0..n {
        let t_r = if n == 1 {
            data.to_vec()
        } else {
            contract_except(data, shape, ws, &[r])
        };
        let l_r = ls[r];
        for k in 0..out {
            let row = &l_r[k * shape[r]..(k + 1) * shape[r]];
            y[k] += row.iter().zip(&t_r).map(|(a, x)| a * x).sum::<f64>();
        }
        partials.push(t_r);
    }
    (y, partials)
}

/// Product interaction forward over explicit per-subset weight slots.
pub(crate) fn product_eval(
    arities: &[usize],
    max_order: usize,
    b: &[f64],
    slot: impl Fn(&str) -> Vec<f64>,
    vs: &[&[f64]],
) -> Vec<f64> {
    let out = b.len();
    let mut y = b.to_vec();
    for subset in field_subsets(arities.len(), max_order) {
        let c = slot(&subset_slot_name(&subset));
        let dims: Vec<usize> = subset.iter().map(|&r| arities[r]).collect();
        let block: usize = dims.iter().product();
        for_each_multi_index(&dims, |idx, flat| {
            let mut prod = 1.0;
            for (pos, &r) in subset.iter().enumerate() {
                prod *= vs[r][idx[pos]];
            }
            if prod == 0.0 {
                return;
            }
            for (k, yk) in y.iter_mut().enumerate().take(out) {
                *yk += c[k * block + flat] * prod;
            }
        });
    }
    y
}

/// Multiset pooling: sum of per-element dense encodings, or the mean form
/// when normalized. The empty bag yields zero (unnormalized) or the bias
/// alone (normalized).
pub(crate) fn pool_eval(l: &[f64], b: &[f64], vs: &[&[f64]], normalized: bool) -> Vec<f64> {
    let out = b.len();
    let n = vs.len();
    if n == 0 {
        return if normalized { b.to_vec() } else { vec![0.0; out] };
    }
    let elem_dim = vs[0].len();
    let mut sum = vec![0.0; elem_dim];
    for v in vs {
        for (s, x) in sum.iter_mut().zip(*v) {
            *s += x;
        }
    }
    let mut y = vec![0.0; out];
    for (k, yk) in y.iter_mut().enumerate() {
        let row = &l[k * elem_dim..(k + 1) * elem_dim];
        *yk = row.iter().zip(&sum).map(|(a, x)| a * x).sum::<f64>();
    }
    if normalized {
        for (yk, bk) in y.iter_mut().zip(b) {
            *yk = bk + *yk / n as f64;
        }
    } else {
        for (yk, bk) in y.iter_mut().zip(b) {
            *yk += n as f64 * bk;
        }
    }
    y
}

fn expect_kind<'a>(
    graph: &'a EncoderGraph,
    node: NodeId,
    want: &str,
) -> Result<&'a NodeKind, RuntimeError> {
    let kind = &graph.node(node).kind;
    if kind.kind_name() == want {
        Ok(kind)
    } else {
        Err(RuntimeError::Eval {
            node,
            message: format!("expected a {want} node, found {}", kind.kind_name()),
        })
    }
}

/// Forward of a tensor-MFL node on a raw tensor input.
pub fn tensor_mfl_forward(
    graph: &EncoderGraph,
    node: NodeId,
    params: &ParamStore,
    input: &DenseTensor,
) -> Result<Yector, RuntimeError> {
    let kind = expect_kind(graph, node, "TensorMFL")?;
    let (shape, _out) = match kind {
        NodeKind::TensorMfl { shape, out } => (shape.clone(), *out),
        _ => unreachable!(),
    };
    if input.shape() != shape.as_slice() {
        return Err(RuntimeError::Eval {
            node,
            message: format!(
                "input shape {:?} does not match node shape {:?}",
                input.shape(),
                shape
            ),
        });
    }
    let b = params.expect(node, "b")?;
    let mut ls = Vec::new();
    let mut ws = Vec::new();
    for r in 1..=shape.len() {
        ls.push(params.expect(node, &format!("L{r}"))?);
        if shape.len() >= 2 {
            ws.push(params.expect(node, &format!("w{r}"))?);
        }
    }
    let (y, _) = tensor_mfl_eval(&shape, b, &ls, &ws, input.data());
    Ok(Yector(y))
}

/// Forward of a product-interaction node on per-field yectors.
pub fn product_mfl_forward(
    graph: &EncoderGraph,
    node: NodeId,
    params: &ParamStore,
    ys: &[Yector],
) -> Result<Yector, RuntimeError> {
    let kind = expect_kind(graph, node, "ProductInteraction")?;
    let (arities, max_order) = match kind {
        NodeKind::Product {
            arities, max_order, ..
        } => (arities.clone(), *max_order),
        _ => unreachable!(),
    };
    if ys.len() != arities.len() || ys.iter().zip(&arities).any(|(y, &a)| y.dim() != a) {
        return Err(RuntimeError::Eval {
            node,
            message: "input dims do not match field arities".to_string(),
        });
    }
    let b = params.expect(node, "b")?;
    let vs: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
    let y = product_eval(&arities, max_order, b, |name| {
        params
            .get(node, name)
            .map(|s| s.to_vec())
            .unwrap_or_default()
    }, &vs);
    Ok(Yector(y))
}

/// Forward of a multiset-pool node on the element yectors of a bag.
pub fn multiset_pool_forward(
    graph: &EncoderGraph,
    node: NodeId,
    params: &ParamStore,
    ys: &[Yector],
) -> Result<Yector, RuntimeError> {
    let kind = expect_kind(graph, node, "MultisetPool")?;
    let (elem_dim, normalized) = match kind {
        NodeKind::MsetPool {
            elem_dim,
            normalized,
            ..
        } => (*elem_dim, *normalized),
        _ => unreachable!(),
    };
    if ys.iter().any(|y| y.dim() != elem_dim) {
        return Err(RuntimeError::Eval {
            node,
            message: "element dim mismatch".to_string(),
        });
    }
    let l = params.expect(node, "L")?;
    let b = params.expect(node, "b")?;
    let vs: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
    Ok(Yector(pool_eval(l, b, &vs, normalized)))
}

/// Apply the per-branch affine layer of a dispatch node to an already
/// flattened branch input: `y = b_tag + L_tag v`. For an enum table this is
/// the case embedding alone.
pub fn sum_dispatch_forward(
    graph: &EncoderGraph,
    node: NodeId,
    params: &ParamStore,
    tag: usize,
    input: &[f64],
) -> Result<Yector, RuntimeError> {
    let kind = &graph.node(node).kind;
    match kind {
        NodeKind::EnumTable { cases, .. } => {
            if tag < 1 || tag > *cases {
                return Err(RuntimeError::Eval {
                    node,
                    message: format!("tag {tag} out of range for {cases} case(s)"),
                });
            }
            Ok(Yector(params.expect(node, &format!("b{tag}"))?.to_vec()))
        }
        NodeKind::SumDispatch { branches, .. } => {
            if tag < 1 || tag > branches.len() {
                return Err(RuntimeError::Eval {
                    node,
                    message: format!("tag {tag} out of range for {} branch(es)", branches.len()),
                });
            }
            let root = branches[tag - 1];
            match &graph.node(root).kind {
                NodeKind::Embedding { .. } => {
                    Ok(Yector(params.expect(root, "b")?.to_vec()))
                }
                NodeKind::Dense { in_dim, .. } => {
                    if input.len() != *in_dim {
                        return Err(RuntimeError::Eval {
                            node: root,
                            message: format!(
                                "branch input dim {} != dense in_dim {in_dim}",
                                input.len()
                            ),
                        });
                    }
                    let l = params.expect(root, "L")?;
                    let b = params.expect(root, "b")?;
                    Ok(Yector(dense_eval(l, b, input)))
                }
                other => Err(RuntimeError::Eval {
                    node: root,
                    message: format!(
                        "branch root is a {} node, not an affine layer",
                        other.kind_name()
                    ),
                }),
            }
        }
        other => Err(RuntimeError::Eval {
            node,
            message: format!("expected a dispatch node, found {}", other.kind_name()),
        }),
    }
}

/// Unroll a recurrent cell (or any node) on a value of its source type.
pub fn recurrent_forward(
    graph: &EncoderGraph,
    node: NodeId,
    params: &ParamStore,
    value: &Value,
) -> Result<Yector, RuntimeError> {
    crate::runtime::forward_at(graph, params, node, value)
}
