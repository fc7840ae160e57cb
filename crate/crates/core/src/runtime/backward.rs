//! Reverse-mode gradients over a recorded tape.
//!
//! Frames are processed in reverse post-order, so each frame's cotangent is
//! fully accumulated before it is consumed. Gradients flow into a store with
//! the same keying as the parameters; slots of branches the value never took
//! stay exactly zero, and weights shared across invocations (bag elements,
//! recurrence steps, shared subgraphs) accumulate over every invocation.

use crate::error::RuntimeError;
use crate::graph::forward::contract_except;
use crate::graph::{DenseInput, EncoderGraph, NodeKind};
use crate::params::ParamStore;
use crate::tensor::Yector;

use super::{tensor_mfl_params, Aux, Tape};

/// Gradients of `cotangent . output` with respect to every parameter slot.
pub fn backward(
    graph: &EncoderGraph,
    params: &ParamStore,
    tape: &Tape,
    cotangent: &Yector,
) -> Result<ParamStore, RuntimeError> {
    let frames = tape.frames();
    let root = tape.root();
    if cotangent.dim() != frames[root].output.len() {
        return Err(RuntimeError::CotangentDim {
            got: cotangent.dim(),
            expected: frames[root].output.len(),
        });
    }
    let mut grads = ParamStore::zeros_like(graph);
    let mut cots: Vec<Option<Vec<f64>>> = vec![None; frames.len()];
    cots[root] = Some(cotangent.0.clone());

    let add_to = |acc: &mut Option<Vec<f64>>, delta: Vec<f64>| match acc {
        Some(v) => {
            for (a, d) in v.iter_mut().zip(&delta) {
                *a += d;
            }
        }
        None => *acc = Some(delta),
    };

    for i in (0..frames.len()).rev() {
        let Some(c) = cots[i].take() else { continue };
        let frame = &frames[i];
        let node = frame.node;
        match &graph.node(node).kind {
            NodeKind::Embedding { .. } => {
                accumulate(&mut grads, node, "b", &c);
            }
            NodeKind::Dense { input, in_dim, .. } => {
                let v: &[f64] = match (input, &frame.aux) {
                    (DenseInput::Leaf, Aux::VectorLeaf(v)) => v,
                    (DenseInput::Node(_), _) => &frames[frame.children[0]].output,
                    _ => {
                        return Err(RuntimeError::Eval {
                            node,
                            message: "tape frame does not match node".into(),
                        })
                    }
                };
                accumulate(&mut grads, node, "b", &c);
                {
                    let gl = grads.get_mut(node, "L").unwrap();
                    for (k, ck) in c.iter().enumerate() {
                        for (j, vj) in v.iter().enumerate() {
                            gl[k * in_dim + j] += ck * vj;
                        }
                    }
                }
                if matches!(input, DenseInput::Node(_)) {
                    let l = params.expect(node, "L")?;
                    let mut down = vec![0.0; *in_dim];
                    for (k, ck) in c.iter().enumerate() {
                        for (j, d) in down.iter_mut().enumerate() {
                            *d += l[k * in_dim + j] * ck;
                        }
                    }
                    add_to(&mut cots[frame.children[0]], down);
                }
            }
            NodeKind::TensorMfl { shape, .. } => {
                let Aux::TensorLeaf { data, partials } = &frame.aux else {
                    return Err(RuntimeError::Eval {
                        node,
                        message: "tape frame does not match node".into(),
                    });
                };
                let n = shape.len();
                accumulate(&mut grads, node, "b", &c);
                let (_, ls, ws) = tensor_mfl_params(graph, params, node, shape)?;
                // dL_r = c (x) t_r
                for (r, t_r) in partials.iter().enumerate() {
                    let name = format!("L{}", r + 1);
                    let gl = grads.get_mut(node, &name).unwrap();
                    let lr = shape[r];
                    for (k, ck) in c.iter().enumerate() {
                        for (j, tj) in t_r.iter().enumerate() {
                            gl[k * lr + j] += ck * tj;
                        }
                    }
                }
                if n >= 2 {
                    // u_r = L_r^T c, one per axis
                    let us: Vec<Vec<f64>> = (0..n)
                        .map(|r| {
                            let lr = shape[r];
                            let mut u = vec![0.0; lr];
                            for (k, ck) in c.iter().enumerate() {
                                for (j, uj) in u.iter_mut().enumerate() {
                                    *uj += ls[r][k * lr + j] * ck;
                                }
                            }
                            u
                        })
                        .collect();
                    for s in 0..n {
                        let name = format!("w{}", s + 1);
                        let gw = grads.get_mut(node, &name).unwrap();
                        for r in 0..n {
                            if r == s {
                                continue;
                            }
                            // pairwise partial over (r, s), axes sorted
                            let (a, bx) = (r.min(s), r.max(s));
                            let pair = contract_except(data, shape, &ws, &[a, bx]);
                            let (la, lb) = (shape[a], shape[bx]);
                            for ja in 0..la {
                                for jb in 0..lb {
                                    let t = pair[ja * lb + jb];
                                    let (jr, js) = if r == a { (ja, jb) } else { (jb, ja) };
                                    gw[js] += us[r][jr] * t;
                                }
                            }
                        }
                    }
                }
            }
            NodeKind::SumDispatch { .. }
            | NodeKind::Recurrent { .. }
            | NodeKind::SelfPort { .. } => {
                add_to(&mut cots[frame.children[0]], c);
            }
            NodeKind::EnumTable { .. } => {
                let Aux::Tag(tag) = frame.aux else {
                    return Err(RuntimeError::Eval {
                        node,
                        message: "tape frame does not match node".into(),
                    });
                };
                accumulate(&mut grads, node, &format!("b{tag}"), &c);
            }
            NodeKind::Product {
                arities, max_order, ..
            } => {
                let vs: Vec<&[f64]> = frame
                    .children
                    .iter()
                    .map(|&f| frames[f].output.as_slice())
                    .collect();
                accumulate(&mut grads, node, "b", &c);
                let mut downs: Vec<Vec<f64>> =
                    arities.iter().map(|&a| vec![0.0; a]).collect();
                for subset in crate::graph::field_subsets(arities.len(), *max_order) {
                    let name = crate::graph::subset_slot_name(&subset);
                    let cs = params.expect(node, &name)?.to_vec();
                    let dims: Vec<usize> = subset.iter().map(|&r| arities[r]).collect();
                    let block: usize = dims.iter().product();
                    let gc = grads.get_mut(node, &name).unwrap();
                    crate::graph::forward::for_each_multi_index(&dims, |idx, flat| {
                        let factors: Vec<f64> = subset
                            .iter()
                            .enumerate()
                            .map(|(pos, &r)| vs[r][idx[pos]])
                            .collect();
                        let full: f64 = factors.iter().product();
                        // contraction of the slot with the cotangent at this index
                        let mut cdot = 0.0;
                        for (k, ck) in c.iter().enumerate() {
                            let w = cs[k * block + flat];
                            gc[k * block + flat] += ck * full;
                            cdot += ck * w;
                        }
                        if cdot != 0.0 {
                            for (pos, &r) in subset.iter().enumerate() {
                                let mut loo = 1.0;
                                for (p2, &f2) in factors.iter().enumerate() {
                                    if p2 != pos {
                                        loo *= f2;
                                    }
                                }
                                downs[r][idx[pos]] += cdot * loo;
                            }
                        }
                    });
                }
                for (child, down) in frame.children.iter().zip(downs) {
                    add_to(&mut cots[*child], down);
                }
            }
            NodeKind::MsetPool {
                elem_dim,
                normalized,
                ..
            } => {
                let n = frame.children.len();
                let l = params.expect(node, "L")?;
                let scale = if *normalized {
                    if n == 0 {
                        accumulate(&mut grads, node, "b", &c);
                        continue;
                    }
                    1.0 / n as f64
                } else {
                    if n == 0 {
                        continue; // empty sum: output and gradients are zero
                    }
                    1.0
                };
                if *normalized {
                    accumulate(&mut grads, node, "b", &c);
                } else {
                    let scaled: Vec<f64> = c.iter().map(|x| n as f64 * x).collect();
                    accumulate(&mut grads, node, "b", &scaled);
                }
                let mut sum_v = vec![0.0; *elem_dim];
                for &f in &frame.children {
                    for (s, x) in sum_v.iter_mut().zip(&frames[f].output) {
                        *s += x;
                    }
                }
                {
                    let gl = grads.get_mut(node, "L").unwrap();
                    for (k, ck) in c.iter().enumerate() {
                        for (j, sj) in sum_v.iter().enumerate() {
                            gl[k * elem_dim + j] += scale * ck * sj;
                        }
                    }
                }
                let mut down = vec![0.0; *elem_dim];
                for (k, ck) in c.iter().enumerate() {
                    for (j, d) in down.iter_mut().enumerate() {
                        *d += scale * l[k * elem_dim + j] * ck;
                    }
                }
                for &child in &frame.children {
                    add_to(&mut cots[child], down.clone());
                }
            }
            NodeKind::Activation { f, .. } => {
                let x = &frames[frame.children[0]].output;
                let down: Vec<f64> = x
                    .iter()
                    .zip(&c)
                    .map(|(&xi, ci)| f.derivative(xi) * ci)
                    .collect();
                add_to(&mut cots[frame.children[0]], down);
            }
        }
    }
    Ok(grads)
}

fn accumulate(grads: &mut ParamStore, node: usize, slot: &str, delta: &[f64]) {
    let g = grads
        .get_mut(node, slot)
        .unwrap_or_else(|| panic!("missing gradient slot ({node}, {slot})"));
    for (a, d) in g.iter_mut().zip(delta) {
        *a += d;
    }
}
