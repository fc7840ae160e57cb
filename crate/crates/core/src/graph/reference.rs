//! Straight-loop reference forms of the flattening layers.
//!
//! Each MFL exists in two algebraically equivalent forms: a multilinear form
//! over bias-augmented inputs, and an explicit-bias form over the raw inputs
//! obtained by pinning every bias coordinate to 1 and merging the resulting
//! constant terms into a single bias vector. This module implements the
//! multilinear forms by direct summation and the bias-merging collapse, so
//! the production kernels can be checked against an independent route.

use crate::tensor::{bias_augment, DenseTensor};

use super::forward::for_each_multi_index;
use super::{field_subsets, subset_slot_name};

/// Naive evaluation of the per-axis-factored multilinear form
/// `y_k = sum_idx (sum_r L_r[k, idx_r] * prod_{s != r} w_s[idx_s]) * N[idx]`
/// by explicit loops over the full index space of `data`.
pub fn naive_tensor_multilinear(
    shape: &[usize],
    out: usize,
    ls: &[Vec<f64>],
    ws: &[Vec<f64>],
    data: &[f64],
) -> Vec<f64> {
    let n = shape.len();
    let mut y = vec![0.0; out];
    for_each_multi_index(shape, |idx, flat| {
        let x = data[flat];
        if x == 0.0 {
            return;
        }
        for (k, yk) in y.iter_mut().enumerate() {
            let mut coeff = 0.0;
            for r in 0..n {
                let mut term = ls[r][k * shape[r] + idx[r]];
                for s in 0..n {
                    if s != r {
                        term *= ws[s][idx[s]];
                    }
                }
                coeff += term;
            }
            *yk += coeff * x;
        }
    });
    y
}

/// Explicit-bias tensor MFL parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMflParams {
    pub b: Vec<f64>,
    pub ls: Vec<Vec<f64>>,
    pub ws: Vec<Vec<f64>>,
}

/// Bias-merging collapse for the tensor MFL: given augmented weights over
/// axes of length `l_r + 1`, produce the explicit-bias parameters over the
/// original axes. The interior blocks carry over unchanged; every term with
/// at least one bias index folds into the single bias vector, which equals
/// the augmented form evaluated on the bias-augmented zero tensor.
pub fn collapse_augmented_tensor(
    shape: &[usize],
    out: usize,
    ls_aug: &[Vec<f64>],
    ws_aug: &[Vec<f64>],
) -> TensorMflParams {
    let aug_shape: Vec<usize> = shape.iter().map(|l| l + 1).collect();
    let zero_aug = bias_augment(&DenseTensor::zeros(shape.to_vec()));
    let b = naive_tensor_multilinear(&aug_shape, out, ls_aug, ws_aug, zero_aug.data());
    let ls: Vec<Vec<f64>> = ls_aug
        .iter()
        .zip(shape)
        .map(|(l_aug, &len)| {
            let mut l = Vec::with_capacity(out * len);
            for k in 0..out {
                l.extend_from_slice(&l_aug[k * (len + 1) + 1..(k + 1) * (len + 1)]);
            }
            l
        })
        .collect();
    let ws: Vec<Vec<f64>> = ws_aug.iter().map(|w| w[1..].to_vec()).collect();
    TensorMflParams { b, ls, ws }
}

/// Assemble the single product-MFL coefficient tensor `M` of shape
/// `[out, l_1+1, ..., l_n+1]` from explicit subset slots, inverting the
/// renaming `b = M[k, 0..0]`, `L_r = M[k, 0..j_r..0]`,
/// `C_S = M[k, interior on S, 0 elsewhere]`. Subsets beyond `max_order`
/// are zero.
pub fn assemble_product_coefficient(
    arities: &[usize],
    out: usize,
    max_order: usize,
    slot: impl Fn(&str) -> Vec<f64>,
    b: &[f64],
) -> Vec<f64> {
    let n = arities.len();
    let aug_dims: Vec<usize> = arities.iter().map(|l| l + 1).collect();
    let aug_block: usize = aug_dims.iter().product();
    let mut m = vec![0.0; out * aug_block];
    let strides = {
        let mut s = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            s[i] = s[i + 1] * aug_dims[i + 1];
        }
        s
    };
    for k in 0..out {
        m[k * aug_block] = b[k];
    }
    for subset in field_subsets(n, max_order) {
        let c = slot(&subset_slot_name(&subset));
        let dims: Vec<usize> = subset.iter().map(|&r| arities[r]).collect();
        let block: usize = dims.iter().product();
        for_each_multi_index(&dims, |idx, flat| {
            // augmented position: interior index + 1 on subset axes, 0 elsewhere
            let mut pos = 0usize;
            for (p, &r) in subset.iter().enumerate() {
                pos += (idx[p] + 1) * strides[r];
            }
            for k in 0..out {
                m[k * aug_block + pos] = c[k * block + flat];
            }
        });
    }
    m
}

/// Naive evaluation of the product multilinear form
/// `y_k = sum_idx M[k, idx] * prod_r v_r[idx_r]` over bias-augmented field
/// vectors (`v_r[0] = 1`).
pub fn naive_product_multilinear(
    arities: &[usize],
    out: usize,
    m: &[f64],
    vs: &[Vec<f64>],
) -> Vec<f64> {
    let aug_dims: Vec<usize> = arities.iter().map(|l| l + 1).collect();
    let aug_block: usize = aug_dims.iter().product();
    let mut y = vec![0.0; out];
    for_each_multi_index(&aug_dims, |idx, flat| {
        let mut prod = 1.0;
        for (r, &i) in idx.iter().enumerate() {
            prod *= if i == 0 { 1.0 } else { vs[r][i - 1] };
        }
        if prod == 0.0 {
            return;
        }
        for (k, yk) in y.iter_mut().enumerate() {
            *yk += m[k * aug_block + flat] * prod;
        }
    });
    y
}

/// Multiset MFL in linear form: `y = sum_r L' v'_r` with `L' = [b | L]` and
/// bias-augmented element vectors.
pub fn naive_pool_augmented(l_aug: &[f64], out: usize, vs: &[Vec<f64>]) -> Vec<f64> {
    let elem_aug = if out == 0 { 0 } else { l_aug.len() / out };
    let mut y = vec![0.0; out];
    for v in vs {
        for (k, yk) in y.iter_mut().enumerate() {
            let row = &l_aug[k * elem_aug..(k + 1) * elem_aug];
            *yk += row[0];
            *yk += row[1..].iter().zip(v).map(|(a, x)| a * x).sum::<f64>();
        }
    }
    y
}
