//! Dense tensor numerics.
//!
//! Tensors are stored row-major over `f64` with an explicit shape; a shape of
//! `[0]` (one axis of length zero) has no components and serves as the unit
//! value carrier. All operations are pure and desk-scale: no BLAS, no views.

use crate::error::TensorError;

/// A dense real tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(TensorError::ShapeMismatch {
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        DenseTensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Vector (order-1) tensor from raw components.
    pub fn vector(data: Vec<f64>) -> Self {
        DenseTensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(x: f64) -> Self {
        DenseTensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    /// The unit tensor: one axis of length zero, no components.
    pub fn unit() -> Self {
        DenseTensor {
            shape: vec![0],
            data: vec![],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn strides(shape: &[usize]) -> Vec<usize> {
        let mut strides = vec![1usize; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        strides
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let strides = Self::strides(&self.shape);
        let flat: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[flat]
    }
}

/// Tensor product: the output shape is the concatenation of the input shapes
/// and components are pairwise products. Rescaling is the special case where
/// one argument is a scalar.
pub fn tensor_product(p: &DenseTensor, q: &DenseTensor) -> DenseTensor {
    let mut shape = p.shape.clone();
    shape.extend_from_slice(&q.shape);
    let mut data = Vec::with_capacity(p.data.len() * q.data.len());
    for &pv in &p.data {
        for &qv in &q.data {
            data.push(pv * qv);
        }
    }
    DenseTensor { shape, data }
}

/// Componentwise addition; shapes must match exactly.
pub fn add(p: &DenseTensor, q: &DenseTensor) -> Result<DenseTensor, TensorError> {
    if p.shape != q.shape {
        return Err(TensorError::ShapeMismatch {
            left: p.shape.clone(),
            right: q.shape.clone(),
        });
    }
    let data = p.data.iter().zip(&q.data).map(|(a, b)| a + b).collect();
    Ok(DenseTensor {
        shape: p.shape.clone(),
        data,
    })
}

/// Pairwise contraction with an explicit pairing matrix `g` over axes
/// `(p, q)` of `n`. Both axes are removed and every component of the result
/// is `sum_{i_p, i_q} g[i_p][i_q] * n[..., i_p, ..., i_q, ...]`.
pub fn contract(
    g: &DenseTensor,
    n: &DenseTensor,
    axes: (usize, usize),
) -> Result<DenseTensor, TensorError> {
    let (p, q) = axes;
    let order = n.order();
    if p == q || p >= order || q >= order {
        return Err(TensorError::BadAxes { p, q, order });
    }
    let (lp, lq) = (n.shape[p], n.shape[q]);
    if g.shape != [lp, lq] {
        return Err(TensorError::PairingShape {
            got: g.shape.clone(),
            lp,
            lq,
        });
    }
    let out_shape: Vec<usize> = n
        .shape
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != p && *i != q)
        .map(|(_, &l)| l)
        .collect();
    let mut out = DenseTensor::zeros(out_shape);
    let in_strides = DenseTensor::strides(&n.shape);
    let out_strides = DenseTensor::strides(&out.shape);
    let mut idx = vec![0usize; order];
    for (flat, &v) in n.data.iter().enumerate() {
        // decode the flat index once per component
        let mut rest = flat;
        for (i, &s) in in_strides.iter().enumerate() {
            idx[i] = rest / s;
            rest %= s;
        }
        let gij = g.data[idx[p] * lq + idx[q]];
        if gij == 0.0 {
            continue;
        }
        let mut out_flat = 0usize;
        let mut k = 0usize;
        for (i, &component) in idx.iter().enumerate() {
            if i != p && i != q {
                out_flat += component * out_strides[k];
                k += 1;
            }
        }
        out.data[out_flat] += gij * v;
    }
    Ok(out)
}

/// Bias augmentation: every axis grows by one and every component with at
/// least one zero index is 1; the interior (all indices >= 1) is the original
/// tensor shifted by one in each axis.
pub fn bias_augment(n: &DenseTensor) -> DenseTensor {
    let shape: Vec<usize> = n.shape.iter().map(|l| l + 1).collect();
    let mut out = DenseTensor::zeros(shape);
    let out_strides = DenseTensor::strides(&out.shape);
    let mut idx = vec![0usize; out.shape.len()];
    for flat in 0..out.data.len() {
        let mut rest = flat;
        for (i, &s) in out_strides.iter().enumerate() {
            idx[i] = rest / s;
            rest %= s;
        }
        if idx.iter().any(|&i| i == 0) {
            out.data[flat] = 1.0;
        } else {
            let inner: Vec<usize> = idx.iter().map(|&i| i - 1).collect();
            out.data[flat] = n.get(&inner);
        }
    }
    out
}

/// A vector expressed in a learned basis: the flat output type of every
/// flattening layer. Subtype of the plain vector in spirit; in code it is a
/// thin newtype so signatures say what they mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Yector(pub Vec<f64>);

impl Yector {
    pub fn zeros(dim: usize) -> Self {
        Yector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Componentwise map; with a nonlinear `f` this is an activation.
pub fn yector_map(f: impl Fn(f64) -> f64, v: &Yector) -> Yector {
    Yector(v.0.iter().map(|&x| f(x)).collect())
}

pub fn yector_dot(v: &Yector, w: &Yector) -> Result<f64, TensorError> {
    if v.dim() != w.dim() {
        return Err(TensorError::DimMismatch {
            left: v.dim(),
            right: w.dim(),
        });
    }
    Ok(v.0.iter().zip(&w.0).map(|(a, b)| a * b).sum())
}

pub fn yector_add(v: &Yector, w: &Yector) -> Result<Yector, TensorError> {
    if v.dim() != w.dim() {
        return Err(TensorError::DimMismatch {
            left: v.dim(),
            right: w.dim(),
        });
    }
    Ok(Yector(v.0.iter().zip(&w.0).map(|(a, b)| a + b).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseTensor::new(shape.to_vec(), data).unwrap()
    }

    // Independent outer-product oracle: explicit loops over both index sets.
    fn outer_oracle(p: &DenseTensor, q: &DenseTensor) -> Vec<f64> {
        let mut out = Vec::new();
        for &a in p.data() {
            for &b in q.data() {
                out.push(a * b);
            }
        }
        out
    }

    #[test]
    fn tensor_product_matches_outer_oracle() {
        let p = DenseTensor::vector(vec![1.0, 2.0]);
        let q = DenseTensor::vector(vec![3.0, 4.0]);
        let n = tensor_product(&p, &q);
        assert_eq!(n.shape(), &[2, 2]);
        // ((3,4),(6,8)) frozen from the oracle
        assert_eq!(n.data(), &[3.0, 4.0, 6.0, 8.0]);
        assert_eq!(n.data(), outer_oracle(&p, &q).as_slice());
    }

    #[test]
    fn tensor_product_scalar_rescales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&mut rng, &[2, 3]);
        let scaled = tensor_product(&DenseTensor::scalar(2.0), &t);
        assert_eq!(scaled.shape(), &[1, 2, 3]);
        for (a, b) in scaled.data().iter().zip(t.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn tensor_product_with_unit_is_empty() {
        let p = DenseTensor::vector(vec![1.0, 2.0]);
        let n = tensor_product(&p, &DenseTensor::unit());
        assert_eq!(n.shape(), &[2, 0]);
        assert!(n.data().is_empty());
    }

    #[test]
    fn tensor_product_associative_on_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_tensor(&mut rng, &[2]);
        let q = random_tensor(&mut rng, &[3]);
        let r = random_tensor(&mut rng, &[2, 2]);
        let left = tensor_product(&tensor_product(&p, &q), &r);
        let right = tensor_product(&p, &tensor_product(&q, &r));
        assert_eq!(left.data(), right.data());
        assert_eq!(left.shape(), right.shape());
    }

    #[test]
    fn contract_identity_gives_trace() {
        let n = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = DenseTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = contract(&g, &n, (0, 1)).unwrap();
        assert_eq!(out.shape(), &[] as &[usize]);
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn contract_identity_on_outer_product_is_dot() {
        let v = DenseTensor::vector(vec![1.0, 2.0, 3.0]);
        let w = DenseTensor::vector(vec![-1.0, 0.5, 2.0]);
        let g = DenseTensor::new(vec![3, 3], {
            let mut id = vec![0.0; 9];
            for i in 0..3 {
                id[i * 3 + i] = 1.0;
            }
            id
        })
        .unwrap();
        let out = contract(&g, &tensor_product(&v, &w), (0, 1)).unwrap();
        let dot: f64 = v.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        assert!((out.data()[0] - dot).abs() < 1e-15);
    }

    #[test]
    fn contract_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_tensor(&mut rng, &[3, 3]);
        let n = random_tensor(&mut rng, &[3, 3, 2]);
        let out = contract(&g, &n, (0, 1)).unwrap();
        // independent triple-loop oracle
        for k in 0..2 {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += g.get(&[i, j]) * n.get(&[i, j, k]);
                }
            }
            let rel = (out.data()[k] - acc).abs() / acc.abs().max(1.0);
            assert!(rel <= 1e-12);
        }
    }

    #[test]
    fn add_zero_and_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&mut rng, &[2, 3]);
        let zero = DenseTensor::zeros(vec![2, 3]);
        assert_eq!(add(&t, &zero).unwrap(), t);
        let neg = DenseTensor::new(vec![2, 3], t.data().iter().map(|x| -x).collect()).unwrap();
        assert_eq!(add(&t, &neg).unwrap().data(), zero.data());
        let q = random_tensor(&mut rng, &[2, 3]);
        assert_eq!(add(&t, &q).unwrap(), add(&q, &t).unwrap());
    }

    #[test]
    fn add_shape_mismatch_is_error() {
        let t = DenseTensor::zeros(vec![2]);
        let q = DenseTensor::zeros(vec![3]);
        assert!(add(&t, &q).is_err());
    }

    #[test]
    fn bias_augment_vector() {
        let v = DenseTensor::vector(vec![2.0, 3.0]);
        let out = bias_augment(&v);
        assert_eq!(out.shape(), &[3]);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn bias_augment_one_by_one() {
        // frozen by applying the case rule by hand: index-0 hyperplanes are 1
        let n = DenseTensor::new(vec![1, 1], vec![7.0]).unwrap();
        let out = bias_augment(&n);
        assert_eq!(out.shape(), &[2, 2]);
        assert_eq!(out.data(), &[1.0, 1.0, 1.0, 7.0]);
    }

    #[test]
    fn bias_augment_interior_is_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = random_tensor(&mut rng, &[2, 3, 2]);
        let out = bias_augment(&n);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    assert_eq!(out.get(&[i + 1, j + 1, k + 1]), n.get(&[i, j, k]));
                }
            }
        }
        // every index-0 entry is exactly 1
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..3 {
                    if i == 0 || j == 0 || k == 0 {
                        assert_eq!(out.get(&[i, j, k]), 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn yector_ops() {
        let v = Yector(vec![1.0, 2.0]);
        let w = Yector(vec![3.0, 4.0]);
        assert_eq!(yector_map(|x| x, &v), v);
        // dot with a basis vector picks the component
        let e1 = Yector(vec![0.0, 1.0]);
        assert_eq!(yector_dot(&v, &e1).unwrap(), 2.0);
        // frozen hand sum: 1*3 + 2*4
        assert_eq!(yector_dot(&v, &w).unwrap(), 11.0);
        assert_eq!(yector_add(&v, &w).unwrap(), Yector(vec![4.0, 6.0]));
        assert!(yector_dot(&v, &Yector(vec![1.0])).is_err());
    }
}
