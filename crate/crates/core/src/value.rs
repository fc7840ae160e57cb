//! Runtime values for every ADT and their primitive operations.
//!
//! Values are immutable and all operations are pure. A `Bag` carries its
//! elements in an arbitrary order; bag equality is multiset equality, and the
//! fold contract (commutativity of the step function in its element argument)
//! makes fold results carrier-order independent.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::ValueError;
use crate::schema::{SchemaEnv, TypeExpr};
use crate::tensor::DenseTensor;

/// A runtime datum conforming to some [`TypeExpr`].
#[derive(Debug, Clone)]
pub enum Value {
    TensorV(DenseTensor),
    Tagged { tag: usize, payload: Box<Value> },
    Tuple(Vec<Value>),
    Bag(Vec<Value>),
}

impl Value {
    pub fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ValueError> {
        DenseTensor::new(shape, data)
            .map(Value::TensorV)
            .map_err(|e| ValueError::Wire(e.to_string()))
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Value::TensorV(DenseTensor::vector(data))
    }

    pub fn scal(x: f64) -> Self {
        Value::TensorV(DenseTensor::scalar(x))
    }

    /// The unit value: the empty vector.
    pub fn unit() -> Self {
        Value::TensorV(DenseTensor::unit())
    }

    pub fn tagged(tag: usize, payload: Value) -> Self {
        assert!(tag >= 1, "sum tags are 1-based");
        Value::Tagged {
            tag,
            payload: Box::new(payload),
        }
    }

    pub fn bag(items: Vec<Value>) -> Self {
        Value::Bag(items)
    }

    pub fn as_bag(&self) -> &[Value] {
        match self {
            Value::Bag(items) => items,
            other => panic!("expected a bag value, found {other:?}"),
        }
    }

    pub fn as_tensor(&self) -> &DenseTensor {
        match self {
            Value::TensorV(t) => t,
            other => panic!("expected a tensor value, found {other:?}"),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::TensorV(a), Value::TensorV(b)) => a == b,
            (
                Value::Tagged { tag: t1, payload: p1 },
                Value::Tagged { tag: t2, payload: p2 },
            ) => t1 == t2 && p1 == p2,
            (Value::Tuple(a), Value::Tuple(b)) => a == b,
            (Value::Bag(a), Value::Bag(b)) => {
                // multiset equality: match elements regardless of carrier order
                if a.len() != b.len() {
                    return false;
                }
                let mut used = vec![false; b.len()];
                'outer: for x in a {
                    for (i, y) in b.iter().enumerate() {
                        if !used[i] && x == y {
                            used[i] = true;
                            continue 'outer;
                        }
                    }
                    return false;
                }
                true
            }
            _ => false,
        }
    }
}

/// Case analysis on a tagged value: applies the branch selected by the tag.
pub fn analyze(
    branches: &[&dyn Fn(&Value) -> Value],
    s: &Value,
) -> Result<Value, ValueError> {
    match s {
        Value::Tagged { tag, payload } => {
            if *tag < 1 || *tag > branches.len() {
                Err(ValueError::TagOutOfRange {
                    tag: *tag,
                    branches: branches.len(),
                })
            } else {
                Ok(branches[tag - 1](payload))
            }
        }
        other => panic!("analyze expects a tagged value, found {other:?}"),
    }
}

/// Project the `i`-th (1-based) field of a tuple.
pub fn project(i: usize, p: &Value) -> Result<Value, ValueError> {
    match p {
        Value::Tuple(items) => {
            if i < 1 || i > items.len() {
                Err(ValueError::IndexOutOfRange {
                    index: i,
                    arity: items.len(),
                })
            } else {
                Ok(items[i - 1].clone())
            }
        }
        other => panic!("project expects a tuple value, found {other:?}"),
    }
}

/// Left fold over the bag carrier. The step function must commute in its
/// element argument (`f(f(a,x),y) = f(f(a,y),x)`); under that contract the
/// result does not depend on carrier order.
pub fn mset_fold(init: Value, f: impl Fn(&Value, &Value) -> Value, s: &Value) -> Value {
    let mut acc = init;
    for item in s.as_bag() {
        acc = f(&acc, item);
    }
    acc
}

/// Additive union: element multiplicities add, so the carrier is the
/// concatenation. The derived `+` coincides with this union.
pub fn mset_union(a: &Value, b: &Value) -> Value {
    let mut items = a.as_bag().to_vec();
    items.extend_from_slice(b.as_bag());
    Value::Bag(items)
}

pub fn mset_sum(a: &Value, b: &Value) -> Value {
    mset_union(a, b)
}

fn census(items: &[Value]) -> Vec<(&Value, usize)> {
    let mut out: Vec<(&Value, usize)> = Vec::new();
    for item in items {
        if let Some(entry) = out.iter_mut().find(|(v, _)| *v == item) {
            entry.1 += 1;
        } else {
            out.push((item, 1));
        }
    }
    out
}

/// Intersection by minimum multiplicity.
pub fn mset_intersection(a: &Value, b: &Value) -> Value {
    let cb = census(b.as_bag());
    let mut items = Vec::new();
    for (v, na) in census(a.as_bag()) {
        let nb = cb.iter().find(|(w, _)| *w == v).map(|(_, n)| *n).unwrap_or(0);
        for _ in 0..na.min(nb) {
            items.push(v.clone());
        }
    }
    Value::Bag(items)
}

/// Difference by saturating multiplicity subtraction.
pub fn mset_difference(a: &Value, b: &Value) -> Value {
    let cb = census(b.as_bag());
    let mut items = Vec::new();
    for (v, na) in census(a.as_bag()) {
        let nb = cb.iter().find(|(w, _)| *w == v).map(|(_, n)| *n).unwrap_or(0);
        for _ in 0..na.saturating_sub(nb) {
            items.push(v.clone());
        }
    }
    Value::Bag(items)
}

/// Flatten a bag of bags: fold with union from the empty bag.
pub fn mset_flatten(s: &Value) -> Value {
    mset_fold(Value::Bag(vec![]), |acc, x| mset_union(acc, x), s)
}

/// Reduce under a commutative monoid `(identity, op)` on the element type.
pub fn mset_reduce(
    identity: Value,
    op: impl Fn(&Value, &Value) -> Value,
    s: &Value,
) -> Value {
    mset_fold(identity, op, s)
}

pub fn mset_size(s: &Value) -> usize {
    s.as_bag().len()
}

/// Cartesian product: all ordered pairs, multiplicities multiply. Derived
/// from map and flatten.
pub fn mset_cartesian(s1: &Value, s2: &Value) -> Value {
    let pairs_for = |x1: &Value| -> Value {
        poly_map(
            &[&|x2: &Value| Value::Tuple(vec![x1.clone(), x2.clone()])],
            s2,
        )
        .expect("bag map takes one function")
    };
    let nested = poly_map(&[&pairs_for], s1).expect("bag map takes one function");
    mset_flatten(&nested)
}

/// Structure-preserving application of one function per type argument,
/// derived from the per-type primitives: case analysis for sums, projection
/// plus the tuple constructor for products, fold plus union for multisets.
/// Tensors take no functions.
pub fn poly_map(fs: &[&dyn Fn(&Value) -> Value], v: &Value) -> Result<Value, ValueError> {
    match v {
        Value::TensorV(_) => {
            if fs.is_empty() {
                Ok(v.clone())
            } else {
                Err(ValueError::MapArity {
                    expected: 0,
                    got: fs.len(),
                })
            }
        }
        Value::Tagged { .. } => {
            let branches: Vec<Box<dyn Fn(&Value) -> Value>> = fs
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let f = *f;
                    Box::new(move |x: &Value| Value::tagged(i + 1, f(x)))
                        as Box<dyn Fn(&Value) -> Value>
                })
                .collect();
            let refs: Vec<&dyn Fn(&Value) -> Value> =
                branches.iter().map(|b| b.as_ref()).collect();
            analyze(&refs, v)
        }
        Value::Tuple(items) => {
            if fs.len() != items.len() {
                return Err(ValueError::MapArity {
                    expected: items.len(),
                    got: fs.len(),
                });
            }
            let mut out = Vec::with_capacity(items.len());
            for (i, f) in fs.iter().enumerate() {
                out.push(f(&project(i + 1, v)?));
            }
            Ok(Value::Tuple(out))
        }
        Value::Bag(_) => {
            if fs.len() != 1 {
                return Err(ValueError::MapArity {
                    expected: 1,
                    got: fs.len(),
                });
            }
            let f = fs[0];
            Ok(mset_fold(
                Value::Bag(vec![]),
                |acc, x| mset_union(acc, &Value::Bag(vec![f(x)])),
                v,
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// Wire format: one JSON value per line.
//   tensor  {"t": {"shape":[..], "data":[..]}}     bare number means Scal
//   sum     {"s": {"tag": k, "v": <value>}}        k is 1-based
//   prod    {"p": [<value>, ...]}
//   mset    {"m": [<value>, ...]}
//   unit    {"u": true}
// ---------------------------------------------------------------------------

/// Canonical JSON encoding of a value.
pub fn value_to_json(v: &Value) -> serde_json::Value {
    use serde_json::json;
    match v {
        Value::TensorV(t) => {
            if t.shape() == [0] {
                json!({"u": true})
            } else if t.shape() == [1] {
                json!(t.data()[0])
            } else {
                json!({"t": {"shape": t.shape(), "data": t.data()}})
            }
        }
        Value::Tagged { tag, payload } => json!({"s": {"tag": tag, "v": value_to_json(payload)}}),
        Value::Tuple(items) => {
            json!({"p": items.iter().map(value_to_json).collect::<Vec<_>>()})
        }
        Value::Bag(items) => {
            json!({"m": items.iter().map(value_to_json).collect::<Vec<_>>()})
        }
    }
}

pub fn value_from_json(j: &serde_json::Value) -> Result<Value, ValueError> {
    use serde_json::Value as J;
    let wire = |msg: &str| ValueError::Wire(msg.to_string());
    match j {
        J::Number(n) => {
            let x = n.as_f64().ok_or_else(|| wire("number out of f64 range"))?;
            Ok(Value::scal(x))
        }
        J::Object(map) => {
            if map.len() != 1 {
                return Err(wire("expected exactly one of t/s/p/m/u"));
            }
            let (key, body) = map.iter().next().unwrap();
            match key.as_str() {
                "u" => match body {
                    J::Bool(true) => Ok(Value::unit()),
                    _ => Err(wire("unit must be {\"u\": true}")),
                },
                "t" => {
                    let shape = body
                        .get("shape")
                        .and_then(J::as_array)
                        .ok_or_else(|| wire("tensor needs a shape array"))?
                        .iter()
                        .map(|x| x.as_u64().map(|n| n as usize))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| wire("tensor shape must be naturals"))?;
                    let data = body
                        .get("data")
                        .and_then(J::as_array)
                        .ok_or_else(|| wire("tensor needs a data array"))?
                        .iter()
                        .map(J::as_f64)
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| wire("tensor data must be numbers"))?;
                    Value::tensor(shape, data)
                }
                "s" => {
                    let tag = body
                        .get("tag")
                        .and_then(J::as_u64)
                        .ok_or_else(|| wire("sum needs a 1-based tag"))?
                        as usize;
                    if tag < 1 {
                        return Err(wire("sum tag must be >= 1"));
                    }
                    let payload = body.get("v").ok_or_else(|| wire("sum needs a payload v"))?;
                    Ok(Value::tagged(tag, value_from_json(payload)?))
                }
                "p" => {
                    let items = body
                        .as_array()
                        .ok_or_else(|| wire("product needs an array"))?;
                    Ok(Value::Tuple(
                        items.iter().map(value_from_json).collect::<Result<_, _>>()?,
                    ))
                }
                "m" => {
                    let items = body
                        .as_array()
                        .ok_or_else(|| wire("multiset needs an array"))?;
                    Ok(Value::Bag(
                        items.iter().map(value_from_json).collect::<Result<_, _>>()?,
                    ))
                }
                other => Err(wire(&format!("unknown value key `{other}`"))),
            }
        }
        _ => Err(wire("expected a number or an object")),
    }
}

pub fn value_from_str(line: &str) -> Result<Value, ValueError> {
    let j: serde_json::Value =
        serde_json::from_str(line).map_err(|e| ValueError::Wire(e.to_string()))?;
    value_from_json(&j)
}

pub fn value_to_string(v: &Value) -> String {
    value_to_json(v).to_string()
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

fn min_depth(t: &TypeExpr, env: &SchemaEnv, stack: &mut Vec<String>) -> usize {
    const INF: usize = usize::MAX / 4;
    match t {
        TypeExpr::Tensor(_) => 1,
        TypeExpr::Sum(args) => {
            1 + args
                .iter()
                .map(|a| min_depth(a, env, stack))
                .min()
                .unwrap_or(INF)
        }
        TypeExpr::Prod(args) => {
            1 + args
                .iter()
                .map(|a| min_depth(a, env, stack))
                .max()
                .unwrap_or(0)
        }
        TypeExpr::MSet(_) => 1, // the empty bag always exists
        TypeExpr::Ref(n) => {
            if stack.contains(n) {
                return INF;
            }
            match env.get(n) {
                Some(def) => {
                    stack.push(n.clone());
                    let d = min_depth(def, env, stack);
                    stack.pop();
                    d
                }
                None => INF,
            }
        }
    }
}

/// Draw a random conforming value. Tensor components are uniform in (-1, 1);
/// sums pick a random alternative whose minimum value depth fits the
/// remaining budget, so recursion always terminates.
pub fn sample_value(t: &TypeExpr, env: &SchemaEnv, rng: &mut ChaCha8Rng, budget: usize) -> Value {
    match env.resolve(t).expect("type must resolve").clone() {
        TypeExpr::Tensor(shape) => {
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Value::tensor(shape, data).unwrap()
        }
        TypeExpr::Sum(args) => {
            assert!(!args.is_empty(), "cannot sample the empty sum");
            let depths: Vec<usize> = args
                .iter()
                .map(|a| min_depth(a, env, &mut Vec::new()))
                .collect();
            let fitting: Vec<usize> = (0..args.len())
                .filter(|&i| depths[i] < budget.max(1))
                .collect();
            let idx = if fitting.is_empty() {
                // out of budget: take the shallowest alternative
                (0..args.len()).min_by_key(|&i| depths[i]).unwrap()
            } else {
                fitting[rng.gen_range(0..fitting.len())]
            };
            let payload = sample_value(&args[idx], env, rng, budget.saturating_sub(1));
            Value::tagged(idx + 1, payload)
        }
        TypeExpr::Prod(args) => Value::Tuple(
            args.iter()
                .map(|a| sample_value(a, env, rng, budget.saturating_sub(1)))
                .collect(),
        ),
        TypeExpr::MSet(e) => {
            let n = if budget <= 1 { 0 } else { rng.gen_range(0..=3) };
            Value::Bag(
                (0..n)
                    .map(|_| sample_value(&e, env, rng, budget.saturating_sub(1)))
                    .collect(),
            )
        }
        TypeExpr::Ref(_) => unreachable!("resolve strips refs"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn scal(x: f64) -> Value {
        Value::scal(x)
    }

    #[test]
    fn analyze_dispatches_on_tag() {
        let double = |v: &Value| scal(v.as_tensor().data()[0] * 2.0);
        let id = |v: &Value| v.clone();
        let branches: Vec<&dyn Fn(&Value) -> Value> = vec![&id, &double];
        let out = analyze(&branches, &Value::tagged(2, scal(3.0))).unwrap();
        assert_eq!(out, scal(6.0));
        // constant branch on tag 1
        let c = |_: &Value| scal(42.0);
        let branches: Vec<&dyn Fn(&Value) -> Value> = vec![&c, &id];
        let out = analyze(&branches, &Value::tagged(1, Value::unit())).unwrap();
        assert_eq!(out, scal(42.0));
        // out of range
        assert_eq!(
            analyze(&branches, &Value::tagged(3, Value::unit())),
            Err(ValueError::TagOutOfRange { tag: 3, branches: 2 })
        );
    }

    #[test]
    fn poly_map_over_sum_matches_direct_dispatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let neg = |v: &Value| scal(-v.as_tensor().data()[0]);
        let double = |v: &Value| scal(2.0 * v.as_tensor().data()[0]);
        let fs: Vec<&dyn Fn(&Value) -> Value> = vec![&neg, &double];
        for _ in 0..50 {
            let tag = rng.gen_range(1..=2);
            let x = rng.gen_range(-5.0..5.0);
            let v = Value::tagged(tag, scal(x));
            let got = poly_map(&fs, &v).unwrap();
            // direct dispatch: apply the tag's function, keep the tag
            let expected = Value::tagged(tag, if tag == 1 { neg(&scal(x)) } else { double(&scal(x)) });
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn project_picks_components() {
        let p = Value::Tuple(vec![scal(1.0), scal(2.0), scal(3.0)]);
        assert_eq!(project(1, &p).unwrap(), scal(1.0));
        assert_eq!(project(3, &p).unwrap(), scal(3.0));
        assert_eq!(
            project(4, &p),
            Err(ValueError::IndexOutOfRange { index: 4, arity: 3 })
        );
    }

    #[test]
    fn poly_map_over_tuple_is_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let neg = |v: &Value| scal(-v.as_tensor().data()[0]);
        let double = |v: &Value| scal(2.0 * v.as_tensor().data()[0]);
        let fs: Vec<&dyn Fn(&Value) -> Value> = vec![&neg, &double];
        for _ in 0..20 {
            let a = rng.gen_range(-5.0..5.0);
            let b = rng.gen_range(-5.0..5.0);
            let p = Value::Tuple(vec![scal(a), scal(b)]);
            let got = poly_map(&fs, &p).unwrap();
            assert_eq!(got, Value::Tuple(vec![scal(-a), scal(2.0 * b)]));
        }
    }

    #[test]
    fn fold_examples() {
        let bag = Value::Bag(vec![scal(1.0), scal(2.0), scal(3.0)]);
        let add = |a: &Value, x: &Value| scal(a.as_tensor().data()[0] + x.as_tensor().data()[0]);
        assert_eq!(mset_fold(scal(0.0), add, &bag), scal(6.0));
        // identity rebuild through union with singletons
        let rebuild = mset_fold(
            Value::Bag(vec![]),
            |a, x| mset_union(a, &Value::Bag(vec![x.clone()])),
            &bag,
        );
        assert_eq!(rebuild, bag);
        // fold-based size per the derived definition: reduce(map(x -> 1, s))
        let ones = poly_map(&[&|_: &Value| scal(1.0)], &bag).unwrap();
        let size = mset_reduce(scal(0.0), add, &ones);
        assert_eq!(size, scal(3.0));
    }

    #[test]
    fn fold_is_order_independent_under_the_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let items: Vec<Value> = (0..6).map(|_| scal(rng.gen_range(-1.0..1.0))).collect();
        let add = |a: &Value, x: &Value| scal(a.as_tensor().data()[0] + x.as_tensor().data()[0]);
        let base = mset_fold(scal(0.0), add, &Value::Bag(items.clone()));
        for _ in 0..20 {
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut rng);
            let out = mset_fold(scal(0.0), add, &Value::Bag(shuffled));
            let (a, b) = (base.as_tensor().data()[0], out.as_tensor().data()[0]);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn union_examples() {
        let a = Value::Bag(vec![scal(1.0)]);
        let b = Value::Bag(vec![scal(2.0)]);
        assert_eq!(
            mset_union(&a, &b),
            Value::Bag(vec![scal(1.0), scal(2.0)])
        );
        let s = Value::Bag(vec![scal(5.0), scal(5.0)]);
        assert_eq!(mset_union(&Value::Bag(vec![]), &s), s);
        // flatten({{a},{b,c}}) = {a,b,c}
        let nested = Value::Bag(vec![
            Value::Bag(vec![scal(1.0)]),
            Value::Bag(vec![scal(2.0), scal(3.0)]),
        ]);
        assert_eq!(
            mset_flatten(&nested),
            Value::Bag(vec![scal(1.0), scal(2.0), scal(3.0)])
        );
    }

    #[test]
    fn derived_ops_examples() {
        let aab = Value::Bag(vec![scal(1.0), scal(1.0), scal(2.0)]);
        let abb = Value::Bag(vec![scal(1.0), scal(2.0), scal(2.0)]);
        assert_eq!(mset_size(&aab), 3);
        assert_eq!(
            mset_intersection(&aab, &abb),
            Value::Bag(vec![scal(1.0), scal(2.0)])
        );
        assert_eq!(mset_difference(&aab, &abb), Value::Bag(vec![scal(1.0)]));
        let xy = Value::Bag(vec![scal(10.0), scal(20.0)]);
        let u = Value::Bag(vec![scal(1.0)]);
        assert_eq!(
            mset_cartesian(&xy, &u),
            Value::Bag(vec![
                Value::Tuple(vec![scal(10.0), scal(1.0)]),
                Value::Tuple(vec![scal(20.0), scal(1.0)]),
            ])
        );
    }

    /// Brute-force multiplicity census oracle for the derived ops.
    fn census_oracle(items: &[Value]) -> Vec<(Value, usize)> {
        let mut out: Vec<(Value, usize)> = Vec::new();
        for item in items {
            if let Some(e) = out.iter_mut().find(|(v, _)| v == item) {
                e.1 += 1;
            } else {
                out.push((item.clone(), 1));
            }
        }
        out
    }

    #[test]
    fn derived_ops_match_census_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pool = [scal(1.0), scal(2.0), scal(3.0)];
        for _ in 0..100 {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<Value> {
                let n = rng.gen_range(0..=6);
                (0..n).map(|_| pool[rng.gen_range(0..3)].clone()).collect()
            };
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let inter = mset_intersection(&Value::Bag(a.clone()), &Value::Bag(b.clone()));
            let diff = mset_difference(&Value::Bag(a.clone()), &Value::Bag(b.clone()));
            let sum = mset_sum(&Value::Bag(a.clone()), &Value::Bag(b.clone()));
            let (ca, cb) = (census_oracle(&a), census_oracle(&b));
            let mult = |c: &[(Value, usize)], v: &Value| {
                c.iter().find(|(w, _)| w == v).map(|(_, n)| *n).unwrap_or(0)
            };
            for v in &pool {
                let (na, nb) = (mult(&ca, v), mult(&cb, v));
                assert_eq!(mult(&census_oracle(inter.as_bag()), v), na.min(nb));
                assert_eq!(mult(&census_oracle(diff.as_bag()), v), na.saturating_sub(nb));
                assert_eq!(mult(&census_oracle(sum.as_bag()), v), na + nb);
            }
            assert_eq!(mset_size(&Value::Bag(a.clone())), a.len());
        }
    }

    fn scale_leaves(v: &Value, a: f64) -> Value {
        match v {
            Value::TensorV(t) => Value::tensor(
                t.shape().to_vec(),
                t.data().iter().map(|x| a * x).collect(),
            )
            .unwrap(),
            Value::Tagged { tag, payload } => Value::tagged(*tag, scale_leaves(payload, a)),
            Value::Tuple(items) => {
                Value::Tuple(items.iter().map(|x| scale_leaves(x, a)).collect())
            }
            Value::Bag(items) => Value::Bag(items.iter().map(|x| scale_leaves(x, a)).collect()),
        }
    }

    #[test]
    fn poly_map_functor_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut env = SchemaEnv::new();
        let t = env
            .parse_type("Prod[MSet[Scal], Option[Vector[2]], Bool]")
            .unwrap();
        let id = |v: &Value| v.clone();
        let f = |v: &Value| scale_leaves(v, 2.0);
        let g = |v: &Value| scale_leaves(v, -0.5);
        let fg = |v: &Value| scale_leaves(&scale_leaves(v, -0.5), 2.0);
        for _ in 0..30 {
            let v = sample_value(&t, &env, &mut rng, 6);
            // identity law
            let ids: Vec<&dyn Fn(&Value) -> Value> = vec![&id, &id, &id];
            assert_eq!(poly_map(&ids, &v).unwrap(), v);
            // composition law, componentwise
            let fs: Vec<&dyn Fn(&Value) -> Value> = vec![&f, &f, &f];
            let gs: Vec<&dyn Fn(&Value) -> Value> = vec![&g, &g, &g];
            let fgs: Vec<&dyn Fn(&Value) -> Value> = vec![&fg, &fg, &fg];
            let composed = poly_map(&fs, &poly_map(&gs, &v).unwrap()).unwrap();
            assert_eq!(poly_map(&fgs, &v).unwrap(), composed);
        }
    }

    #[test]
    fn poly_map_trivial_on_tensors_and_arity_checked() {
        let v = Value::vector(vec![1.0, 2.0]);
        assert_eq!(poly_map(&[], &v).unwrap(), v);
        let f = |v: &Value| v.clone();
        assert_eq!(
            poly_map(&[&f], &v),
            Err(ValueError::MapArity { expected: 0, got: 1 })
        );
        let p = Value::Tuple(vec![scal(1.0), scal(2.0)]);
        let ids: Vec<&dyn Fn(&Value) -> Value> = vec![&f, &f];
        assert_eq!(poly_map(&ids, &p).unwrap(), p);
    }

    #[test]
    fn bag_equality_is_order_free() {
        let a = Value::Bag(vec![scal(1.0), scal(2.0)]);
        let b = Value::Bag(vec![scal(2.0), scal(1.0)]);
        assert_eq!(a, b);
        let c = Value::Bag(vec![scal(1.0), scal(1.0)]);
        assert_ne!(a, c);
    }

    #[test]
    fn wire_round_trips() {
        let values = vec![
            Value::unit(),
            Value::scal(2.5),
            Value::vector(vec![1.0, -2.0]),
            Value::tensor(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Value::tagged(2, Value::scal(3.5)),
            Value::Tuple(vec![Value::scal(1.0), Value::unit()]),
            Value::Bag(vec![Value::scal(1.0), Value::scal(1.0)]),
        ];
        for v in values {
            let line = value_to_string(&v);
            assert_eq!(value_from_str(&line).unwrap(), v);
        }
        // specific canonical spellings
        assert_eq!(value_to_string(&Value::unit()), "{\"u\":true}");
        assert_eq!(value_to_string(&Value::scal(3.0)), "3.0");
        assert_eq!(
            value_from_str("{\"s\": {\"tag\": 1, \"v\": {\"u\": true}}}").unwrap(),
            Value::tagged(1, Value::unit())
        );
        assert!(value_from_str("{\"s\": {\"tag\": 0, \"v\": 1}}").is_err());
        assert!(value_from_str("[1,2]").is_err());
    }

    #[test]
    fn sampled_values_conform() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let env = parse_schema_helper();
        let t = env.get("t").unwrap().clone();
        for _ in 0..50 {
            let v = sample_value(&t, &env, &mut rng, 8);
            crate::schema::check_value(&t, &v, &env).unwrap();
        }
    }

    fn parse_schema_helper() -> SchemaEnv {
        crate::schema::parse_schema("t = Prod[List[Scal], MSet[Option[Vector[2]]], Enum[3]]")
            .unwrap()
    }
}
