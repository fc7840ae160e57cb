//! ADT schema expressions and the reasoning on them: subtyping, canonical
//! isomorphism views, recursion guarding, and value conformance.
//!
//! Four constructors exist. `Tensor[l1,..,ln]` is the base case (a vector is
//! an order-1 tensor, the unit type is `Tensor[0]`); `Sum`, `Prod` and `MSet`
//! are the inductive cases. Named definitions live in a [`SchemaEnv`] and may
//! be recursive as long as every reference cycle passes through a sum with an
//! alternative that escapes the cycle, so finite values exist.

mod parser;

pub use parser::parse_schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{ConformanceError, SchemaError};
use crate::value::Value;

/// A type expression. `Ref` names resolve in the enclosing [`SchemaEnv`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TypeExpr {
    Tensor(Vec<usize>),
    Sum(Vec<TypeExpr>),
    Prod(Vec<TypeExpr>),
    MSet(Box<TypeExpr>),
    Ref(String),
}

impl TypeExpr {
    pub fn unit() -> Self {
        TypeExpr::Tensor(vec![0])
    }

    pub fn scal() -> Self {
        TypeExpr::Tensor(vec![1])
    }

    pub fn vector(l: usize) -> Self {
        TypeExpr::Tensor(vec![l])
    }

    pub fn option(t: TypeExpr) -> Self {
        TypeExpr::Sum(vec![TypeExpr::unit(), t])
    }

    pub fn boolean() -> Self {
        TypeExpr::Sum(vec![TypeExpr::unit(), TypeExpr::unit()])
    }

    /// True when this is a tensor of order <= 1 (a plain vector, including
    /// the unit case `Tensor[0]`).
    pub fn as_vector_dim(&self) -> Option<usize> {
        match self {
            TypeExpr::Tensor(shape) if shape.len() == 1 => Some(shape[0]),
            _ => None,
        }
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join(f: &mut fmt::Formatter<'_>, items: &[TypeExpr]) -> fmt::Result {
            for (i, t) in items.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{t}")?;
            }
            Ok(())
        }
        match self {
            TypeExpr::Tensor(shape) => {
                write!(f, "Tensor[")?;
                for (i, l) in shape.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{l}")?;
                }
                write!(f, "]")
            }
            TypeExpr::Sum(args) => {
                write!(f, "Sum[")?;
                join(f, args)?;
                write!(f, "]")
            }
            TypeExpr::Prod(args) => {
                write!(f, "Prod[")?;
                join(f, args)?;
                write!(f, "]")
            }
            TypeExpr::MSet(e) => write!(f, "MSet[{e}]"),
            TypeExpr::Ref(n) => write!(f, "{n}"),
        }
    }
}

/// An immutable environment of named type definitions. Sugar (`Unit`, `Scal`,
/// `Vector`, `Enum`, `Bool`, `Option`, `List`) is expanded by the parser;
/// parameterized definitions are monomorphized into named instances, so every
/// `Ref` key here is a concrete type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaEnv {
    defs: BTreeMap<String, TypeExpr>,
}

impl SchemaEnv {
    pub fn new() -> Self {
        SchemaEnv::default()
    }

    pub fn get(&self, name: &str) -> Option<&TypeExpr> {
        self.defs.get(name)
    }

    pub fn definitions(&self) -> impl Iterator<Item = (&String, &TypeExpr)> {
        self.defs.iter()
    }

    pub(crate) fn insert(&mut self, name: String, t: TypeExpr) {
        self.defs.insert(name, t);
    }

    /// Follow `Ref` chains until a structural constructor appears.
    pub fn resolve<'a>(&'a self, t: &'a TypeExpr) -> Result<&'a TypeExpr, SchemaError> {
        let mut cur = t;
        let mut hops = 0usize;
        while let TypeExpr::Ref(name) = cur {
            cur = self
                .defs
                .get(name)
                .ok_or_else(|| SchemaError::UnknownType { name: name.clone() })?;
            hops += 1;
            if hops > self.defs.len() + 1 {
                // pure ref cycles are rejected by the guard; bail defensively
                return Err(SchemaError::UnguardedRecursion { name: name.clone() });
            }
        }
        Ok(cur)
    }

    /// Names whose definitions reach themselves through the reference graph.
    pub fn recursive_names(&self) -> BTreeSet<String> {
        fn refs_of(t: &TypeExpr, out: &mut BTreeSet<String>) {
            match t {
                TypeExpr::Tensor(_) => {}
                TypeExpr::Sum(args) | TypeExpr::Prod(args) => {
                    args.iter().for_each(|a| refs_of(a, out))
                }
                TypeExpr::MSet(e) => refs_of(e, out),
                TypeExpr::Ref(n) => {
                    out.insert(n.clone());
                }
            }
        }
        let mut direct: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for (name, t) in &self.defs {
            let mut out = BTreeSet::new();
            refs_of(t, &mut out);
            direct.insert(name, out);
        }
        let mut recursive = BTreeSet::new();
        for name in self.defs.keys() {
            // BFS over the reference graph looking for a path back to `name`
            let mut seen = BTreeSet::new();
            let mut queue: Vec<&str> = vec![name];
            while let Some(cur) = queue.pop() {
                if let Some(next) = direct.get(cur) {
                    for n in next {
                        if n == name {
                            recursive.insert(name.clone());
                            queue.clear();
                            break;
                        }
                        if seen.insert(n.clone()) {
                            queue.push(n);
                        }
                    }
                }
            }
        }
        recursive
    }

    /// Inline every non-recursive reference, leaving recursive names in place
    /// (they have no finite structural form).
    pub fn expand(&self, t: &TypeExpr) -> TypeExpr {
        let recursive = self.recursive_names();
        self.expand_with(t, &recursive)
    }

    fn expand_with(&self, t: &TypeExpr, recursive: &BTreeSet<String>) -> TypeExpr {
        match t {
            TypeExpr::Tensor(s) => TypeExpr::Tensor(s.clone()),
            TypeExpr::Sum(args) => {
                TypeExpr::Sum(args.iter().map(|a| self.expand_with(a, recursive)).collect())
            }
            TypeExpr::Prod(args) => TypeExpr::Prod(
                args.iter().map(|a| self.expand_with(a, recursive)).collect(),
            ),
            TypeExpr::MSet(e) => TypeExpr::MSet(Box::new(self.expand_with(e, recursive))),
            TypeExpr::Ref(n) => {
                if recursive.contains(n) {
                    TypeExpr::Ref(n.clone())
                } else if let Some(def) = self.defs.get(n) {
                    self.expand_with(def, recursive)
                } else {
                    TypeExpr::Ref(n.clone())
                }
            }
        }
    }

    /// Recursion guard: every definition must admit a finite value, i.e.
    /// every reference cycle passes through a sum with at least one
    /// alternative that does not reach the cycle. Computed as a least
    /// fixpoint over the definition set.
    pub fn check_guard(&self) -> Result<(), SchemaError> {
        let mut finite: BTreeSet<&str> = BTreeSet::new();
        loop {
            let mut changed = false;
            for (name, t) in &self.defs {
                if !finite.contains(name.as_str()) && self.finite_given(t, &finite) {
                    finite.insert(name);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for name in self.defs.keys() {
            if !finite.contains(name.as_str()) {
                return Err(SchemaError::UnguardedRecursion { name: name.clone() });
            }
        }
        Ok(())
    }

    fn finite_given(&self, t: &TypeExpr, finite: &BTreeSet<&str>) -> bool {
        match t {
            TypeExpr::Tensor(_) => true,
            TypeExpr::Sum(args) => args.iter().any(|a| self.finite_given(a, finite)),
            TypeExpr::Prod(args) => args.iter().all(|a| self.finite_given(a, finite)),
            TypeExpr::MSet(e) => self.finite_given(e, finite),
            TypeExpr::Ref(n) => finite.contains(n.as_str()),
        }
    }
}

/// Structural subtyping. Reflexive, transitive; covariant in every
/// constructor's type parameters; sums widen on the right, products narrow by
/// dropping trailing fields. Total: unresolved references only relate to
/// themselves.
pub fn is_subtype(a: &TypeExpr, b: &TypeExpr, env: &SchemaEnv) -> bool {
    fn rec(
        a: &TypeExpr,
        b: &TypeExpr,
        env: &SchemaEnv,
        seen: &mut BTreeSet<(TypeExpr, TypeExpr)>,
    ) -> bool {
        if a == b {
            return true;
        }
        let key = (a.clone(), b.clone());
        if !seen.insert(key) {
            // coinductive assumption for recursive types
            return true;
        }
        let ra = match env.resolve(a) {
            Ok(t) => t,
            Err(_) => return false,
        };
        let rb = match env.resolve(b) {
            Ok(t) => t,
            Err(_) => return false,
        };
        match (ra, rb) {
            (TypeExpr::Tensor(s1), TypeExpr::Tensor(s2)) => s1 == s2,
            (TypeExpr::Sum(xs), TypeExpr::Sum(ys)) => {
                xs.len() <= ys.len() && xs.iter().zip(ys).all(|(x, y)| rec(x, y, env, seen))
            }
            (TypeExpr::Prod(xs), TypeExpr::Prod(ys)) => {
                xs.len() >= ys.len() && ys.iter().zip(xs).all(|(y, x)| rec(x, y, env, seen))
            }
            (TypeExpr::MSet(x), TypeExpr::MSet(y)) => rec(x, y, env, seen),
            _ => false,
        }
    }
    rec(a, b, env, &mut BTreeSet::new())
}

/// Canonicalizable isomorphism rewrites of `t`, excluding `t` itself:
/// trailing length-1 tensor axes drop (scalar collapse), any zero-length axis
/// collapses the whole tensor to `Tensor[0]` (unit collapse), and singleton
/// sums/products unwrap. Axis and argument reordering is never applied
/// silently; such isomorphisms are not enumerated here.
pub fn isomorphic_views(t: &TypeExpr, env: &SchemaEnv) -> BTreeSet<TypeExpr> {
    let mut views = BTreeSet::new();
    let resolved = match env.resolve(t) {
        Ok(r) => r,
        Err(_) => return views,
    };
    match resolved {
        TypeExpr::Tensor(shape) => {
            let mut s = shape.clone();
            while s.len() > 1 && *s.last().unwrap() == 1 {
                s.pop();
                views.insert(TypeExpr::Tensor(s.clone()));
            }
            if shape.contains(&0) && shape.as_slice() != [0] {
                views.insert(TypeExpr::Tensor(vec![0]));
            }
        }
        TypeExpr::Sum(args) if args.len() == 1 => {
            views.insert(args[0].clone());
        }
        TypeExpr::Prod(args) if args.len() == 1 => {
            views.insert(args[0].clone());
        }
        _ => {}
    }
    views
}

/// Convert a value across one of the rewrites returned by
/// [`isomorphic_views`] (either direction). Lossless by construction.
pub fn convert_view(
    from: &TypeExpr,
    to: &TypeExpr,
    v: &Value,
    env: &SchemaEnv,
) -> Result<Value, ConformanceError> {
    check_value(from, v, env)?;
    let rf = env.resolve(from).map_err(|e| ConformanceError {
        path: "root".into(),
        message: e.to_string(),
    })?;
    let rt = env.resolve(to).map_err(|e| ConformanceError {
        path: "root".into(),
        message: e.to_string(),
    })?;
    let fail = || ConformanceError {
        path: "root".into(),
        message: format!("no view conversion from {from} to {to}"),
    };
    match (rf, rt) {
        (TypeExpr::Tensor(s1), TypeExpr::Tensor(s2)) => {
            let n1: usize = s1.iter().product();
            let n2: usize = s2.iter().product();
            if n1 != n2 {
                return Err(fail());
            }
            match v {
                Value::TensorV(t) => Ok(Value::tensor(s2.clone(), t.data().to_vec()).unwrap()),
                _ => Err(fail()),
            }
        }
        (TypeExpr::Sum(args), inner) if args.len() == 1 && &args[0] == inner => match v {
            Value::Tagged { payload, .. } => Ok((**payload).clone()),
            _ => Err(fail()),
        },
        (inner, TypeExpr::Sum(args)) if args.len() == 1 && &args[0] == inner => {
            Ok(Value::tagged(1, v.clone()))
        }
        (TypeExpr::Prod(args), inner) if args.len() == 1 && &args[0] == inner => match v {
            Value::Tuple(items) => Ok(items[0].clone()),
            _ => Err(fail()),
        },
        (inner, TypeExpr::Prod(args)) if args.len() == 1 && &args[0] == inner => {
            Ok(Value::Tuple(vec![v.clone()]))
        }
        _ => Err(fail()),
    }
}

/// Structural conformance of a value against a type. On mismatch the
/// diagnostic carries the path to the first offending position.
pub fn check_value(t: &TypeExpr, v: &Value, env: &SchemaEnv) -> Result<(), ConformanceError> {
    check_at(t, v, env, "root")
}

fn check_at(t: &TypeExpr, v: &Value, env: &SchemaEnv, path: &str) -> Result<(), ConformanceError> {
    let resolved = env.resolve(t).map_err(|e| ConformanceError {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    let err = |message: String| ConformanceError {
        path: path.to_string(),
        message,
    };
    match (resolved, v) {
        (TypeExpr::Tensor(shape), Value::TensorV(dt)) => {
            if dt.shape() != shape.as_slice() {
                Err(err(format!(
                    "shape mismatch: expected {:?}, found {:?}",
                    shape,
                    dt.shape()
                )))
            } else {
                Ok(())
            }
        }
        (TypeExpr::Sum(args), Value::Tagged { tag, payload }) => {
            if *tag < 1 || *tag > args.len() {
                Err(err(format!(
                    "tag {} out of range for {} alternative(s)",
                    tag,
                    args.len()
                )))
            } else {
                check_at(&args[tag - 1], payload, env, &format!("{path}.payload"))
            }
        }
        (TypeExpr::Prod(args), Value::Tuple(items)) => {
            if items.len() != args.len() {
                Err(err("arity mismatch".to_string()))
            } else {
                for (i, (a, item)) in args.iter().zip(items).enumerate() {
                    check_at(a, item, env, &format!("{path}.{}", i + 1))?;
                }
                Ok(())
            }
        }
        (TypeExpr::MSet(e), Value::Bag(items)) => {
            for (i, item) in items.iter().enumerate() {
                check_at(e, item, env, &format!("{path}.elem({i})"))?;
            }
            Ok(())
        }
        (expected, _) => Err(err(format!("expected a {} value", kind_name(expected)))),
    }
}

fn kind_name(t: &TypeExpr) -> &'static str {
    match t {
        TypeExpr::Tensor(_) => "tensor",
        TypeExpr::Sum(_) => "sum",
        TypeExpr::Prod(_) => "product",
        TypeExpr::MSet(_) => "multiset",
        TypeExpr::Ref(_) => "reference",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env() -> SchemaEnv {
        SchemaEnv::new()
    }

    #[test]
    fn subtype_sum_width() {
        let a = TypeExpr::Sum(vec![TypeExpr::scal()]);
        let b = TypeExpr::Sum(vec![TypeExpr::scal(), TypeExpr::boolean()]);
        assert!(is_subtype(&a, &b, &env()));
        assert!(!is_subtype(&b, &a, &env()));
    }

    #[test]
    fn subtype_reflexive_on_named_recursive() {
        let e = parse_schema("t = List[Scal]").unwrap();
        let t = e.get("t").unwrap().clone();
        assert!(is_subtype(&t, &t, &e));
    }

    #[test]
    fn subtype_product_drops_trailing() {
        let a = TypeExpr::Prod(vec![TypeExpr::scal(), TypeExpr::boolean(), TypeExpr::unit()]);
        let b = TypeExpr::Prod(vec![TypeExpr::scal(), TypeExpr::boolean()]);
        assert!(is_subtype(&a, &b, &env()));
        assert!(!is_subtype(&b, &a, &env()));
        // dropping a non-trailing field is not admitted
        let c = TypeExpr::Prod(vec![TypeExpr::scal(), TypeExpr::unit()]);
        assert!(!is_subtype(&a, &c, &env()));
    }

    /// Independent structural checker written before the implementation:
    /// direct recursion with no environment and no memo, covering the
    /// ref-free fragment used in this test.
    fn oracle_subtype(a: &TypeExpr, b: &TypeExpr) -> bool {
        match (a, b) {
            (TypeExpr::Tensor(x), TypeExpr::Tensor(y)) => x == y,
            (TypeExpr::Sum(xs), TypeExpr::Sum(ys)) => {
                xs.len() <= ys.len() && xs.iter().zip(ys).all(|(x, y)| oracle_subtype(x, y))
            }
            (TypeExpr::Prod(xs), TypeExpr::Prod(ys)) => {
                xs.len() >= ys.len() && ys.iter().zip(xs).all(|(y, x)| oracle_subtype(x, y))
            }
            (TypeExpr::MSet(x), TypeExpr::MSet(y)) => oracle_subtype(x, y),
            _ => false,
        }
    }

    #[test]
    fn subtype_mset_compose_covariance_and_width() {
        let a = TypeExpr::MSet(Box::new(TypeExpr::Sum(vec![TypeExpr::scal()])));
        let b = TypeExpr::MSet(Box::new(TypeExpr::Sum(vec![
            TypeExpr::scal(),
            TypeExpr::boolean(),
        ])));
        assert!(oracle_subtype(&a, &b));
        assert_eq!(is_subtype(&a, &b, &env()), oracle_subtype(&a, &b));
        assert!(!is_subtype(&b, &a, &env()));
    }

    fn arb_type() -> impl Strategy<Value = TypeExpr> {
        let leaf = prop_oneof![
            (1usize..4).prop_map(|l| TypeExpr::Tensor(vec![l])),
            Just(TypeExpr::unit()),
            prop::collection::vec(0usize..3, 2..3).prop_map(TypeExpr::Tensor),
        ];
        leaf.prop_recursive(3, 24, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..3).prop_map(TypeExpr::Sum),
                prop::collection::vec(inner.clone(), 0..3).prop_map(TypeExpr::Prod),
                inner.prop_map(|t| TypeExpr::MSet(Box::new(t))),
            ]
        })
    }

    /// Widen `t` into a supertype using only the declared rules.
    fn widen(t: &TypeExpr, salt: usize) -> TypeExpr {
        match t {
            TypeExpr::Tensor(s) => TypeExpr::Tensor(s.clone()),
            TypeExpr::Sum(args) => {
                let mut out: Vec<TypeExpr> =
                    args.iter().enumerate().map(|(i, a)| widen(a, salt + i)).collect();
                if salt % 2 == 0 {
                    out.push(TypeExpr::unit());
                }
                TypeExpr::Sum(out)
            }
            TypeExpr::Prod(args) => {
                let keep = if salt % 2 == 1 && !args.is_empty() {
                    args.len() - 1
                } else {
                    args.len()
                };
                TypeExpr::Prod(
                    args[..keep]
                        .iter()
                        .enumerate()
                        .map(|(i, a)| widen(a, salt + i))
                        .collect(),
                )
            }
            TypeExpr::MSet(e) => TypeExpr::MSet(Box::new(widen(e, salt + 1))),
            TypeExpr::Ref(n) => TypeExpr::Ref(n.clone()),
        }
    }

    proptest! {
        #[test]
        fn subtype_is_a_preorder(t in arb_type(), salt in 0usize..1000) {
            let e = env();
            prop_assert!(is_subtype(&t, &t, &e));
            let w1 = widen(&t, salt);
            let w2 = widen(&w1, salt / 2 + 1);
            prop_assert!(is_subtype(&t, &w1, &e));
            prop_assert!(is_subtype(&w1, &w2, &e));
            // transitivity along the constructed chain
            prop_assert!(is_subtype(&t, &w2, &e));
        }

        #[test]
        fn printed_types_reparse_equal(t in arb_type()) {
            let mut e = env();
            let text = t.to_string();
            let back = e.parse_type(&text).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn views_scalar_collapse() {
        let views = isomorphic_views(&TypeExpr::Tensor(vec![4, 1]), &env());
        assert!(views.contains(&TypeExpr::Tensor(vec![4])));
    }

    #[test]
    fn views_unit_collapse() {
        let views = isomorphic_views(&TypeExpr::Tensor(vec![3, 0, 2]), &env());
        assert_eq!(views, BTreeSet::from([TypeExpr::Tensor(vec![0])]));
    }

    #[test]
    fn views_singleton_unwrap() {
        let views = isomorphic_views(&TypeExpr::Prod(vec![TypeExpr::scal()]), &env());
        assert_eq!(views, BTreeSet::from([TypeExpr::scal()]));
        let views = isomorphic_views(&TypeExpr::Sum(vec![TypeExpr::boolean()]), &env());
        assert_eq!(views, BTreeSet::from([TypeExpr::boolean()]));
    }

    #[test]
    fn views_admit_lossless_converters() {
        let e = env();
        // tensors: element counts match and round-trips are exact
        for t in [
            TypeExpr::Tensor(vec![4, 1]),
            TypeExpr::Tensor(vec![3, 0, 2]),
            TypeExpr::Tensor(vec![2, 1, 1]),
        ] {
            let shape = match &t {
                TypeExpr::Tensor(s) => s.clone(),
                _ => unreachable!(),
            };
            let len: usize = shape.iter().product();
            let v = Value::tensor(shape, (0..len).map(|i| i as f64).collect()).unwrap();
            for view in isomorphic_views(&t, &e) {
                let converted = convert_view(&t, &view, &v, &e).unwrap();
                if let TypeExpr::Tensor(s) = &view {
                    let n: usize = s.iter().product();
                    assert_eq!(n, len);
                }
                let back = convert_view(&view, &t, &converted, &e).unwrap();
                assert_eq!(back, v);
            }
        }
        // singletons: wrap/unwrap identity
        let t = TypeExpr::Prod(vec![TypeExpr::scal()]);
        let v = Value::Tuple(vec![Value::scal(2.5)]);
        let view = TypeExpr::scal();
        let unwrapped = convert_view(&t, &view, &v, &e).unwrap();
        assert_eq!(unwrapped, Value::scal(2.5));
        assert_eq!(convert_view(&view, &t, &unwrapped, &e).unwrap(), v);
    }

    #[test]
    fn check_value_tensor_ok() {
        let t = TypeExpr::Tensor(vec![2]);
        let v = Value::tensor(vec![2], vec![1.0, -2.0]).unwrap();
        assert!(check_value(&t, &v, &env()).is_ok());
    }

    #[test]
    fn check_value_option_payload() {
        let t = TypeExpr::Sum(vec![TypeExpr::unit(), TypeExpr::scal()]);
        assert!(check_value(&t, &Value::tagged(2, Value::scal(3.5)), &env()).is_ok());
        assert!(check_value(&t, &Value::tagged(1, Value::unit()), &env()).is_ok());
        let bad = check_value(&t, &Value::tagged(3, Value::unit()), &env()).unwrap_err();
        assert!(bad.to_string().contains("tag 3 out of range"));
    }

    #[test]
    fn check_value_arity_mismatch_at_root() {
        let t = TypeExpr::Prod(vec![TypeExpr::scal(), TypeExpr::boolean()]);
        let v = Value::Tuple(vec![Value::scal(0.0), Value::scal(0.0), Value::scal(0.0)]);
        let err = check_value(&t, &v, &env()).unwrap_err();
        assert_eq!(err.to_string(), "arity mismatch at root");
    }

    #[test]
    fn check_value_reports_nested_path() {
        let t = TypeExpr::Prod(vec![TypeExpr::scal(), TypeExpr::Tensor(vec![3])]);
        let v = Value::Tuple(vec![
            Value::scal(1.0),
            Value::tensor(vec![2], vec![0.0, 0.0]).unwrap(),
        ]);
        let err = check_value(&t, &v, &env()).unwrap_err();
        assert_eq!(err.path, "root.2");
    }
}
