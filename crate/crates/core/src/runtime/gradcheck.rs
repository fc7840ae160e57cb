//! Central-difference verification of the backward pass.
//!
//! The probe loss is the dot product of the output with a fixed random
//! cotangent, so every output component is exercised at once. Each parameter
//! component is perturbed by +/- epsilon and the symmetric difference
//! quotient is compared against the analytic gradient.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::RuntimeError;
use crate::graph::{EncoderGraph, NodeId};
use crate::params::ParamStore;
use crate::tensor::Yector;
use crate::value::Value;

use super::{backward, forward_unchecked};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per slot.
    pub per_slot: BTreeMap<(NodeId, String), f64>,
    pub worst_slot: (NodeId, String),
    pub worst: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst <= tol
    }
}

/// Relative error with a unit floor, so near-zero gradients compare on an
/// absolute scale.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

pub fn grad_check(
    graph: &EncoderGraph,
    params: &ParamStore,
    value: &Value,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport, RuntimeError> {
    assert!(
        (1e-7..=1e-3).contains(&epsilon),
        "epsilon must lie in [1e-7, 1e-3]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y0, tape) = forward_unchecked(graph, params, value)?;
    let cot = Yector((0..y0.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let analytic = backward(graph, params, &tape, &cot)?;

    let probe = |p: &ParamStore| -> Result<f64, RuntimeError> {
        let (y, _) = forward_unchecked(graph, p, value)?;
        Ok(y.0.iter().zip(&cot.0).map(|(a, b)| a * b).sum())
    };

    let mut work = params.clone();
    let mut per_slot: BTreeMap<(NodeId, String), f64> = BTreeMap::new();
    let keys: Vec<(NodeId, String, usize)> = params
        .iter()
        .map(|(n, s, _, d)| (n, s.to_string(), d.len()))
        .collect();
    for (node, slot, len) in keys {
        let mut slot_max = 0.0f64;
        for i in 0..len {
            let orig = work.get(node, &slot).unwrap()[i];
            work.get_mut(node, &slot).unwrap()[i] = orig + epsilon;
            let plus = probe(&work)?;
            work.get_mut(node, &slot).unwrap()[i] = orig - epsilon;
            let minus = probe(&work)?;
            work.get_mut(node, &slot).unwrap()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.get(node, &slot).unwrap()[i];
            slot_max = slot_max.max(rel_err(a, numeric));
        }
        per_slot.insert((node, slot), slot_max);
    }
    let (worst_slot, worst) = per_slot
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, v)| (k.clone(), *v))
        .expect("graphs declare at least one slot");
    Ok(GradCheckReport {
        per_slot,
        worst_slot,
        worst,
    })
}
