//! Flat storage of learnable weights, addressed by (node id, slot name).
//!
//! Initialization is deterministic given a seed: `L`/`C` slots draw from
//! uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`, `w` slots start at
//! all-ones (so a tensor MFL starts as a sum of per-axis dense maps), and `b`
//! slots start at zero. Gradients reuse the same keying, so a store doubles
//! as a gradient accumulator.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::RuntimeError;
use crate::graph::{EncoderGraph, NodeId};

const CHECKPOINT_MAGIC: &[u8; 4] = b"TYFL";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    slots: BTreeMap<(NodeId, String), (Vec<usize>, Vec<f64>)>,
}

impl ParamStore {
    /// Deterministic initialization for every slot declared by the graph.
    pub fn init(graph: &EncoderGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slots = BTreeMap::new();
        for (id, node) in graph.nodes().iter().enumerate() {
            for (name, shape) in node.kind.slots() {
                let len: usize = shape.iter().product();
                let data = match name.chars().next() {
                    Some('L') | Some('C') => {
                        let fan_out = shape[0] as f64;
                        let fan_in = shape[1..].iter().product::<usize>() as f64;
                        let a = (6.0 / (fan_in + fan_out)).sqrt();
                        (0..len).map(|_| rng.gen_range(-a..=a)).collect()
                    }
                    Some('w') => vec![1.0; len],
                    _ => vec![0.0; len],
                };
                slots.insert((id, name), (shape, data));
            }
        }
        ParamStore { slots }
    }

    /// All-zero store with the graph's slot layout (gradient accumulator).
    pub fn zeros_like(graph: &EncoderGraph) -> Self {
        let mut slots = BTreeMap::new();
        for (id, node) in graph.nodes().iter().enumerate() {
            for (name, shape) in node.kind.slots() {
                let len: usize = shape.iter().product();
                slots.insert((id, name), (shape, vec![0.0; len]));
            }
        }
        ParamStore { slots }
    }

    pub fn get(&self, node: NodeId, slot: &str) -> Option<&[f64]> {
        self.slots
            .get(&(node, slot.to_string()))
            .map(|(_, d)| d.as_slice())
    }

    pub fn expect(&self, node: NodeId, slot: &str) -> Result<&[f64], RuntimeError> {
        self.get(node, slot).ok_or(RuntimeError::MissingSlot {
            node,
            slot: slot.to_string(),
        })
    }

    pub fn get_mut(&mut self, node: NodeId, slot: &str) -> Option<&mut Vec<f64>> {
        self.slots
            .get_mut(&(node, slot.to_string()))
            .map(|(_, d)| d)
    }

    pub fn set(&mut self, node: NodeId, slot: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "slot data must match its shape"
        );
        self.slots.insert((node, slot.to_string()), (shape, data));
    }

    pub fn remove(&mut self, node: NodeId, slot: &str) {
        self.slots.remove(&(node, slot.to_string()));
    }

    pub fn shape(&self, node: NodeId, slot: &str) -> Option<&[usize]> {
        self.slots
            .get(&(node, slot.to_string()))
            .map(|(s, _)| s.as_slice())
    }

    /// Deterministic iteration over (node, slot, shape, data).
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &str, &[usize], &[f64])> {
        self.slots
            .iter()
            .map(|((n, s), (shape, data))| (*n, s.as_str(), shape.as_slice(), data.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (NodeId, &str, &mut Vec<f64>)> {
        self.slots
            .iter_mut()
            .map(|((n, s), (_, data))| (*n, s.as_str(), data))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.slots.values().map(|(_, d)| d.len()).sum()
    }

    /// Every graph slot must be present with the declared shape, and nothing
    /// extra may be stored.
    pub fn validate_for(&self, graph: &EncoderGraph) -> Result<(), RuntimeError> {
        let mut expected = 0usize;
        for (id, node) in graph.nodes().iter().enumerate() {
            for (name, shape) in node.kind.slots() {
                expected += 1;
                match self.slots.get(&(id, name.clone())) {
                    None => {
                        return Err(RuntimeError::MissingSlot { node: id, slot: name });
                    }
                    Some((s, _)) if *s != shape => {
                        return Err(RuntimeError::Checkpoint(format!(
                            "slot ({id}, {name}): shape {s:?} does not match graph {shape:?}"
                        )));
                    }
                    _ => {}
                }
            }
        }
        if expected != self.slots.len() {
            return Err(RuntimeError::Checkpoint(format!(
                "store has {} slot(s), graph declares {expected}",
                self.slots.len()
            )));
        }
        Ok(())
    }

    // -- checkpoint format: versioned header, then per-slot records of
    //    (node id, slot name, shape, raw f64 little-endian) ------------------

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.slots.len() as u64).to_le_bytes());
        for ((node, name), (shape, data)) in &self.slots {
            out.extend_from_slice(&(*node as u32).to_le_bytes());
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u16).to_le_bytes());
            for &dim in shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RuntimeError> {
        let mut cursor = std::io::Cursor::new(bytes);
        let bad = |msg: &str| RuntimeError::Checkpoint(msg.to_string());
        let mut magic = [0u8; 4];
        cursor.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a parameter checkpoint"));
        }
        let mut u32buf = [0u8; 4];
        cursor.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(RuntimeError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut u64buf = [0u8; 8];
        cursor.read_exact(&mut u64buf).map_err(|_| bad("truncated header"))?;
        let count = u64::from_le_bytes(u64buf);
        let mut slots = BTreeMap::new();
        for _ in 0..count {
            cursor.read_exact(&mut u32buf).map_err(|_| bad("truncated record"))?;
            let node = u32::from_le_bytes(u32buf) as usize;
            let mut u16buf = [0u8; 2];
            cursor.read_exact(&mut u16buf).map_err(|_| bad("truncated record"))?;
            let name_len = u16::from_le_bytes(u16buf) as usize;
            let mut name_bytes = vec![0u8; name_len];
            cursor
                .read_exact(&mut name_bytes)
                .map_err(|_| bad("truncated record"))?;
            let name = String::from_utf8(name_bytes).map_err(|_| bad("slot name not utf-8"))?;
            cursor.read_exact(&mut u16buf).map_err(|_| bad("truncated record"))?;
            let ndim = u16::from_le_bytes(u16buf) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                cursor.read_exact(&mut u32buf).map_err(|_| bad("truncated record"))?;
                shape.push(u32::from_le_bytes(u32buf) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut f64buf = [0u8; 8];
            for _ in 0..len {
                cursor.read_exact(&mut f64buf).map_err(|_| bad("truncated record"))?;
                data.push(f64::from_le_bytes(f64buf));
            }
            slots.insert((node, name), (shape, data));
        }
        Ok(ParamStore { slots })
    }

    pub fn save(&self, path: &Path) -> Result<(), RuntimeError> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| RuntimeError::Checkpoint(e.to_string()))?;
        file.write_all(&self.to_bytes())
            .map_err(|e| RuntimeError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        let bytes =
            std::fs::read(path).map_err(|e| RuntimeError::Checkpoint(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}
