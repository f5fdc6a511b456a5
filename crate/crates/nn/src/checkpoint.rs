use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use milpmt_core::graph::SCHEMA_VERSION;
use milpmt_core::Scalar;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Task, TaskHead, TrunkParams};
use crate::tensor::Tensor;
use crate::NnError;

const MAGIC: &[u8; 4] = b"MMTC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Role of a stored head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadRole {
    Task(Task),
    /// Random head kept fixed while the trunk trains.
    FrozenRandom { task: Task, index: usize },
}

impl HeadRole {
    pub fn task(self) -> Task {
        match self {
            HeadRole::Task(t) | HeadRole::FrozenRandom { task: t, .. } => t,
        }
    }
}

impl fmt::Display for HeadRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadRole::Task(t) => write!(f, "head:{t}"),
            HeadRole::FrozenRandom { task, index } => write!(f, "frozen_random_head:{task}:{index}"),
        }
    }
}

impl FromStr for HeadRole {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, NnError> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["head", t] => Ok(HeadRole::Task(t.parse()?)),
            ["frozen_random_head", t, k] => Ok(HeadRole::FrozenRandom {
                task: t.parse()?,
                index: k
                    .parse()
                    .map_err(|_| NnError::Checkpoint(format!("bad role `{s}`")))?,
            }),
            _ => Err(NnError::Checkpoint(format!("bad role `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    role: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Manifest {
    format_version: u32,
    feature_schema_version: u32,
    dim: usize,
    heads: usize,
    layer_norm: bool,
    tensors: Vec<TensorEntry>,
    meta: BTreeMap<String, String>,
}

/// Trunk plus any number of heads and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub trunk: TrunkParams<T>,
    pub heads: Vec<(HeadRole, TaskHead<T>)>,
    pub meta: BTreeMap<String, String>,
}

fn hash_tensors<'a, T: Scalar + 'a>(tensors: impl Iterator<Item = &'a Tensor<T>>) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        for &d in &t.shape {
            h.update((d as u64).to_le_bytes());
        }
        for &v in &t.data {
            h.update(v.to_f32_bits());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the trunk's f32 buffers.
pub fn trunk_hash<T: Scalar>(trunk: &TrunkParams<T>) -> String {
    hash_tensors(trunk.tensors().into_iter().map(|(_, t)| t))
}

pub fn head_hash<T: Scalar>(head: &TaskHead<T>) -> String {
    hash_tensors(head.tensors("h").into_iter().map(|(_, t)| t))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(trunk: TrunkParams<T>) -> Self {
        Checkpoint {
            trunk,
            heads: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn head(&self, role: HeadRole) -> Option<&TaskHead<T>> {
        self.heads.iter().find(|(r, _)| *r == role).map(|(_, h)| h)
    }

    pub fn set_head(&mut self, role: HeadRole, head: TaskHead<T>) {
        match self.heads.iter_mut().find(|(r, _)| *r == role) {
            Some(slot) => slot.1 = head,
            None => self.heads.push((role, head)),
        }
    }

    pub fn trunk_hash(&self) -> String {
        trunk_hash(&self.trunk)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut buf: Vec<u8> = Vec::new();
        let mut push = |name: String, role: String, t: &Tensor<T>| {
            entries.push(TensorEntry {
                name,
                role,
                shape: t.shape.clone(),
                offset: buf.len() / 4,
            });
            for &v in &t.data {
                buf.extend_from_slice(&v.to_f32_bits());
            }
        };
        for (name, t) in self.trunk.tensors() {
            push(name, "trunk".into(), t);
        }
        for (role, head) in &self.heads {
            let r = role.to_string();
            for (name, t) in head.tensors(&r) {
                push(name, r.clone(), t);
            }
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            feature_schema_version: SCHEMA_VERSION,
            dim: self.trunk.dim,
            heads: self.trunk.heads,
            layer_norm: true,
            tensors: entries,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + buf.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&buf);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let jlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + jlen).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if manifest.feature_schema_version != SCHEMA_VERSION {
            return Err(NnError::SchemaMismatch(format!(
                "checkpoint uses feature schema {}",
                manifest.feature_schema_version
            )));
        }
        let data = &bytes[16 + jlen..];
        let floats = |e: &TensorEntry| -> Result<Vec<T>, NnError> {
            let n: usize = e.shape.iter().product();
            let raw = data
                .get(e.offset * 4..(e.offset + n) * 4)
                .ok_or_else(|| bad("truncated tensor data"))?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| <T as Scalar>::from_f32(f32::from_le_bytes(c.try_into().unwrap())))
                .collect())
        };
        let fill = |targets: Vec<&mut Tensor<T>>, entries: &[&TensorEntry]| -> Result<(), NnError> {
            if targets.len() != entries.len() {
                return Err(bad("tensor count does not match the architecture"));
            }
            for (t, e) in targets.into_iter().zip(entries) {
                if t.shape != e.shape {
                    return Err(NnError::Checkpoint(format!("shape mismatch for {}", e.name)));
                }
                t.data = floats(e)?;
            }
            Ok(())
        };

        let mut trunk = TrunkParams::init_with(manifest.dim, manifest.heads, 0);
        let trunk_entries: Vec<&TensorEntry> = manifest.tensors.iter().filter(|e| e.role == "trunk").collect();
        fill(trunk.tensors_mut(), &trunk_entries)?;

        let mut roles: Vec<String> = Vec::new();
        for e in &manifest.tensors {
            if e.role != "trunk" && !roles.contains(&e.role) {
                roles.push(e.role.clone());
            }
        }
        let mut heads = Vec::new();
        for r in roles {
            let role: HeadRole = r.parse()?;
            let mut head = TaskHead::init(role.task(), manifest.dim, 0);
            let entries: Vec<&TensorEntry> = manifest.tensors.iter().filter(|e| e.role == r).collect();
            fill(head.tensors_mut(), &entries)?;
            heads.push((role, head));
        }
        Ok(Checkpoint {
            trunk,
            heads,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| NnError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
