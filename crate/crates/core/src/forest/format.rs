//! Versioned binary model format. All integers and floats little-endian.
//!
//! ```text
//! magic            8 bytes  "RFPOFRST"
//! version          u32      FORMAT_VERSION
//! schema hash      u64      FNV-1a of the covariate names
//! config hash      u64      FNV-1a of (trees, mtry, min_node, max_depth, seed)
//! n_trees          u32
//! mtry             u32
//! min_node         u32
//! max_depth        u32      0 = unlimited
//! seed             u64
//! p                u32      then p strings (u32 byte length + UTF-8)
//! n_subjects       u32      then n_subjects strings
//! per tree:
//!   bag counts     n_subjects x u32
//!   n_nodes        u32
//!   nodes, preorder:
//!     0u8, value f64, count u32                 leaf
//!     1u8, var u32, threshold f64, right u32    split (left child follows)
//! ```

use super::{Forest, Tree, TreeNode};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RFPOFRST";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

pub(super) fn encode(forest: &Forest) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(forest.schema_fingerprint());
    w.u64(forest.config_fingerprint());
    w.u32(forest.n_trees as u32);
    w.u32(forest.mtry as u32);
    w.u32(forest.min_node as u32);
    w.u32(forest.max_depth.unwrap_or(0) as u32);
    w.u64(forest.seed);
    w.u32(forest.feature_names.len() as u32);
    for n in &forest.feature_names {
        w.str(n);
    }
    w.u32(forest.subject_ids.len() as u32);
    for s in &forest.subject_ids {
        w.str(s);
    }
    for (tree, bag) in forest.trees.iter().zip(&forest.bags) {
        for &c in bag {
            w.u32(c);
        }
        w.u32(tree.nodes.len() as u32);
        for node in &tree.nodes {
            match *node {
                TreeNode::Leaf { value, count } => {
                    w.u8(0);
                    w.f64(value);
                    w.u32(count);
                }
                TreeNode::Split { var, threshold, right } => {
                    w.u8(1);
                    w.u32(var);
                    w.f64(threshold);
                    w.u32(right);
                }
            }
        }
    }
    w.0
}

pub(super) fn decode(bytes: &[u8]) -> Result<Forest> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let schema_hash = r.u64()?;
    let config_hash = r.u64()?;
    let n_trees = r.u32()? as usize;
    let mtry = r.u32()? as usize;
    let min_node = r.u32()? as usize;
    let max_depth = match r.u32()? {
        0 => None,
        d => Some(d as usize),
    };
    let seed = r.u64()?;
    let p = r.u32()? as usize;
    let feature_names = (0..p).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let n_subjects = r.u32()? as usize;
    let subject_ids = (0..n_subjects).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let mut trees = Vec::with_capacity(n_trees);
    let mut bags = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        bags.push((0..n_subjects).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        let n_nodes = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            nodes.push(match r.u8()? {
                0 => TreeNode::Leaf { value: r.f64()?, count: r.u32()? },
                1 => {
                    let var = r.u32()?;
                    let threshold = r.f64()?;
                    let right = r.u32()?;
                    if var as usize >= p || right as usize <= i + 1 || right as usize >= n_nodes {
                        return Err(Error::Format(format!("invalid split node {i}")));
                    }
                    TreeNode::Split { var, threshold, right }
                }
                tag => return Err(Error::Format(format!("unknown node tag {tag}"))),
            });
        }
        if nodes.is_empty() {
            return Err(Error::Format("empty tree".into()));
        }
        trees.push(Tree { nodes });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes".into()));
    }
    let forest = Forest { n_trees, mtry, min_node, max_depth, seed, feature_names, subject_ids, trees, bags };
    if forest.schema_fingerprint() != schema_hash {
        return Err(Error::Format("schema fingerprint mismatch".into()));
    }
    if forest.config_fingerprint() != config_hash {
        return Err(Error::Format("config fingerprint mismatch".into()));
    }
    Ok(forest)
}
