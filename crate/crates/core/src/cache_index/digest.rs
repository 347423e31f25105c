use sha2::{Digest, Sha256};

use super::{CacheIndex, NodeId};

impl CacheIndex {
    /// Deterministic serialization of the tree: depth-first, children in
    /// key order, little-endian length-prefixed fields.
    pub fn digest_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut stack = vec![NodeId::ROOT];
        while let Some(id) = stack.pop() {
            let n = self.get(id);
            out.extend_from_slice(&(n.edge.len() as u32).to_le_bytes());
            for t in &n.edge {
                out.extend_from_slice(&t.0.to_le_bytes());
            }
            out.push(n.label.code());
            out.extend_from_slice(&n.creator.0.to_le_bytes());
            out.extend_from_slice(&n.access_epoch().to_le_bytes());
            let flags = u8::from(n.is_compressed) | (u8::from(n.after_compress) << 1);
            out.push(flags);
            out.extend_from_slice(&(n.children.len() as u32).to_le_bytes());
            // Reverse so the smallest key is visited first.
            stack.extend(n.children.values().rev().copied());
        }
        out
    }

    /// SHA-256 of [`CacheIndex::digest_bytes`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.digest_bytes()))
    }
}
