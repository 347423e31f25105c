use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::monitor::AccessStats;
use crate::types::{KvHandle, OwnerClass, SensitivityLabel, TokenId, UserId};

/// Stable node identifier. Ids are never reused; the root is `NodeId(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
}

/// Children are keyed by (first token, creator). Nodes of one creator obey
/// the radix property among themselves; distinct creators may hold parallel
/// private copies of the same span.
pub(crate) type ChildKey = (TokenId, UserId);

/// Label provenance kept for audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAudit {
    /// Bitmask of detection tiers (bit i-1 for tier i) that cleared the block.
    pub tiers_passed: u8,
    /// Public because the active policy shares without detection.
    pub policy_public: bool,
    /// The monitor restricted this block and emitted an alert.
    pub alerted: bool,
}

#[derive(Debug)]
pub struct CacheNode {
    pub(crate) id: NodeId,
    pub(crate) parent: Option<NodeId>,
    pub(crate) edge: Vec<TokenId>,
    pub(crate) children: BTreeMap<ChildKey, NodeId>,
    /// Keys of the children currently labeled Public, so a lookup never has
    /// to walk other users' private copies.
    pub(crate) public_children: BTreeSet<ChildKey>,
    pub(crate) label: SensitivityLabel,
    pub(crate) creator: UserId,
    pub(crate) owner: OwnerClass,
    /// Own handle; `None` on the root and on inactive compressed descendants.
    pub(crate) handle: Option<KvHandle>,
    /// On a pri_root: in-order (chain node, handle) list of the compressed chain.
    pub(crate) aggregated: Vec<(NodeId, KvHandle)>,
    /// On a pri_root: the chain members after the root, in order.
    pub(crate) chain: Vec<NodeId>,
    pub(crate) access_epoch: AtomicU64,
    pub(crate) ref_count: u32,
    /// Pins in this subtree, including this node.
    pub(crate) pinned_below: u32,
    pub(crate) is_compressed: bool,
    pub(crate) after_compress: bool,
    pub(crate) compress_ref: Option<NodeId>,
    pub stats: AccessStats,
    pub(crate) cumulative_kv_tokens: u64,
    /// Token depth at the end of this node's edge.
    pub(crate) depth: usize,
    pub(crate) audit: LabelAudit,
}

impl CacheNode {
    pub(crate) fn root() -> Self {
        Self {
            id: NodeId::ROOT,
            parent: None,
            edge: Vec::new(),
            children: BTreeMap::new(),
            public_children: BTreeSet::new(),
            label: SensitivityLabel::Public,
            creator: UserId(0),
            owner: OwnerClass::Business,
            handle: None,
            aggregated: Vec::new(),
            chain: Vec::new(),
            access_epoch: AtomicU64::new(0),
            ref_count: 0,
            pinned_below: 0,
            is_compressed: false,
            after_compress: false,
            compress_ref: None,
            stats: AccessStats::default(),
            cumulative_kv_tokens: 0,
            depth: 0,
            audit: LabelAudit::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn edge(&self) -> &[TokenId] {
        &self.edge
    }

    pub fn label(&self) -> SensitivityLabel {
        self.label
    }

    pub fn private_tag(&self) -> bool {
        self.label.private_tag()
    }

    pub fn creator(&self) -> UserId {
        self.creator
    }

    pub fn owner_class(&self) -> OwnerClass {
        self.owner
    }

    pub fn access_epoch(&self) -> u64 {
        self.access_epoch.load(Ordering::Relaxed)
    }

    pub(crate) fn touch(&self, epoch: u64) {
        self.access_epoch.fetch_max(epoch, Ordering::Relaxed);
    }

    pub fn ref_count(&self) -> u32 {
        self.ref_count
    }

    pub fn is_compressed(&self) -> bool {
        self.is_compressed
    }

    pub fn after_compress(&self) -> bool {
        self.after_compress
    }

    pub fn compress_ref(&self) -> Option<NodeId> {
        self.compress_ref
    }

    pub fn cumulative_kv_tokens(&self) -> u64 {
        self.cumulative_kv_tokens
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn audit(&self) -> LabelAudit {
        self.audit
    }

    pub fn children(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.values().copied()
    }

    pub fn child_count(&self) -> usize {
        self.children.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// The KV handle list as stored on this node: the aggregated list on a
    /// pri_root, the own handle on an ordinary node, empty on inactive
    /// compressed descendants.
    pub fn kv_handles(&self) -> Vec<KvHandle> {
        if self.is_compressed {
            self.aggregated.iter().map(|(_, h)| *h).collect()
        } else {
            self.handle.into_iter().collect()
        }
    }

    /// Visibility rule: public, or private to its creator.
    pub fn visible_to(&self, user: UserId) -> bool {
        self.label == SensitivityLabel::Public || self.creator == user
    }
}
