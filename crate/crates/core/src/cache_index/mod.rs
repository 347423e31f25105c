//! Unified privacy-preserving radix-tree KV-cache index.
//!
//! Public and private entries share one tree. Every node carries a label and
//! a creator; lookups only traverse nodes that are public or were created by
//! the querying user. Private single-user chains can be path-compressed into
//! a `pri_root` that holds the aggregated handle list, and eviction is
//! bottom-up, epoch-LRU, public-first on ties, with compressed chains pruned
//! from the tail before their root becomes eligible.

mod budget;
mod digest;
mod node;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use budget::{max_concurrent_tokens, CapacityConfig, TierBudget};
pub use node::{CacheNode, LabelAudit, NodeId};

use crate::error::CacheError;
use crate::types::{
    common_prefix_len, KvHandle, OwnerClass, SensitivityLabel, Tier, TokenId, TokenSeq, UserId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub capacity: CapacityConfig,
    /// Demote HBM -> DRAM -> SSD on pressure instead of freeing outright.
    pub tiered: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            capacity: CapacityConfig::tokens(1 << 24, 0, 0),
            tiered: false,
        }
    }
}

/// Longest visible prefix of a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub matched_tokens: usize,
    /// Handles covering the matched prefix, in order. A handle whose span is
    /// only partly matched is returned as a slice with reduced `token_count`.
    pub handles: Vec<KvHandle>,
    /// Deepest node touched by the match (root on an empty match).
    pub terminal_node: NodeId,
    pub lowest_tier: Option<Tier>,
    /// Every node the match passed through, root excluded.
    pub path: Vec<NodeId>,
}

impl MatchResult {
    pub fn handle_token_counts(&self) -> Vec<u32> {
        self.handles.iter().map(|h| h.token_count).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitEvent {
    /// New node holding the first `upper_len` tokens of the old span.
    pub upper: NodeId,
    /// The original node, now holding the remainder.
    pub lower: NodeId,
    pub upper_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertOutcome {
    /// Node whose path spells the inserted sequence.
    pub terminal: NodeId,
    /// Tokens already present on a visible path.
    pub matched_tokens: usize,
    /// Newly materialized nodes (at most one per insert).
    pub new_nodes: Vec<NodeId>,
    pub new_tokens: usize,
    pub splits: Vec<SplitEvent>,
    pub evicted: Vec<KvHandle>,
}

/// One root-to-node path, flattened for brute-force checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathRecord {
    pub node: NodeId,
    /// Full token path from the root through this node's edge.
    pub tokens: Vec<TokenId>,
    pub edge_len: usize,
    /// (label, creator) of every node on the path, root excluded, top first.
    pub chain: Vec<(SensitivityLabel, UserId)>,
    pub handle_tokens: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexCounters {
    pub evicted_nodes: u64,
    pub evicted_tokens: u64,
    pub demoted_tokens: u64,
    pub compressions: u64,
    pub decompressions: u64,
    pub splits: u64,
}

#[derive(Debug)]
pub struct CacheIndex {
    nodes: Vec<Option<Box<CacheNode>>>,
    live: usize,
    next_handle: u64,
    budget: TierBudget,
    epoch: u64,
    tiered: bool,
    handle_owner: HashMap<u64, NodeId>,
    active: Mutex<BTreeSet<NodeId>>,
    /// Per-tier eviction queues keyed like `eviction_key`. Entries may be
    /// stale (older epoch, old label, no longer a candidate) and are checked
    /// when popped; every node that can become a candidate is re-queued at
    /// that moment.
    evict_queue: [BinaryHeap<EvictKey>; 3],
    counters: IndexCounters,
}

type EvictKey = Reverse<(u64, u8, NodeId)>;

fn is_private_final(l: SensitivityLabel) -> bool {
    matches!(l, SensitivityLabel::Private | SensitivityLabel::Restricted)
}

impl CacheIndex {
    pub fn new(config: IndexConfig) -> Result<Self, CacheError> {
        let caps = config.capacity.resolve()?;
        Ok(Self {
            nodes: vec![Some(Box::new(CacheNode::root()))],
            live: 1,
            next_handle: 1,
            budget: TierBudget::new(caps),
            epoch: 0,
            tiered: config.tiered,
            handle_owner: HashMap::new(),
            active: Mutex::new(BTreeSet::new()),
            evict_queue: Default::default(),
            counters: IndexCounters::default(),
        })
    }

    pub fn node(&self, id: NodeId) -> Option<&CacheNode> {
        self.nodes.get(id.0 as usize).and_then(|n| n.as_deref())
    }

    fn get(&self, id: NodeId) -> &CacheNode {
        self.node(id).expect("dangling node id")
    }

    fn get_mut(&mut self, id: NodeId) -> &mut CacheNode {
        self.nodes[id.0 as usize]
            .as_deref_mut()
            .expect("dangling node id")
    }

    fn require(&self, id: NodeId) -> Result<&CacheNode, CacheError> {
        self.node(id).ok_or(CacheError::UnknownNode(id))
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    /// Live nodes including the root.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 1
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = &CacheNode> {
        self.nodes.iter().filter_map(|n| n.as_deref())
    }

    pub fn budget(&self) -> &TierBudget {
        &self.budget
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn counters(&self) -> IndexCounters {
        self.counters
    }

    pub fn advance_epoch(&mut self) -> u64 {
        self.epoch += 1;
        self.epoch
    }

    fn alloc_handle(&mut self, tier: Tier, tokens: u32, owner: NodeId) -> KvHandle {
        let h = KvHandle {
            id: self.next_handle,
            tier,
            token_count: tokens,
        };
        self.next_handle += 1;
        self.handle_owner.insert(h.id, owner);
        h
    }

    fn push_node(&mut self, mut n: CacheNode) -> NodeId {
        let id = NodeId(self.nodes.len() as u64);
        n.id = id;
        self.nodes.push(Some(Box::new(n)));
        self.live += 1;
        id
    }

    /// Effective handle of a node, resolving compressed storage.
    pub fn node_handle(&self, id: NodeId) -> Option<KvHandle> {
        let n = self.node(id)?;
        if n.after_compress {
            let pri = self.get(n.compress_ref?);
            pri.aggregated.iter().find(|(o, _)| *o == id).map(|(_, h)| *h)
        } else if n.is_compressed {
            n.aggregated.first().map(|(_, h)| *h)
        } else {
            n.handle
        }
    }

    fn set_node_handle(&mut self, id: NodeId, h: KvHandle) {
        let (after, pri, comp) = {
            let n = self.get(id);
            (n.after_compress, n.compress_ref, n.is_compressed)
        };
        if after {
            let pri = self.get_mut(pri.expect("after_compress without ref"));
            if let Some(e) = pri.aggregated.iter_mut().find(|(o, _)| *o == id) {
                e.1 = h;
            }
        } else if comp {
            self.get_mut(id).aggregated[0].1 = h;
        } else {
            self.get_mut(id).handle = Some(h);
        }
    }

    // ----- search -------------------------------------------------------

    /// Longest visible path: (matched tokens, [(node, tokens taken from its edge)]).
    fn best_path(&self, seq: &[TokenId], user: UserId) -> (usize, Vec<(NodeId, usize)>) {
        let (m, mut p) = self.explore(NodeId::ROOT, 0, seq, user);
        p.reverse();
        (m, p)
    }

    /// Depth-first search over visible children. Returns the best match
    /// below `at` (already fully matched to depth `d`), path reversed.
    fn explore(
        &self,
        at: NodeId,
        d: usize,
        seq: &[TokenId],
        user: UserId,
    ) -> (usize, Vec<(NodeId, usize)>) {
        let mut cur = at;
        let mut depth = d;
        let mut forward: Vec<(NodeId, usize)> = Vec::new();
        loop {
            if depth == seq.len() {
                break;
            }
            let t = seq[depth];
            let node = self.get(cur);
            let mut cands: Vec<NodeId> = node
                .public_children
                .range((t, UserId(0))..=(t, UserId(u64::MAX)))
                .filter(|k| k.1 != user)
                .map(|k| node.children[k])
                .collect();
            if let Some(&own) = node.children.get(&(t, user)) {
                // Keep key order: the user's own copy slots in by creator.
                let at = cands.partition_point(|&c| self.get(c).creator < user);
                cands.insert(at, own);
            }
            let mut cands = cands.into_iter();
            let Some(first) = cands.next() else { break };
            let second = cands.next();
            if second.is_none() {
                let c = self.get(first);
                let k = common_prefix_len(&c.edge, &seq[depth..]);
                forward.push((first, k));
                if k < c.edge.len() {
                    depth += k;
                    break;
                }
                depth += k;
                cur = first;
                continue;
            }
            // Parallel copies of the span: take the deepest.
            let mut best: (usize, Vec<(NodeId, usize)>) = (depth, Vec::new());
            for c_id in std::iter::once(first).chain(second).chain(cands) {
                let c = self.get(c_id);
                let k = common_prefix_len(&c.edge, &seq[depth..]);
                let (m, mut p) = if k == c.edge.len() {
                    self.explore(c_id, depth + k, seq, user)
                } else {
                    (depth + k, Vec::new())
                };
                if m > best.0 {
                    p.push((c_id, k));
                    best = (m, p);
                }
            }
            let (m, mut tail) = best;
            forward.reverse();
            tail.extend(forward);
            return (m, tail);
        }
        forward.reverse();
        (depth, forward)
    }

    /// Longest prefix of `seq` spelled by nodes visible to `user`. Touches
    /// the access epoch of every node on the matched path.
    pub fn match_prefix(&self, seq: &TokenSeq, user: UserId) -> MatchResult {
        let (matched, path) = self.best_path(seq.as_slice(), user);
        let mut handles = Vec::with_capacity(path.len());
        let mut lowest: Option<Tier> = None;
        let mut i = 0;
        while i < path.len() {
            let (id, take) = path[i];
            let n = self.get(id);
            // A fully covered pri_root serves its aggregated list directly.
            if n.is_compressed {
                let span = 1 + n.chain.len();
                let covered = i + span <= path.len()
                    && path[i..i + span]
                        .iter()
                        .all(|&(pid, t)| t == self.get(pid).edge.len());
                if covered {
                    for (_, h) in &n.aggregated {
                        lowest = lowest.max(Some(h.tier));
                        handles.push(*h);
                    }
                    i += span;
                    continue;
                }
            }
            if let Some(mut h) = self.node_handle(id) {
                h.token_count = take as u32;
                lowest = lowest.max(Some(h.tier));
                handles.push(h);
            }
            i += 1;
        }
        for &(id, _) in &path {
            self.get(id).touch(self.epoch);
        }
        MatchResult {
            matched_tokens: matched,
            handles,
            terminal_node: path.last().map(|p| p.0).unwrap_or(NodeId::ROOT),
            lowest_tier: lowest,
            path: path.into_iter().map(|p| p.0).collect(),
        }
    }

    // ----- insert -------------------------------------------------------

    /// Insert `seq` on behalf of `user`. Reuses the longest visible path,
    /// splits an edge where the sequence ends or diverges mid-edge, and
    /// materializes the remaining suffix as one new `PendingPrivate` node.
    pub fn insert(
        &mut self,
        seq: &TokenSeq,
        user: UserId,
        owner: OwnerClass,
        epoch: u64,
    ) -> Result<InsertOutcome, CacheError> {
        if seq.is_empty() {
            return Err(CacheError::EmptySequence);
        }
        let tokens = seq.as_slice();
        let (matched, path) = self.best_path(tokens, user);
        let remaining = tokens.len() - matched;
        if remaining as u64 > self.budget.capacity(Tier::Hbm) {
            return Err(CacheError::CapacityExhausted {
                tier: Tier::Hbm,
                needed: remaining as u64,
                freed: 0,
            });
        }
        let mut splits = Vec::new();
        let mut attach = NodeId::ROOT;
        if let Some(&(last, take)) = path.last() {
            attach = last;
            if take < self.get(last).edge.len() {
                self.decompress_containing(last);
                let ev = self.split(last, take);
                attach = ev.upper;
                splits.push(ev);
            }
        }
        let epoch = epoch.max(self.epoch);
        for &(id, _) in &path {
            if self.node(id).is_some() {
                self.get(id).touch(epoch);
            }
        }
        if let Some(ev) = splits.first() {
            self.get(ev.upper).touch(epoch);
        }
        if remaining == 0 {
            return Ok(InsertOutcome {
                terminal: attach,
                matched_tokens: matched,
                new_nodes: Vec::new(),
                new_tokens: 0,
                splits,
                evicted: Vec::new(),
            });
        }
        self.decompress_containing(attach);
        let mut evicted = Vec::new();
        let free = self.budget.free(Tier::Hbm);
        if free < remaining as u64 {
            self.pin_internal(attach);
            let r = self.make_room(Tier::Hbm, remaining as u64 - free);
            self.unpin_internal(attach);
            evicted = r?;
        }
        let suffix = tokens[matched..].to_vec();
        let key = (suffix[0], user);
        let mut n = CacheNode::root();
        n.parent = Some(attach);
        n.edge = suffix;
        n.label = SensitivityLabel::PendingPrivate;
        n.creator = user;
        n.owner = owner;
        n.depth = tokens.len();
        n.access_epoch = epoch.into();
        let id = self.push_node(n);
        // Active from birth, so the monitor closes its creation window at
        // the next epoch even if nobody touches it.
        self.mark_active(id);
        let h = self.alloc_handle(Tier::Hbm, remaining as u32, id);
        self.budget.add(Tier::Hbm, remaining as u64);
        self.get_mut(id).handle = Some(h);
        let prev = self.get_mut(attach).children.insert(key, id);
        self.enqueue(id);
        debug_assert!(prev.is_none(), "child key collision");
        Ok(InsertOutcome {
            terminal: id,
            matched_tokens: matched,
            new_nodes: vec![id],
            new_tokens: remaining,
            splits,
            evicted,
        })
    }

    /// Like [`CacheIndex::insert`], but the new suffix is cut into nodes
    /// aligned to absolute multiples of `block_tokens`, so each block can be
    /// classified and labeled on its own. `new_nodes` lists the blocks in
    /// path order.
    pub fn insert_blocks(
        &mut self,
        seq: &TokenSeq,
        user: UserId,
        owner: OwnerClass,
        epoch: u64,
        block_tokens: usize,
    ) -> Result<InsertOutcome, CacheError> {
        let mut out = self.insert(seq, user, owner, epoch)?;
        let Some(&node) = out.new_nodes.first() else {
            return Ok(out);
        };
        if block_tokens == 0 {
            return Ok(out);
        }
        let mut start = out.matched_tokens;
        let end = seq.len();
        let mut blocks = Vec::new();
        let mut b = (start / block_tokens + 1) * block_tokens;
        while b < end {
            let ev = self.split(node, b - start);
            blocks.push(ev.upper);
            start = b;
            b += block_tokens;
        }
        blocks.push(node);
        out.new_nodes = blocks;
        Ok(out)
    }

    /// Split `id` after `k` edge tokens. The original id keeps the lower
    /// half (and its pins and children); a new upper node takes the first
    /// `k` tokens and a copy of the metadata.
    fn split(&mut self, id: NodeId, k: usize) -> SplitEvent {
        let (parent, old_key, upper_edge, lower_first, creator, depth_upper) = {
            let n = self.get(id);
            debug_assert!(k > 0 && k < n.edge.len());
            debug_assert!(!n.after_compress && !n.is_compressed);
            (
                n.parent.expect("root cannot split"),
                (n.edge[0], n.creator),
                n.edge[..k].to_vec(),
                n.edge[k],
                n.creator,
                n.depth - (n.edge.len() - k),
            )
        };
        let upper = {
            let n = self.get(id);
            let mut u = CacheNode::root();
            u.parent = Some(parent);
            u.edge = upper_edge;
            u.label = n.label;
            u.creator = n.creator;
            u.owner = n.owner;
            u.access_epoch = n.access_epoch().into();
            u.pinned_below = n.pinned_below;
            u.stats = n.stats.clone();
            u.depth = depth_upper;
            u.audit = n.audit;
            u
        };
        let uid = self.push_node(upper);
        let old = self.get(id).handle.expect("materialized node without handle");
        let uh = self.alloc_handle(old.tier, k as u32, uid);
        {
            let u = self.get_mut(uid);
            u.handle = Some(uh);
            u.children.insert((lower_first, creator), id);
            if u.label == SensitivityLabel::Public {
                u.public_children.insert((lower_first, creator));
            }
        }
        {
            let n = self.get_mut(id);
            n.edge.drain(..k);
            n.parent = Some(uid);
            if let Some(h) = n.handle.as_mut() {
                h.token_count -= k as u32;
            }
        }
        self.get_mut(parent).children.insert(old_key, uid);
        if self.active.lock().unwrap().contains(&id) {
            self.mark_active(uid);
        }
        self.counters.splits += 1;
        SplitEvent {
            upper: uid,
            lower: id,
            upper_len: k,
        }
    }

    // ----- pinning ------------------------------------------------------

    fn pin_internal(&mut self, id: NodeId) {
        self.get_mut(id).ref_count += 1;
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = self.get_mut(c);
            n.pinned_below += 1;
            cur = n.parent;
        }
    }

    fn unpin_internal(&mut self, id: NodeId) {
        self.get_mut(id).ref_count -= 1;
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = self.get_mut(c);
            n.pinned_below -= 1;
            cur = n.parent;
            if n.pinned_below == 0 && c != NodeId::ROOT {
                self.enqueue(c);
            }
        }
    }

    /// Mark `id` as in use by an in-flight request.
    pub fn pin(&mut self, id: NodeId) -> Result<(), CacheError> {
        self.require(id)?;
        self.pin_internal(id);
        Ok(())
    }

    pub fn unpin(&mut self, id: NodeId) -> Result<(), CacheError> {
        if self.require(id)?.ref_count == 0 {
            return Err(CacheError::Underflow(id));
        }
        self.unpin_internal(id);
        Ok(())
    }

    // ----- labels -------------------------------------------------------

    /// Relabel a node. Private/Restricted labels propagate to all
    /// descendants when `propagate` is set; promotion to Public never
    /// propagates. Returns the number of nodes whose label changed.
    pub fn set_label(
        &mut self,
        id: NodeId,
        label: SensitivityLabel,
        propagate: bool,
    ) -> Result<usize, CacheError> {
        let n = self.require(id)?;
        if id == NodeId::ROOT {
            return Err(CacheError::UnknownNode(id));
        }
        if n.label == SensitivityLabel::Public && label == SensitivityLabel::PendingPrivate {
            return Err(CacheError::IllegalTransition {
                from: n.label,
                to: label,
            });
        }
        if !is_private_final(label) {
            self.decompress_containing(id);
        }
        let mut changed = 0;
        if self.relabel(id, label) {
            changed += 1;
        }
        if propagate && is_private_final(label) {
            let mut stack: Vec<NodeId> = self.get(id).children().collect();
            while let Some(c) = stack.pop() {
                if self.relabel(c, label) {
                    changed += 1;
                }
                stack.extend(self.get(c).children());
            }
        }
        Ok(changed)
    }

    fn relabel(&mut self, id: NodeId, label: SensitivityLabel) -> bool {
        let n = self.get_mut(id);
        if n.label == label {
            return false;
        }
        n.label = label;
        let (key, parent) = ((n.edge[0], n.creator), n.parent.expect("root is never relabeled"));
        let p = self.get_mut(parent);
        if label == SensitivityLabel::Public {
            p.public_children.insert(key);
        } else {
            p.public_children.remove(&key);
        }
        let n = self.get_mut(id);
        if label != SensitivityLabel::Public {
            n.audit.tiers_passed = 0;
            n.audit.policy_public = false;
        }
        self.enqueue(id);
        true
    }

    /// Record which detection tiers cleared a block.
    pub fn mark_detection_passed(&mut self, id: NodeId, tiers_mask: u8) {
        if let Some(n) = self.nodes.get_mut(id.0 as usize).and_then(|n| n.as_deref_mut()) {
            n.audit.tiers_passed = tiers_mask;
        }
    }

    /// Record that a block is public by policy rather than detection.
    pub fn mark_policy_public(&mut self, id: NodeId) {
        if let Some(n) = self.nodes.get_mut(id.0 as usize).and_then(|n| n.as_deref_mut()) {
            n.audit.policy_public = true;
        }
    }

    pub fn flag_alert(&mut self, id: NodeId) {
        if let Some(n) = self.nodes.get_mut(id.0 as usize).and_then(|n| n.as_deref_mut()) {
            n.audit.alerted = true;
        }
    }

    // ----- monitor hooks ------------------------------------------------

    pub fn record_access(&self, id: NodeId, user: UserId) {
        if let Some(n) = self.node(id) {
            n.stats.record(user);
            self.active.lock().unwrap().insert(id);
        }
    }

    pub(crate) fn take_active_nodes(&self) -> Vec<NodeId> {
        std::mem::take(&mut *self.active.lock().unwrap())
            .into_iter()
            .collect()
    }

    pub(crate) fn mark_active(&self, id: NodeId) {
        self.active.lock().unwrap().insert(id);
    }

    // ----- compression --------------------------------------------------

    fn chain_eligible(&self, n: &CacheNode, creator: UserId) -> bool {
        n.id != NodeId::ROOT
            && n.creator == creator
            && is_private_final(n.label)
            && n.ref_count == 0
            && !n.is_compressed
            && !n.after_compress
    }

    /// Collapse the single-user private chain starting at `head` into a
    /// pri_root. Descendants stay in the tree as inactive metadata nodes.
    pub fn compress_private_path(&mut self, head: NodeId) -> Result<NodeId, CacheError> {
        let h = self.require(head)?;
        if head == NodeId::ROOT {
            return Err(CacheError::NotCompressible(head, "root"));
        }
        if !self.chain_eligible(h, h.creator) {
            return Err(CacheError::NotCompressible(
                head,
                "head must be an unpinned, uncompressed private node",
            ));
        }
        let creator = h.creator;
        let mut members = Vec::new();
        let mut cur = h;
        while cur.children.len() == 1 {
            let c = self.get(*cur.children.values().next().unwrap());
            if !self.chain_eligible(c, creator) {
                break;
            }
            members.push(c.id);
            cur = c;
        }
        if members.is_empty() {
            return Err(CacheError::NotCompressible(head, "chain length < 2"));
        }
        let mut agg = Vec::with_capacity(members.len() + 1);
        let own = self.get_mut(head).handle.take().expect("head handle");
        agg.push((head, own));
        for &m in &members {
            let n = self.get_mut(m);
            let hd = n.handle.take().expect("member handle");
            n.after_compress = true;
            n.compress_ref = Some(head);
            agg.push((m, hd));
        }
        let total = agg.iter().map(|(_, h)| h.token_count as u64).sum();
        let n = self.get_mut(head);
        n.is_compressed = true;
        n.aggregated = agg;
        n.chain = members;
        n.cumulative_kv_tokens = total;
        self.counters.compressions += 1;
        Ok(head)
    }

    /// Restore a pri_root's chain to ordinary nodes.
    pub fn decompress(&mut self, pri: NodeId) {
        let Some(n) = self.node(pri) else { return };
        if !n.is_compressed {
            return;
        }
        let n = self.get_mut(pri);
        let agg = std::mem::take(&mut n.aggregated);
        n.chain.clear();
        n.is_compressed = false;
        n.cumulative_kv_tokens = 0;
        for (owner, h) in agg {
            let m = self.get_mut(owner);
            m.handle = Some(h);
            m.after_compress = false;
            m.compress_ref = None;
            self.enqueue(owner);
        }
        self.counters.decompressions += 1;
    }

    fn decompress_containing(&mut self, id: NodeId) {
        let Some(n) = self.node(id) else { return };
        if n.is_compressed {
            self.decompress(id);
        } else if let Some(p) = n.compress_ref {
            self.decompress(p);
        }
    }

    /// Compress every eligible private chain; chains that can grow are
    /// rebuilt. Returns the number of pri_roots created.
    pub fn compress_all(&mut self) -> usize {
        let pri_roots: Vec<NodeId> = self
            .live_nodes()
            .filter(|n| n.is_compressed)
            .map(|n| n.id)
            .collect();
        for p in pri_roots {
            let n = self.get(p);
            let tail = self.get(*n.chain.last().unwrap());
            let extendable = tail.children.len() == 1
                && self.chain_eligible(self.get(*tail.children.values().next().unwrap()), n.creator);
            if extendable {
                self.decompress(p);
            }
        }
        let heads: Vec<NodeId> = self
            .live_nodes()
            .filter(|n| self.chain_eligible(n, n.creator))
            .filter(|n| {
                let p = self.get(n.parent.unwrap());
                !(p.children.len() == 1 && self.chain_eligible(p, n.creator))
            })
            .map(|n| n.id)
            .collect();
        heads
            .into_iter()
            .filter(|&h| self.compress_private_path(h).is_ok())
            .count()
    }

    // ----- eviction -----------------------------------------------------

    fn eviction_candidate(&self, n: &CacheNode, tier: Tier) -> bool {
        if n.id == NodeId::ROOT || n.pinned_below > 0 || n.is_compressed {
            return false;
        }
        match self.node_handle(n.id) {
            Some(h) if h.tier == tier => {}
            _ => return false,
        }
        if n.children.is_empty() {
            return true;
        }
        // Interior nodes only move down a tier once every child is slower.
        self.tiered
            && tier.lower().is_some()
            && n.children().all(|c| {
                self.node_handle(c)
                    .map(|h| h.tier > tier)
                    .unwrap_or(true)
            })
    }

    fn eviction_key(&self, n: &CacheNode) -> Reverse<(u64, u8, NodeId)> {
        let private = u8::from(n.label != SensitivityLabel::Public);
        Reverse((n.access_epoch(), private, n.id))
    }

    /// Free at least `needed_tokens` of HBM, oldest epoch first, public
    /// before private on ties, then smallest node id.
    pub fn evict(&mut self, needed_tokens: u64, epoch: u64) -> Result<Vec<KvHandle>, CacheError> {
        self.epoch = self.epoch.max(epoch);
        self.make_room(Tier::Hbm, needed_tokens)
    }

    fn enqueue(&mut self, id: NodeId) {
        if let (Some(n), Some(h)) = (self.node(id), self.node_handle(id)) {
            let key = self.eviction_key(n);
            self.evict_queue[h.tier.index()].push(key);
        }
    }

    /// Re-queue every node that holds a handle, dropping stale entries.
    fn rebuild_queues(&mut self) {
        let mut queues: [BinaryHeap<EvictKey>; 3] = Default::default();
        for n in self.live_nodes().skip(1) {
            if let Some(h) = self.node_handle(n.id) {
                queues[h.tier.index()].push(self.eviction_key(n));
            }
        }
        self.evict_queue = queues;
    }

    fn make_room(&mut self, tier: Tier, needed: u64) -> Result<Vec<KvHandle>, CacheError> {
        let queued: usize = self.evict_queue.iter().map(|q| q.len()).sum();
        if queued > 4 * self.live + 64 {
            self.rebuild_queues();
        }
        let mut freed = 0u64;
        let mut out = Vec::new();
        let mut rescanned = false;
        while freed < needed {
            let Some(Reverse(entry)) = self.evict_queue[tier.index()].pop() else {
                if !rescanned {
                    rescanned = true;
                    self.rebuild_queues();
                    continue;
                }
                return Err(CacheError::CapacityExhausted {
                    tier,
                    needed,
                    freed,
                });
            };
            let id = entry.2;
            let Some(n) = self.node(id) else { continue };
            if !self.eviction_candidate(n, tier) {
                continue;
            }
            let key = self.eviction_key(n);
            if key.0 != entry {
                self.evict_queue[tier.index()].push(key);
                continue;
            }
            let h = self.node_handle(id).unwrap();
            let is_leaf = n.children.is_empty();
            let mut demoted = false;
            if self.tiered {
                if let Some(lower) = tier.lower() {
                    let need_lower = (h.token_count as u64).saturating_sub(self.budget.free(lower));
                    let room = need_lower == 0
                        || (self.budget.capacity(lower) >= h.token_count as u64
                            && self.make_room(lower, need_lower).is_ok());
                    if room && self.node(id).is_some() {
                        self.move_handle(id, lower);
                        demoted = true;
                    }
                }
            }
            if !demoted {
                if !is_leaf {
                    continue;
                }
                // A pri_root whose chain just emptied is an ordinary node
                // again; remove_leaf re-queues the parent.
                self.remove_leaf(id);
            }
            freed += h.token_count as u64;
            out.push(h);
        }
        Ok(out)
    }

    fn move_handle(&mut self, id: NodeId, to: Tier) {
        let mut h = self.node_handle(id).unwrap();
        self.budget.sub(h.tier, h.token_count as u64);
        self.budget.add(to, h.token_count as u64);
        h.tier = to;
        self.set_node_handle(id, h);
        self.counters.demoted_tokens += h.token_count as u64;
        self.enqueue(id);
        if let Some(p) = self.get(id).parent {
            self.enqueue(p);
        }
    }

    fn remove_leaf(&mut self, id: NodeId) {
        let h = self.node_handle(id).expect("leaf without handle");
        let (parent, key, pri) = {
            let n = self.get(id);
            debug_assert!(n.children.is_empty() && n.ref_count == 0);
            (n.parent.unwrap(), (n.edge[0], n.creator), n.compress_ref)
        };
        if let Some(p) = pri {
            let pn = self.get_mut(p);
            pn.aggregated.retain(|(o, _)| *o != id);
            pn.chain.retain(|&c| c != id);
            pn.cumulative_kv_tokens -= h.token_count as u64;
            if pn.chain.is_empty() {
                let (_, own) = pn.aggregated.pop().expect("pri_root own entry");
                pn.is_compressed = false;
                pn.handle = Some(own);
                pn.cumulative_kv_tokens = 0;
            }
        }
        self.budget.sub(h.tier, h.token_count as u64);
        self.handle_owner.remove(&h.id);
        self.get_mut(parent).children.remove(&key);
        self.get_mut(parent).public_children.remove(&key);
        self.enqueue(parent);
        self.nodes[id.0 as usize] = None;
        self.live -= 1;
        self.active.lock().unwrap().remove(&id);
        self.counters.evicted_nodes += 1;
        self.counters.evicted_tokens += h.token_count as u64;
    }

    /// Move a handle one tier down.
    pub fn demote(&mut self, handle: KvHandle) -> Result<KvHandle, CacheError> {
        let owner = *self
            .handle_owner
            .get(&handle.id)
            .ok_or(CacheError::UnknownNode(NodeId(u64::MAX)))?;
        let cur = self.node_handle(owner).unwrap();
        let lower = cur.tier.lower().ok_or(CacheError::AlreadyLowestTier)?;
        if self.budget.free(lower) < cur.token_count as u64 {
            return Err(CacheError::CapacityExhausted {
                tier: lower,
                needed: cur.token_count as u64,
                freed: 0,
            });
        }
        self.move_handle(owner, lower);
        Ok(self.node_handle(owner).unwrap())
    }

    // ----- inspection ---------------------------------------------------

    /// Flattened root-to-node paths for every non-root node.
    pub fn export_records(&self) -> Vec<PathRecord> {
        let mut out = Vec::new();
        let mut stack: Vec<(NodeId, Vec<TokenId>, Vec<(SensitivityLabel, UserId)>)> =
            vec![(NodeId::ROOT, Vec::new(), Vec::new())];
        while let Some((id, toks, chain)) = stack.pop() {
            for c in self.get(id).children() {
                let n = self.get(c);
                let mut t = toks.clone();
                t.extend_from_slice(&n.edge);
                let mut ch = chain.clone();
                ch.push((n.label, n.creator));
                out.push(PathRecord {
                    node: c,
                    tokens: t.clone(),
                    edge_len: n.edge.len(),
                    chain: ch.clone(),
                    handle_tokens: self.node_handle(c).map(|h| h.token_count).unwrap_or(0),
                });
                stack.push((c, t, ch));
            }
        }
        out.sort_by_key(|r| r.node);
        out
    }

    /// Full token path of a node.
    pub fn path_tokens(&self, id: NodeId) -> Vec<TokenId> {
        let mut parts = Vec::new();
        let mut cur = self.node(id);
        while let Some(n) = cur {
            parts.push(&n.edge[..]);
            cur = n.parent.and_then(|p| self.node(p));
        }
        parts.reverse();
        parts.concat()
    }

    /// Structural self-check used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut used = [0u64; 3];
        for n in self.live_nodes() {
            if n.id != NodeId::ROOT {
                if n.edge.is_empty() {
                    return Err(format!("{:?} has empty edge", n.id));
                }
                let p = self
                    .node(n.parent.ok_or("orphan")?)
                    .ok_or(format!("{:?} parent dangling", n.id))?;
                if p.children.get(&(n.edge[0], n.creator)) != Some(&n.id) {
                    return Err(format!("{:?} not registered in parent", n.id));
                }
                if n.depth != p.depth + n.edge.len() {
                    return Err(format!("{:?} depth mismatch", n.id));
                }
                let h = self
                    .node_handle(n.id)
                    .ok_or(format!("{:?} has no handle", n.id))?;
                if h.token_count as usize != n.edge.len() {
                    return Err(format!("{:?} handle/edge length mismatch", n.id));
                }
                used[h.tier.index()] += h.token_count as u64;
            }
            for (&(t, u), &c) in &n.children {
                let cn = self.node(c).ok_or(format!("{c:?} dangling child"))?;
                if cn.edge[0] != t || cn.creator != u || cn.parent != Some(n.id) {
                    return Err(format!("{c:?} child key mismatch"));
                }
                if (cn.label == SensitivityLabel::Public) != n.public_children.contains(&(t, u)) {
                    return Err(format!("{c:?} public child set out of date"));
                }
            }
            if n.public_children.len() > n.children.len() {
                return Err(format!("{:?} stale public child keys", n.id));
            }
            if n.after_compress {
                let p = self
                    .node(n.compress_ref.ok_or("after_compress without ref")?)
                    .ok_or("compress_ref dangling")?;
                if !p.is_compressed || !p.chain.contains(&n.id) {
                    return Err(format!("{:?} compress_ref not a pri_root", n.id));
                }
                if n.label == SensitivityLabel::Public {
                    return Err("public node inside compressed chain".into());
                }
            }
            if n.is_compressed {
                let sum: u64 = n.aggregated.iter().map(|(_, h)| h.token_count as u64).sum();
                if sum != n.cumulative_kv_tokens {
                    return Err(format!("{:?} cumulative mismatch", n.id));
                }
                if n.label == SensitivityLabel::Public {
                    return Err("public pri_root".into());
                }
            }
            let pins: u32 =
                n.ref_count + n.children().map(|c| self.get(c).pinned_below).sum::<u32>();
            if pins != n.pinned_below {
                return Err(format!("{:?} pin accounting", n.id));
            }
        }
        if used != self.budget.used_tokens {
            return Err(format!("budget {:?} != handles {:?}", self.budget.used_tokens, used));
        }
        if !self.budget.within_capacity() {
            return Err("over capacity".into());
        }
        Ok(())
    }

    pub fn label_counts(&self) -> HashMap<SensitivityLabel, usize> {
        let mut m = HashMap::new();
        for n in self.live_nodes().skip(1) {
            *m.entry(n.label).or_insert(0) += 1;
        }
        m
    }
}
