use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safekv_core::cache_index::{max_concurrent_tokens, CapacityConfig, PathRecord};
use safekv_core::{
    CacheIndex, IndexConfig, NodeId, OwnerClass, SensitivityLabel as L, Tier, TokenId, TokenSeq,
    UserId,
};

use crate::{check, Outcome};

fn index(hbm: u64, dram: u64, ssd: u64, tiered: bool) -> CacheIndex {
    CacheIndex::new(IndexConfig {
        capacity: CapacityConfig::tokens(hbm, dram, ssd),
        tiered,
    })
    .expect("valid capacity")
}

fn seq(ids: &[u32]) -> TokenSeq {
    TokenSeq::from_ids(ids.iter().copied())
}

fn lcp(a: &[TokenId], b: &[TokenId]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Flat scan: longest common prefix with any root-to-node path whose nodes
/// are all visible to `u`.
fn flat_match(records: &[PathRecord], q: &[TokenId], u: UserId) -> usize {
    records
        .iter()
        .filter(|r| r.chain.iter().all(|&(l, c)| l == L::Public || c == u))
        .map(|r| lcp(&r.tokens, q))
        .max()
        .unwrap_or(0)
}

fn random_seq(rng: &mut ChaCha8Rng, alphabet: u32, max_len: usize) -> Vec<u32> {
    let n = rng.random_range(1..=max_len);
    (0..n).map(|_| rng.random_range(0..alphabet)).collect()
}

fn random_node(ix: &CacheIndex, rng: &mut ChaCha8Rng) -> Option<NodeId> {
    let ids: Vec<NodeId> = ix.live_nodes().skip(1).map(|n| n.id()).collect();
    (!ids.is_empty()).then(|| ids[rng.random_range(0..ids.len())])
}

fn random_label(rng: &mut ChaCha8Rng) -> L {
    [L::Public, L::Private, L::Restricted][rng.random_range(0..3)]
}

/// Compare one query against the flat scan; also require the returned
/// handles to cover exactly the matched tokens.
fn agrees(ix: &CacheIndex, records: &[PathRecord], q: &[u32], u: UserId) -> Result<(), String> {
    let qs = seq(q);
    let m = ix.match_prefix(&qs, u);
    let want = flat_match(records, qs.as_slice(), u);
    let covered: u32 = m.handles.iter().map(|h| h.token_count).sum();
    if m.matched_tokens != want || covered as usize != want {
        return Err(format!(
            "query {q:?} user {}: index {} (handles {covered}) vs flat scan {want}",
            u.0, m.matched_tokens
        ));
    }
    Ok(())
}

pub fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut queries = 0u64;
    for case in 0..10_000 {
        let mut ix = index(rng.random_range(16..96), 0, 0, false);
        let ops = rng.random_range(5..40);
        for _ in 0..ops {
            match rng.random_range(0..10) {
                0..=3 => {
                    let s = random_seq(&mut rng, 4, 12);
                    let e = ix.epoch();
                    let u = UserId(rng.random_range(1..4));
                    let _ = ix.insert(&seq(&s), u, OwnerClass::Customer, e);
                }
                4 | 5 => {
                    if let Some(id) = random_node(&ix, &mut rng) {
                        let _ = ix.set_label(id, random_label(&mut rng), rng.random_bool(0.5));
                    }
                }
                6 => {
                    ix.compress_all();
                }
                7 => {
                    let e = ix.epoch();
                    let _ = ix.evict(rng.random_range(1..10), e);
                }
                8 => {
                    ix.advance_epoch();
                }
                _ => {
                    let records = ix.export_records();
                    let q = random_seq(&mut rng, 4, 14);
                    agrees(&ix, &records, &q, UserId(rng.random_range(1..4)))
                        .map_err(|e| format!("case {case}: {e}"))?;
                    queries += 1;
                }
            }
            ix.check_invariants().map_err(|e| format!("case {case}: {e}"))?;
        }
        let records = ix.export_records();
        for _ in 0..8 {
            let q = random_seq(&mut rng, 4, 14);
            agrees(&ix, &records, &q, UserId(rng.random_range(1..4)))
                .map_err(|e| format!("case {case}: {e}"))?;
            queries += 1;
        }
    }
    let (trees, exhaustive) = exhaustive_small_trees()?;
    Ok(format!(
        "10000 random sequences, {queries} queries; exhaustive: {trees} trees, {exhaustive} queries, all agree"
    ))
}

/// Every tree built from two stored sequences over {0,1,2} of length <= 5
/// (by two users, with and without the first published), queried with all
/// 243 length-5 sequences by three users.
fn exhaustive_small_trees() -> Result<(u64, u64), String> {
    let mut all: Vec<Vec<u32>> = Vec::new();
    for len in 1..=5u32 {
        for code in 0..3u32.pow(len) {
            all.push((0..len).map(|i| code / 3u32.pow(i) % 3).collect());
        }
    }
    let queries: Vec<Vec<u32>> = all.iter().filter(|s| s.len() == 5).cloned().collect();
    let (mut trees, mut n) = (0u64, 0u64);
    for i in 0..all.len() {
        for j in i..all.len() {
            for publish in [false, true] {
                let mut ix = index(64, 0, 0, false);
                let a = ix
                    .insert(&seq(&all[i]), UserId(1), OwnerClass::Customer, 0)
                    .map_err(|e| e.to_string())?;
                if publish {
                    ix.set_label(a.terminal, L::Public, false).map_err(|e| e.to_string())?;
                }
                ix.insert(&seq(&all[j]), UserId(2), OwnerClass::Customer, 0)
                    .map_err(|e| e.to_string())?;
                if ix.len() > 20 {
                    continue;
                }
                trees += 1;
                let records = ix.export_records();
                for q in &queries {
                    for u in 1..=3 {
                        agrees(&ix, &records, q, UserId(u))?;
                        n += 1;
                    }
                }
            }
        }
    }
    Ok((trees, n))
}

pub fn compression_transparency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut compressions, mut checked) = (0usize, 0u64);
    for case in 0..1000 {
        let mut ix = index(1 << 16, 0, 0, false);
        for _ in 0..rng.random_range(4..20) {
            let u = UserId(rng.random_range(1..4));
            // Extend an existing path half the time to grow private chains.
            let mut s = if rng.random_bool(0.5) {
                let recs = ix.export_records();
                if recs.is_empty() {
                    Vec::new()
                } else {
                    recs[rng.random_range(0..recs.len())].tokens.iter().map(|t| t.0).collect()
                }
            } else {
                Vec::new()
            };
            s.extend(random_seq(&mut rng, 3, 6));
            let e = ix.epoch();
            let out = ix.insert(&seq(&s), u, OwnerClass::Customer, e).map_err(|e| e.to_string())?;
            match rng.random_range(0..4) {
                0 => {
                    let _ = ix.set_label(out.terminal, L::Public, false);
                }
                1 | 2 => {
                    let _ = ix.set_label(out.terminal, L::Private, false);
                }
                _ => {}
            }
        }
        let mut qs: Vec<Vec<u32>> = ix
            .export_records()
            .iter()
            .map(|r| r.tokens.iter().map(|t| t.0).collect())
            .collect();
        for _ in 0..10 {
            qs.push(random_seq(&mut rng, 3, 20));
        }
        let snapshot = |ix: &CacheIndex| -> Vec<(usize, Vec<u32>)> {
            let mut out = Vec::new();
            for q in &qs {
                for u in 1..=4 {
                    let m = ix.match_prefix(&seq(q), UserId(u));
                    out.push((m.matched_tokens, m.handle_token_counts()));
                }
            }
            out
        };
        let before = snapshot(&ix);
        compressions += ix.compress_all();
        ix.check_invariants().map_err(|e| format!("case {case}: {e}"))?;
        let after = snapshot(&ix);
        if before != after {
            let k = before.iter().zip(&after).position(|(a, b)| a != b).unwrap();
            return Err(format!(
                "case {case}: query {:?} user {} changed {:?} -> {:?}",
                qs[k / 4],
                k % 4 + 1,
                before[k],
                after[k]
            ));
        }
        checked += before.len() as u64;
    }
    check(
        compressions > 0,
        format!("1000 trees, {compressions} chains compressed, {checked} (query, user) results unchanged"),
    )
}

/// The leaf the index should evict next: unpinned, not a pri_root with a
/// live chain, oldest access epoch, public before private, smallest id.
fn expected_victim(ix: &CacheIndex) -> Option<NodeId> {
    ix.live_nodes()
        .skip(1)
        .filter(|n| n.is_leaf() && n.ref_count() == 0 && !n.is_compressed())
        .filter(|n| ix.node_handle(n.id()).is_some_and(|h| h.tier == Tier::Hbm))
        .min_by_key(|n| (n.access_epoch(), n.label() != L::Public, n.id()))
        .map(|n| n.id())
}

pub fn eviction_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut evictions, mut pri_guarded, mut public_ties) = (0u64, 0u64, 0u64);
    for case in 0..2000 {
        let tiered = case % 4 == 3;
        let mut ix = if tiered {
            index(40, 40, 40, true)
        } else {
            index(rng.random_range(24..80), 0, 0, false)
        };
        let mut pinned: Vec<NodeId> = Vec::new();
        for _ in 0..60 {
            match rng.random_range(0..12) {
                0..=4 => {
                    let mut s = random_seq(&mut rng, 3, 10);
                    if rng.random_bool(0.4) {
                        if let Some(r) = ix.export_records().first() {
                            let mut p: Vec<u32> = r.tokens.iter().map(|t| t.0).collect();
                            p.append(&mut s);
                            s = p;
                        }
                    }
                    let e = ix.epoch();
                    let u = UserId(rng.random_range(1..4));
                    if let Ok(o) = ix.insert(&seq(&s), u, OwnerClass::Customer, e) {
                        if rng.random_bool(0.5) {
                            let l = if rng.random_bool(0.5) { L::Public } else { L::Private };
                            let _ = ix.set_label(o.terminal, l, false);
                        }
                    }
                }
                5 => {
                    ix.advance_epoch();
                }
                6 => {
                    ix.compress_all();
                }
                7 => {
                    if let Some(id) = random_node(&ix, &mut rng) {
                        if pinned.len() < 3 && ix.pin(id).is_ok() {
                            pinned.push(id);
                        }
                    }
                }
                8 => {
                    if let Some(id) = pinned.pop() {
                        ix.unpin(id).map_err(|e| e.to_string())?;
                    }
                }
                9 => {
                    let q = random_seq(&mut rng, 3, 10);
                    ix.match_prefix(&seq(&q), UserId(rng.random_range(1..4)));
                }
                _ if !tiered => {
                    let want = expected_victim(&ix);
                    let owners: HashMap<u64, (NodeId, bool)> = ix
                        .live_nodes()
                        .skip(1)
                        .filter_map(|n| ix.node_handle(n.id()).map(|h| (h.id, (n.id(), n.is_compressed()))))
                        .collect();
                    let tie_private = want.is_some_and(|w| {
                        let wn = ix.node(w).unwrap();
                        ix.live_nodes().any(|n| {
                            n.id() != w && n.access_epoch() == wn.access_epoch() && n.label() != L::Public
                        }) && wn.label() == L::Public
                    });
                    let e = ix.epoch();
                    match (ix.evict(1, e), want) {
                        (Ok(h), Some(w)) => {
                            let (got, was_pri) = owners[&h[0].id];
                            if got != w {
                                return Err(format!("case {case}: evicted {got:?}, expected {w:?}"));
                            }
                            if was_pri {
                                return Err(format!("case {case}: pri_root {got:?} freed with live chain"));
                            }
                            evictions += 1;
                            public_ties += tie_private as u64;
                        }
                        (Err(_), None) => {}
                        (got, w) => {
                            return Err(format!("case {case}: evict {got:?} vs expected {w:?}"))
                        }
                    }
                    pri_guarded += ix.live_nodes().filter(|n| n.is_compressed()).count() as u64;
                }
                _ => {
                    let e = ix.epoch();
                    let _ = ix.evict(rng.random_range(1..30), e);
                }
            }
            if !ix.budget().within_capacity() {
                return Err(format!("case {case}: capacity exceeded {:?}", ix.budget()));
            }
            for id in &pinned {
                if ix.node(*id).is_none() {
                    return Err(format!("case {case}: pinned node {id:?} evicted"));
                }
            }
            ix.check_invariants().map_err(|e| format!("case {case}: {e}"))?;
        }
    }
    let chain = pri_root_freed_last()?;
    let tmax = t_max_pairs()?;
    check(
        evictions > 0 && public_ties > 0 && pri_guarded > 0,
        format!(
            "{evictions} evictions matched the oracle ({public_ties} public-over-private ties, \
             {pri_guarded} pri_root checks); {chain}; {tmax}"
        ),
    )
}

/// A compressed private chain loses its tail first; the pri_root goes last.
fn pri_root_freed_last() -> Result<String, String> {
    let mut ix = index(1 << 10, 0, 0, false);
    let u = UserId(1);
    let mut path = Vec::new();
    let mut ids = Vec::new();
    for b in 0..6u32 {
        path.extend([b, b + 10]);
        let o = ix.insert(&seq(&path), u, OwnerClass::Customer, 0).map_err(|e| e.to_string())?;
        ix.set_label(o.terminal, L::Private, false).map_err(|e| e.to_string())?;
        ids.push(o.terminal);
    }
    if ix.compress_all() != 1 || !ix.node(ids[0]).is_some_and(|n| n.is_compressed()) {
        return Err("chain did not compress".into());
    }
    let mut order = Vec::new();
    let owners: HashMap<u64, NodeId> = ids
        .iter()
        .map(|&id| (ix.node_handle(id).unwrap().id, id))
        .collect();
    while ix.len() > 1 {
        let h = ix.evict(1, 0).map_err(|e| e.to_string())?;
        order.push(owners[&h[0].id]);
    }
    let mut want = ids.clone();
    want.reverse();
    if order != want {
        return Err(format!("chain eviction order {order:?}, expected {want:?}"));
    }
    Ok("compressed chain pruned tail-first, pri_root last".into())
}

fn t_max_pairs() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let m_t = rng.random_range(1..4096u64);
        let kv = rng.random_range(m_t..m_t * 2000);
        let want = kv / m_t;
        let got = max_concurrent_tokens(kv, m_t).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("T_max({kv}, {m_t}) = {got}, expected {want}"));
        }
        let mut ix = CacheIndex::new(IndexConfig {
            capacity: CapacityConfig::Memory {
                kv_bytes: kv,
                bytes_per_token: m_t,
                dram_tokens: 0,
                ssd_tokens: 0,
            },
            tiered: false,
        })
        .map_err(|e| e.to_string())?;
        let over = seq(&vec![1; want as usize + 1]);
        if ix.insert(&over, UserId(1), OwnerClass::Customer, 0).is_ok() {
            return Err(format!("inserted {} tokens with T_max {want}", want + 1));
        }
        let full: Vec<u32> = (0..want as u32).collect();
        ix.insert(&seq(&full), UserId(1), OwnerClass::Customer, 0)
            .map_err(|e| format!("T_max {want} tokens rejected: {e}"))?;
        if ix.budget().used(Tier::Hbm) != want || ix.budget().free(Tier::Hbm) != 0 {
            return Err(format!("T_max {want}: used {}", ix.budget().used(Tier::Hbm)));
        }
    }
    Ok("T_max = floor(M_KV/m_t) enforced for 100 pairs".into())
}
