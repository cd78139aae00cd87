use std::collections::{BTreeMap, BTreeSet};

use super::{merge_ranges, validate, Cfg};
use crate::error::InvalidGraph;

fn check(g: &Cfg) -> Result<(), InvalidGraph> {
    let v = validate(g);
    match v.first() {
        None => Ok(()),
        Some(first) => Err(InvalidGraph(v.len(), first.to_string())),
    }
}

fn covers(outer: &[(u64, u64)], inner: &[(u64, u64)]) -> bool {
    inner.iter().all(|&(s, e)| {
        // `outer` is merged and sorted, so a single range must contain [s, e).
        let i = outer.partition_point(|r| r.1 <= s);
        outer.get(i).is_some_and(|r| r.0 <= s && e <= r.1)
    })
}

/// `g1 ≼ g2`: every element of `g1` survives in `g2`, allowing blocks to be
/// split by new incoming flow.
///
/// 1. Address coverage of `g1` is contained in `g2`.
/// 2. Each edge of `g1` has a counterpart in `g2` from a block with the same
///    end address to the same target start address.
/// 3. Each block of `g1` is covered in `g2` by a chain of blocks from the
///    same start to the same end, linked by edges between neighbours.
/// 4. Each function entry of `g1` is an entry of `g2`.
pub fn partial_order_le(g1: &Cfg, g2: &Cfg) -> Result<bool, InvalidGraph> {
    check(g1)?;
    check(g2)?;

    let a1 = merge_ranges(g1.blocks.values().map(|b| (b.start, b.end)));
    let a2 = merge_ranges(g2.blocks.values().map(|b| (b.start, b.end)));
    if !covers(&a2, &a1) {
        return Ok(false);
    }

    let start_to_end2: BTreeMap<u64, u64> = g2.blocks.values().map(|b| (b.start, b.end)).collect();
    let edges2: BTreeSet<(u64, u64)> = g2
        .edges
        .iter()
        .filter_map(|e| start_to_end2.get(&e.source).map(|&end| (end, e.target)))
        .collect();
    for e in &g1.edges {
        let Some(src) = g1.block_at(e.source) else {
            return Ok(false);
        };
        if !edges2.contains(&(src.end, e.target)) {
            return Ok(false);
        }
    }

    let linked: BTreeSet<(u64, u64)> = g2.edges.iter().map(|e| (e.source, e.target)).collect();
    for b in g1.blocks.values() {
        let mut cur = b.start;
        loop {
            let Some(&end) = start_to_end2.get(&cur) else {
                return Ok(false);
            };
            if end == b.end {
                break;
            }
            if end > b.end || !linked.contains(&(cur, end)) {
                return Ok(false);
            }
            cur = end;
        }
    }

    Ok(g1.entries.keys().all(|k| g2.entries.contains_key(k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{Block, Edge, EdgeKind};
    use crate::isa::InsnKind;

    fn base() -> Cfg {
        let mut g = Cfg::new();
        g.insert_block(Block { start: 0x4, end: 0xd, terminator: Some(InsnKind::IJmpOpaque) });
        g.insert_block(Block { start: 0x20, end: 0x21, terminator: Some(InsnKind::Ret) });
        g.edges.insert(Edge::new(0x4, 0x20, EdgeKind::IndirectResolved));
        g.add_entry(0x4, true, None);
        g
    }

    #[test]
    fn reflexive() {
        let g = base();
        assert!(partial_order_le(&g, &g).unwrap());
    }

    #[test]
    fn split_is_larger() {
        let g1 = base();
        let mut g2 = base();
        g2.remove_block(0x4);
        g2.insert_block(Block { start: 0x4, end: 0xa, terminator: None });
        g2.insert_block(Block { start: 0xa, end: 0xd, terminator: Some(InsnKind::IJmpOpaque) });
        g2.move_out_edges(0x4, 0xa);
        g2.edges.insert(Edge::new(0x4, 0xa, EdgeKind::Fallthrough));
        assert!(partial_order_le(&g1, &g2).unwrap());
        assert!(!partial_order_le(&g2, &g1).unwrap());
    }

    #[test]
    fn split_without_link_is_not_larger() {
        let g1 = base();
        let mut g2 = base();
        g2.remove_block(0x4);
        g2.insert_block(Block { start: 0x4, end: 0xa, terminator: None });
        g2.insert_block(Block { start: 0xa, end: 0xd, terminator: Some(InsnKind::IJmpOpaque) });
        g2.move_out_edges(0x4, 0xa);
        assert!(!partial_order_le(&g1, &g2).unwrap());
    }

    #[test]
    fn dropping_entry_breaks_order() {
        let g1 = base();
        let mut g2 = base();
        g2.entries.clear();
        assert!(!partial_order_le(&g1, &g2).unwrap());
    }

    #[test]
    fn invalid_input_rejected() {
        let mut bad = base();
        bad.edges.insert(Edge::new(0x99, 0x4, EdgeKind::Direct));
        assert!(partial_order_le(&bad, &base()).is_err());
    }
}
