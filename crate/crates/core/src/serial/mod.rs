//! Single-threaded graph operations and the reference constructor.
//!
//! Every operation consumes a graph and returns the next one. Blocks are named
//! by their start address.

mod construct;

use std::collections::{BTreeMap, BTreeSet};

pub use construct::{serial_construct, serial_construct_with, Construction, SerialOptions};

use crate::cfg::{Block, Cfg, Edge, EdgeKind, ReturnStatus};
use crate::error::OpError;
use crate::image::Image;
use crate::isa::{self, InsnKind};
use crate::tables::{resolve_table, TableResolution};

fn block(g: &Cfg, a: u64) -> Result<Block, OpError> {
    g.block_at(a).ok_or(OpError::NoSuchBlock(a))
}

fn link(g: &mut Cfg, image: &Image, source: u64, target: u64, kind: EdgeKind) {
    if image.in_text(target) {
        g.edges.insert(Edge::new(source, target, kind));
        g.ensure_block_or_candidate(target);
    }
}

/// Block end resolution: turns candidate `t` into a block by splitting the
/// block around it, ending it early at the next block, or decoding forward to
/// the first control-flow instruction.
pub fn op_ber(mut g: Cfg, image: &Image, t: u64) -> Result<Cfg, OpError> {
    if !g.candidates.contains(&t) {
        return Err(OpError::NotACandidate(t));
    }
    if let Some(b) = g.block_containing(t) {
        g.candidates.remove(&t);
        g.remove_block(b.start);
        g.insert_block(Block { start: b.start, end: t, terminator: None });
        g.insert_block(Block { start: t, end: b.end, terminator: b.terminator });
        g.move_out_edges(b.start, t);
        g.edges.insert(Edge::new(b.start, t, EdgeKind::Fallthrough));
        return Ok(g);
    }
    if let Some(next) = g.next_block_after(t) {
        if !isa::contains_cfi(image, t, next.start)? {
            g.candidates.remove(&t);
            g.insert_block(Block { start: t, end: next.start, terminator: None });
            g.edges.insert(Edge::new(t, next.start, EdgeKind::Fallthrough));
            return Ok(g);
        }
    }
    let run = isa::linear_run(image, t)?;
    g.candidates.remove(&t);
    g.insert_block(Block { start: t, end: run.end, terminator: Some(run.terminator) });
    Ok(g)
}

/// Direct edge creation for a block ending in a jump, conditional branch or
/// call. Targets outside text get no edge.
pub fn op_dec(mut g: Cfg, image: &Image, a: u64) -> Result<Cfg, OpError> {
    let b = block(&g, a)?;
    match b.terminator {
        Some(InsnKind::JmpDirect(t)) => link(&mut g, image, a, t, EdgeKind::Direct),
        Some(InsnKind::JccDirect(t)) => {
            link(&mut g, image, a, t, EdgeKind::CondTaken);
            link(&mut g, image, a, b.end, EdgeKind::CondFallthrough);
        }
        Some(InsnKind::Call(t)) => link(&mut g, image, a, t, EdgeKind::Call),
        _ => return Err(OpError::NotDirectTerminator(a)),
    }
    Ok(g)
}

/// Call fall-through edge creation, given the callee's return status.
pub fn op_cfec(
    mut g: Cfg,
    image: &Image,
    call_edge: Edge,
    callee: ReturnStatus,
) -> Result<Cfg, OpError> {
    if call_edge.kind != EdgeKind::Call {
        return Err(OpError::NotACallEdge { src: call_edge.source, dst: call_edge.target });
    }
    let b = block(&g, call_edge.source)?;
    match callee {
        ReturnStatus::Unset => Err(OpError::CalleeUnset),
        ReturnStatus::NoReturn => Ok(g),
        ReturnStatus::Return => {
            link(&mut g, image, b.start, b.end, EdgeKind::CallFallthrough);
            Ok(g)
        }
    }
}

/// Last `BoundHint` of each direct predecessor of the indirect jump ending
/// the block at `a`. A predecessor is any block with a direct-branch edge
/// into the straight-line run that ends in the jump; its hint is taken from
/// its own whole run.
pub fn table_hints(
    g: &Cfg,
    image: &Image,
    a: u64,
    preds: &BTreeMap<u64, Vec<Edge>>,
) -> Result<Vec<u16>, OpError> {
    let b = block(g, a)?;
    let mut members = vec![b.start];
    let mut cur = b.start;
    while let Some((_, p)) = g.blocks.range(..(cur, 0)).next_back() {
        if p.end == cur && p.terminator.is_none() {
            members.push(p.start);
            cur = p.start;
        } else {
            break;
        }
    }
    let mut sources = BTreeSet::new();
    for m in members {
        for e in preds.get(&m).into_iter().flatten() {
            if e.kind.is_direct_branch() {
                sources.insert(e.source);
            }
        }
    }
    let mut hints = Vec::new();
    for s in sources {
        let run = isa::linear_run(image, g.chain_start(s))?;
        if let Some((_, v)) = run.last_hint {
            hints.push(v);
        }
    }
    Ok(hints)
}

/// Resolves the table read by the indirect jump ending block `a`, or `None`
/// for an opaque jump.
pub fn analyze_ijmp(
    g: &Cfg,
    image: &Image,
    a: u64,
    preds: &BTreeMap<u64, Vec<Edge>>,
) -> Result<Option<(u64, u16, TableResolution)>, OpError> {
    let b = block(g, a)?;
    match b.terminator {
        Some(InsnKind::IJmpTable { base, bound_hint }) => {
            let hints = table_hints(g, image, a, preds)?;
            Ok(Some((base, bound_hint, resolve_table(image, base, bound_hint, hints))))
        }
        Some(InsnKind::IJmpOpaque) => Ok(None),
        _ => Err(OpError::NotIndirectTerminator(a)),
    }
}

/// Indirect edge creation: one edge per resolved table target. Opaque jumps
/// get none.
pub fn op_iec(mut g: Cfg, image: &Image, a: u64) -> Result<Cfg, OpError> {
    let preds = g.predecessors();
    if let Some((_, _, r)) = analyze_ijmp(&g, image, a, &preds)? {
        for (_, t) in r.targets {
            link(&mut g, image, a, t, EdgeKind::IndirectResolved);
        }
    }
    Ok(g)
}

fn teardown_in(image: &Image, lo: u64, hi: u64) -> Result<bool, OpError> {
    let mut addr = lo;
    while addr < hi {
        let i = isa::decode(image, addr)?;
        if i.kind == InsnKind::FrameTeardown {
            return Ok(true);
        }
        addr = i.end();
    }
    Ok(false)
}

fn relabel(g: &mut Cfg, e: Edge, kind: EdgeKind) {
    g.edges.remove(&e);
    g.edges.insert(Edge::new(e.source, e.target, kind));
}

/// Function entry identification for edge `e`.
///
/// A call target is an entry. For a direct jump the heuristics run in order:
/// a jump to a known entry is a tail call; a jump to code the current
/// function already reaches is not; a jump preceded by a frame tear-down in
/// the same block is a tail call to a new entry.
pub fn op_fei(mut g: Cfg, image: &Image, e: Edge) -> Result<Cfg, OpError> {
    if !g.edges.contains(&e) {
        return Err(OpError::EdgeNotFound { src: e.source, dst: e.target });
    }
    match e.kind {
        EdgeKind::Call => {
            g.add_entry(e.target, false, None);
        }
        EdgeKind::Direct => {
            if g.entries.contains_key(&e.target) {
                relabel(&mut g, e, EdgeKind::TailCall);
                return Ok(g);
            }
            let intra = |x: &Edge| x.kind.is_intraprocedural() && *x != e;
            let reached_elsewhere = g.entries.keys().any(|&f| {
                let r = g.reachable([f], intra);
                r.contains(&e.source) && r.contains(&e.target)
            });
            if reached_elsewhere {
                return Ok(g);
            }
            let b = block(&g, e.source)?;
            if teardown_in(image, b.start, b.end)? {
                relabel(&mut g, e, EdgeKind::TailCall);
                g.add_entry(e.target, false, None);
            }
        }
        _ => {}
    }
    Ok(g)
}

/// Edge removal: drops `e` and everything no longer reachable from an entry.
pub fn op_er(g: Cfg, e: Edge) -> Result<Cfg, OpError> {
    if !g.edges.contains(&e) {
        return Err(OpError::EdgeNotFound { src: e.source, dst: e.target });
    }
    Ok(op_er_many(g, &[e]))
}

/// Removes several edges at once, then prunes unreachable elements. Equal to
/// applying [`op_er`] to each edge in any order.
pub fn op_er_many(mut g: Cfg, edges: &[Edge]) -> Cfg {
    for e in edges {
        g.edges.remove(e);
    }
    prune_unreachable(g)
}

/// Keeps only blocks, candidates and edges reachable from some entry.
pub fn prune_unreachable(mut g: Cfg) -> Cfg {
    let live = g.reachable(g.entries.keys().copied(), |_| true);
    g.blocks.retain(|&(s, _), _| live.contains(&s));
    g.candidates.retain(|c| live.contains(c));
    g.edges.retain(|e| live.contains(&e.source));
    g
}

/// Marks every direct jump to a known function entry as a tail call.
pub fn classify_branches(mut g: Cfg) -> Cfg {
    let tail: Vec<Edge> = g
        .edges
        .iter()
        .filter(|e| e.kind == EdgeKind::Direct && g.entries.contains_key(&e.target))
        .copied()
        .collect();
    for e in tail {
        relabel(&mut g, e, EdgeKind::TailCall);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::InsnKind::*;

    /// Text at 0 assembled from `insns`; returns the image and instruction
    /// start addresses.
    fn asm(insns: &[InsnKind]) -> (Image, Vec<u64>) {
        let mut text = Vec::new();
        let mut at = Vec::new();
        for i in insns {
            at.push(text.len() as u64);
            i.encode_into(&mut text);
        }
        (Image::new(0, text, 0x10_0000, vec![], vec![]).unwrap(), at)
    }

    fn seeded(addrs: &[u64]) -> Cfg {
        let mut g = Cfg::new();
        for &a in addrs {
            g.candidates.insert(a);
            g.add_entry(a, true, None);
        }
        g
    }

    #[test]
    fn linear_parsing_to_ret() {
        // 0x4: Alu Alu Nop Ret -> block [0x4, 0xc)
        let (img, _) = asm(&[Nop, Nop, Nop, Nop, Alu(0), Alu(0), Nop, Ret]);
        let g = op_ber(seeded(&[4]), &img, 4).unwrap();
        assert_eq!(g.block_at(4).unwrap().end, 0xc);
        assert!(g.candidates.is_empty());
        assert_eq!(op_ber(g, &img, 4), Err(OpError::NotACandidate(4)));
    }

    #[test]
    fn split_moves_out_edges() {
        let (img, at) = asm(&[Alu(0), Alu(0), JmpDirect(0)]);
        let g = op_ber(seeded(&[0]), &img, 0).unwrap();
        let mut g = op_dec(g, &img, 0).unwrap();
        g.candidates.insert(at[1]);
        let g = op_ber(g, &img, at[1]).unwrap();
        assert_eq!(g.block_at(0).unwrap().end, 3);
        assert!(g.edges.contains(&Edge::new(0, 3, EdgeKind::Fallthrough)));
        assert!(g.edges.contains(&Edge::new(3, 0, EdgeKind::Direct)));
        assert_eq!(g.block_at(3).unwrap().terminator, Some(JmpDirect(0)));
    }

    #[test]
    fn early_ending() {
        let (img, at) = asm(&[Alu(0), Alu(0), Ret]);
        let mut g = op_ber(seeded(&[at[1]]), &img, at[1]).unwrap();
        g.candidates.insert(0);
        let g = op_ber(g, &img, 0).unwrap();
        assert_eq!(g.block_at(0).unwrap().end, 3);
        assert!(g.edges.contains(&Edge::new(0, 3, EdgeKind::Fallthrough)));
    }

    #[test]
    fn dec_cond_and_out_of_text() {
        let (img, _) = asm(&[JccDirect(0x9999), Ret]);
        let g = op_ber(seeded(&[0]), &img, 0).unwrap();
        let g = op_dec(g, &img, 0).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert!(g.candidates.contains(&5));
        let (img, _) = asm(&[Ret]);
        let g = op_ber(seeded(&[0]), &img, 0).unwrap();
        assert_eq!(op_dec(g, &img, 0), Err(OpError::NotDirectTerminator(0)));
    }

    #[test]
    fn cfec_cases() {
        let (img, _) = asm(&[Call(6), Ret, Ret]);
        let g = op_ber(seeded(&[0]), &img, 0).unwrap();
        let g = op_dec(g, &img, 0).unwrap();
        let call = Edge::new(0, 6, EdgeKind::Call);
        assert_eq!(op_cfec(g.clone(), &img, call, ReturnStatus::Unset), Err(OpError::CalleeUnset));
        assert_eq!(op_cfec(g.clone(), &img, call, ReturnStatus::NoReturn).unwrap(), g);
        let r = op_cfec(g, &img, call, ReturnStatus::Return).unwrap();
        assert!(r.edges.contains(&Edge::new(0, 5, EdgeKind::CallFallthrough)));
    }

    #[test]
    fn fei_heuristics() {
        // A: Alu; Teardown; Jmp T   B: Alu; Alu; Jmp T   T: Alu; Ret
        let t = 20;
        let (img, at) = asm(&[Alu(0), FrameTeardown, JmpDirect(t), Alu(0), Alu(0), JmpDirect(t), Alu(0), Ret]);
        assert_eq!(at[6], t);
        let (a, b) = (at[0], at[3]);
        let mut g = seeded(&[a, b]);
        for s in [a, b] {
            g = op_ber(g, &img, s).unwrap();
            g = op_dec(g, &img, s).unwrap();
        }
        g = op_ber(g, &img, t).unwrap();
        let ea = Edge::new(a, t, EdgeKind::Direct);
        let eb = Edge::new(b, t, EdgeKind::Direct);
        let a_first = op_fei(op_fei(g.clone(), &img, ea).unwrap(), &img, eb).unwrap();
        let b_first = op_fei(op_fei(g.clone(), &img, eb).unwrap(), &img, ea).unwrap();
        assert_ne!(a_first, b_first);
        assert!(a_first.edges.contains(&Edge::new(b, t, EdgeKind::TailCall)));
        assert!(b_first.edges.contains(&eb));
        assert!(a_first.entries.contains_key(&t) && b_first.entries.contains_key(&t));
    }

    #[test]
    fn er_removes_dangling() {
        let (img, _) = asm(&[JccDirect(6), Ret, Ret]);
        let g = op_ber(seeded(&[0]), &img, 0).unwrap();
        let mut g = op_dec(g, &img, 0).unwrap();
        for c in [5, 6] {
            g = op_ber(g, &img, c).unwrap();
        }
        let e = Edge::new(0, 6, EdgeKind::CondTaken);
        let r = op_er(g.clone(), e).unwrap();
        assert!(r.block_at(6).is_none());
        assert!(r.block_at(5).is_some());
        assert_eq!(op_er(r, e), Err(OpError::EdgeNotFound { src: 0, dst: 6 }));
    }
}
