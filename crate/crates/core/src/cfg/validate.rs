use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{Cfg, EdgeKind};
use crate::image::Image;
use crate::isa;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    DuplicateBlockStart(u64),
    DuplicateBlockEnd(u64),
    EmptyBlock { start: u64, end: u64 },
    OverlappingBlocks { first: u64, second: u64 },
    DanglingEdgeSource { source: u64, target: u64 },
    DanglingEdgeTarget { source: u64, target: u64 },
    CandidateIsBlock(u64),
    CallFallthroughTarget { source: u64, target: u64 },
    EntryNotBlockOrCandidate(u64),
    EntryKeyMismatch { key: u64, entry: u64 },
    /// Checked only against an image: a control-flow instruction that is not
    /// the last instruction of its block.
    InteriorControlFlow { block: u64, at: u64 },
    /// Checked only against an image: the recorded terminator disagrees with
    /// the decoded last instruction.
    TerminatorMismatch { block: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:x?}")
    }
}

/// Checks the structural invariants of `g`. Returns every violation found,
/// sorted; an empty result means the graph is well formed.
pub fn validate(g: &Cfg) -> Vec<Violation> {
    let mut out = BTreeSet::new();
    let mut starts: BTreeMap<u64, usize> = BTreeMap::new();
    let mut ends: BTreeMap<u64, usize> = BTreeMap::new();
    for b in g.blocks.values() {
        *starts.entry(b.start).or_default() += 1;
        *ends.entry(b.end).or_default() += 1;
        if b.start >= b.end {
            out.insert(Violation::EmptyBlock { start: b.start, end: b.end });
        }
    }
    for (&a, &n) in &starts {
        if n > 1 {
            out.insert(Violation::DuplicateBlockStart(a));
        }
    }
    for (&a, &n) in &ends {
        if n > 1 {
            out.insert(Violation::DuplicateBlockEnd(a));
        }
    }
    for &c in &g.candidates {
        if starts.contains_key(&c) {
            out.insert(Violation::CandidateIsBlock(c));
        }
    }
    for e in &g.edges {
        let Some(src) = g.block_at(e.source) else {
            out.insert(Violation::DanglingEdgeSource { source: e.source, target: e.target });
            continue;
        };
        if !starts.contains_key(&e.target) && !g.candidates.contains(&e.target) {
            out.insert(Violation::DanglingEdgeTarget { source: e.source, target: e.target });
        }
        if e.kind == EdgeKind::CallFallthrough && e.target != src.end {
            out.insert(Violation::CallFallthroughTarget { source: e.source, target: e.target });
        }
    }
    for (&k, f) in &g.entries {
        if k != f.entry {
            out.insert(Violation::EntryKeyMismatch { key: k, entry: f.entry });
        }
        if !starts.contains_key(&k) && !g.candidates.contains(&k) {
            out.insert(Violation::EntryNotBlockOrCandidate(k));
        }
    }
    out.into_iter().collect()
}

/// [`validate`] plus the invariants that only hold for instruction-aligned
/// code: blocks do not overlap, and each holds at most one control-flow
/// instruction, as its last instruction.
pub fn validate_against(g: &Cfg, image: &Image) -> Vec<Violation> {
    let mut out = validate(g);
    let mut prev: Option<(u64, u64)> = None;
    for b in g.blocks.values() {
        if let Some((ps, pe)) = prev {
            if ps != b.start && b.start < pe {
                out.push(Violation::OverlappingBlocks { first: ps, second: b.start });
            }
        }
        prev = Some((b.start, b.end));
    }
    for b in g.blocks.values() {
        let mut addr = b.start;
        let mut last = None;
        while addr < b.end {
            let Ok(insn) = isa::decode(image, addr) else { break };
            if insn.is_control_flow() && insn.end() < b.end {
                out.push(Violation::InteriorControlFlow { block: b.start, at: addr });
            }
            last = Some(insn);
            addr = insn.end();
        }
        if let (Some(t), Some(last)) = (b.terminator, last) {
            let synthesized = t == isa::InsnKind::Halt && b.end == image.text_end();
            if last.kind != t && !synthesized {
                out.push(Violation::TerminatorMismatch { block: b.start });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{Block, Edge};

    #[test]
    fn empty_graph_is_valid() {
        assert!(validate(&Cfg::new()).is_empty());
    }

    #[test]
    fn duplicate_start() {
        let mut g = Cfg::new();
        g.insert_block(Block { start: 4, end: 8, terminator: None });
        g.insert_block(Block { start: 4, end: 9, terminator: None });
        let v = validate(&g);
        assert!(v.contains(&Violation::DuplicateBlockStart(4)), "{v:?}");
    }

    #[test]
    fn dangling_source() {
        let mut g = Cfg::new();
        g.insert_block(Block { start: 4, end: 8, terminator: None });
        g.edges.insert(Edge::new(0x10, 4, EdgeKind::Direct));
        assert_eq!(
            validate(&g),
            vec![Violation::DanglingEdgeSource { source: 0x10, target: 4 }]
        );
    }

    #[test]
    fn duplicate_end_and_overlap() {
        let mut g = Cfg::new();
        g.insert_block(Block { start: 4, end: 13, terminator: None });
        g.insert_block(Block { start: 10, end: 13, terminator: None });
        let v = validate(&g);
        assert!(v.contains(&Violation::DuplicateBlockEnd(13)));
        let img = Image::new(0, vec![0; 16], 0x100, vec![], vec![]).unwrap();
        let v = validate_against(&g, &img);
        assert!(v.contains(&Violation::OverlappingBlocks { first: 4, second: 10 }));
    }

    #[test]
    fn candidate_collision_and_bad_fallthrough() {
        let mut g = Cfg::new();
        g.insert_block(Block { start: 4, end: 8, terminator: None });
        g.candidates.insert(4);
        g.candidates.insert(9);
        g.edges.insert(Edge::new(4, 9, EdgeKind::CallFallthrough));
        let v = validate(&g);
        assert!(v.contains(&Violation::CandidateIsBlock(4)));
        assert!(v.contains(&Violation::CallFallthroughTarget { source: 4, target: 9 }));
    }
}
