//! The control-flow graph value ⟨blocks, candidates, edges, entries⟩.
//!
//! Blocks are address ranges `[start, end)`; candidates are addresses known to
//! start a block whose end is not yet resolved. Edges refer to blocks and
//! candidates by start address, so splitting a block never rewrites incoming
//! edges. Everything is kept in ordered collections so iteration order is
//! canonical.

mod export;
mod order;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::InsnKind;

pub(crate) use export::hex;
pub use export::{canonical_serialize, to_dot, to_json_value};
pub use order::partial_order_le;
pub use validate::{validate, validate_against, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Direct,
    CondTaken,
    CondFallthrough,
    Call,
    CallFallthrough,
    Return,
    IndirectResolved,
    TailCall,
    /// Straight-line flow between the halves of a split block.
    Fallthrough,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 9] = [
        EdgeKind::Direct,
        EdgeKind::CondTaken,
        EdgeKind::CondFallthrough,
        EdgeKind::Call,
        EdgeKind::CallFallthrough,
        EdgeKind::Return,
        EdgeKind::IndirectResolved,
        EdgeKind::TailCall,
        EdgeKind::Fallthrough,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Direct => "direct",
            EdgeKind::CondTaken => "cond_taken",
            EdgeKind::CondFallthrough => "cond_fallthrough",
            EdgeKind::Call => "call",
            EdgeKind::CallFallthrough => "call_fallthrough",
            EdgeKind::Return => "return",
            EdgeKind::IndirectResolved => "indirect",
            EdgeKind::TailCall => "tail_call",
            EdgeKind::Fallthrough => "fallthrough",
        }
    }

    /// Edges followed when computing function boundaries.
    pub fn is_intraprocedural(self) -> bool {
        !matches!(self, EdgeKind::Call | EdgeKind::TailCall | EdgeKind::Return)
    }

    /// Edges that may feed a jump table's range check.
    pub fn is_direct_branch(self) -> bool {
        matches!(
            self,
            EdgeKind::Direct | EdgeKind::CondTaken | EdgeKind::CondFallthrough | EdgeKind::TailCall
        )
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReturnStatus {
    Unset,
    Return,
    NoReturn,
}

impl ReturnStatus {
    pub fn name(self) -> &'static str {
        match self {
            ReturnStatus::Unset => "UNSET",
            ReturnStatus::Return => "RETURN",
            ReturnStatus::NoReturn => "NORETURN",
        }
    }

    /// Single assignment: only `Unset` may move, and only to a set value.
    pub fn can_transition(self, to: ReturnStatus) -> bool {
        self == ReturnStatus::Unset && to != ReturnStatus::Unset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Block {
    pub start: u64,
    pub end: u64,
    /// `None` for the leading halves of split blocks.
    pub terminator: Option<InsnKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub source: u64,
    pub target: u64,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn new(source: u64, target: u64, kind: EdgeKind) -> Self {
        Edge { source, target, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FunctionEntry {
    pub entry: u64,
    pub name: Option<String>,
    pub return_status: ReturnStatus,
    /// Came from the symbol table rather than from analysis.
    pub seed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cfg {
    /// Keyed by `(start, end)` so malformed graphs stay representable for
    /// validation.
    pub blocks: BTreeMap<(u64, u64), Block>,
    pub candidates: BTreeSet<u64>,
    pub edges: BTreeSet<Edge>,
    pub entries: BTreeMap<u64, FunctionEntry>,
}

impl Cfg {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_block(&mut self, block: Block) {
        self.blocks.insert((block.start, block.end), block);
    }

    pub fn remove_block(&mut self, start: u64) -> Option<Block> {
        let key = self.block_at(start)?;
        self.blocks.remove(&(key.start, key.end))
    }

    /// The block starting exactly at `start`.
    pub fn block_at(&self, start: u64) -> Option<Block> {
        self.blocks
            .range((start, 0)..=(start, u64::MAX))
            .next()
            .map(|(_, b)| *b)
    }

    /// The block whose range strictly contains `addr` past its start.
    pub fn block_containing(&self, addr: u64) -> Option<Block> {
        let (_, b) = self.blocks.range(..(addr, 0)).next_back()?;
        (b.start < addr && addr < b.end).then_some(*b)
    }

    /// The first block starting strictly after `addr`.
    pub fn next_block_after(&self, addr: u64) -> Option<Block> {
        self.blocks
            .range((addr, u64::MAX)..)
            .find(|(k, _)| k.0 > addr)
            .map(|(_, b)| *b)
    }

    /// The block ending exactly at `end`, if any.
    pub fn block_ending_at(&self, end: u64) -> Option<Block> {
        self.blocks.values().find(|b| b.end == end).copied()
    }

    pub fn has_block_start(&self, addr: u64) -> bool {
        self.block_at(addr).is_some()
    }

    pub fn out_edges(&self, source: u64) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.range(
            Edge::new(source, 0, EdgeKind::Direct)..=Edge::new(source, u64::MAX, EdgeKind::Fallthrough),
        )
    }

    pub fn in_edges(&self, target: u64) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.target == target)
    }

    /// Moves all edges leaving `from` so they leave `to` instead.
    pub fn move_out_edges(&mut self, from: u64, to: u64) -> usize {
        let moved: Vec<Edge> = self.out_edges(from).copied().collect();
        for e in &moved {
            self.edges.remove(e);
            self.edges.insert(Edge::new(to, e.target, e.kind));
        }
        moved.len()
    }

    /// Labels `addr` as a function entry, keeping any existing label.
    pub fn add_entry(&mut self, addr: u64, seed: bool, name: Option<String>) -> bool {
        if self.entries.contains_key(&addr) {
            return false;
        }
        self.entries.insert(
            addr,
            FunctionEntry {
                entry: addr,
                name,
                return_status: ReturnStatus::Unset,
                seed,
            },
        );
        true
    }

    /// Adds `addr` to the candidates unless a block already starts there.
    pub fn ensure_block_or_candidate(&mut self, addr: u64) -> bool {
        if self.has_block_start(addr) {
            false
        } else {
            self.candidates.insert(addr)
        }
    }

    /// Total bytes covered by blocks.
    pub fn covered_bytes(&self) -> u64 {
        self.blocks.values().map(|b| b.end - b.start).sum()
    }

    /// Incoming edges grouped by target address.
    pub fn predecessors(&self) -> BTreeMap<u64, Vec<Edge>> {
        let mut m: BTreeMap<u64, Vec<Edge>> = BTreeMap::new();
        for e in &self.edges {
            m.entry(e.target).or_default().push(*e);
        }
        m
    }

    /// Addresses (blocks and candidates) reachable from `roots` over edges
    /// accepted by `follow`.
    pub fn reachable(
        &self,
        roots: impl IntoIterator<Item = u64>,
        mut follow: impl FnMut(&Edge) -> bool,
    ) -> BTreeSet<u64> {
        let mut seen: BTreeSet<u64> = BTreeSet::new();
        let mut stack: Vec<u64> = Vec::new();
        for r in roots {
            if seen.insert(r) {
                stack.push(r);
            }
        }
        while let Some(a) = stack.pop() {
            for e in self.out_edges(a) {
                if follow(e) && seen.insert(e.target) {
                    stack.push(e.target);
                }
            }
        }
        seen
    }

    /// Start of the straight-line run containing the block at `start`: walks
    /// back over directly preceding blocks that have no terminator.
    pub fn chain_start(&self, start: u64) -> u64 {
        let mut cur = start;
        while let Some((_, b)) = self.blocks.range(..(cur, 0)).next_back() {
            if b.end == cur && b.terminator.is_none() {
                cur = b.start;
            } else {
                break;
            }
        }
        cur
    }
}

/// Merges sorted, possibly adjacent ranges into maximal disjoint ranges.
pub fn merge_ranges(ranges: impl IntoIterator<Item = (u64, u64)>) -> Vec<(u64, u64)> {
    let mut v: Vec<(u64, u64)> = ranges.into_iter().filter(|r| r.0 < r.1).collect();
    v.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}
