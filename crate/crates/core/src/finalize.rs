//! The decreasing phase: trim over-read jump tables, settle tail-call labels
//! against function boundaries, and prune entries nothing calls.
//!
//! Every rule is evaluated over a snapshot of the graph and committed in
//! canonical edge order, so the result does not depend on how traversal was
//! scheduled.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::cfg::{Cfg, Edge, EdgeKind};
use crate::image::Image;
use crate::serial::{op_er_many, prune_unreachable};
use crate::tables::{table_entries, TableRegistry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionBoundary {
    pub entry: u64,
    /// Start addresses of the blocks reachable from `entry` over
    /// intra-procedural edges.
    pub blocks: BTreeSet<u64>,
}

/// How many times each branch `(source, target)` has changed its tail-call
/// label. No branch is flipped twice.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlipLedger {
    counts: BTreeMap<(u64, u64), u32>,
}

impl FlipLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, source: u64, target: u64) -> u32 {
        self.counts.get(&(source, target)).copied().unwrap_or(0)
    }

    fn record(&mut self, source: u64, target: u64) {
        *self.counts.entry((source, target)).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| c as u64).sum()
    }

    pub fn max_count(&self) -> u32 {
        self.counts.values().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FinalizeReport {
    pub tables_trimmed: usize,
    pub edges_trimmed: usize,
    /// Flips by rule: called target, shared boundary, sole incoming edge.
    pub flips_by_rule: [usize; 3],
    pub ledger: FlipLedger,
    /// Boundary/correction rounds run.
    pub iterations: usize,
    pub entries_pruned: usize,
    /// Edges in the graph handed to finalization.
    pub input_edges: usize,
}

/// Trims each table whose extent runs into the next table's base, then
/// removes the indirect edges that only the trimmed entries justified.
pub fn trim_overlapping_tables(
    g: Cfg,
    image: &Image,
    registry: &TableRegistry,
) -> (Cfg, usize, usize) {
    let descs = registry.descriptors();
    let end_to_start: BTreeMap<u64, u64> = g.blocks.values().map(|b| (b.end, b.start)).collect();
    let mut doomed = BTreeSet::new();
    let mut trimmed = 0;
    for (i, d) in descs.iter().enumerate() {
        let mut bound = d.effective_bound;
        if let Some(next) = descs.get(i + 1) {
            if d.base + 4 * bound > next.base {
                bound = (next.base - d.base) / 4;
                trimmed += 1;
            }
        }
        registry.set_final(d.base, bound);
        if bound == d.effective_bound {
            continue;
        }
        let entries = table_entries(image, d.base, d.effective_bound);
        let keep: BTreeSet<u64> = entries.iter().filter(|e| e.0 < bound).map(|e| e.1).collect();
        for &(_, t) in entries.iter().filter(|e| e.0 >= bound) {
            if keep.contains(&t) {
                continue;
            }
            for owner in &d.owner_ends {
                if let Some(&s) = end_to_start.get(owner) {
                    let e = Edge::new(s, t, EdgeKind::IndirectResolved);
                    if g.edges.contains(&e) {
                        doomed.insert(e);
                    }
                }
            }
        }
    }
    let doomed: Vec<Edge> = doomed.into_iter().collect();
    let n = doomed.len();
    (op_er_many(g, &doomed), trimmed, n)
}

/// One boundary per entry, computed in parallel.
pub fn assign_function_boundaries(g: &Cfg) -> Vec<FunctionBoundary> {
    let entries: Vec<u64> = g.entries.keys().copied().collect();
    entries
        .par_iter()
        .map(|&f| {
            let mut blocks = g.reachable([f], |e| e.kind.is_intraprocedural());
            blocks.retain(|&a| g.has_block_start(a));
            FunctionBoundary { entry: f, blocks }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    CalledTarget,
    SharedBoundary,
    SoleIncoming,
}

/// Applies the three tail-call rules once over a snapshot.
///
/// 1. A direct jump to an address that is also reached by a call or a tail
///    call becomes a tail call.
/// 2. A tail call whose target lies in a boundary that also holds its source
///    becomes a direct jump.
/// 3. A tail call that is the only way into its target becomes a direct jump,
///    and the target loses a heuristic entry label.
///
/// The lowest-numbered applicable rule wins. Branches already in the ledger
/// are left alone.
pub fn correct_tail_calls(
    mut g: Cfg,
    boundaries: &[FunctionBoundary],
    ledger: &mut FlipLedger,
) -> (Cfg, bool, [usize; 3]) {
    let preds = g.predecessors();
    let mut member_of: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, b) in boundaries.iter().enumerate() {
        for &a in &b.blocks {
            member_of.entry(a).or_default().push(i);
        }
    }
    let mut decisions = Vec::new();
    for e in &g.edges {
        if !matches!(e.kind, EdgeKind::Direct | EdgeKind::TailCall) || ledger.count(e.source, e.target) > 0 {
            continue;
        }
        let incoming = preds.get(&e.target).map(Vec::as_slice).unwrap_or(&[]);
        let rule = if e.kind == EdgeKind::Direct {
            incoming
                .iter()
                .any(|x| x != e && matches!(x.kind, EdgeKind::Call | EdgeKind::TailCall))
                .then_some(Rule::CalledTarget)
        } else if member_of
            .get(&e.source)
            .into_iter()
            .flatten()
            .any(|&i| boundaries[i].blocks.contains(&e.target))
        {
            Some(Rule::SharedBoundary)
        } else if incoming.len() == 1 {
            Some(Rule::SoleIncoming)
        } else {
            None
        };
        if let Some(r) = rule {
            decisions.push((*e, r));
        }
    }
    let mut by_rule = [0; 3];
    for &(e, r) in &decisions {
        let kind = match e.kind {
            EdgeKind::Direct => EdgeKind::TailCall,
            _ => EdgeKind::Direct,
        };
        g.edges.remove(&e);
        g.edges.insert(Edge::new(e.source, e.target, kind));
        ledger.record(e.source, e.target);
        let idx = match r {
            Rule::CalledTarget => 0,
            Rule::SharedBoundary => 1,
            Rule::SoleIncoming => 2,
        };
        by_rule[idx] += 1;
        if r == Rule::SoleIncoming && g.entries.get(&e.target).is_some_and(|f| !f.seed) {
            g.entries.remove(&e.target);
        }
    }
    (g, !decisions.is_empty(), by_rule)
}

/// Removes heuristic entries that no call or tail call reaches, and the code
/// only they reached. Returns how many entries went.
pub fn prune_functions(mut g: Cfg) -> (Cfg, usize) {
    let mut removed = 0;
    loop {
        let called: BTreeSet<u64> = g
            .edges
            .iter()
            .filter(|e| matches!(e.kind, EdgeKind::Call | EdgeKind::TailCall))
            .map(|e| e.target)
            .collect();
        let before = g.entries.len();
        g.entries.retain(|a, f| f.seed || called.contains(a));
        let n = before - g.entries.len();
        if n == 0 {
            return (g, removed);
        }
        removed += n;
        g = prune_unreachable(g);
    }
}

/// Runs the whole decreasing phase. Records final table bounds in `registry`.
pub fn finalize(g: Cfg, image: &Image, registry: &TableRegistry) -> (Cfg, FinalizeReport) {
    let mut report = FinalizeReport {
        input_edges: g.edges.len(),
        ..Default::default()
    };
    let (mut g, trimmed, removed) = trim_overlapping_tables(g, image, registry);
    report.tables_trimmed = trimmed;
    report.edges_trimmed = removed;
    loop {
        loop {
            report.iterations += 1;
            let boundaries = assign_function_boundaries(&g);
            let (next, changed, by_rule) = correct_tail_calls(g, &boundaries, &mut report.ledger);
            g = next;
            for (acc, n) in report.flips_by_rule.iter_mut().zip(by_rule) {
                *acc += n;
            }
            if !changed {
                break;
            }
        }
        let (next, pruned) = prune_functions(g);
        g = next;
        report.entries_pruned += pruned;
        if pruned == 0 {
            break;
        }
    }
    (g, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::Block;
    use crate::isa::InsnKind;

    fn blk(g: &mut Cfg, s: u64, e: u64, t: Option<InsnKind>) {
        g.insert_block(Block { start: s, end: e, terminator: t });
    }

    #[test]
    fn sole_incoming_tail_call_is_outlined_code() {
        let mut g = Cfg::new();
        blk(&mut g, 0x10, 0x20, Some(InsnKind::JmpDirect(0x40)));
        blk(&mut g, 0x40, 0x41, Some(InsnKind::Halt));
        g.edges.insert(Edge::new(0x10, 0x40, EdgeKind::TailCall));
        g.add_entry(0x10, true, None);
        g.add_entry(0x40, false, None);
        let (out, report) = finalize(g, &dummy_image(), &TableRegistry::new());
        assert!(out.edges.contains(&Edge::new(0x10, 0x40, EdgeKind::Direct)));
        assert!(!out.entries.contains_key(&0x40));
        assert_eq!(report.flips_by_rule, [0, 0, 1]);
    }

    #[test]
    fn flip_once() {
        let mut ledger = FlipLedger::new();
        let mut g = Cfg::new();
        blk(&mut g, 0x10, 0x20, Some(InsnKind::JmpDirect(0x40)));
        blk(&mut g, 0x40, 0x41, Some(InsnKind::Ret));
        g.edges.insert(Edge::new(0x10, 0x40, EdgeKind::TailCall));
        g.add_entry(0x10, true, None);
        g.add_entry(0x40, true, None);
        let b = assign_function_boundaries(&g);
        let (g, changed, _) = correct_tail_calls(g, &b, &mut ledger);
        assert!(changed);
        // rule 1 would now flip it back if the target gained a caller
        let mut g = g;
        blk(&mut g, 0x50, 0x55, Some(InsnKind::Call(0x40)));
        g.edges.insert(Edge::new(0x50, 0x40, EdgeKind::Call));
        let b = assign_function_boundaries(&g);
        let (_, changed, _) = correct_tail_calls(g, &b, &mut ledger);
        assert!(!changed);
        assert_eq!(ledger.max_count(), 1);
    }

    #[test]
    fn shared_block_in_both_boundaries() {
        let mut g = Cfg::new();
        blk(&mut g, 0x10, 0x15, Some(InsnKind::JmpDirect(0x30)));
        blk(&mut g, 0x20, 0x25, Some(InsnKind::JmpDirect(0x30)));
        blk(&mut g, 0x30, 0x31, Some(InsnKind::Ret));
        g.edges.insert(Edge::new(0x10, 0x30, EdgeKind::Direct));
        g.edges.insert(Edge::new(0x20, 0x30, EdgeKind::Direct));
        g.add_entry(0x10, true, None);
        g.add_entry(0x20, true, None);
        let b = assign_function_boundaries(&g);
        assert!(b.iter().all(|f| f.blocks.contains(&0x30)));
        let (out, _) = finalize(g.clone(), &dummy_image(), &TableRegistry::new());
        assert_eq!(out, g);
    }

    fn dummy_image() -> Image {
        Image::new(0, vec![0; 0x100], 0x1000, vec![], vec![]).unwrap()
    }
}
