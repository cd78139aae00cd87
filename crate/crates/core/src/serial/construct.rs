use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::cfg::{Cfg, Edge, EdgeKind, ReturnStatus};
use crate::error::OpError;
use crate::finalize::{finalize, FinalizeReport};
use crate::image::Image;
use crate::isa::{self, InsnKind};
use crate::tables::TableRegistry;

use super::{analyze_ijmp, classify_branches, op_ber, op_cfec, op_dec, op_fei};

#[derive(Debug, Clone, Copy, Default)]
pub struct SerialOptions {
    /// Seed the worklist in reverse symbol order.
    pub reverse_seeds: bool,
}

/// Output of a full construction run.
#[derive(Debug, Clone)]
pub struct Construction {
    /// The finalized graph.
    pub cfg: Cfg,
    /// The graph at the end of traversal, after branch classification and
    /// before finalization.
    pub traversed: Cfg,
    pub tables: TableRegistry,
    pub report: FinalizeReport,
}

/// Function symbols collapsed by offset, in first-appearance order. The name
/// of an entry is the smallest mangled name at its offset.
pub(crate) fn seed_entries(image: &Image) -> Vec<(u64, String, bool)> {
    let mut order = Vec::new();
    let mut by_offset: BTreeMap<u64, (String, bool)> = BTreeMap::new();
    for s in image.func_symbols() {
        match by_offset.get_mut(&s.offset) {
            Some((name, nr)) => {
                if s.mangled < *name {
                    *name = s.mangled.clone();
                }
                *nr |= s.known_noreturn;
            }
            None => {
                order.push(s.offset);
                by_offset.insert(s.offset, (s.mangled.clone(), s.known_noreturn));
            }
        }
    }
    order
        .into_iter()
        .map(|a| {
            let (n, nr) = by_offset.remove(&a).unwrap();
            (a, n, nr)
        })
        .collect()
}

pub fn serial_construct(image: &Image) -> Result<Construction, OpError> {
    serial_construct_with(image, SerialOptions::default())
}

struct Serial<'a> {
    image: &'a Image,
    g: Cfg,
    queue: VecDeque<u64>,
    tables: TableRegistry,
}

impl Serial<'_> {
    fn enqueue_targets(&mut self, source: u64) {
        let targets: Vec<u64> = self.g.out_edges(source).map(|e| e.target).collect();
        for t in targets {
            if self.g.candidates.contains(&t) {
                self.queue.push_back(t);
            }
        }
    }

    fn step(&mut self, t: u64) -> Result<(), OpError> {
        if !self.g.candidates.contains(&t) {
            return Ok(());
        }
        let g = std::mem::take(&mut self.g);
        self.g = op_ber(g, self.image, t)?;
        let b = self.g.block_at(t).expect("resolved candidate is a block");
        match b.terminator {
            Some(InsnKind::JmpDirect(_) | InsnKind::JccDirect(_)) => {
                let g = std::mem::take(&mut self.g);
                self.g = op_dec(g, self.image, t)?;
            }
            Some(InsnKind::Call(callee)) => {
                let g = std::mem::take(&mut self.g);
                self.g = op_dec(g, self.image, t)?;
                let call = Edge::new(t, callee, EdgeKind::Call);
                if self.g.edges.contains(&call) {
                    let g = std::mem::take(&mut self.g);
                    self.g = op_fei(g, self.image, call)?;
                    if self.g.entries[&callee].return_status == ReturnStatus::Return {
                        let g = std::mem::take(&mut self.g);
                        self.g = op_cfec(g, self.image, call, ReturnStatus::Return)?;
                    }
                }
            }
            Some(InsnKind::IJmpTable { .. }) => {
                self.refresh_table(t, &self.g.predecessors())?;
            }
            _ => {}
        }
        self.enqueue_targets(t);
        Ok(())
    }

    /// Re-reads the table of the jump ending block `a`; returns whether new
    /// edges appeared.
    fn refresh_table(&mut self, a: u64, preds: &BTreeMap<u64, Vec<Edge>>) -> Result<bool, OpError> {
        let Some((base, declared, r)) = analyze_ijmp(&self.g, self.image, a, preds)? else {
            return Ok(false);
        };
        let end = self.g.block_at(a).unwrap().end;
        self.tables.record(base, declared as u64, r.effective_bound, end);
        let mut changed = false;
        for (_, t) in r.targets {
            changed |= self.g.edges.insert(Edge::new(a, t, EdgeKind::IndirectResolved));
            self.g.ensure_block_or_candidate(t);
        }
        if changed {
            self.enqueue_targets(a);
        }
        Ok(changed)
    }

    /// Labels targets of jumps preceded by a frame tear-down in their run.
    fn teardown_sweep(&mut self) -> Result<bool, OpError> {
        let mut found = BTreeSet::new();
        for b in self.g.blocks.values() {
            let Some(InsnKind::JmpDirect(t)) = b.terminator else { continue };
            if !self.image.in_text(t) || self.g.entries.contains_key(&t) {
                continue;
            }
            if isa::linear_run(self.image, self.g.chain_start(b.start))?.teardown {
                found.insert(t);
            }
        }
        for &t in &found {
            self.g.add_entry(t, false, None);
        }
        Ok(!found.is_empty())
    }

    /// Sets RETURN on every unset entry that reaches a `Ret` without crossing
    /// a call edge.
    fn status_round(&mut self) -> bool {
        let preds = self.g.predecessors();
        let mut returning: BTreeSet<u64> = BTreeSet::new();
        let mut stack: Vec<u64> = self
            .g
            .blocks
            .values()
            .filter(|b| b.terminator == Some(InsnKind::Ret))
            .map(|b| b.start)
            .collect();
        returning.extend(stack.iter().copied());
        while let Some(a) = stack.pop() {
            for e in preds.get(&a).into_iter().flatten() {
                if e.kind != EdgeKind::Call && returning.insert(e.source) {
                    stack.push(e.source);
                }
            }
        }
        let mut changed = false;
        for f in self.g.entries.values_mut() {
            if f.return_status == ReturnStatus::Unset && returning.contains(&f.entry) {
                f.return_status = ReturnStatus::Return;
                changed = true;
            }
        }
        changed
    }

    fn fallthrough_round(&mut self) -> Result<bool, OpError> {
        let ready: Vec<Edge> = self
            .g
            .edges
            .iter()
            .filter(|e| {
                e.kind == EdgeKind::Call
                    && self.g.entries.get(&e.target).map(|f| f.return_status)
                        == Some(ReturnStatus::Return)
            })
            .copied()
            .collect();
        let mut changed = false;
        for call in ready {
            let before = self.g.edges.len();
            let g = std::mem::take(&mut self.g);
            self.g = op_cfec(g, self.image, call, ReturnStatus::Return)?;
            if self.g.edges.len() != before {
                changed = true;
                self.enqueue_targets(call.source);
            }
        }
        Ok(changed)
    }

    fn table_round(&mut self) -> Result<bool, OpError> {
        let jumps: Vec<u64> = self
            .g
            .blocks
            .values()
            .filter(|b| matches!(b.terminator, Some(InsnKind::IJmpTable { .. })))
            .map(|b| b.start)
            .collect();
        let preds = self.g.predecessors();
        let mut changed = false;
        for a in jumps {
            changed |= self.refresh_table(a, &preds)?;
        }
        Ok(changed)
    }
}

/// Builds the finalized graph on one thread, applying graph operations from a
/// FIFO worklist seeded in symbol order.
pub fn serial_construct_with(image: &Image, opts: SerialOptions) -> Result<Construction, OpError> {
    let mut g = Cfg::new();
    let mut seeds = seed_entries(image);
    if opts.reverse_seeds {
        seeds.reverse();
    }
    for (a, name, noreturn) in &seeds {
        g.candidates.insert(*a);
        g.add_entry(*a, true, Some(name.clone()));
        if *noreturn {
            g.entries.get_mut(a).unwrap().return_status = ReturnStatus::NoReturn;
        }
    }
    let mut s = Serial {
        image,
        g,
        queue: seeds.iter().map(|s| s.0).collect(),
        tables: TableRegistry::new(),
    };
    loop {
        while let Some(t) = s.queue.pop_front() {
            s.step(t)?;
        }
        let mut changed = s.teardown_sweep()?;
        changed |= s.status_round();
        changed |= s.fallthrough_round()?;
        changed |= s.table_round()?;
        if !changed && s.queue.is_empty() {
            break;
        }
    }
    for f in s.g.entries.values_mut() {
        if f.return_status == ReturnStatus::Unset {
            f.return_status = ReturnStatus::NoReturn;
        }
    }
    let traversed = classify_branches(s.g);
    let (cfg, report) = finalize(traversed.clone(), image, &s.tables);
    Ok(Construction {
        cfg,
        traversed,
        tables: s.tables,
        report,
    })
}
