//! Shared concurrent graph state.
//!
//! * `cells`: one entry per block start. Claiming a start is single-winner;
//!   the winner decodes the block. Until that finishes, dependents queue on
//!   the cell.
//! * `ends`: one slot per block end, each behind its own mutex. The slot
//!   owner is the start of the block currently ending there. Slots at the end
//!   of a control-flow instruction also carry the terminator's edges and the
//!   dataflow state of the straight-line run ending there (a "node").
//! * `funcs`: one entry per function, holding its return status and the
//!   call sites waiting on it.
//!
//! A thread holds at most one cell or function entry at a time, and slot
//! mutexes are only nested in strictly decreasing end order (during splits),
//! so there is no lock cycle.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use dashmap::DashMap;
use parking_lot::Mutex;

use super::counters::Counters;
use crate::cfg::{Block, Cfg, Edge, EdgeKind, FunctionEntry, ReturnStatus};
use crate::error::AlreadySet;
use crate::image::Image;
use crate::isa::{InsnKind, LinearRun};
use crate::tables::{resolve_table, TableRegistry};

/// Something waiting for a run to be decoded or to become returning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Watch {
    /// The run ending at this address has an edge into the watched run.
    Returning(u64),
    /// The function whose entry starts the watched run.
    Function(u64),
    /// The run ending at this address branches directly into the watched run,
    /// which may end in a table jump.
    TablePred(u64),
}

#[derive(Debug, Default)]
struct Cell {
    claimed: bool,
    cfi_end: Option<u64>,
    pending: Vec<Watch>,
}

#[derive(Debug)]
pub(crate) struct TableState {
    pub base: u64,
    pub declared: u16,
    pub targets: BTreeSet<u64>,
}

#[derive(Debug)]
pub(crate) struct Node {
    pub terminator: InsnKind,
    pub edges: Vec<(u64, EdgeKind)>,
    pub returning: bool,
    watchers: Vec<Watch>,
    /// Last bound hint in the whole run, as `(address, value)`.
    pub hint: Option<(u64, u16)>,
    pub teardown: bool,
    table_preds: BTreeSet<u64>,
    pub table: Option<TableState>,
}

#[derive(Debug, Default)]
pub(crate) struct Slot {
    owner: Option<u64>,
    node: Option<Node>,
    holders: u32,
}

/// Work produced while holding locks, carried out after release.
#[derive(Debug, Default)]
pub(crate) struct Followups {
    /// Edges of a newly created terminator, with its end address.
    pub new_edges: Vec<(u64, Vec<(u64, EdgeKind)>)>,
    /// Jump targets that became function entries through a frame tear-down.
    pub teardown_targets: Vec<u64>,
    /// A table jump was created at this end.
    pub new_tables: Vec<u64>,
}

#[derive(Debug)]
struct FuncCell {
    status: ReturnStatus,
    name: Option<String>,
    seed: bool,
    waiters: Vec<u64>,
    traversing: bool,
}

/// The state shared by all workers during traversal.
pub struct ConcurrentCfgState<'i> {
    pub(crate) image: &'i Image,
    cells: DashMap<u64, Cell>,
    ends: DashMap<u64, Arc<Mutex<Slot>>>,
    funcs: DashMap<u64, FuncCell>,
    pub(crate) table_nodes: Mutex<Vec<u64>>,
    pub(crate) tables: TableRegistry,
    pub(crate) known_noreturn: BTreeSet<u64>,
    pub counters: Counters,
}

/// A locked end slot that audits exclusive access.
struct SlotGuard<'a> {
    guard: parking_lot::MutexGuard<'a, Slot>,
}

impl<'a> SlotGuard<'a> {
    fn new(m: &'a Mutex<Slot>, counters: &Counters) -> Self {
        let mut guard = m.lock();
        guard.holders += 1;
        if guard.holders != 1 {
            Counters::inc(&counters.exclusivity_violations);
        }
        SlotGuard { guard }
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        self.guard.holders -= 1;
    }
}

impl std::ops::Deref for SlotGuard<'_> {
    type Target = Slot;
    fn deref(&self) -> &Slot {
        &self.guard
    }
}

impl std::ops::DerefMut for SlotGuard<'_> {
    fn deref_mut(&mut self) -> &mut Slot {
        &mut self.guard
    }
}

fn terminator_edges(image: &Image, term: InsnKind, end: u64) -> Vec<(u64, EdgeKind)> {
    let mut v = Vec::new();
    let mut push = |t: u64, k| {
        if image.in_text(t) {
            v.push((t, k));
        }
    };
    match term {
        InsnKind::JmpDirect(t) => push(t, EdgeKind::Direct),
        InsnKind::JccDirect(t) => {
            push(t, EdgeKind::CondTaken);
            push(end, EdgeKind::CondFallthrough);
        }
        InsnKind::Call(t) => push(t, EdgeKind::Call),
        _ => {}
    }
    v
}

impl<'i> ConcurrentCfgState<'i> {
    pub fn new(image: &'i Image) -> Self {
        ConcurrentCfgState {
            image,
            cells: DashMap::new(),
            ends: DashMap::new(),
            funcs: DashMap::new(),
            table_nodes: Mutex::new(Vec::new()),
            tables: TableRegistry::new(),
            known_noreturn: BTreeSet::new(),
            counters: Counters::default(),
        }
    }

    fn slot(&self, end: u64) -> Arc<Mutex<Slot>> {
        if let Some(s) = self.ends.get(&end) {
            return s.clone();
        }
        self.ends.entry(end).or_default().clone()
    }

    fn existing_slot(&self, end: u64) -> Option<Arc<Mutex<Slot>>> {
        self.ends.get(&end).map(|s| s.clone())
    }

    /// Single-winner claim of a block start: exactly one caller per address
    /// ever gets `true` and must then decode the block.
    pub fn attempt_create_block(&self, addr: u64) -> bool {
        self.touch_cell(addr, true, &[], &mut Vec::new())
    }

    /// Claims `addr` (if `claim`) and attaches `watches` to its run, in one
    /// access to the block-start map. Watchers that must fire immediately are
    /// pushed to `fire`.
    pub(crate) fn touch_cell(
        &self,
        addr: u64,
        claim: bool,
        watches: &[Watch],
        fire: &mut Vec<Watch>,
    ) -> bool {
        Counters::inc(&self.counters.start_lookups);
        Counters::inc(&self.counters.targets_processed);
        let mut c = self.cells.entry(addr).or_default();
        let won = claim && !c.claimed;
        if won {
            c.claimed = true;
            Counters::inc(&self.counters.blocks_created);
        } else if claim {
            Counters::inc(&self.counters.block_claims_lost);
        }
        match c.cfi_end {
            Some(end) => {
                drop(c);
                for &w in watches {
                    fire.extend(self.deliver(end, w));
                }
            }
            None => c.pending.extend_from_slice(watches),
        }
        won
    }

    /// Records that the run from `addr` ends at `end` and releases anything
    /// queued on the cell. Returns watchers that must fire now.
    pub(crate) fn finish_cell(&self, addr: u64, end: u64) -> Vec<Watch> {
        Counters::inc(&self.counters.start_lookups);
        let pending = {
            let mut c = self.cells.entry(addr).or_default();
            c.cfi_end = Some(end);
            std::mem::take(&mut c.pending)
        };
        let mut fire = Vec::new();
        for w in pending {
            fire.extend(self.deliver(end, w));
        }
        fire
    }

    /// Attaches `w` to the node at `end`. Returns `Some(w)` if the node is
    /// already returning and the watcher should fire.
    fn deliver(&self, end: u64, w: Watch) -> Option<Watch> {
        let slot = self.existing_slot(end)?;
        let mut s = SlotGuard::new(&slot, &self.counters);
        let node = s.node.as_mut()?;
        match w {
            Watch::TablePred(z) => {
                node.table_preds.insert(z);
                None
            }
            _ if node.returning => Some(w),
            _ => {
                node.watchers.push(w);
                None
            }
        }
    }

    /// Registers the block `[start, run.end)`. The first registration at an
    /// end owns it and creates the terminator's edges; later ones split.
    pub(crate) fn register_block_end(&self, start: u64, run: &LinearRun, out: &mut Followups) {
        let info = RunInfo {
            terminator: run.terminator,
            hint: run.last_hint,
            teardown: run.teardown,
        };
        self.register(start, run.end, Some(info), 0, out);
    }

    /// Decodes the block at `start` and registers its end. The first caller
    /// for an end gets the terminator's edges (including resolved table
    /// targets), every later one gets nothing and splits instead.
    pub fn register_block(&self, start: u64) -> Result<Vec<Edge>, crate::error::ImageError> {
        let run = crate::isa::linear_run(self.image, start)?;
        let mut fu = Followups::default();
        self.register_block_end(start, &run, &mut fu);
        let mut created = Vec::new();
        for (_, edges) in fu.new_edges {
            created.extend(edges.into_iter().map(|(t, k)| Edge::new(start, t, k)));
        }
        for end in fu.new_tables {
            self.table_nodes.lock().push(end);
            let fresh = self.refresh_table(end);
            created.extend(fresh.into_iter().map(|t| Edge::new(start, t, EdgeKind::IndirectResolved)));
        }
        Ok(created)
    }

    fn register(&self, start: u64, end: u64, info: Option<RunInfo>, depth: u64, out: &mut Followups) {
        Counters::max(&self.counters.split_max_depth, depth);
        let slot = self.slot(end);
        let mut s = SlotGuard::new(&slot, &self.counters);
        if let Some(info) = info {
            self.merge_run(&mut s, end, info, out);
        }
        match s.owner {
            None => {
                s.owner = Some(start);
                Counters::inc(&self.counters.ends_registered);
            }
            Some(w) if w == start => {}
            Some(w) => {
                Counters::inc(&self.counters.end_registration_losses);
                Counters::inc(&self.counters.splits);
                // The later start keeps this end; the earlier one now ends
                // where the later one begins.
                let (earlier, later) = if start > w { (w, start) } else { (start, w) };
                if start > w {
                    s.owner = Some(start);
                    Counters::inc(&self.counters.edges_moved);
                }
                if later >= end {
                    Counters::inc(&self.counters.split_monotonic_violations);
                    return;
                }
                self.register(earlier, later, None, depth + 1, out);
            }
        }
    }

    fn merge_run(&self, s: &mut Slot, end: u64, info: RunInfo, out: &mut Followups) {
        match &mut s.node {
            Some(node) => {
                if info.hint.map(|h| h.0) > node.hint.map(|h| h.0) {
                    node.hint = info.hint;
                }
                if info.teardown && !node.teardown {
                    node.teardown = true;
                    if let InsnKind::JmpDirect(t) = node.terminator {
                        if self.image.in_text(t) {
                            out.teardown_targets.push(t);
                        }
                    }
                }
            }
            None if s.owner.is_none() => {
                let edges = terminator_edges(self.image, info.terminator, end);
                let mut node = Node {
                    terminator: info.terminator,
                    edges: edges.clone(),
                    returning: info.terminator == InsnKind::Ret,
                    watchers: Vec::new(),
                    hint: info.hint,
                    teardown: info.teardown,
                    table_preds: BTreeSet::new(),
                    table: None,
                };
                if info.teardown {
                    if let InsnKind::JmpDirect(t) = info.terminator {
                        if self.image.in_text(t) {
                            out.teardown_targets.push(t);
                        }
                    }
                }
                if let InsnKind::IJmpTable { base, bound_hint } = info.terminator {
                    node.table = Some(TableState {
                        base,
                        declared: bound_hint,
                        targets: BTreeSet::new(),
                    });
                    out.new_tables.push(end);
                }
                s.node = Some(node);
                out.new_edges.push((end, edges));
            }
            // An end first registered as a split point; only reachable with
            // misaligned code.
            None => {}
        }
    }

    /// Re-reads the table of the jump ending at `end` from the current
    /// predecessor hints. Returns the new targets.
    pub(crate) fn refresh_table(&self, end: u64) -> Vec<u64> {
        Counters::inc(&self.counters.table_refreshes);
        let Some(slot) = self.existing_slot(end) else { return Vec::new() };
        let (base, declared, preds, before) = {
            let s = SlotGuard::new(&slot, &self.counters);
            let Some(node) = s.node.as_ref() else { return Vec::new() };
            let Some(t) = node.table.as_ref() else { return Vec::new() };
            (t.base, t.declared, node.table_preds.clone(), t.targets.clone())
        };
        let hints: Vec<u16> = preds
            .iter()
            .filter_map(|&z| {
                let slot = self.existing_slot(z)?;
                let s = SlotGuard::new(&slot, &self.counters);
                s.node.as_ref()?.hint.map(|h| h.1)
            })
            .collect();
        let r = resolve_table(self.image, base, declared, hints);
        self.tables.record(base, declared as u64, r.effective_bound, end);
        let found = r.target_set();
        if !found.is_superset(&before) {
            Counters::inc(&self.counters.table_shrinks);
        }
        let mut s = SlotGuard::new(&slot, &self.counters);
        let node = s.node.as_mut().unwrap();
        let t = node.table.as_mut().unwrap();
        let fresh: Vec<u64> = found.into_iter().filter(|a| t.targets.insert(*a)).collect();
        node.edges.extend(fresh.iter().map(|&a| (a, EdgeKind::IndirectResolved)));
        fresh
    }

    /// Appends a call fall-through edge to the call ending at `end`. Returns
    /// false if it was already present or would leave text.
    pub(crate) fn add_call_fallthrough(&self, end: u64) -> bool {
        if !self.image.in_text(end) {
            return false;
        }
        let Some(slot) = self.existing_slot(end) else { return false };
        let mut s = SlotGuard::new(&slot, &self.counters);
        let Some(node) = s.node.as_mut() else { return false };
        if node.edges.contains(&(end, EdgeKind::CallFallthrough)) {
            return false;
        }
        node.edges.push((end, EdgeKind::CallFallthrough));
        true
    }

    /// Marks the run ending at `end` returning; returns the watchers to fire.
    pub(crate) fn mark_returning(&self, end: u64) -> Vec<Watch> {
        let Some(slot) = self.existing_slot(end) else { return Vec::new() };
        let mut s = SlotGuard::new(&slot, &self.counters);
        match s.node.as_mut() {
            Some(node) if !node.returning => {
                node.returning = true;
                std::mem::take(&mut node.watchers)
            }
            _ => Vec::new(),
        }
    }

    /// Single-winner function creation.
    pub fn attempt_create_function(&self, addr: u64, name: Option<String>, seed: bool) -> bool {
        let mut won = false;
        self.funcs.entry(addr).or_insert_with(|| {
            won = true;
            FuncCell {
                status: if self.known_noreturn.contains(&addr) {
                    ReturnStatus::NoReturn
                } else {
                    ReturnStatus::Unset
                },
                name,
                seed,
                waiters: Vec::new(),
                traversing: false,
            }
        });
        Counters::inc(if won {
            &self.counters.functions_created
        } else {
            &self.counters.function_claims_lost
        });
        won
    }

    pub fn status(&self, f: u64) -> Option<ReturnStatus> {
        self.funcs.get(&f).map(|c| c.status)
    }

    pub(crate) fn set_traversing(&self, f: u64, on: bool) {
        if let Some(mut c) = self.funcs.get_mut(&f) {
            c.traversing = on;
        }
    }

    /// Registers the call ending at `site` as waiting on `callee`. Returns the
    /// callee's status at that moment; on `Unset` the waiter is queued.
    pub(crate) fn wait_on(&self, callee: u64, site: u64) -> ReturnStatus {
        let Some(mut c) = self.funcs.get_mut(&callee) else {
            return ReturnStatus::NoReturn;
        };
        if c.status == ReturnStatus::Unset {
            c.waiters.push(site);
            Counters::inc(&self.counters.waiters_registered);
            let now = self.counters.waiters_outstanding.fetch_add(1, Ordering::Relaxed) + 1;
            Counters::max(&self.counters.waiters_peak, now);
        }
        c.status
    }

    /// Sets the status of `f` once. On RETURN the queued call sites are
    /// returned so their fall-through edges can be created.
    pub fn update_return_status(&self, f: u64, status: ReturnStatus) -> Result<Vec<u64>, AlreadySet> {
        let Some(mut c) = self.funcs.get_mut(&f) else {
            return Err(AlreadySet(f));
        };
        if !c.status.can_transition(status) {
            Counters::inc(&self.counters.already_set_errors);
            return Err(AlreadySet(f));
        }
        c.status = status;
        if c.traversing && status == ReturnStatus::Return {
            Counters::inc(&self.counters.early_returns);
        }
        let waiters = std::mem::take(&mut c.waiters);
        self.counters
            .waiters_outstanding
            .fetch_sub(waiters.len() as u64, Ordering::Relaxed);
        Ok(if status == ReturnStatus::Return { waiters } else { Vec::new() })
    }

    /// Sets every function still unset to NORETURN.
    pub fn resolve_status_cycles(&self) -> usize {
        let unset: Vec<u64> = self
            .funcs
            .iter()
            .filter(|c| c.status == ReturnStatus::Unset)
            .map(|c| *c.key())
            .collect();
        let mut n = 0;
        for f in unset {
            let still = self.funcs.get(&f).is_some_and(|c| c.status == ReturnStatus::Unset);
            if still && self.update_return_status(f, ReturnStatus::NoReturn).is_ok() {
                n += 1;
            }
        }
        n
    }

    pub(crate) fn waiters_outstanding(&self) -> u64 {
        self.counters.waiters_outstanding.load(Ordering::Relaxed)
    }

    /// The graph as currently recorded.
    pub fn snapshot_cfg(&self) -> Cfg {
        let mut g = Cfg::new();
        for e in self.ends.iter() {
            let end = *e.key();
            let s = e.value().lock();
            let Some(owner) = s.owner else { continue };
            match &s.node {
                Some(node) => {
                    g.insert_block(Block { start: owner, end, terminator: Some(node.terminator) });
                    for &(t, k) in &node.edges {
                        g.edges.insert(Edge::new(owner, t, k));
                    }
                }
                None => {
                    g.insert_block(Block { start: owner, end, terminator: None });
                    g.edges.insert(Edge::new(owner, end, EdgeKind::Fallthrough));
                }
            }
        }
        let mut entries = BTreeMap::new();
        for f in self.funcs.iter() {
            entries.insert(
                *f.key(),
                FunctionEntry {
                    entry: *f.key(),
                    name: f.name.clone(),
                    return_status: f.status,
                    seed: f.seed,
                },
            );
        }
        g.entries = entries;
        for c in self.cells.iter() {
            if c.claimed && !g.has_block_start(*c.key()) {
                g.candidates.insert(*c.key());
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy)]
struct RunInfo {
    terminator: InsnKind,
    hint: Option<(u64, u16)>,
    teardown: bool,
}
