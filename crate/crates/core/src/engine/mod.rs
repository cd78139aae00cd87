//! The multi-worker constructor.
//!
//! Stages: seed functions from the symbol table in parallel; traverse, one
//! task per function, until no task is left and table refreshes find nothing
//! new; mark functions still unset as non-returning; then finalize.
//!
//! Everything traversal records is order-insensitive: block boundaries are
//! determined by the set of block starts, return statuses by reachability,
//! and table bounds by the set of predecessors. The finalized graph is
//! therefore the same for any worker count and any interleaving.

mod cache;
mod counters;
mod state;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rayon::prelude::*;

pub use counters::{CounterSnapshot, Counters};
pub use state::ConcurrentCfgState;

use cache::{decode_run, LocalCache};
use state::{Followups, Watch};

use crate::cfg::{Cfg, EdgeKind, ReturnStatus};
use crate::error::OpError;
use crate::finalize::{finalize, FinalizeReport};
use crate::image::{Image, SymbolKind};
use crate::serial::classify_branches;
use crate::symtab::IndexedSymbols;
use crate::tables::TableRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Spawn a task as soon as a function is discovered.
    #[default]
    Tasks,
    /// Traverse in rounds: all known functions in parallel, then the
    /// functions they discovered, and so on.
    LevelSync,
}

#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub workers: usize,
    pub schedule: Schedule,
    pub thread_cache: bool,
}

impl EngineConfig {
    pub fn new(workers: usize) -> Self {
        EngineConfig {
            workers: workers.max(1),
            schedule: Schedule::Tasks,
            thread_cache: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTimings {
    pub init: Duration,
    pub traversal: Duration,
    pub finalization: Duration,
}

#[derive(Debug, Clone)]
pub struct EngineRun {
    pub cfg: Cfg,
    /// Graph at the end of traversal, after branch classification.
    pub traversed: Cfg,
    pub tables: TableRegistry,
    pub report: FinalizeReport,
    pub counters: CounterSnapshot,
    pub timings: StageTimings,
}

#[derive(Debug)]
enum Task {
    Function(u64),
    Table(u64),
}

#[derive(Default)]
struct Ctx {
    work: Vec<u64>,
    fire: Vec<Watch>,
    tables: Vec<u64>,
    spawn: Vec<Task>,
}

struct Engine<'i> {
    state: ConcurrentCfgState<'i>,
    config: EngineConfig,
    caches: Vec<Mutex<LocalCache>>,
    level_queue: Mutex<Vec<Task>>,
    tables_changed: AtomicBool,
}

/// Builds the finalized graph of `image` with `workers` threads.
pub fn construct(image: &Image, workers: usize) -> Result<EngineRun, OpError> {
    construct_with(image, EngineConfig::new(workers))
}

pub fn construct_with(image: &Image, config: EngineConfig) -> Result<EngineRun, OpError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .expect("failed to start worker pool");
    pool.install(|| run(image, config))
}

fn run(image: &Image, config: EngineConfig) -> Result<EngineRun, OpError> {
    let t0 = Instant::now();
    let symbols = IndexedSymbols::new();
    image.symbols.par_iter().for_each(|s| {
        symbols.insert(s.clone()).expect("table is still open");
    });
    symbols.seal();
    let mut seeds: BTreeMap<u64, (String, bool)> = BTreeMap::new();
    for s in symbols.all().expect("sealed") {
        if s.kind != SymbolKind::Func {
            continue;
        }
        let e = seeds.entry(s.offset).or_insert_with(|| (s.mangled.clone(), false));
        e.1 |= s.known_noreturn;
    }
    let mut state = ConcurrentCfgState::new(image);
    state.known_noreturn = seeds.iter().filter(|s| s.1 .1).map(|s| *s.0).collect();
    let engine = Engine {
        state,
        config,
        caches: (0..config.workers.max(1)).map(|_| Mutex::new(LocalCache::default())).collect(),
        level_queue: Mutex::new(Vec::new()),
        tables_changed: AtomicBool::new(false),
    };
    let seeds: Vec<(u64, String)> = seeds.into_iter().map(|(a, (n, _))| (a, n)).collect();
    seeds.par_iter().for_each(|(a, n)| {
        engine.state.attempt_create_function(*a, Some(n.clone()), true);
    });
    let t1 = Instant::now();

    engine.run_phase(seeds.iter().map(|s| Task::Function(s.0)).collect());
    let c = &engine.state.counters;
    c.waiters_at_first_quiescence
        .store(engine.state.waiters_outstanding(), Ordering::Relaxed);
    loop {
        Counters::inc(&c.quiescence_rounds);
        engine.tables_changed.store(false, Ordering::Relaxed);
        let tables: Vec<u64> = engine.state.table_nodes.lock().clone();
        engine.run_phase(tables.into_iter().map(Task::Table).collect());
        if !engine.tables_changed.load(Ordering::Relaxed) {
            break;
        }
    }
    engine.state.resolve_status_cycles();
    let traversed = classify_branches(engine.state.snapshot_cfg());
    let t2 = Instant::now();

    let tables = engine.state.tables.clone();
    let (cfg, report) = finalize(traversed.clone(), image, &tables);
    let t3 = Instant::now();
    Ok(EngineRun {
        cfg,
        traversed,
        tables,
        report,
        counters: engine.state.counters.snapshot(),
        timings: StageTimings {
            init: t1 - t0,
            traversal: t2 - t1,
            finalization: t3 - t2,
        },
    })
}

impl<'i> Engine<'i> {
    fn run_phase(&self, tasks: Vec<Task>) {
        match self.config.schedule {
            Schedule::Tasks => rayon::scope(|s| {
                for t in tasks {
                    s.spawn(move |s| self.run_scoped(s, t));
                }
            }),
            Schedule::LevelSync => {
                *self.level_queue.lock() = tasks;
                loop {
                    let batch = std::mem::take(&mut *self.level_queue.lock());
                    if batch.is_empty() {
                        break;
                    }
                    batch
                        .into_par_iter()
                        .for_each(|t| self.run_task(t, &|t| self.level_queue.lock().push(t)));
                }
            }
        }
    }

    fn run_scoped<'s>(&'s self, s: &rayon::Scope<'s>, task: Task)
    where
        'i: 's,
    {
        self.run_task(task, &|t| s.spawn(move |s| self.run_scoped(s, t)));
    }

    fn run_task(&self, task: Task, sink: &dyn Fn(Task)) {
        let mut ctx = Ctx::default();
        let mut traversing = None;
        match task {
            Task::Function(f) => {
                self.state.set_traversing(f, true);
                traversing = Some(f);
                let watch: &[Watch] = if self.state.status(f) == Some(ReturnStatus::Unset) {
                    &[Watch::Function(f)]
                } else {
                    &[]
                };
                if self.state.touch_cell(f, true, watch, &mut ctx.fire) {
                    ctx.work.push(f);
                }
            }
            Task::Table(end) => {
                if self.refresh(end, &mut ctx) {
                    self.tables_changed.store(true, Ordering::Relaxed);
                }
            }
        }
        loop {
            self.fire_all(&mut ctx);
            for t in ctx.spawn.drain(..) {
                sink(t);
            }
            if let Some(x) = ctx.work.pop() {
                self.parse(x, &mut ctx);
                continue;
            }
            for end in std::mem::take(&mut ctx.tables) {
                self.refresh(end, &mut ctx);
            }
            if ctx.work.is_empty() && ctx.fire.is_empty() && ctx.spawn.is_empty() {
                break;
            }
        }
        if let Some(f) = traversing {
            self.state.set_traversing(f, false);
        }
    }

    fn decode(&self, start: u64) -> crate::isa::LinearRun {
        let c = &self.state.counters;
        let (run, hit) = if self.config.thread_cache {
            let idx = rayon::current_thread_index().unwrap_or(0) % self.caches.len();
            let mut cache = self.caches[idx].lock();
            decode_run(self.state.image, start, Some(&mut cache))
        } else {
            decode_run(self.state.image, start, None)
        };
        if hit {
            Counters::inc(&c.cache_hits);
        }
        c.instructions_decoded.fetch_add(run.decoded, Ordering::Relaxed);
        Counters::inc(&c.cfis_decoded);
        run
    }

    /// Decodes the block claimed at `x`, registers its end, and follows
    /// whatever that creates.
    fn parse(&self, x: u64, ctx: &mut Ctx) {
        let run = self.decode(x);
        let mut fu = Followups::default();
        self.state.register_block_end(x, &run, &mut fu);
        ctx.fire.extend(self.state.finish_cell(x, run.end));
        for (end, edges) in fu.new_edges {
            self.process_edges(end, &edges, ctx);
        }
        for t in fu.teardown_targets {
            self.spawn_function(t, ctx);
        }
        for end in fu.new_tables {
            self.state.table_nodes.lock().push(end);
            ctx.tables.push(end);
            self.refresh(end, ctx);
        }
    }

    fn process_edges(&self, end: u64, edges: &[(u64, EdgeKind)], ctx: &mut Ctx) {
        for &(t, kind) in edges {
            if kind == EdgeKind::Call {
                self.spawn_function(t, ctx);
                if self.state.wait_on(t, end) == ReturnStatus::Return {
                    self.fallthrough(end, ctx);
                }
                continue;
            }
            let watches: &[Watch] = if kind.is_direct_branch() {
                &[Watch::Returning(end), Watch::TablePred(end)]
            } else {
                &[Watch::Returning(end)]
            };
            if self.state.touch_cell(t, true, watches, &mut ctx.fire) {
                ctx.work.push(t);
            }
        }
    }

    fn fallthrough(&self, end: u64, ctx: &mut Ctx) {
        if self.state.add_call_fallthrough(end) {
            self.process_edges(end, &[(end, EdgeKind::CallFallthrough)], ctx);
        }
    }

    fn spawn_function(&self, f: u64, ctx: &mut Ctx) {
        if self.state.attempt_create_function(f, None, false) {
            ctx.spawn.push(Task::Function(f));
        }
    }

    fn fire_all(&self, ctx: &mut Ctx) {
        while let Some(w) = ctx.fire.pop() {
            match w {
                Watch::Returning(z) => ctx.fire.extend(self.state.mark_returning(z)),
                Watch::Function(f) => match self.state.update_return_status(f, ReturnStatus::Return) {
                    Ok(sites) => {
                        for site in sites {
                            self.fallthrough(site, ctx);
                        }
                    }
                    Err(e) => debug_assert!(false, "{e}"),
                },
                Watch::TablePred(_) => {}
            }
        }
    }

    fn refresh(&self, end: u64, ctx: &mut Ctx) -> bool {
        let fresh = self.state.refresh_table(end);
        let edges: Vec<(u64, EdgeKind)> = fresh.iter().map(|&t| (t, EdgeKind::IndirectResolved)).collect();
        self.process_edges(end, &edges, ctx);
        !fresh.is_empty()
    }
}
