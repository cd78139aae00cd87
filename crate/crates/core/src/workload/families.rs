use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::asm::{Asm, Label};
use crate::isa::InsnKind;

/// A function entry other code may call, and whether calling it returns.
pub(super) type Callable = (Label, bool);

fn filler(a: &mut Asm, r: &mut ChaCha8Rng) {
    for _ in 0..r.gen_range(0..=2) {
        a.alu(r.gen());
    }
}

/// A known non-returning function (`abort`).
pub(super) fn abort(a: &mut Asm, name: &str) -> Label {
    let f = a.mark();
    a.op(InsnKind::Halt);
    let end = a.mark();
    a.symbol(f, name, true);
    a.function(f, vec![(f, end)]);
    f
}

/// `k` functions that branch conditionally into one common tail.
pub(super) fn shared_code(a: &mut Asm, r: &mut ChaCha8Rng, p: &str, k: u32) -> Vec<Callable> {
    let shared = a.label();
    let mut fs = Vec::new();
    for i in 0..k {
        let f = a.mark();
        filler(a, r);
        a.jcc(shared);
        a.alu(r.gen());
        a.op(InsnKind::Ret);
        let end = a.mark();
        a.symbol(f, format!("{p}{i}"), false);
        fs.push((f, end));
    }
    a.bind(shared);
    a.alu(r.gen());
    filler(a, r);
    a.op(InsnKind::Ret);
    let shared_end = a.mark();
    for &(f, end) in &fs {
        a.function(f, vec![(f, end), (shared, shared_end)]);
    }
    fs.into_iter().map(|(f, _)| (f, true)).collect()
}

/// `f0` calls `f1` calls ... `f{depth}`. The deepest halts, optionally after
/// a conditional early return that makes the whole chain returning.
pub(super) fn noreturn_chain(a: &mut Asm, r: &mut ChaCha8Rng, p: &str, depth: u32, early_ret: bool) -> Vec<Callable> {
    let fs: Vec<Label> = (0..=depth).map(|_| a.label()).collect();
    for i in 0..depth as usize {
        a.bind(fs[i]);
        filler(a, r);
        a.call(fs[i + 1]);
        let site = a.mark();
        a.op(InsnKind::Ret);
        let end = a.mark();
        if early_ret {
            a.function(fs[i], vec![(fs[i], end)]);
        } else {
            a.function(fs[i], vec![(fs[i], site)]);
            a.noreturn_call(site);
        }
    }
    let last = fs[depth as usize];
    a.bind(last);
    filler(a, r);
    if early_ret {
        let l = a.label();
        a.jcc(l);
        a.op(InsnKind::Ret);
        a.bind(l);
    }
    a.alu(r.gen());
    a.op(InsnKind::Halt);
    let end = a.mark();
    a.function(last, vec![(last, end)]);
    for (i, &f) in fs.iter().enumerate() {
        a.symbol(f, format!("{p}{i}"), false);
    }
    fs.into_iter().map(|f| (f, early_ret)).collect()
}

/// `k` functions calling each other in a ring; none can return.
pub(super) fn noreturn_cycle(a: &mut Asm, r: &mut ChaCha8Rng, p: &str, k: u32) -> Vec<Callable> {
    let fs: Vec<Label> = (0..k).map(|_| a.label()).collect();
    for i in 0..k as usize {
        a.bind(fs[i]);
        filler(a, r);
        a.call(fs[(i + 1) % k as usize]);
        let site = a.mark();
        a.op(InsnKind::Ret);
        a.function(fs[i], vec![(fs[i], site)]);
        a.noreturn_call(site);
        a.symbol(fs[i], format!("{p}{i}"), false);
    }
    fs.into_iter().map(|f| (f, false)).collect()
}

/// `A` tears down its frame and jumps to an unnamed `T`; `B` jumps to `T`
/// without tearing down.
pub(super) fn tailcall_ambiguous(a: &mut Asm, r: &mut ChaCha8Rng, p: &str) -> Vec<Callable> {
    let t = a.label();
    let fa = a.mark();
    filler(a, r);
    a.alu(r.gen());
    a.op(InsnKind::FrameTeardown);
    a.jmp(t);
    let site_a = a.mark();
    let fb = a.mark();
    filler(a, r);
    a.alu(r.gen());
    a.alu(r.gen());
    a.jmp(t);
    let site_b = a.mark();
    a.bind(t);
    a.alu(r.gen());
    a.op(InsnKind::Ret);
    let t_end = a.mark();
    a.symbol(fa, format!("{p}A"), false);
    a.symbol(fb, format!("{p}B"), false);
    a.function(fa, vec![(fa, site_a)]);
    a.function(fb, vec![(fb, site_b)]);
    a.function(t, vec![(t, t_end)]);
    a.tail_call(site_a, t);
    a.tail_call(site_b, t);
    vec![(fa, true), (fb, true)]
}

/// A switch over `cases` entries whose table jump declares `declared`
/// entries, with an optional range check of `hint` entries before it.
pub(super) fn switch(
    a: &mut Asm,
    r: &mut ChaCha8Rng,
    name: &str,
    cases: u32,
    declared: u32,
    hint: Option<u32>,
) -> Callable {
    let sw = a.mark();
    filler(a, r);
    if let Some(h) = hint {
        a.op(InsnKind::BoundHint(h as u16));
    }
    let default = a.label();
    let join = a.label();
    a.jcc(default);
    let labels: Vec<Label> = (0..cases).map(|_| a.label()).collect();
    let base = a.table(&labels);
    a.op(InsnKind::IJmpTable { base, bound_hint: declared as u16 });
    for &c in &labels {
        a.bind(c);
        a.alu(r.gen());
        a.jmp(join);
    }
    a.bind(default);
    a.alu(r.gen());
    a.bind(join);
    a.op(InsnKind::Ret);
    let end = a.mark();
    a.symbol(sw, name, false);
    a.function(sw, vec![(sw, end)]);
    a.true_table(base, cases as u64);
    (sw, true)
}

pub(super) fn jump_table(a: &mut Asm, r: &mut ChaCha8Rng, name: &str, entries: u32) -> Vec<Callable> {
    vec![switch(a, r, name, entries, entries, Some(entries))]
}

/// Two switches with adjacent tables; the first one's bound reaches `extra`
/// entries into the second table.
pub(super) fn jump_table_overapprox(a: &mut Asm, r: &mut ChaCha8Rng, p: &str, extra: u32, hint: bool) -> Vec<Callable> {
    let n1 = r.gen_range(2..=4);
    let n2 = extra + r.gen_range(1..=2);
    let first = if hint {
        switch(a, r, &format!("{p}1"), n1, n1, Some(n1 + extra))
    } else {
        switch(a, r, &format!("{p}1"), n1, n1 + extra, None)
    };
    let second = switch(a, r, &format!("{p}2"), n2, n2, Some(n2));
    vec![first, second]
}

/// `entries` symbols at consecutive instructions of one straight-line region.
pub(super) fn multi_entry(a: &mut Asm, r: &mut ChaCha8Rng, p: &str, entries: u32) -> Vec<Callable> {
    let mut es = Vec::new();
    for i in 0..entries {
        let e = a.mark();
        a.alu(r.gen());
        a.symbol(e, format!("{p}{i}"), false);
        es.push(e);
    }
    filler(a, r);
    a.op(InsnKind::Ret);
    let end = a.mark();
    for &e in &es {
        a.function(e, vec![(e, end)]);
    }
    es.into_iter().map(|e| (e, true)).collect()
}

/// A function whose cold path was outlined into an unnamed block reached by
/// a jump after frame teardown. The cold path calls `abort`.
pub(super) fn outlined_cold(a: &mut Asm, r: &mut ChaCha8Rng, name: &str, abort: Label) -> Vec<Callable> {
    let f = a.mark();
    filler(a, r);
    let hot = a.label();
    let cold = a.label();
    a.jcc(hot);
    a.op(InsnKind::FrameTeardown);
    a.jmp(cold);
    a.bind(hot);
    a.op(InsnKind::Ret);
    let hot_end = a.mark();
    a.bind(cold);
    a.alu(r.gen());
    filler(a, r);
    a.call(abort);
    let site = a.mark();
    a.symbol(f, name, false);
    a.function(f, vec![(f, hot_end), (cold, site)]);
    a.noreturn_call(site);
    vec![(f, true)]
}

/// An indirect jump whose targets cannot be resolved, guarded by a branch
/// to a return.
pub(super) fn opaque_jump(a: &mut Asm, r: &mut ChaCha8Rng, name: &str) -> Vec<Callable> {
    let f = a.mark();
    filler(a, r);
    let l = a.label();
    a.jcc(l);
    a.op(InsnKind::IJmpOpaque);
    a.bind(l);
    a.op(InsnKind::Ret);
    let end = a.mark();
    a.symbol(f, name, false);
    a.function(f, vec![(f, end)]);
    vec![(f, true)]
}

/// Straight-line code calling up to three earlier functions. A call to a
/// non-returning callee ends the function.
fn plain(a: &mut Asm, r: &mut ChaCha8Rng, name: &str, callables: &[Callable]) -> Callable {
    let f = a.mark();
    a.symbol(f, name, false);
    filler(a, r);
    let calls = if callables.is_empty() { 0 } else { r.gen_range(0..=3) };
    for _ in 0..calls {
        let (callee, returns) = callables[r.gen_range(0..callables.len())];
        a.call(callee);
        let site = a.mark();
        if !returns {
            a.noreturn_call(site);
            a.function(f, vec![(f, site)]);
            return (f, false);
        }
        filler(a, r);
    }
    if r.gen_bool(0.3) {
        let l = a.label();
        a.jcc(l);
        a.alu(r.gen());
        a.bind(l);
    }
    a.op(InsnKind::Ret);
    let end = a.mark();
    a.function(f, vec![(f, end)]);
    (f, true)
}

/// Roughly `functions` functions drawn from all families. Calls only go to
/// functions emitted earlier, so some functions are never called.
pub(super) fn big_random(a: &mut Asm, r: &mut ChaCha8Rng, functions: u32) {
    let abort_fn = abort(a, "abort");
    let mut callables: Vec<Callable> = vec![(abort_fn, false)];
    let mut made = 0usize;
    let mut i = 0u32;
    while made < functions as usize {
        let p = format!("t{i}_");
        i += 1;
        let new = match r.gen_range(0..100) {
            0..=54 => vec![plain(a, r, &format!("{p}f"), &callables)],
            55..=59 => {
                let k = r.gen_range(2..=4);
                shared_code(a, r, &p, k)
            }
            60..=64 => {
                let depth = r.gen_range(1..=4);
                let early = r.gen_bool(0.5);
                noreturn_chain(a, r, &p, depth, early)
            }
            65..=67 => {
                let k = r.gen_range(2..=3);
                noreturn_cycle(a, r, &p, k)
            }
            68..=72 => tailcall_ambiguous(a, r, &p),
            73..=79 => {
                let n = r.gen_range(1..=8);
                jump_table(a, r, &format!("{p}sw"), n)
            }
            80..=83 => {
                let extra = r.gen_range(1..=3);
                let hint = r.gen_bool(0.5);
                jump_table_overapprox(a, r, &format!("{p}sw"), extra, hint)
            }
            84..=88 => {
                let m = r.gen_range(2..=4);
                multi_entry(a, r, &p, m)
            }
            89..=93 => outlined_cold(a, r, &format!("{p}foo"), abort_fn),
            _ => opaque_jump(a, r, &format!("{p}f")),
        };
        made += new.len();
        callables.extend(new);
    }
}
