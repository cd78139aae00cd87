#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use pcfg::cfg::{partial_order_le, Cfg, Edge};
use pcfg::image::{Image, SymbolEntry, SymbolKind};
use pcfg::isa::InsnKind;
use pcfg::serial::{op_ber, op_dec, op_er_many, op_fei, op_iec};

pub const SOUP_TEXT: u64 = 0x100;
pub const SOUP_DATA: u64 = 0x8000;

/// Random instruction soup. Branch targets and table entries always land on
/// instruction starts, except for the occasional target outside text.
pub fn random_image(r: &mut ChaCha8Rng) -> Image {
    let n = r.gen_range(8..40);
    let mut kinds = Vec::with_capacity(n);
    for _ in 0..n {
        let k = match r.gen_range(0..100) {
            0..=29 => InsnKind::Alu(r.gen()),
            30..=34 => InsnKind::Nop,
            35..=39 => InsnKind::FrameTeardown,
            40..=44 => InsnKind::BoundHint(r.gen_range(0..6)),
            45..=54 => InsnKind::JmpDirect(0),
            55..=69 => InsnKind::JccDirect(0),
            70..=79 => InsnKind::Call(0),
            80..=87 => InsnKind::Ret,
            88..=91 => InsnKind::IJmpTable { base: 0, bound_hint: 0 },
            92..=93 => InsnKind::IJmpOpaque,
            _ => InsnKind::Halt,
        };
        kinds.push(k);
    }
    let mut addrs = Vec::with_capacity(n);
    let mut at = SOUP_TEXT;
    for k in &kinds {
        addrs.push(at);
        at += k.len();
    }
    let text_end = at;
    let target = |r: &mut ChaCha8Rng| {
        if r.gen_bool(0.05) {
            text_end + 0x40
        } else {
            *addrs.choose(r).unwrap()
        }
    };
    let mut data = Vec::new();
    let mut text = Vec::new();
    for k in kinds.iter_mut() {
        match k {
            InsnKind::JmpDirect(t) | InsnKind::JccDirect(t) | InsnKind::Call(t) => *t = target(r),
            InsnKind::IJmpTable { base, bound_hint } => {
                *base = SOUP_DATA + data.len() as u64;
                let entries = r.gen_range(1..=4);
                for _ in 0..entries {
                    data.extend_from_slice(&(target(r) as u32).to_le_bytes());
                }
                *bound_hint = r.gen_range(1..=entries + 2) as u16;
            }
            _ => {}
        }
        k.encode_into(&mut text);
    }
    let mut symbols = Vec::new();
    for i in 0..r.gen_range(1..=3) {
        let a = *addrs.choose(r).unwrap();
        symbols.push(SymbolEntry::new(a, format!("f{i}"), SymbolKind::Func, r.gen_bool(0.1)));
    }
    Image::new(SOUP_TEXT, text, SOUP_DATA, data, symbols).unwrap()
}

fn seeded(image: &Image) -> Cfg {
    let mut g = Cfg::new();
    for s in image.func_symbols() {
        g.candidates.insert(s.offset);
        g.add_entry(s.offset, true, Some(s.mangled.clone()));
    }
    g
}

fn ends(g: &Cfg, pred: impl Fn(&InsnKind) -> bool) -> Vec<u64> {
    g.blocks
        .values()
        .filter(|b| b.terminator.as_ref().is_some_and(&pred))
        .map(|b| b.end)
        .collect()
}

fn direct_ends(g: &Cfg) -> Vec<u64> {
    ends(g, |k| matches!(k, InsnKind::JmpDirect(_) | InsnKind::JccDirect(_) | InsnKind::Call(_)))
}

fn table_ends(g: &Cfg) -> Vec<u64> {
    ends(g, |k| matches!(k, InsnKind::IJmpTable { .. }))
}

/// A partially traversed graph reached by a random sequence of operations.
pub fn random_state(image: &Image, r: &mut ChaCha8Rng) -> Cfg {
    let mut g = seeded(image);
    for _ in 0..r.gen_range(0..30) {
        let cands: Vec<u64> = g.candidates.iter().copied().collect();
        if !cands.is_empty() && r.gen_bool(0.6) {
            g = op_ber(g, image, *cands.choose(r).unwrap()).unwrap();
            continue;
        }
        let d = direct_ends(&g);
        let t = table_ends(&g);
        if !t.is_empty() && r.gen_bool(0.2) {
            g = iec_at_end(g, image, *t.choose(r).unwrap());
        } else if !d.is_empty() {
            g = dec_at_end(g, image, *d.choose(r).unwrap());
        }
    }
    g
}

/// Blocks are named by start, and splitting moves a terminator to a new
/// start, so commuted operations address a jump by its end address.
pub fn dec_at_end(g: Cfg, image: &Image, end: u64) -> Cfg {
    let s = g.block_ending_at(end).unwrap().start;
    op_dec(g, image, s).unwrap()
}

pub fn iec_at_end(g: Cfg, image: &Image, end: u64) -> Cfg {
    let s = g.block_ending_at(end).unwrap().start;
    op_iec(g, image, s).unwrap()
}

pub fn ber(g: Cfg, image: &Image, t: u64) -> Cfg {
    op_ber(g, image, t).unwrap()
}

/// Outcome of one randomized algebra instance: `None` when the random state
/// offered nothing to apply the operations to.
pub type Instance = Option<Result<(), String>>;

fn verdict(ok: bool, what: impl FnOnce() -> String) -> Instance {
    Some(if ok { Ok(()) } else { Err(what()) })
}

fn instance(r: &mut ChaCha8Rng) -> (Image, Cfg) {
    let image = random_image(r);
    let g = random_state(&image, r);
    (image, g)
}

fn two<T: Copy>(r: &mut ChaCha8Rng, v: &[T]) -> Option<(T, T)> {
    if v.len() < 2 {
        return None;
    }
    let mut p: Vec<T> = v.choose_multiple(r, 2).copied().collect();
    let b = p.pop()?;
    Some((p.pop()?, b))
}

pub fn ber_ber(r: &mut ChaCha8Rng) -> Instance {
    let (img, g) = instance(r);
    let cands: Vec<u64> = g.candidates.iter().copied().collect();
    let (a, b) = two(r, &cands)?;
    let x = ber(ber(g.clone(), &img, a), &img, b);
    let y = ber(ber(g, &img, b), &img, a);
    verdict(x == y, || format!("op_ber {a:#x} / {b:#x} do not commute"))
}

pub fn ber_dec(r: &mut ChaCha8Rng) -> Instance {
    let (img, g) = instance(r);
    let cands: Vec<u64> = g.candidates.iter().copied().collect();
    let a = *cands.choose(r)?;
    let e = *direct_ends(&g).choose(r)?;
    let x = dec_at_end(ber(g.clone(), &img, a), &img, e);
    let y = ber(dec_at_end(g, &img, e), &img, a);
    verdict(x == y, || format!("op_ber {a:#x} / op_dec end {e:#x} do not commute"))
}

pub fn dec_dec(r: &mut ChaCha8Rng) -> Instance {
    let (img, g) = instance(r);
    let (a, b) = two(r, &direct_ends(&g))?;
    let x = dec_at_end(dec_at_end(g.clone(), &img, a), &img, b);
    let y = dec_at_end(dec_at_end(g, &img, b), &img, a);
    verdict(x == y, || format!("op_dec ends {a:#x} / {b:#x} do not commute"))
}

pub fn er_er(r: &mut ChaCha8Rng) -> Instance {
    let (_, g) = instance(r);
    let edges: Vec<Edge> = g.edges.iter().copied().collect();
    let (a, b) = two(r, &edges)?;
    let x = op_er_many(op_er_many(g.clone(), &[a]), &[b]);
    let y = op_er_many(op_er_many(g.clone(), &[b]), &[a]);
    let both = op_er_many(g, &[a, b]);
    verdict(x == y && x == both, || format!("op_er {a:?} / {b:?} do not commute"))
}

/// `op_x(op_iec(G, a)) ≼ op_iec(op_x(G), a)` for `op_x` in {op_ber, op_dec}.
pub fn iec_monotone(r: &mut ChaCha8Rng) -> Instance {
    let (img, g) = instance(r);
    let t = *table_ends(&g).choose(r)?;
    let cands: Vec<u64> = g.candidates.iter().copied().collect();
    let d = direct_ends(&g);
    let (lhs, rhs, what) = if !cands.is_empty() && (d.is_empty() || r.gen_bool(0.5)) {
        let a = *cands.choose(r).unwrap();
        (
            ber(iec_at_end(g.clone(), &img, t), &img, a),
            iec_at_end(ber(g, &img, a), &img, t),
            format!("op_ber {a:#x}"),
        )
    } else {
        let e = *d.choose(r)?;
        (
            dec_at_end(iec_at_end(g.clone(), &img, t), &img, e),
            iec_at_end(dec_at_end(g, &img, e), &img, t),
            format!("op_dec end {e:#x}"),
        )
    };
    match partial_order_le(&lhs, &rhs) {
        Ok(ok) => verdict(ok, || format!("{what} then op_iec end {t:#x} is not below the reverse")),
        Err(e) => Some(Err(format!("invalid graph: {e}"))),
    }
}

/// Runs `check` until `n` applicable instances were seen. Returns the first
/// failure, if any.
pub fn run_instances(seed: u64, n: usize, check: fn(&mut ChaCha8Rng) -> Instance) -> Result<usize, String> {
    use rand::SeedableRng;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = 0;
    let mut tries = 0;
    while seen < n {
        tries += 1;
        if tries > n * 50 {
            return Err(format!("only {seen} applicable instances in {tries} tries"));
        }
        if let Some(res) = check(&mut r) {
            res?;
            seen += 1;
        }
    }
    Ok(seen)
}

/// The tail-call heuristics applied to A's and B's jumps in the
/// tailcall-ambiguous image, in both orders. Returns the two edge sets.
pub fn fei_witness() -> (Vec<Edge>, Vec<Edge>) {
    use pcfg::workload::{generate, Scenario};
    let (img, _) = generate(&Scenario::TailcallAmbiguous, 0).unwrap();
    let sym = |n: &str| img.symbols.iter().find(|s| s.mangled == n).unwrap().offset;
    let (a, b) = (sym("A"), sym("B"));
    let mut g = seeded(&img);
    g = ber(g, &img, a);
    g = ber(g, &img, b);
    g = op_dec(g, &img, a).unwrap();
    g = op_dec(g, &img, b).unwrap();
    let ea = *g.out_edges(a).next().unwrap();
    let eb = *g.out_edges(b).next().unwrap();
    let t = ea.target;
    g = ber(g, &img, t);
    let a_first = op_fei(op_fei(g.clone(), &img, ea).unwrap(), &img, eb).unwrap();
    let b_first = op_fei(op_fei(g, &img, eb).unwrap(), &img, ea).unwrap();
    let into = |g: &Cfg| g.in_edges(t).copied().collect::<Vec<_>>();
    (into(&a_first), into(&b_first))
}
