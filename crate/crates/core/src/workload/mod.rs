//! Deterministic generation of images together with their exact ground truth.
//!
//! Each family emits one construct that makes control-flow recovery hard;
//! `big-random` strings many of them together. Truth is recorded while the
//! code is assembled, not recovered afterwards.

mod asm;
mod families;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use asm::{Asm, Label, DATA_BASE, TEXT_BASE};

use crate::cfg::hex;
use crate::error::SpecOutOfBounds;
use crate::image::Image;

/// What a correct analysis must recover.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    /// Function entry to its merged address ranges. Shared code appears in
    /// every function that reaches it.
    pub functions: BTreeMap<u64, Vec<(u64, u64)>>,
    /// Table base to true entry count.
    pub jump_tables: BTreeMap<u64, u64>,
    /// End addresses of call-site blocks whose callee never returns.
    pub noreturn_calls: BTreeSet<u64>,
    /// (end of the jumping block, target)
    pub tail_calls: BTreeSet<(u64, u64)>,
}

#[derive(Serialize, Deserialize)]
struct FunctionJson {
    entry: String,
    ranges: Vec<[String; 2]>,
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    base: String,
    size: u64,
}

#[derive(Serialize, Deserialize)]
struct TruthJson {
    functions: Vec<FunctionJson>,
    jump_tables: Vec<TableJson>,
    noreturn_calls: Vec<String>,
    tail_calls: Vec<[String; 2]>,
}

fn parse_hex(s: &str) -> Result<u64, String> {
    let digits = s.strip_prefix("0x").ok_or_else(|| format!("expected 0x-prefixed address, got {s:?}"))?;
    u64::from_str_radix(digits, 16).map_err(|e| format!("bad address {s:?}: {e}"))
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        let t = TruthJson {
            functions: self
                .functions
                .iter()
                .map(|(e, rs)| FunctionJson {
                    entry: hex(*e),
                    ranges: rs.iter().map(|r| [hex(r.0), hex(r.1)]).collect(),
                })
                .collect(),
            jump_tables: self
                .jump_tables
                .iter()
                .map(|(b, n)| TableJson { base: hex(*b), size: *n })
                .collect(),
            noreturn_calls: self.noreturn_calls.iter().map(|a| hex(*a)).collect(),
            tail_calls: self.tail_calls.iter().map(|t| [hex(t.0), hex(t.1)]).collect(),
        };
        serde_json::to_string_pretty(&t).expect("truth serializes") + "\n"
    }

    /// Parses and validates the `truth.json` schema.
    pub fn from_json(s: &str) -> Result<Self, String> {
        let t: TruthJson = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let mut g = GroundTruth::default();
        for f in t.functions {
            let mut ranges = Vec::new();
            for [s, e] in &f.ranges {
                let (s, e) = (parse_hex(s)?, parse_hex(e)?);
                if s >= e {
                    return Err(format!("empty range [{s:#x}, {e:#x})"));
                }
                ranges.push((s, e));
            }
            g.functions.insert(parse_hex(&f.entry)?, ranges);
        }
        for tb in t.jump_tables {
            if tb.size == 0 {
                return Err(format!("table {} has size 0", tb.base));
            }
            g.jump_tables.insert(parse_hex(&tb.base)?, tb.size);
        }
        for a in t.noreturn_calls {
            g.noreturn_calls.insert(parse_hex(&a)?);
        }
        for [s, d] in t.tail_calls {
            g.tail_calls.insert((parse_hex(&s)?, parse_hex(&d)?));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SharedCode { k: u32 },
    NoreturnChain { depth: u32, early_ret: bool },
    NoreturnCycle { k: u32 },
    TailcallAmbiguous,
    JumpTable { entries: u32 },
    /// Two adjacent tables; the first is read `extra` entries too far, either
    /// through its declared bound or (with `hint`) through a range check.
    JumpTableOverapprox { extra: u32, hint: bool },
    MultiEntry { entries: u32 },
    OutlinedCold,
    OpaqueJump,
    BigRandom { functions: u32 },
}

pub const FAMILIES: [&str; 10] = [
    "shared-code",
    "noreturn-chain",
    "noreturn-cycle",
    "tailcall-ambiguous",
    "jump-table",
    "jump-table-overapprox",
    "multi-entry",
    "outlined-cold",
    "opaque-jump",
    "big-random",
];

/// Entry count of the contention stress image.
pub const STRESS_ENTRIES: u32 = 64;

impl Scenario {
    pub fn family(&self) -> &'static str {
        match self {
            Scenario::SharedCode { .. } => "shared-code",
            Scenario::NoreturnChain { .. } => "noreturn-chain",
            Scenario::NoreturnCycle { .. } => "noreturn-cycle",
            Scenario::TailcallAmbiguous => "tailcall-ambiguous",
            Scenario::JumpTable { .. } => "jump-table",
            Scenario::JumpTableOverapprox { .. } => "jump-table-overapprox",
            Scenario::MultiEntry { .. } => "multi-entry",
            Scenario::OutlinedCold => "outlined-cold",
            Scenario::OpaqueJump => "opaque-jump",
            Scenario::BigRandom { .. } => "big-random",
        }
    }

    /// The family with its default parameters.
    pub fn default_for(family: &str) -> Option<Scenario> {
        Some(match family {
            "shared-code" => Scenario::SharedCode { k: 3 },
            "noreturn-chain" => Scenario::NoreturnChain { depth: 3, early_ret: false },
            "noreturn-cycle" => Scenario::NoreturnCycle { k: 3 },
            "tailcall-ambiguous" => Scenario::TailcallAmbiguous,
            "jump-table" => Scenario::JumpTable { entries: 4 },
            "jump-table-overapprox" => Scenario::JumpTableOverapprox { extra: 2, hint: false },
            "multi-entry" => Scenario::MultiEntry { entries: 8 },
            "outlined-cold" => Scenario::OutlinedCold,
            "opaque-jump" => Scenario::OpaqueJump,
            "big-random" => Scenario::BigRandom { functions: 200 },
            _ => return None,
        })
    }

    /// Contention stress image: many entries into one straight-line region.
    pub fn stress() -> Scenario {
        Scenario::MultiEntry { entries: STRESS_ENTRIES }
    }

    pub fn check(&self) -> Result<(), SpecOutOfBounds> {
        let within = |name: &str, v: u32, lo: u32, hi: u32| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(SpecOutOfBounds(format!("{name}={v} not in {lo}..={hi}")))
            }
        };
        match *self {
            Scenario::SharedCode { k } => within("k", k, 1, 4096),
            Scenario::NoreturnChain { depth, .. } => within("depth", depth, 1, 64),
            Scenario::NoreturnCycle { k } => within("k", k, 2, 64),
            Scenario::JumpTable { entries } => within("entries", entries, 1, 1024),
            Scenario::JumpTableOverapprox { extra, .. } => within("extra", extra, 1, 64),
            Scenario::MultiEntry { entries } => within("entries", entries, 1, 4096),
            Scenario::BigRandom { functions } => within("functions", functions, 1, 100_000),
            Scenario::TailcallAmbiguous | Scenario::OutlinedCold | Scenario::OpaqueJump => Ok(()),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Scenario::SharedCode { k } => write!(f, "shared-code(k={k})"),
            Scenario::NoreturnChain { depth, early_ret } => {
                write!(f, "noreturn-chain(depth={depth}, early_ret={early_ret})")
            }
            Scenario::NoreturnCycle { k } => write!(f, "noreturn-cycle(k={k})"),
            Scenario::JumpTable { entries } => write!(f, "jump-table(entries={entries})"),
            Scenario::JumpTableOverapprox { extra, hint } => {
                write!(f, "jump-table-overapprox(extra={extra}, hint={hint})")
            }
            Scenario::MultiEntry { entries } => write!(f, "multi-entry(entries={entries})"),
            Scenario::BigRandom { functions } => write!(f, "big-random(functions={functions})"),
            other => f.write_str(other.family()),
        }
    }
}

/// Builds the image and truth for `scenario`. Equal inputs give identical
/// outputs.
pub fn generate(scenario: &Scenario, seed: u64) -> Result<(Image, GroundTruth), SpecOutOfBounds> {
    scenario.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Asm::new();
    let r = &mut rng;
    match *scenario {
        Scenario::SharedCode { k } => {
            families::shared_code(&mut a, r, "f", k);
        }
        Scenario::NoreturnChain { depth, early_ret } => {
            families::noreturn_chain(&mut a, r, "f", depth, early_ret);
        }
        Scenario::NoreturnCycle { k } => {
            families::noreturn_cycle(&mut a, r, "f", k);
        }
        Scenario::TailcallAmbiguous => {
            families::tailcall_ambiguous(&mut a, r, "");
        }
        Scenario::JumpTable { entries } => {
            families::jump_table(&mut a, r, "sw", entries);
        }
        Scenario::JumpTableOverapprox { extra, hint } => {
            families::jump_table_overapprox(&mut a, r, "sw", extra, hint);
        }
        Scenario::MultiEntry { entries } => {
            families::multi_entry(&mut a, r, "e", entries);
        }
        Scenario::OutlinedCold => {
            let abort = families::abort(&mut a, "abort");
            families::outlined_cold(&mut a, r, "foo", abort);
        }
        Scenario::OpaqueJump => {
            families::opaque_jump(&mut a, r, "f");
        }
        Scenario::BigRandom { functions } => families::big_random(&mut a, r, functions),
    }
    Ok(a.finish())
}

/// Writes `image.pcfg` and `truth.json` into `dir`.
pub fn emit(image: &Image, truth: &GroundTruth, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("image.pcfg"), image.to_bytes())?;
    std::fs::write(dir.join("truth.json"), truth.to_json())?;
    Ok(())
}

/// Every family at default parameters plus the interesting variants, each
/// paired with `seeds` seeds.
pub fn corpus(seeds: u64) -> Vec<(Scenario, u64)> {
    let mut scenarios: Vec<Scenario> = FAMILIES.iter().map(|f| Scenario::default_for(f).unwrap()).collect();
    scenarios.extend([
        Scenario::NoreturnChain { depth: 3, early_ret: true },
        Scenario::NoreturnCycle { k: 2 },
        Scenario::JumpTableOverapprox { extra: 2, hint: true },
        Scenario::stress(),
    ]);
    scenarios
        .into_iter()
        .flat_map(|s| (0..seeds).map(move |seed| (s, seed)))
        .collect()
}
