//! Comparing a finalized graph with generated ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use crate::cfg::{hex, merge_ranges, Cfg, EdgeKind};
use crate::finalize::assign_function_boundaries;
use crate::tables::TableRegistry;
use crate::workload::GroundTruth;

/// Reads the four truth facets off a finalized graph.
pub fn observe(g: &Cfg, tables: &TableRegistry) -> GroundTruth {
    let functions = assign_function_boundaries(g)
        .into_iter()
        .map(|b| {
            let ranges = b.blocks.iter().filter_map(|&s| g.block_at(s)).map(|blk| (blk.start, blk.end));
            (b.entry, merge_ranges(ranges))
        })
        .collect();
    let jump_tables = tables
        .descriptors()
        .into_iter()
        .map(|d| (d.base, d.final_bound.unwrap_or(d.effective_bound)))
        .collect();
    let mut calls: BTreeSet<u64> = BTreeSet::new();
    let mut returning: BTreeSet<u64> = BTreeSet::new();
    let mut tail_calls = BTreeSet::new();
    for e in &g.edges {
        match e.kind {
            EdgeKind::Call => {
                calls.insert(e.source);
            }
            EdgeKind::CallFallthrough => {
                returning.insert(e.source);
            }
            EdgeKind::TailCall => {
                if let Some(b) = g.block_at(e.source) {
                    tail_calls.insert((b.end, e.target));
                }
            }
            _ => {}
        }
    }
    let noreturn_calls = calls
        .difference(&returning)
        .filter_map(|&s| g.block_at(s))
        .map(|b| b.end)
        .collect();
    GroundTruth {
        functions,
        jump_tables,
        noreturn_calls,
        tail_calls,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Facet {
    pub name: &'static str,
    /// Human-readable differences, expected first.
    pub diffs: Vec<String>,
}

impl Facet {
    pub fn passed(&self) -> bool {
        self.diffs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub facets: Vec<Facet>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.facets.iter().all(Facet::passed)
    }
}

fn diff_maps<V: PartialEq + Debug>(
    expected: &BTreeMap<u64, V>,
    observed: &BTreeMap<u64, V>,
    what: &str,
    show: impl Fn(&V) -> String,
) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in expected {
        match observed.get(k) {
            None => out.push(format!("{what} {} missing (expected {})", hex(*k), show(v))),
            Some(o) if o != v => out.push(format!("{what} {}: expected {}, got {}", hex(*k), show(v), show(o))),
            _ => {}
        }
    }
    for (k, v) in observed {
        if !expected.contains_key(k) {
            out.push(format!("{what} {} unexpected ({})", hex(*k), show(v)));
        }
    }
    out
}

fn diff_sets<T: Ord + Copy>(expected: &BTreeSet<T>, observed: &BTreeSet<T>, show: impl Fn(T) -> String) -> Vec<String> {
    let mut out: Vec<String> = expected.difference(observed).map(|&x| format!("missing {}", show(x))).collect();
    out.extend(observed.difference(expected).map(|&x| format!("unexpected {}", show(x))));
    out
}

fn show_ranges(rs: &[(u64, u64)]) -> String {
    let parts: Vec<String> = rs.iter().map(|r| format!("[{}, {})", hex(r.0), hex(r.1))).collect();
    parts.join(" ")
}

pub fn compare(truth: &GroundTruth, observed: &GroundTruth) -> VerifyReport {
    VerifyReport {
        facets: vec![
            Facet {
                name: "function ranges",
                diffs: diff_maps(&truth.functions, &observed.functions, "function", |r| show_ranges(r)),
            },
            Facet {
                name: "jump table sizes",
                diffs: diff_maps(&truth.jump_tables, &observed.jump_tables, "table", |n| n.to_string()),
            },
            Facet {
                name: "noreturn call sites",
                diffs: diff_sets(&truth.noreturn_calls, &observed.noreturn_calls, |a| format!("call site {}", hex(a))),
            },
            Facet {
                name: "tail-call edges",
                diffs: diff_sets(&truth.tail_calls, &observed.tail_calls, |(s, t)| {
                    format!("tail call {} -> {}", hex(s), hex(t))
                }),
            },
        ],
    }
}

pub fn verify(g: &Cfg, tables: &TableRegistry, truth: &GroundTruth) -> VerifyReport {
    compare(truth, &observe(g, tables))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbed_table_is_named() {
        let mut t = GroundTruth::default();
        t.jump_tables.insert(0x4000_0000, 3);
        let mut o = t.clone();
        o.jump_tables.insert(0x4000_0000, 5);
        let r = compare(&t, &o);
        assert!(!r.passed());
        assert_eq!(r.facets[1].diffs, vec!["table 0x40000000: expected 3, got 5".to_string()]);
        assert!(r.facets[0].passed() && r.facets[2].passed() && r.facets[3].passed());
    }
}
