use std::fmt::Write;

use serde_json::{json, Value};

use super::{validate, Cfg};
use crate::error::InvalidGraph;

pub(crate) fn hex(a: u64) -> String {
    format!("{a:#x}")
}

/// Deterministic text form of a graph: one record per line, sorted.
///
/// ```text
/// pcfg-canonical 1
/// blocks N
/// candidates N
/// edges N
/// entries N
/// B start end
/// C addr
/// E src dst kind
/// F entry status seed
/// ```
pub fn canonical_serialize(g: &Cfg) -> Result<String, InvalidGraph> {
    let v = validate(g);
    if let Some(first) = v.first() {
        return Err(InvalidGraph(v.len(), first.to_string()));
    }
    let mut s = String::with_capacity(32 * (g.blocks.len() + g.edges.len() + g.entries.len()) + 64);
    s.push_str("pcfg-canonical 1\n");
    let _ = writeln!(s, "blocks {}", g.blocks.len());
    let _ = writeln!(s, "candidates {}", g.candidates.len());
    let _ = writeln!(s, "edges {}", g.edges.len());
    let _ = writeln!(s, "entries {}", g.entries.len());
    for b in g.blocks.values() {
        let _ = writeln!(s, "B {:#x} {:#x}", b.start, b.end);
    }
    for c in &g.candidates {
        let _ = writeln!(s, "C {c:#x}");
    }
    for e in &g.edges {
        let _ = writeln!(s, "E {:#x} {:#x} {}", e.source, e.target, e.kind);
    }
    for f in g.entries.values() {
        let _ = writeln!(s, "F {:#x} {} {}", f.entry, f.return_status.name(), f.seed as u8);
    }
    Ok(s)
}

/// Graphviz rendering in canonical order.
pub fn to_dot(g: &Cfg) -> String {
    let mut s = String::from("digraph cfg {\n  node [shape=box, fontname=monospace];\n");
    for b in g.blocks.values() {
        let mut label = format!("[{:#x},{:#x})", b.start, b.end);
        if let Some(f) = g.entries.get(&b.start) {
            let name = f.name.as_deref().unwrap_or("?");
            let _ = write!(label, "\\n{} {}", name, f.return_status.name());
        }
        let style = if g.entries.contains_key(&b.start) { ", style=bold" } else { "" };
        let _ = writeln!(s, "  \"{:#x}\" [label=\"{label}\"{style}];", b.start);
    }
    for c in &g.candidates {
        let _ = writeln!(s, "  \"{c:#x}\" [label=\"[{c:#x}]\", style=dashed];");
    }
    for e in &g.edges {
        let style = match e.kind {
            super::EdgeKind::Call | super::EdgeKind::TailCall => ", style=dashed",
            _ => "",
        };
        let _ = writeln!(
            s,
            "  \"{:#x}\" -> \"{:#x}\" [label=\"{}\"{style}];",
            e.source, e.target, e.kind
        );
    }
    s.push_str("}\n");
    s
}

/// JSON rendering in canonical order.
pub fn to_json_value(g: &Cfg) -> Value {
    json!({
        "blocks": g.blocks.values().map(|b| json!({"start": hex(b.start), "end": hex(b.end)})).collect::<Vec<_>>(),
        "candidates": g.candidates.iter().map(|&c| hex(c)).collect::<Vec<_>>(),
        "edges": g.edges.iter().map(|e| json!({"src": hex(e.source), "dst": hex(e.target), "kind": e.kind.name()})).collect::<Vec<_>>(),
        "functions": g.entries.values().map(|f| json!({
            "entry": hex(f.entry),
            "name": f.name,
            "status": f.return_status.name(),
            "seed": f.seed,
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{Block, Edge, EdgeKind};
    use crate::isa::InsnKind;

    #[test]
    fn empty_graph_header() {
        let s = canonical_serialize(&Cfg::new()).unwrap();
        assert_eq!(
            s,
            "pcfg-canonical 1\nblocks 0\ncandidates 0\nedges 0\nentries 0\n"
        );
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let blocks = [
            Block { start: 0x10, end: 0x11, terminator: Some(InsnKind::Ret) },
            Block { start: 0x4, end: 0x10, terminator: None },
        ];
        let edges = [
            Edge::new(0x4, 0x10, EdgeKind::Fallthrough),
            Edge::new(0x4, 0x10, EdgeKind::CondTaken),
        ];
        let mut a = Cfg::new();
        let mut b = Cfg::new();
        for x in blocks {
            a.insert_block(x);
        }
        for x in blocks.iter().rev() {
            b.insert_block(*x);
        }
        for e in edges {
            a.edges.insert(e);
        }
        for e in edges.iter().rev() {
            b.edges.insert(*e);
        }
        a.add_entry(0x4, true, None);
        b.add_entry(0x4, true, None);
        let sa = canonical_serialize(&a).unwrap();
        assert_eq!(sa, canonical_serialize(&b).unwrap());
        assert!(sa.contains("E 0x4 0x10 cond_taken\nE 0x4 0x10 fallthrough\n"));
        assert!(sa.ends_with("F 0x4 UNSET 1\n"));
        assert!(to_dot(&a).contains("\"0x4\" -> \"0x10\""));
        assert_eq!(to_json_value(&a)["edges"].as_array().unwrap().len(), 2);
    }
}
