//! A small two-pass assembler that also collects ground truth in terms of
//! labels, so both are resolved together once layout is final.

use std::collections::{BTreeMap, BTreeSet};

use crate::cfg::merge_ranges;
use crate::image::{Image, SymbolEntry, SymbolKind};
use crate::isa::InsnKind;

use super::GroundTruth;

pub const TEXT_BASE: u64 = 0x1000;
pub const DATA_BASE: u64 = 0x4000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label(usize);

#[derive(Debug, Default)]
pub struct Asm {
    text: Vec<u8>,
    data: Vec<u8>,
    labels: Vec<Option<u64>>,
    /// (offset into text or data, label)
    text_fixups: Vec<(usize, Label)>,
    data_fixups: Vec<(usize, Label)>,
    symbols: Vec<(Label, String, bool)>,
    functions: Vec<(Label, Vec<(Label, Label)>)>,
    tables: Vec<(u64, u64)>,
    noreturn_calls: Vec<Label>,
    tail_calls: Vec<(Label, Label)>,
}

impl Asm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn here(&self) -> u64 {
        TEXT_BASE + self.text.len() as u64
    }

    pub fn label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    pub fn bind(&mut self, l: Label) {
        assert!(self.labels[l.0].is_none(), "label bound twice");
        self.labels[l.0] = Some(self.here());
    }

    /// A fresh label bound at the current position.
    pub fn mark(&mut self) -> Label {
        let l = self.label();
        self.bind(l);
        l
    }

    pub fn op(&mut self, k: InsnKind) {
        k.encode_into(&mut self.text);
    }

    pub fn alu(&mut self, imm: u16) {
        self.op(InsnKind::Alu(imm));
    }

    fn branch(&mut self, k: InsnKind, l: Label) {
        self.text_fixups.push((self.text.len() + 1, l));
        self.op(k);
    }

    pub fn jmp(&mut self, l: Label) {
        self.branch(InsnKind::JmpDirect(0), l);
    }

    pub fn jcc(&mut self, l: Label) {
        self.branch(InsnKind::JccDirect(0), l);
    }

    pub fn call(&mut self, l: Label) {
        self.branch(InsnKind::Call(0), l);
    }

    /// Appends a table of code addresses to data and returns its base.
    pub fn table(&mut self, entries: &[Label]) -> u64 {
        let base = DATA_BASE + self.data.len() as u64;
        for &l in entries {
            self.data_fixups.push((self.data.len(), l));
            self.data.extend_from_slice(&[0; 4]);
        }
        base
    }

    pub fn symbol(&mut self, at: Label, name: impl Into<String>, noreturn: bool) {
        self.symbols.push((at, name.into(), noreturn));
    }

    pub fn function(&mut self, entry: Label, ranges: Vec<(Label, Label)>) {
        self.functions.push((entry, ranges));
    }

    pub fn true_table(&mut self, base: u64, size: u64) {
        self.tables.push((base, size));
    }

    /// `site` is bound just after the call instruction.
    pub fn noreturn_call(&mut self, site: Label) {
        self.noreturn_calls.push(site);
    }

    /// `site` is bound just after the jump instruction.
    pub fn tail_call(&mut self, site: Label, target: Label) {
        self.tail_calls.push((site, target));
    }

    pub fn finish(mut self) -> (Image, GroundTruth) {
        let at = |labels: &[Option<u64>], l: Label| labels[l.0].expect("unbound label");
        for &(off, l) in &self.text_fixups {
            let a = at(&self.labels, l) as u32;
            self.text[off..off + 4].copy_from_slice(&a.to_le_bytes());
        }
        for &(off, l) in &self.data_fixups {
            let a = at(&self.labels, l) as u32;
            self.data[off..off + 4].copy_from_slice(&a.to_le_bytes());
        }
        let symbols = self
            .symbols
            .iter()
            .map(|(l, n, nr)| SymbolEntry::new(at(&self.labels, *l), n.clone(), SymbolKind::Func, *nr))
            .collect();
        let functions: BTreeMap<u64, Vec<(u64, u64)>> = self
            .functions
            .iter()
            .map(|(e, rs)| {
                let rs = rs.iter().map(|&(s, t)| (at(&self.labels, s), at(&self.labels, t)));
                (at(&self.labels, *e), merge_ranges(rs))
            })
            .collect();
        let truth = GroundTruth {
            functions,
            jump_tables: self.tables.iter().copied().collect(),
            noreturn_calls: self.noreturn_calls.iter().map(|&l| at(&self.labels, l)).collect::<BTreeSet<_>>(),
            tail_calls: self
                .tail_calls
                .iter()
                .map(|&(s, t)| (at(&self.labels, s), at(&self.labels, t)))
                .collect(),
        };
        let image = Image::new(TEXT_BASE, self.text, DATA_BASE, self.data, symbols).expect("generated image is well formed");
        (image, truth)
    }
}
