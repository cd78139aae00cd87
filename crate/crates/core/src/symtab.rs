//! A symbol table indexed four ways, filled concurrently and then sealed for
//! lookups.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use dashmap::mapref::entry::Entry;
use dashmap::DashMap;

use crate::error::SymtabError;
use crate::image::SymbolEntry;

#[derive(Debug, Default)]
pub struct IndexedSymbols {
    /// Identity is `(offset, mangled)`.
    master: DashMap<(u64, String), SymbolEntry>,
    by_offset: DashMap<u64, Vec<SymbolEntry>>,
    by_mangled: DashMap<String, Vec<SymbolEntry>>,
    by_pretty: DashMap<String, Vec<SymbolEntry>>,
    by_typed: DashMap<String, Vec<SymbolEntry>>,
    sealed: AtomicBool,
    wins: AtomicU64,
}

impl IndexedSymbols {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `s` unless a symbol with the same identity is present. The
    /// winner fills the secondary indexes while still holding the master
    /// entry, so concurrent inserts of one symbol never both index it.
    pub fn insert(&self, s: SymbolEntry) -> Result<bool, SymtabError> {
        if self.sealed.load(Ordering::Acquire) {
            return Err(SymtabError::Sealed);
        }
        match self.master.entry((s.offset, s.mangled.clone())) {
            Entry::Occupied(_) => Ok(false),
            Entry::Vacant(v) => {
                self.by_offset.entry(s.offset).or_default().push(s.clone());
                self.by_mangled.entry(s.mangled.clone()).or_default().push(s.clone());
                self.by_pretty.entry(s.pretty.clone()).or_default().push(s.clone());
                self.by_typed.entry(s.typed.clone()).or_default().push(s.clone());
                v.insert(s);
                self.wins.fetch_add(1, Ordering::Relaxed);
                Ok(true)
            }
        }
    }

    /// Ends the write phase. Sorting happens once here so lookups are cheap.
    pub fn seal(&self) {
        if self.sealed.swap(true, Ordering::AcqRel) {
            return;
        }
        let key = |s: &SymbolEntry| (s.offset, s.mangled.clone());
        self.by_offset.iter_mut().for_each(|mut v| v.sort_by_key(key));
        self.by_mangled.iter_mut().for_each(|mut v| v.sort_by_key(key));
        self.by_pretty.iter_mut().for_each(|mut v| v.sort_by_key(key));
        self.by_typed.iter_mut().for_each(|mut v| v.sort_by_key(key));
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed.load(Ordering::Acquire)
    }

    pub fn len(&self) -> usize {
        self.master.len()
    }

    pub fn is_empty(&self) -> bool {
        self.master.is_empty()
    }

    /// Number of inserts that returned `true`.
    pub fn successful_inserts(&self) -> u64 {
        self.wins.load(Ordering::Relaxed)
    }

    fn read<K: std::hash::Hash + Eq>(
        &self,
        map: &DashMap<K, Vec<SymbolEntry>>,
        key: &K,
    ) -> Result<Vec<SymbolEntry>, SymtabError> {
        if !self.is_sealed() {
            return Err(SymtabError::NotSealed);
        }
        Ok(map.get(key).map(|v| v.clone()).unwrap_or_default())
    }

    pub fn lookup_by_offset(&self, offset: u64) -> Result<Vec<SymbolEntry>, SymtabError> {
        self.read(&self.by_offset, &offset)
    }

    pub fn lookup_by_mangled(&self, name: &str) -> Result<Vec<SymbolEntry>, SymtabError> {
        self.read(&self.by_mangled, &name.to_string())
    }

    pub fn lookup_by_pretty(&self, name: &str) -> Result<Vec<SymbolEntry>, SymtabError> {
        self.read(&self.by_pretty, &name.to_string())
    }

    pub fn lookup_by_typed(&self, name: &str) -> Result<Vec<SymbolEntry>, SymtabError> {
        self.read(&self.by_typed, &name.to_string())
    }

    /// Every inserted symbol, sorted by `(offset, mangled)`.
    pub fn all(&self) -> Result<Vec<SymbolEntry>, SymtabError> {
        if !self.is_sealed() {
            return Err(SymtabError::NotSealed);
        }
        let mut v: Vec<SymbolEntry> = self.master.iter().map(|e| e.value().clone()).collect();
        v.sort_by(|a, b| (a.offset, &a.mangled).cmp(&(b.offset, &b.mangled)));
        Ok(v)
    }

    /// Counts, per index, of symbols that are missing or present more than
    /// once. Both are zero for a consistent table.
    pub fn audit(&self) -> Result<(usize, usize), SymtabError> {
        let all = self.all()?;
        let (mut missing, mut duplicated) = (0, 0);
        for s in &all {
            let lists = [
                self.lookup_by_offset(s.offset)?,
                self.lookup_by_mangled(&s.mangled)?,
                self.lookup_by_pretty(&s.pretty)?,
                self.lookup_by_typed(&s.typed)?,
            ];
            for l in lists {
                match l.iter().filter(|x| *x == s).count() {
                    0 => missing += 1,
                    1 => {}
                    _ => duplicated += 1,
                }
            }
        }
        Ok((missing, duplicated))
    }
}
