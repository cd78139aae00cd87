//! Jump-table resolution.
//!
//! An `IJmpTable(base, declared)` reads `u32` targets from the data section.
//! How many entries it reads is the larger of the declared operand and the
//! last `BoundHint` in each direct predecessor of the jump: every path into
//! the jump contributes, and the union can only grow as more paths are found.
//! Over-reads past the real end of a table are trimmed during finalization,
//! once all table bases are known.

use std::collections::BTreeSet;

use dashmap::DashMap;

use crate::image::Image;

/// Outcome of reading one table with a given set of predecessor hints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableResolution {
    /// Entries read, after clamping to the data section.
    pub effective_bound: u64,
    /// `(index, target)` for each entry that points into text.
    pub targets: Vec<(u64, u64)>,
    /// The requested bound ran past the end of data.
    pub clamped: bool,
}

impl TableResolution {
    pub fn target_set(&self) -> BTreeSet<u64> {
        self.targets.iter().map(|&(_, t)| t).collect()
    }
}

/// Reads the table at `base`. Pure in its arguments.
pub fn resolve_table(
    image: &Image,
    base: u64,
    declared: u16,
    hints: impl IntoIterator<Item = u16>,
) -> TableResolution {
    let wanted = hints.into_iter().fold(declared, u16::max) as u64;
    let readable = if base >= image.data_base && base <= image.data_end() {
        (image.data_end() - base) / 4
    } else {
        0
    };
    let effective_bound = wanted.min(readable);
    let targets = table_entries(image, base, effective_bound);
    TableResolution {
        effective_bound,
        targets,
        clamped: wanted > readable,
    }
}

/// `(index, target)` for the first `bound` entries at `base` that lie in data
/// and point into text.
pub fn table_entries(image: &Image, base: u64, bound: u64) -> Vec<(u64, u64)> {
    (0..bound)
        .filter_map(|i| {
            let t = image.read_data_u32(base + 4 * i)? as u64;
            image.in_text(t).then_some((i, t))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDescriptor {
    pub base: u64,
    pub declared_bound: u64,
    pub effective_bound: u64,
    /// Set by finalization; `None` before trimming.
    pub final_bound: Option<u64>,
    /// End addresses of the indirect jumps reading this table. The end of a
    /// block's terminator never changes when the block is split, unlike its
    /// start.
    pub owner_ends: BTreeSet<u64>,
}

/// One descriptor per table base; safe to update from many threads.
#[derive(Debug, Clone, Default)]
pub struct TableRegistry {
    map: DashMap<u64, TableDescriptor>,
}

impl TableRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a resolution of the table at `base` by the jump ending at
    /// `owner_end`. Bounds only grow.
    pub fn record(&self, base: u64, declared: u64, effective: u64, owner_end: u64) {
        let mut d = self.map.entry(base).or_insert_with(|| TableDescriptor {
            base,
            declared_bound: declared,
            effective_bound: effective,
            final_bound: None,
            owner_ends: BTreeSet::new(),
        });
        d.declared_bound = d.declared_bound.max(declared);
        d.effective_bound = d.effective_bound.max(effective);
        d.owner_ends.insert(owner_end);
    }

    pub fn set_final(&self, base: u64, bound: u64) {
        if let Some(mut d) = self.map.get_mut(&base) {
            d.final_bound = Some(bound);
        }
    }

    pub fn get(&self, base: u64) -> Option<TableDescriptor> {
        self.map.get(&base).map(|d| d.clone())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// All descriptors sorted by base.
    pub fn descriptors(&self) -> Vec<TableDescriptor> {
        let mut v: Vec<_> = self.map.iter().map(|d| d.clone()).collect();
        v.sort_by_key(|d| d.base);
        v
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let hex = |a: u64| format!("{a:#x}");
        serde_json::Value::Array(
            self.descriptors()
                .iter()
                .map(|d| {
                    serde_json::json!({
                        "base": hex(d.base),
                        "declared_bound": d.declared_bound,
                        "effective_bound": d.effective_bound,
                        "final_bound": d.final_bound,
                    })
                })
                .collect(),
        )
    }
}

impl PartialEq for TableRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.descriptors() == other.descriptors()
    }
}

impl Eq for TableRegistry {}
