//! Per-worker memory of decoded runs.
//!
//! When a worker decodes a run it remembers every instruction address in it.
//! If the same worker later has to decode from one of those addresses, the
//! suffix is rebuilt from the record instead. Nothing here is shared, and a
//! miss only costs a decode.

use std::collections::HashMap;

use crate::image::Image;
use crate::isa::{decode_bytes, InsnKind, LinearRun};

const CAPACITY: usize = 1 << 16;

#[derive(Debug)]
struct RunRecord {
    end: u64,
    terminator: InsnKind,
    ran_past_text: bool,
    hints: Vec<(u64, u16)>,
    teardowns: Vec<u64>,
}

#[derive(Debug, Default)]
pub(crate) struct LocalCache {
    index: HashMap<u64, u32>,
    runs: Vec<RunRecord>,
}

impl LocalCache {
    fn lookup(&self, addr: u64) -> Option<LinearRun> {
        let r = &self.runs[*self.index.get(&addr)? as usize];
        Some(LinearRun {
            end: r.end,
            terminator: r.terminator,
            ran_past_text: r.ran_past_text,
            last_hint: r.hints.iter().rev().find(|h| h.0 >= addr).copied(),
            teardown: r.teardowns.iter().any(|&t| t >= addr),
            decoded: 0,
        })
    }
}

/// Decodes the run from `start`, consulting and filling `cache` if given.
/// Returns the run and whether it came from the cache.
pub(crate) fn decode_run(image: &Image, start: u64, cache: Option<&mut LocalCache>) -> (LinearRun, bool) {
    if let Some(c) = cache.as_ref() {
        if let Some(run) = c.lookup(start) {
            return (run, true);
        }
    }
    let base = image.text_base;
    let text = &image.text;
    let mut off = (start - base) as usize;
    let mut addrs = Vec::new();
    let mut hints = Vec::new();
    let mut teardowns = Vec::new();
    let mut result = None;
    while off < text.len() {
        let kind = decode_bytes(&text[off..]);
        let at = base + off as u64;
        addrs.push(at);
        off += kind.len() as usize;
        match kind {
            InsnKind::BoundHint(v) => hints.push((at, v)),
            InsnKind::FrameTeardown => teardowns.push(at),
            k if k.is_control_flow() => {
                result = Some((base + off as u64, k, false));
                break;
            }
            _ => {}
        }
    }
    let (end, terminator, ran_past_text) = result.unwrap_or((image.text_end(), InsnKind::Halt, true));
    let run = LinearRun {
        end,
        terminator,
        ran_past_text,
        last_hint: hints.last().copied(),
        teardown: !teardowns.is_empty(),
        decoded: addrs.len() as u64,
    };
    if let Some(c) = cache {
        if c.index.len() + addrs.len() > CAPACITY {
            c.index.clear();
            c.runs.clear();
        }
        let id = c.runs.len() as u32;
        c.runs.push(RunRecord { end, terminator, ran_past_text, hints, teardowns });
        for a in addrs {
            c.index.insert(a, id);
        }
    }
    (run, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::linear_run;

    #[test]
    fn cached_suffix_matches_fresh_decode() {
        let mut text = Vec::new();
        for k in [
            InsnKind::BoundHint(3),
            InsnKind::Alu(1),
            InsnKind::FrameTeardown,
            InsnKind::BoundHint(9),
            InsnKind::Nop,
            InsnKind::Ret,
        ] {
            k.encode_into(&mut text);
        }
        let img = Image::new(0x100, text, 0x1000, vec![], vec![]).unwrap();
        let mut cache = LocalCache::default();
        let (first, hit) = decode_run(&img, 0x100, Some(&mut cache));
        assert!(!hit);
        assert_eq!(first, linear_run(&img, 0x100).unwrap());
        for start in [0x103, 0x106, 0x107, 0x10a, 0x10b] {
            let (run, hit) = decode_run(&img, start, Some(&mut cache));
            assert!(hit);
            let fresh = linear_run(&img, start).unwrap();
            assert_eq!((run.end, run.last_hint, run.teardown), (fresh.end, fresh.last_hint, fresh.teardown));
        }
    }
}
