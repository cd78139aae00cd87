//! The toy instruction set.
//!
//! Every instruction starts with a one-byte opcode. Operands are little-endian
//! and all branch targets are absolute addresses. Bytes that do not form a
//! defined instruction (unknown opcodes, or an instruction that would run past
//! the end of text) decode as a one-byte `Nop`, so linear decoding is total.

use crate::error::ImageError;
use crate::image::Image;

pub const OP_NOP: u8 = 0x00;
pub const OP_ALU: u8 = 0x01;
pub const OP_JMP: u8 = 0x02;
pub const OP_JCC: u8 = 0x03;
pub const OP_CALL: u8 = 0x04;
pub const OP_RET: u8 = 0x05;
pub const OP_IJMP_TABLE: u8 = 0x06;
pub const OP_IJMP_OPAQUE: u8 = 0x07;
pub const OP_HALT: u8 = 0x08;
pub const OP_TEARDOWN: u8 = 0x09;
pub const OP_BOUND_HINT: u8 = 0x0a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InsnKind {
    Nop,
    /// Arithmetic filler; the operand carries no meaning for analysis.
    Alu(u16),
    /// Stack frame tear-down (an epilogue like `leave`).
    FrameTeardown,
    /// Range check feeding a later table jump; `imm` is the entry count it admits.
    BoundHint(u16),
    JmpDirect(u64),
    JccDirect(u64),
    Call(u64),
    Ret,
    IJmpTable { base: u64, bound_hint: u16 },
    IJmpOpaque,
    Halt,
}

impl InsnKind {
    pub fn is_control_flow(&self) -> bool {
        matches!(
            self,
            InsnKind::JmpDirect(_)
                | InsnKind::JccDirect(_)
                | InsnKind::Call(_)
                | InsnKind::Ret
                | InsnKind::IJmpTable { .. }
                | InsnKind::IJmpOpaque
                | InsnKind::Halt
        )
    }

    pub fn len(&self) -> u64 {
        match self {
            InsnKind::Nop
            | InsnKind::Ret
            | InsnKind::IJmpOpaque
            | InsnKind::Halt
            | InsnKind::FrameTeardown => 1,
            InsnKind::Alu(_) | InsnKind::BoundHint(_) => 3,
            InsnKind::JmpDirect(_) | InsnKind::JccDirect(_) | InsnKind::Call(_) => 5,
            InsnKind::IJmpTable { .. } => 7,
        }
    }

    /// Appends the encoding of this instruction to `out`.
    ///
    /// Targets and table bases must fit in 32 bits.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let addr32 = |a: u64| -> [u8; 4] {
            let v = u32::try_from(a).expect("toy ISA addresses are 32-bit");
            v.to_le_bytes()
        };
        match *self {
            InsnKind::Nop => out.push(OP_NOP),
            InsnKind::Alu(v) => {
                out.push(OP_ALU);
                out.extend_from_slice(&v.to_le_bytes());
            }
            InsnKind::FrameTeardown => out.push(OP_TEARDOWN),
            InsnKind::BoundHint(v) => {
                out.push(OP_BOUND_HINT);
                out.extend_from_slice(&v.to_le_bytes());
            }
            InsnKind::JmpDirect(t) => {
                out.push(OP_JMP);
                out.extend_from_slice(&addr32(t));
            }
            InsnKind::JccDirect(t) => {
                out.push(OP_JCC);
                out.extend_from_slice(&addr32(t));
            }
            InsnKind::Call(t) => {
                out.push(OP_CALL);
                out.extend_from_slice(&addr32(t));
            }
            InsnKind::Ret => out.push(OP_RET),
            InsnKind::IJmpTable { base, bound_hint } => {
                out.push(OP_IJMP_TABLE);
                out.extend_from_slice(&addr32(base));
                out.extend_from_slice(&bound_hint.to_le_bytes());
            }
            InsnKind::IJmpOpaque => out.push(OP_IJMP_OPAQUE),
            InsnKind::Halt => out.push(OP_HALT),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.len() as usize);
        self.encode_into(&mut v);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub addr: u64,
    pub kind: InsnKind,
}

impl Instruction {
    pub fn len(&self) -> u64 {
        self.kind.len()
    }

    pub fn end(&self) -> u64 {
        self.addr + self.kind.len()
    }

    pub fn is_control_flow(&self) -> bool {
        self.kind.is_control_flow()
    }
}

/// Decodes a single instruction from raw bytes. `bytes` starts at the
/// instruction and extends to the end of text.
pub fn decode_bytes(bytes: &[u8]) -> InsnKind {
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at =
        |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as u64;
    let Some(&op) = bytes.first() else {
        return InsnKind::Nop;
    };
    match op {
        OP_ALU if bytes.len() >= 3 => InsnKind::Alu(u16_at(1)),
        OP_JMP if bytes.len() >= 5 => InsnKind::JmpDirect(u32_at(1)),
        OP_JCC if bytes.len() >= 5 => InsnKind::JccDirect(u32_at(1)),
        OP_CALL if bytes.len() >= 5 => InsnKind::Call(u32_at(1)),
        OP_RET => InsnKind::Ret,
        OP_IJMP_TABLE if bytes.len() >= 7 => InsnKind::IJmpTable {
            base: u32_at(1),
            bound_hint: u16_at(5),
        },
        OP_IJMP_OPAQUE => InsnKind::IJmpOpaque,
        OP_HALT => InsnKind::Halt,
        OP_TEARDOWN => InsnKind::FrameTeardown,
        OP_BOUND_HINT if bytes.len() >= 3 => InsnKind::BoundHint(u16_at(1)),
        _ => InsnKind::Nop,
    }
}

/// Decodes the instruction starting at `addr`.
pub fn decode(image: &Image, addr: u64) -> Result<Instruction, ImageError> {
    let off = image.text_offset(addr).ok_or(ImageError::OutOfRange(addr))?;
    Ok(Instruction {
        addr,
        kind: decode_bytes(&image.text[off..]),
    })
}

/// True iff decoding forward from `lo`, some control-flow instruction starts
/// and ends within `[lo, hi]`.
pub fn contains_cfi(image: &Image, lo: u64, hi: u64) -> Result<bool, ImageError> {
    if lo >= hi {
        return Ok(false);
    }
    if !image.in_text(lo) {
        return Err(ImageError::OutOfRange(lo));
    }
    if hi > image.text_end() {
        return Err(ImageError::OutOfRange(hi));
    }
    let mut addr = lo;
    while addr < hi {
        let insn = decode(image, addr)?;
        if insn.end() > hi {
            return Ok(false);
        }
        if insn.is_control_flow() {
            return Ok(true);
        }
        addr = insn.end();
    }
    Ok(false)
}

/// Result of decoding straight-line code from a block start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearRun {
    /// Address just after the terminating instruction.
    pub end: u64,
    /// The terminating control-flow instruction. `Halt` is synthesized when
    /// decoding runs off the end of text.
    pub terminator: InsnKind,
    /// Whether the terminator was synthesized at the end of text.
    pub ran_past_text: bool,
    /// Address and immediate of the last `BoundHint` decoded before the
    /// terminator.
    pub last_hint: Option<(u64, u16)>,
    /// Whether a `FrameTeardown` was decoded before the terminator.
    pub teardown: bool,
    /// Number of instructions decoded, terminator included.
    pub decoded: u64,
}

/// Decodes from `start` until the first control-flow instruction.
pub fn linear_run(image: &Image, start: u64) -> Result<LinearRun, ImageError> {
    let mut off = image.text_offset(start).ok_or(ImageError::OutOfRange(start))?;
    let mut last_hint = None;
    let mut teardown = false;
    let mut decoded = 0;
    while off < image.text.len() {
        let kind = decode_bytes(&image.text[off..]);
        let at = image.text_base + off as u64;
        decoded += 1;
        off += kind.len() as usize;
        match kind {
            InsnKind::BoundHint(v) => last_hint = Some((at, v)),
            InsnKind::FrameTeardown => teardown = true,
            k if k.is_control_flow() => {
                return Ok(LinearRun {
                    end: image.text_base + off as u64,
                    terminator: k,
                    ran_past_text: false,
                    last_hint,
                    teardown,
                    decoded,
                })
            }
            _ => {}
        }
    }
    Ok(LinearRun {
        end: image.text_end(),
        terminator: InsnKind::Halt,
        ran_past_text: true,
        last_hint,
        teardown,
        decoded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_with(text: Vec<u8>) -> Image {
        Image::new(0, text, 0x10_0000, Vec::new(), Vec::new()).unwrap()
    }

    #[test]
    fn ret_opcode() {
        let img = image_with(vec![OP_ALU, 0, 0, OP_RET]);
        let i = decode(&img, 3).unwrap();
        assert_eq!(i.kind, InsnKind::Ret);
        assert_eq!(i.len(), 1);
    }

    #[test]
    fn jmp_direct_little_endian() {
        let img = image_with(vec![0x02, 0x00, 0x04, 0x00, 0x00]);
        let i = decode(&img, 0).unwrap();
        assert_eq!(i.kind, InsnKind::JmpDirect(0x400));
        assert_eq!(i.len(), 5);
    }

    #[test]
    fn decode_past_text_is_out_of_range() {
        let img = image_with(vec![OP_RET]);
        assert_eq!(decode(&img, 1), Err(ImageError::OutOfRange(1)));
    }

    #[test]
    fn undefined_and_truncated_bytes_are_nops() {
        let img = image_with(vec![0xff, OP_JMP, 0x00]);
        assert_eq!(decode(&img, 0).unwrap().kind, InsnKind::Nop);
        assert_eq!(decode(&img, 1).unwrap().kind, InsnKind::Nop);
    }

    #[test]
    fn contains_cfi_cases() {
        let mut text = Vec::new();
        InsnKind::Alu(7).encode_into(&mut text);
        InsnKind::Nop.encode_into(&mut text);
        InsnKind::Ret.encode_into(&mut text);
        let img = image_with(text);
        assert!(!contains_cfi(&img, 0, 4).unwrap());
        assert!(contains_cfi(&img, 0, 5).unwrap());
        assert!(!contains_cfi(&img, 2, 2).unwrap());
    }

    #[test]
    fn linear_run_past_text_synthesizes_halt() {
        let img = image_with(vec![OP_NOP, OP_BOUND_HINT, 4, 0, OP_TEARDOWN]);
        let run = linear_run(&img, 0).unwrap();
        assert!(run.ran_past_text);
        assert_eq!(run.end, 5);
        assert_eq!(run.terminator, InsnKind::Halt);
        assert_eq!(run.last_hint, Some((1, 4)));
        assert!(run.teardown);
    }

    fn any_kind() -> impl Strategy<Value = InsnKind> {
        prop_oneof![
            Just(InsnKind::Nop),
            any::<u16>().prop_map(InsnKind::Alu),
            Just(InsnKind::FrameTeardown),
            any::<u16>().prop_map(InsnKind::BoundHint),
            any::<u32>().prop_map(|t| InsnKind::JmpDirect(t as u64)),
            any::<u32>().prop_map(|t| InsnKind::JccDirect(t as u64)),
            any::<u32>().prop_map(|t| InsnKind::Call(t as u64)),
            Just(InsnKind::Ret),
            (any::<u32>(), any::<u16>()).prop_map(|(b, h)| InsnKind::IJmpTable {
                base: b as u64,
                bound_hint: h
            }),
            Just(InsnKind::IJmpOpaque),
            Just(InsnKind::Halt),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(kind in any_kind()) {
            let bytes = kind.encode();
            prop_assert_eq!(bytes.len() as u64, kind.len());
            prop_assert_eq!(decode_bytes(&bytes), kind);
        }

        #[test]
        fn contains_cfi_is_monotone(kinds in proptest::collection::vec(any_kind(), 1..12), a in 0usize..64, b in 0usize..64) {
            let mut text = Vec::new();
            for k in &kinds { k.encode_into(&mut text); }
            let img = image_with(text.clone());
            let len = text.len() as u64;
            let (h1, h2) = ((a as u64).min(len), (b as u64).min(len));
            let (h1, h2) = (h1.min(h2), h1.max(h2));
            if contains_cfi(&img, 0, h1).unwrap() {
                prop_assert!(contains_cfi(&img, 0, h2).unwrap());
            }
        }
    }
}
