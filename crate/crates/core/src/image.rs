//! The `PCFG` binary image container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "PCFG" | version: u16 = 1
//! TEXT  base: u64 | len: u32 | bytes
//! DATA  base: u64 | len: u32 | bytes
//! SYMS  count: u32 | { offset: u64 | kind: u8 | noreturn: u8 | name_len: u16 | name }*
//! ```

use crate::error::ImageError;

pub const MAGIC: &[u8; 4] = b"PCFG";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymbolKind {
    Func,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolEntry {
    pub offset: u64,
    pub mangled: String,
    pub pretty: String,
    pub typed: String,
    pub kind: SymbolKind,
    /// Name is on the known non-returning list (`exit`, `abort`, ...).
    pub known_noreturn: bool,
}

impl SymbolEntry {
    /// Builds a symbol, deriving the pretty and typed names from `mangled`.
    pub fn new(offset: u64, mangled: impl Into<String>, kind: SymbolKind, known_noreturn: bool) -> Self {
        let mangled = mangled.into();
        let pretty = match mangled.rfind('$') {
            Some(i) if i > 0 => mangled[..i].to_string(),
            _ => mangled.clone(),
        };
        let typed = match kind {
            SymbolKind::Func => format!("{pretty}()"),
            SymbolKind::Object => pretty.clone(),
        };
        SymbolEntry {
            offset,
            mangled,
            pretty,
            typed,
            kind,
            known_noreturn,
        }
    }
}

/// An immutable loaded binary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub text_base: u64,
    pub text: Vec<u8>,
    pub data_base: u64,
    pub data: Vec<u8>,
    pub symbols: Vec<SymbolEntry>,
}

fn malformed(msg: impl Into<String>) -> ImageError {
    ImageError::MalformedImage(msg.into())
}

impl Image {
    /// Assembles and validates an image from its parts.
    pub fn new(
        text_base: u64,
        text: Vec<u8>,
        data_base: u64,
        data: Vec<u8>,
        symbols: Vec<SymbolEntry>,
    ) -> Result<Self, ImageError> {
        let img = Image {
            text_base,
            text,
            data_base,
            data,
            symbols,
        };
        img.validate()?;
        Ok(img)
    }

    fn validate(&self) -> Result<(), ImageError> {
        let text_end = self
            .text_base
            .checked_add(self.text.len() as u64)
            .ok_or_else(|| malformed("text section wraps the address space"))?;
        let data_end = self
            .data_base
            .checked_add(self.data.len() as u64)
            .ok_or_else(|| malformed("data section wraps the address space"))?;
        if !self.text.is_empty()
            && !self.data.is_empty()
            && self.text_base < data_end
            && self.data_base < text_end
        {
            return Err(malformed("text and data sections overlap"));
        }
        for s in &self.symbols {
            if s.mangled.is_empty() {
                return Err(malformed("symbol with empty name"));
            }
            if s.kind == SymbolKind::Func && !(self.text_base..text_end).contains(&s.offset) {
                return Err(malformed(format!(
                    "function symbol {} at {:#x} lies outside text",
                    s.mangled, s.offset
                )));
            }
        }
        Ok(())
    }

    pub fn text_end(&self) -> u64 {
        self.text_base + self.text.len() as u64
    }

    pub fn data_end(&self) -> u64 {
        self.data_base + self.data.len() as u64
    }

    pub fn in_text(&self, addr: u64) -> bool {
        addr >= self.text_base && addr < self.text_end()
    }

    pub fn text_offset(&self, addr: u64) -> Option<usize> {
        self.in_text(addr).then(|| (addr - self.text_base) as usize)
    }

    /// Reads a little-endian `u32` from the data section.
    pub fn read_data_u32(&self, addr: u64) -> Option<u32> {
        if addr < self.data_base || addr.checked_add(4)? > self.data_end() {
            return None;
        }
        let off = (addr - self.data_base) as usize;
        Some(u32::from_le_bytes(self.data[off..off + 4].try_into().ok()?))
    }

    /// Function symbols in table order.
    pub fn func_symbols(&self) -> impl Iterator<Item = &SymbolEntry> {
        self.symbols.iter().filter(|s| s.kind == SymbolKind::Func)
    }

    /// Serializes into the container format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.text.len() + self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (base, bytes) in [(self.text_base, &self.text), (self.data_base, &self.data)] {
            out.extend_from_slice(&base.to_le_bytes());
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        out.extend_from_slice(&(self.symbols.len() as u32).to_le_bytes());
        for s in &self.symbols {
            out.extend_from_slice(&s.offset.to_le_bytes());
            out.push(match s.kind {
                SymbolKind::Func => 0,
                SymbolKind::Object => 1,
            });
            out.push(s.known_noreturn as u8);
            out.extend_from_slice(&(s.mangled.len() as u16).to_le_bytes());
            out.extend_from_slice(s.mangled.as_bytes());
        }
        out
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ImageError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed(format!("truncated {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ImageError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ImageError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ImageError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ImageError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses and validates an image container.
pub fn load_image(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let text_base = r.u64("text header")?;
    let text_len = r.u32("text header")? as usize;
    let text = r.take(text_len, "text section")?.to_vec();
    let data_base = r.u64("data header")?;
    let data_len = r.u32("data header")? as usize;
    let data = r.take(data_len, "data section")?.to_vec();
    let count = r.u32("symbol count")?;
    let mut symbols = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let offset = r.u64("symbol")?;
        let kind = match r.u8("symbol")? {
            0 => SymbolKind::Func,
            1 => SymbolKind::Object,
            k => return Err(malformed(format!("unknown symbol kind {k}"))),
        };
        let noreturn = match r.u8("symbol")? {
            0 => false,
            1 => true,
            v => return Err(malformed(format!("bad noreturn flag {v}"))),
        };
        let name_len = r.u16("symbol")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "symbol name")?)
            .map_err(|_| malformed("symbol name is not UTF-8"))?;
        symbols.push(SymbolEntry::new(offset, name, kind, noreturn));
    }
    if r.pos != bytes.len() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Image::new(text_base, text, data_base, data, symbols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Image {
        Image::new(
            0x1000,
            vec![crate::isa::OP_HALT],
            0x2000,
            vec![],
            vec![SymbolEntry::new(0x1000, "main", SymbolKind::Func, false)],
        )
        .unwrap()
    }

    #[test]
    fn minimal_roundtrip() {
        let img = minimal();
        let back = load_image(&img.to_bytes()).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.symbols.len(), 1);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = minimal().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(load_image(&bytes), Err(ImageError::MalformedImage(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let bytes = minimal().to_bytes();
        for cut in 0..bytes.len() {
            assert!(load_image(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(load_image(&extra).is_err());
    }

    #[test]
    fn overlapping_sections_rejected() {
        let err = Image::new(0x1000, vec![0; 0x100], 0x10f0, vec![0; 4], vec![]).unwrap_err();
        assert!(err.to_string().contains("overlap"));
    }

    #[test]
    fn func_symbol_outside_text_rejected() {
        let sym = SymbolEntry::new(0x1001, "f", SymbolKind::Func, false);
        assert!(Image::new(0x1000, vec![0], 0x2000, vec![], vec![sym]).is_err());
        // objects may live anywhere
        let obj = SymbolEntry::new(0x2000, "tbl", SymbolKind::Object, false);
        assert!(Image::new(0x1000, vec![0], 0x2000, vec![0; 4], vec![obj]).is_ok());
    }

    #[test]
    fn derived_names() {
        let s = SymbolEntry::new(0, "foo$cold", SymbolKind::Func, false);
        assert_eq!(s.pretty, "foo");
        assert_eq!(s.typed, "foo()");
        let o = SymbolEntry::new(0, "tbl$3", SymbolKind::Object, false);
        assert_eq!(o.typed, "tbl");
    }

    #[test]
    fn data_reads() {
        let img = Image::new(0, vec![0], 0x100, 0x40u32.to_le_bytes().to_vec(), vec![]).unwrap();
        assert_eq!(img.read_data_u32(0x100), Some(0x40));
        assert_eq!(img.read_data_u32(0x101), None);
    }
}
