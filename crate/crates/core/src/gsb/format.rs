//! The GSB container: a flat executable image with one code and one data
//! section, a string table, and import/export tables.
//!
//! ```text
//! offset  field
//! 0       magic "GSB1"
//! 4       flags            (bit 0: library)
//! 8       entry
//! 12      code_base
//! 16      code_off
//! 20      code_len         (multiple of 8)
//! 24      data_base
//! 28      data_off
//! 32      data_len
//! 36      import_count
//! 40      import_table_off (u32 name offset into strtab, per import)
//! 44      export_count
//! 48      export_table_off (u32 name offset + u32 address, per export)
//! 52      strtab_off
//! 56      strtab_len
//! ```
//!
//! All fields are little-endian u32.

use serde::{Deserialize, Serialize};

use super::isa::{DecodeError, Instruction, Opcode, INSN_SIZE};

pub const MAGIC: &[u8; 4] = b"GSB1";
pub const HEADER_LEN: usize = 60;
pub const FLAG_LIBRARY: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("code length {0} is not a multiple of 8")]
    UnalignedCode(u32),
    #[error("entry {0:#x} outside the code section")]
    EntryOutOfRange(u32),
    #[error("export `{name}` at {address:#x} is not an aligned code address")]
    BadExport { name: String, address: u32 },
    #[error("name offset {0:#x} is not a valid string in strtab")]
    BadName(u32),
    #[error("import index {index} out of range at {address:#x}")]
    ImportIndexOutOfRange { address: u32, index: i32 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot decode instruction at {address:#x}: {source}")]
pub struct DisasmError {
    pub address: u32,
    #[source]
    pub source: DecodeError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Export {
    pub name: String,
    pub address: u32,
}

/// A NUL-terminated printable string found in the data section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataString {
    pub address: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GsbImage {
    pub is_library: bool,
    pub entry: u32,
    pub code_base: u32,
    pub code: Vec<u8>,
    pub data_base: u32,
    pub data: Vec<u8>,
    pub imports: Vec<String>,
    pub exports: Vec<Export>,
    /// Raw string table bytes (import and export names).
    pub strtab: Vec<u8>,
    pub strings: Vec<DataString>,
}

fn u32_at(bytes: &[u8], off: usize, what: &'static str) -> Result<u32, ParseError> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(ParseError::Truncated(what))
}

fn slice<'a>(bytes: &'a [u8], off: u32, len: u32, what: &'static str) -> Result<&'a [u8], ParseError> {
    let start = off as usize;
    let end = start.checked_add(len as usize).ok_or(ParseError::Truncated(what))?;
    bytes.get(start..end).ok_or(ParseError::Truncated(what))
}

fn name_at(strtab: &[u8], off: u32) -> Result<String, ParseError> {
    let tail = strtab.get(off as usize..).ok_or(ParseError::BadName(off))?;
    let nul = tail.iter().position(|&b| b == 0).ok_or(ParseError::BadName(off))?;
    String::from_utf8(tail[..nul].to_vec()).map_err(|_| ParseError::BadName(off))
}

/// Maximal runs of printable bytes terminated by NUL, at least two bytes long.
pub fn extract_strings(data: &[u8], base: u32) -> Vec<DataString> {
    let printable = |b: u8| (0x20..0x7f).contains(&b) || b == b'\t' || b == b'\n' || b == b'\r';
    let mut out = Vec::new();
    let mut start = None;
    for (i, &b) in data.iter().enumerate() {
        if printable(b) {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            if b == 0 && i - s >= 2 {
                out.push(DataString {
                    address: base.wrapping_add(s as u32),
                    text: String::from_utf8_lossy(&data[s..i]).into_owned(),
                });
            }
        }
    }
    out
}

impl GsbImage {
    pub fn parse(bytes: &[u8]) -> Result<GsbImage, ParseError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(ParseError::BadMagic);
        }
        let flags = u32_at(bytes, 4, "flags")?;
        let entry = u32_at(bytes, 8, "entry")?;
        let code_base = u32_at(bytes, 12, "code_base")?;
        let code_off = u32_at(bytes, 16, "code_off")?;
        let code_len = u32_at(bytes, 20, "code_len")?;
        let data_base = u32_at(bytes, 24, "data_base")?;
        let data_off = u32_at(bytes, 28, "data_off")?;
        let data_len = u32_at(bytes, 32, "data_len")?;
        let import_count = u32_at(bytes, 36, "import_count")?;
        let import_off = u32_at(bytes, 40, "import_table_off")?;
        let export_count = u32_at(bytes, 44, "export_count")?;
        let export_off = u32_at(bytes, 48, "export_table_off")?;
        let strtab_off = u32_at(bytes, 52, "strtab_off")?;
        let strtab_len = u32_at(bytes, 56, "strtab_len")?;

        if code_len % INSN_SIZE != 0 {
            return Err(ParseError::UnalignedCode(code_len));
        }
        let code = slice(bytes, code_off, code_len, "code section")?.to_vec();
        let data = slice(bytes, data_off, data_len, "data section")?.to_vec();
        let strtab = slice(bytes, strtab_off, strtab_len, "string table")?.to_vec();
        let import_table = slice(
            bytes,
            import_off,
            import_count.checked_mul(4).ok_or(ParseError::Truncated("import table"))?,
            "import table",
        )?;
        let export_table = slice(
            bytes,
            export_off,
            export_count.checked_mul(8).ok_or(ParseError::Truncated("export table"))?,
            "export table",
        )?;

        let imports = import_table
            .chunks_exact(4)
            .map(|c| name_at(&strtab, u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect::<Result<Vec<_>, _>>()?;

        let code_end = code_base as u64 + code_len as u64;
        let in_code = |a: u32| (a as u64) >= code_base as u64 && (a as u64) < code_end;
        let mut exports = Vec::with_capacity(export_count as usize);
        for c in export_table.chunks_exact(8) {
            let name = name_at(&strtab, u32::from_le_bytes([c[0], c[1], c[2], c[3]]))?;
            let address = u32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            if !in_code(address) || (address - code_base) % INSN_SIZE != 0 {
                return Err(ParseError::BadExport { name, address });
            }
            exports.push(Export { name, address });
        }

        let entry_ok = if code_len == 0 {
            entry == code_base
        } else {
            in_code(entry) && (entry - code_base) % INSN_SIZE == 0
        };
        if !entry_ok {
            return Err(ParseError::EntryOutOfRange(entry));
        }

        for (k, chunk) in code.chunks_exact(INSN_SIZE as usize).enumerate() {
            if chunk[0] == Opcode::Icall as u8 {
                let index = i32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]);
                if index < 0 || index as u32 >= import_count {
                    return Err(ParseError::ImportIndexOutOfRange {
                        address: code_base + INSN_SIZE * k as u32,
                        index,
                    });
                }
            }
        }

        let strings = extract_strings(&data, data_base);
        Ok(GsbImage {
            is_library: flags & FLAG_LIBRARY != 0,
            entry,
            code_base,
            code,
            data_base,
            data,
            imports,
            exports,
            strtab,
            strings,
        })
    }

    /// Serialize to the on-disk layout: header, code, data, strtab, imports, exports.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut strtab: Vec<u8> = Vec::new();
        let intern = |name: &str, strtab: &mut Vec<u8>| -> u32 {
            let off = strtab.len() as u32;
            strtab.extend_from_slice(name.as_bytes());
            strtab.push(0);
            off
        };
        let import_offs: Vec<u32> = self.imports.iter().map(|n| intern(n, &mut strtab)).collect();
        let export_offs: Vec<u32> =
            self.exports.iter().map(|e| intern(&e.name, &mut strtab)).collect();

        let code_off = HEADER_LEN as u32;
        let data_off = code_off + self.code.len() as u32;
        let strtab_off = data_off + self.data.len() as u32;
        let import_off = strtab_off + strtab.len() as u32;
        let export_off = import_off + 4 * self.imports.len() as u32;

        let header = [
            if self.is_library { FLAG_LIBRARY } else { 0 },
            self.entry,
            self.code_base,
            code_off,
            self.code.len() as u32,
            self.data_base,
            data_off,
            self.data.len() as u32,
            self.imports.len() as u32,
            import_off,
            self.exports.len() as u32,
            export_off,
            strtab_off,
            strtab.len() as u32,
        ];
        let mut out = Vec::with_capacity(export_off as usize + 8 * self.exports.len());
        out.extend_from_slice(MAGIC);
        for field in header {
            out.extend_from_slice(&field.to_le_bytes());
        }
        out.extend_from_slice(&self.code);
        out.extend_from_slice(&self.data);
        out.extend_from_slice(&strtab);
        for off in import_offs {
            out.extend_from_slice(&off.to_le_bytes());
        }
        for (e, off) in self.exports.iter().zip(export_offs) {
            out.extend_from_slice(&off.to_le_bytes());
            out.extend_from_slice(&e.address.to_le_bytes());
        }
        out
    }

    pub fn code_end(&self) -> u32 {
        self.code_base.wrapping_add(self.code.len() as u32)
    }

    pub fn in_code(&self, addr: u32) -> bool {
        addr >= self.code_base && (addr as u64) < self.code_base as u64 + self.code.len() as u64
    }

    /// Aligned instruction address inside the code section.
    pub fn is_insn_addr(&self, addr: u32) -> bool {
        self.in_code(addr) && (addr - self.code_base) % INSN_SIZE == 0
    }

    pub fn in_data(&self, addr: u32) -> bool {
        addr >= self.data_base && (addr as u64) < self.data_base as u64 + self.data.len() as u64
    }

    pub fn disassemble(&self) -> Result<Vec<(u32, Instruction)>, DisasmError> {
        self.code
            .chunks_exact(INSN_SIZE as usize)
            .enumerate()
            .map(|(k, chunk)| {
                let address = self.code_base + INSN_SIZE * k as u32;
                Instruction::decode(chunk)
                    .map(|insn| (address, insn))
                    .map_err(|source| DisasmError { address, source })
            })
            .collect()
    }

    pub fn insn_at(&self, addr: u32) -> Option<Instruction> {
        if !self.is_insn_addr(addr) {
            return None;
        }
        let off = (addr - self.code_base) as usize;
        Instruction::decode(&self.code[off..off + INSN_SIZE as usize]).ok()
    }

    pub fn byte_at(&self, addr: u32) -> Option<u8> {
        if self.in_data(addr) {
            Some(self.data[(addr - self.data_base) as usize])
        } else if self.in_code(addr) {
            Some(self.code[(addr - self.code_base) as usize])
        } else {
            None
        }
    }

    /// Little-endian word from the data or code section.
    pub fn read_u32(&self, addr: u32) -> Option<u32> {
        let mut b = [0u8; 4];
        for (i, slot) in b.iter_mut().enumerate() {
            *slot = self.byte_at(addr.checked_add(i as u32)?)?;
        }
        Some(u32::from_le_bytes(b))
    }

    /// NUL-terminated string starting at `addr` in the data section.
    pub fn read_cstr(&self, addr: u32) -> Option<String> {
        if !self.in_data(addr) {
            return None;
        }
        let tail = &self.data[(addr - self.data_base) as usize..];
        let nul = tail.iter().position(|&b| b == 0)?;
        String::from_utf8(tail[..nul].to_vec()).ok()
    }

    /// Whether the data word at `addr` is still all zeroes (an unset global).
    pub fn is_zero_data_word(&self, addr: u32) -> bool {
        (0..4).all(|i| {
            let a = addr.wrapping_add(i);
            self.in_data(a) && self.data[(a - self.data_base) as usize] == 0
        })
    }

    pub fn export_named(&self, name: &str) -> Option<u32> {
        self.exports.iter().find(|e| e.name == name).map(|e| e.address)
    }

    pub fn import_index(&self, name: &str) -> Option<u32> {
        self.imports.iter().position(|n| n == name).map(|i| i as u32)
    }

    pub fn import_name(&self, index: i32) -> Option<&str> {
        usize::try_from(index).ok().and_then(|i| self.imports.get(i)).map(String::as_str)
    }

    pub fn has_prologue_at(&self, addr: u32) -> bool {
        self.insn_at(addr).is_some_and(|i| i.is_prologue())
    }
}
