//! The GSB executable format, its instruction set, an assembler, a concrete
//! interpreter and wrapper discovery for shared libraries.

pub mod asm;
pub mod format;
pub mod interp;
pub mod isa;
pub mod wrappers;

pub use format::{DataString, DisasmError, Export, GsbImage, ParseError};
pub use isa::{Instruction, Opcode, INSN_SIZE};
pub use wrappers::{find_shared_library_wrappers, WrapperMap};

pub fn parse_gsb(bytes: &[u8]) -> Result<GsbImage, ParseError> {
    GsbImage::parse(bytes)
}
