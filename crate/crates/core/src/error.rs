use thiserror::Error;

/// Errors raised while loading or decoding an image.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("address {0:#x} is outside the text section")]
    OutOfRange(u64),
}

/// Errors raised by the single-threaded CFG operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error("{0:#x} is not a candidate block")]
    NotACandidate(u64),
    #[error("no block starts at {0:#x}")]
    NoSuchBlock(u64),
    #[error("block at {0:#x} does not end in a direct jump, branch or call")]
    NotDirectTerminator(u64),
    #[error("block at {0:#x} does not end in an indirect jump")]
    NotIndirectTerminator(u64),
    #[error("edge {src:#x} -> {dst:#x} is not a call edge")]
    NotACallEdge { src: u64, dst: u64 },
    #[error("callee return status is unset; call fall-through must be deferred")]
    CalleeUnset,
    #[error("edge {src:#x} -> {dst:#x} not found")]
    EdgeNotFound { src: u64, dst: u64 },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Raised when a graph handed to a checked operation fails validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid graph: {0} violation(s), first: {1}")]
pub struct InvalidGraph(pub usize, pub String);

/// Return-status state machine misuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("return status of function {0:#x} already set")]
pub struct AlreadySet(pub u64);

/// Errors from the symbol table phase contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SymtabError {
    #[error("symbol table is sealed; inserts are no longer accepted")]
    Sealed,
    #[error("symbol table is still in its write phase; seal it before lookups")]
    NotSealed,
}

/// Scenario parameters outside their documented bounds.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("scenario parameter out of bounds: {0}")]
pub struct SpecOutOfBounds(pub String);
