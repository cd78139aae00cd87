//! Parallel control-flow-graph construction over a toy binary image format.
//!
//! The pipeline has three stages: seed function entries from the symbol table,
//! traverse code from those entries (discovering blocks, edges, more functions
//! and return statuses), then finalize the graph (trim over-read jump tables,
//! settle tail calls, prune stray entries).
//!
//! [`serial::serial_construct`] runs the pipeline on one thread with plain
//! graph operations and serves as the reference. [`engine::construct`] runs it
//! on a worker pool; its output is byte-identical to the reference under
//! [`cfg::canonical_serialize`].
//!
//! ```
//! use pcfg::workload::{generate, Scenario};
//!
//! let (image, _truth) = generate(&Scenario::TailcallAmbiguous, 1).unwrap();
//! let serial = pcfg::serial::serial_construct(&image).unwrap();
//! let parallel = pcfg::engine::construct(&image, 4).unwrap();
//! assert_eq!(
//!     pcfg::cfg::canonical_serialize(&serial.cfg).unwrap(),
//!     pcfg::cfg::canonical_serialize(&parallel.cfg).unwrap(),
//! );
//! ```

pub mod cfg;
pub mod engine;
pub mod error;
pub mod finalize;
pub mod image;
pub mod isa;
pub mod serial;
pub mod symtab;
pub mod tables;
pub mod verify;
pub mod workload;

pub use cfg::{canonical_serialize, Block, Cfg, Edge, EdgeKind, FunctionEntry, ReturnStatus};
pub use error::{AlreadySet, ImageError, InvalidGraph, OpError, SpecOutOfBounds, SymtabError};
pub use image::{load_image, Image, SymbolEntry, SymbolKind};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/image-format.md")]
    mod image_format {}
    #[doc = include_str!("../../../book/src/graph-model.md")]
    mod graph_model {}
    #[doc = include_str!("../../../book/src/operations.md")]
    mod operations {}
    #[doc = include_str!("../../../book/src/parallel-engine.md")]
    mod parallel_engine {}
    #[doc = include_str!("../../../book/src/jump-tables.md")]
    mod jump_tables {}
    #[doc = include_str!("../../../book/src/finalization.md")]
    mod finalization {}
    #[doc = include_str!("../../../book/src/workloads.md")]
    mod workloads {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
