pub mod bench;
pub mod config;
pub mod detector;
pub mod embeddings;
pub mod error;
pub mod esm;
pub mod eval;
pub mod frame_io;
pub mod geometry;
pub mod narration;
pub mod live;
pub mod otm;
pub mod qa;
pub mod session;
pub mod pipeline;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
