pub mod checkpoint;
pub mod diagnostics;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod model;
pub mod mswe;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod vgda;

pub use error::{Error, Result};
