pub mod autoenc;
pub mod channel;
pub mod datastore;
pub mod embedding;
pub mod error;
pub mod exchange;
pub mod federation;
pub mod graphrl;
pub mod harness;
pub mod linalg;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
