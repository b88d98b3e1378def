//! Fast differentially private mean and covariance estimation via
//! stability-based Propose-Test-Release over nested good subsets.

pub mod cores;
pub mod error;
pub mod good_subsets;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod mechanism;
pub mod oracle;
pub mod stable_cov;

pub use error::{Error, Result};
pub use linalg::{Dataset, PairedDataset, PsdMatrix, pair_and_rescale};
