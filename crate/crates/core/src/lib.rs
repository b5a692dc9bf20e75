pub mod analysis;
pub mod cases;
pub mod dispatch;
pub mod error;
pub mod laplacian;
pub mod linalg;
pub mod modal;
pub mod network;
pub mod numfmt;
pub mod oracle;
pub mod powerflow;
pub mod sensitivity;

pub use analysis::Analysis;
pub use error::{Error, Result};
pub use network::Network;
