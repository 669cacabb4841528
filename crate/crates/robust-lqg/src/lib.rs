pub mod cli;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod linalg;
pub mod lti;
pub mod norms;
pub mod presets;
pub mod sdp;
pub mod synthesis;
pub mod sysid;
pub mod uncertainty;

pub use error::{Error, Result};
pub use lti::{FirSeries, StateSpace, Trajectory};
