//! Sensing-assisted communication beamforming: a roadside sensing node
//! localizes vehicles and a target, the base station rebuilds LoS channels
//! and designs digital or hybrid precoders that maximize the sum rate under
//! a CRLB ceiling on target-angle estimation.

pub mod arrays;
pub mod channel;
pub mod error;
pub mod estimator;
pub mod fim;
pub mod fp;
pub mod had;
pub mod harness;
pub mod linalg;
pub mod pdd;
pub mod scene;
pub mod sdp;

pub use error::{Error, Result};

/// Base-station ULA in double precision.
pub type UlaSpec = arrays::Ula<f64>;
/// Sensing-node UPA in double precision.
pub type UpaSpec = arrays::Upa<f64>;
