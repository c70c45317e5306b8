//! Region-aware latent editing with rectified-flow models.
//!
//! The pipeline measures where source and target prompts disagree, grows a region from
//! that map, softens its boundary and runs an inversion-free editing trajectory that
//! only changes the region. Velocity fields come from a [`flow::VelocityProvider`].

pub mod config;
pub mod dam;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod tensor;

pub use config::EditConfig;
pub use error::{Error, Result};
pub use tensor::{LatentTensor, ScalarMap, Shape};
