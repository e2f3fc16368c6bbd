//! Shape and roll tracking of marker-equipped catheters under biplane
//! fluoroscopy, in simulation.

pub mod biplane;
pub mod config;
pub mod design;
pub mod error;
pub mod estimator;
pub mod imaging;
pub mod io;
pub mod kinematics;
pub mod pipeline;
pub mod reconstruction;
pub mod rng;
pub mod studies;

pub use error::{Error, Result};
