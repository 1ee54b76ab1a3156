pub mod error;
pub mod flow;
pub mod grid;
pub mod io;
pub mod layer;
pub mod nucleation;
pub mod numerics;
pub mod pipeline;
pub mod vortex;
pub mod wave;

pub use error::{Error, Result};
