pub mod analysis;
pub mod attack;
pub mod coder;
pub mod config;
pub mod error;
pub mod numerics;
pub mod plantloop;
pub mod quantizer;
pub mod transform;
pub mod zoomout;

pub use error::{Error, Result};
