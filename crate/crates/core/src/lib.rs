pub mod cli;
pub mod error;
pub mod lti;
pub mod model;
pub mod reach;
pub mod realize;
pub mod sdp;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
