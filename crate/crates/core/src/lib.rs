//! WMMSE downlink beamforming and its unfolded projected-gradient variant.

pub mod error;
pub mod experiment;
pub mod model;
pub mod numkit;
pub mod selftest;
pub mod train;
pub mod unfolded;
pub mod wmmse;

pub use error::{Error, Result};
