//! Synchronizing unsynchronized multi-camera views for multi-view crowd
//! counting.
//!
//! The crate is organized bottom-up: raw [`kernels`] and a reverse-mode
//! [`autograd`] tape, camera [`geometry`], the convolutional
//! [`neural_blocks`], the view-synchronization modules in [`sync`], training
//! [`losses`], a synthetic [`scene_sim`] data source, and the end-to-end
//! [`pipeline`].

pub mod autograd;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod losses;
pub mod maps;
pub mod neural_blocks;
pub mod par;
pub mod pipeline;
pub mod scene_sim;
pub mod selftest;
pub mod sync;
pub mod tensor;

pub use error::{Error, Result};
pub use maps::{DensityMap, FeatureMap, FrameOfReference, MotionFlow};
pub use tensor::Tensor;
