//! Multi-scale motion tokenization.
//!
//! Pose sequences are split into nested body-part scales, encoded per scale,
//! interpolated to per-scale token lengths and quantized with finite scalar
//! quantization over residuals. A bidirectional masked-token transformer over
//! the flattened tokens drives generation, control, editing and inpainting.

pub mod codec;
pub mod fsq;
pub mod generator;
pub mod harness;
pub mod motiondata;
pub mod numerics;
pub mod tasks;
