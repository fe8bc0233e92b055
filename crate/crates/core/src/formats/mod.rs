//! On-disk formats. Binary formats are little-endian, fixed-width, and start
//! with a 4-byte magic plus a `u16` version.

pub mod bin;
pub mod config;
pub mod fastx;
pub mod fmix;
pub mod nsig;
pub mod truth;
pub mod weights;
