//! Texture-feature retrieval with self-describing images: a Gabor filter
//! bank produces rotation-normalizable texture signatures, which can be
//! embedded into the image itself via DCT coefficient parity, indexed,
//! queried locally, or served over a small TCP protocol.

pub mod config;
pub mod dct;
pub mod error;
pub mod eval;
pub mod gabor;
pub mod image;
pub mod net;
pub mod pnm;
pub mod retrieval;
pub mod stego;

pub use error::{Error, Result};
pub use image::GrayImage;
