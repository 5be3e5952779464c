//! Toolkit for measuring and exploiting decompression-timing differences in
//! LZ-family codecs: a low-noise timing harness, a layout builder and
//! evolutionary search that amplify correct-vs-incorrect guess gaps, attack
//! drivers, covert-channel encoders, and mock victim services to run them
//! against.

pub mod attack;
pub mod codec;
pub mod covert;
pub mod error;
pub mod fuzzer;
pub mod layout;
pub mod pglz;
pub mod service;
pub mod timing;

pub use codec::{AcceptancePolicy, AcceptanceRule, CodecId, CompressedBlob, CompressionLevel};
pub use error::{Error, Result};
