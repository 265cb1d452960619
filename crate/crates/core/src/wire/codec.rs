//! Pluggable byte-stream compression for payloads in transit.

use crate::error::{CoreError, Result};
use flate2::read::{DeflateDecoder, DeflateEncoder};
use flate2::Compression;
use std::io::Read;

/// Lossless codec applied to serialized messages. `PassThrough` is the
/// default; `Deflate` is the bundled general-purpose codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Codec {
    #[default]
    PassThrough,
    Deflate,
}

impl Codec {
    pub fn name(&self) -> &'static str {
        match self {
            Codec::PassThrough => "pass_through",
            Codec::Deflate => "deflate",
        }
    }

    pub fn compress(&self, data: &[u8]) -> Vec<u8> {
        match self {
            Codec::PassThrough => data.to_vec(),
            Codec::Deflate => {
                let mut out = Vec::new();
                DeflateEncoder::new(data, Compression::default())
                    .read_to_end(&mut out)
                    .expect("in-memory deflate cannot fail");
                out
            }
        }
    }

    pub fn decompress(&self, data: &[u8]) -> Result<Vec<u8>> {
        match self {
            Codec::PassThrough => Ok(data.to_vec()),
            Codec::Deflate => {
                let mut out = Vec::new();
                DeflateDecoder::new(data)
                    .read_to_end(&mut out)
                    .map_err(|e| CoreError::Codec(format!("deflate stream: {e}")))?;
                Ok(out)
            }
        }
    }
}
