//! Weights file: one JSON header line followed by raw little-endian `f32`
//! parameters in manifest order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Hyperparams;
use super::params::{Layout, ModelWeights, ParamSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const WEIGHTS_FORMAT: &str = "hvo-vae-weights";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub format: String,
    pub version: u32,
    pub hyperparams: Hyperparams,
    pub manifest: Vec<ParamSpec>,
    pub count: usize,
    /// SHA-256 of the parameter bytes, hex.
    pub checksum: String,
}

fn param_bytes<S: Scalar>(values: &[S]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }
    out
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Checksum of the serialized parameters; presets record it to detect a
/// change of weights.
pub fn weights_checksum<S: Scalar>(weights: &ModelWeights<S>) -> String {
    hex_digest(&param_bytes(weights.values()))
}

pub fn write_weights<S: Scalar>(weights: &ModelWeights<S>, mut out: impl Write) -> Result<()> {
    let bytes = param_bytes(weights.values());
    let header = WeightsHeader {
        format: WEIGHTS_FORMAT.into(),
        version: WEIGHTS_VERSION,
        hyperparams: *weights.hyper(),
        manifest: weights.layout().specs().to_vec(),
        count: weights.param_count(),
        checksum: hex_digest(&bytes),
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::parse("header", e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_weights<S: Scalar>(input: impl Read) -> Result<ModelWeights<S>> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::parse("header", "missing header line"));
    }
    line.pop();
    let mut de = serde_json::Deserializer::from_slice(&line);
    let header: WeightsHeader = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::parse(format!("header.{}", e.path()), e.inner().to_string()))?;
    if header.format != WEIGHTS_FORMAT {
        return Err(Error::parse("header.format", format!("unknown format `{}`", header.format)));
    }
    if header.version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "weights",
            found: header.version,
            expected: WEIGHTS_VERSION,
        });
    }
    let layout = Layout::new(&header.hyperparams);
    if header.manifest != layout.specs() {
        return Err(Error::parse("header.manifest", "manifest does not match hyperparameters"));
    }
    if header.count != layout.total() {
        return Err(Error::parse(
            "header.count",
            format!("count {} but manifest totals {}", header.count, layout.total()),
        ));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != header.count * 4 {
        return Err(Error::parse(
            "parameters",
            format!("expected {} bytes, found {}", header.count * 4, bytes.len()),
        ));
    }
    let actual = hex_digest(&bytes);
    if actual != header.checksum {
        return Err(Error::Checksum {
            expected: header.checksum,
            actual,
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| S::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    ModelWeights::from_values(header.hyperparams, values)
}

pub fn save_weights<S: Scalar>(weights: &ModelWeights<S>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_weights(weights, std::io::BufWriter::new(file))
}

pub fn load_weights<S: Scalar>(path: impl AsRef<Path>) -> Result<ModelWeights<S>> {
    read_weights(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoded(w: &ModelWeights<f32>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_weights(w, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let w = ModelWeights::<f32>::init(Hyperparams::default(), 4).unwrap();
        let buf = encoded(&w);
        let back: ModelWeights<f32> = read_weights(&buf[..]).unwrap();
        assert_eq!(back, w);
        assert_eq!(encoded(&back), buf);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let w = ModelWeights::<f32>::init(Hyperparams::tiny(), 4).unwrap();
        let mut buf = encoded(&w);
        let last = buf.len() - 1;
        buf[last] ^= 0x40;
        assert!(matches!(read_weights::<f32>(&buf[..]), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_payload_and_version_are_rejected() {
        let w = ModelWeights::<f32>::init(Hyperparams::tiny(), 4).unwrap();
        let buf = encoded(&w);
        assert!(read_weights::<f32>(&buf[..buf.len() - 4]).is_err());

        let text = String::from_utf8_lossy(&buf[..buf.iter().position(|&b| b == b'\n').unwrap()]).to_string();
        let bumped = text.replace("\"version\":1", "\"version\":9");
        let mut forged = bumped.into_bytes();
        forged.extend_from_slice(&buf[buf.iter().position(|&b| b == b'\n').unwrap()..]);
        assert!(matches!(
            read_weights::<f32>(&forged[..]),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
    }
}
