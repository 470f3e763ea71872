//! Binary grid files: one JSON header line, then little-endian `f64` values
//! in row-major order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldSample, FieldStream, GridSpec};

pub const FORMAT: &str = "gmc-grid";
pub const VERSION: u32 = 1;
/// Header lines longer than this are rejected.
pub const MAX_HEADER: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Field,
    Mass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpHeader {
    pub format: String,
    pub version: u32,
    pub kind: GridKind,
    pub grid: GridSpec,
    pub epsilon: f64,
    pub level: usize,
    pub variance: f64,
    pub scale: f64,
    pub seed: u64,
    pub replica: u32,
    pub ladder_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

/// A decoded grid file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDump {
    pub header: DumpHeader,
    pub values: Vec<f64>,
}

impl GridDump {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let line = serde_json::to_string(&self.header)?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory");
        out
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    /// Decodes and validates a grid file held in memory.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let scan = &bytes[..bytes.len().min(MAX_HEADER + 1)];
        let nl = scan
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Decode("missing header line".into()))?;
        let header: DumpHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Decode(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Decode(format!("unknown format {:?}", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::Decode(format!("unsupported version {}", header.version)));
        }
        if !(header.epsilon.is_finite() && header.epsilon > 0.0) {
            return Err(Error::Decode("epsilon must be positive".into()));
        }
        if !(header.scale.is_finite() && header.scale > 0.0) {
            return Err(Error::Decode("scale must be positive".into()));
        }
        if !(header.variance.is_finite() && header.variance >= 0.0) {
            return Err(Error::Decode("variance must be finite and nonnegative".into()));
        }
        let body = &bytes[nl + 1..];
        let expected = header.grid.cells().checked_mul(8);
        if expected != Some(body.len()) {
            return Err(Error::Decode(format!(
                "payload has {} bytes, grid needs {}",
                body.len(),
                header.grid.cells() * 8
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Decode("non-finite grid value".into()));
        }
        if header.kind == GridKind::Mass && values.iter().any(|v| *v < 0.0) {
            return Err(Error::Decode("negative cell mass".into()));
        }
        Ok(Self { header, values })
    }

    pub fn from_field(sample: &FieldSample, config_digest: Option<String>) -> Self {
        Self {
            header: DumpHeader {
                format: FORMAT.into(),
                version: VERSION,
                kind: GridKind::Field,
                grid: sample.grid.clone(),
                epsilon: sample.epsilon,
                level: sample.level,
                variance: sample.variance,
                scale: sample.scale,
                seed: sample.stream.seed,
                replica: sample.stream.replica,
                ladder_digest: sample.ladder_digest.clone(),
                config_digest,
            },
            values: sample.values.clone(),
        }
    }

    pub fn into_field(self) -> Result<FieldSample> {
        if self.header.kind != GridKind::Field {
            return Err(Error::Decode("file holds masses, not a field".into()));
        }
        Ok(FieldSample {
            grid: self.header.grid,
            level: self.header.level,
            epsilon: self.header.epsilon,
            values: self.values,
            variance: self.header.variance,
            scale: self.header.scale,
            stream: FieldStream {
                seed: self.header.seed,
                replica: self.header.replica,
            },
            ladder_digest: self.header.ladder_digest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridDump {
        GridDump {
            header: DumpHeader {
                format: FORMAT.into(),
                version: VERSION,
                kind: GridKind::Field,
                grid: GridSpec::new(2, 4, 1.0).unwrap(),
                epsilon: 0.1,
                level: 0,
                variance: 1.5,
                scale: 0.25,
                seed: 3,
                replica: 0,
                ladder_digest: "ab".into(),
                config_digest: None,
            },
            values: (0..16).map(|i| i as f64 - 7.5).collect(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let d = sample();
        let bytes = d.to_bytes();
        assert_eq!(GridDump::decode(&bytes).unwrap(), d);
        assert_eq!(GridDump::decode(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn malformed_input_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(GridDump::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(GridDump::decode(b"no newline").is_err());
        assert!(GridDump::decode(b"{}\n").is_err());
        let mut bad = sample();
        bad.header.kind = GridKind::Mass;
        assert!(GridDump::decode(&bad.to_bytes()).is_err());
        let mut nan = sample();
        nan.values[3] = f64::NAN;
        assert!(GridDump::decode(&nan.to_bytes()).is_err());
    }
}
