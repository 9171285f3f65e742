//! `ASCP1` parameter checkpoints: magic, little-endian u32 count, then f32
//! little-endian values in layer order.

use std::fs;
use std::path::Path;

use asc_core::model::{Layout, ParamVector};

use crate::error::{CliError, FormatError, Result};

pub const MAGIC: &[u8; 5] = b"ASCP1";

/// Values are narrowed to f32 on write.
pub fn encode(p: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * p.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    for &v in p.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], layout: Layout) -> std::result::Result<ParamVector, FormatError> {
    if bytes.len() < 5 || &bytes[..5] != MAGIC {
        return Err(FormatError::BadMagic {
            expected: "ASCP1",
            found: bytes[..bytes.len().min(5)].to_vec(),
        });
    }
    if bytes.len() < 9 {
        return Err(FormatError::Truncated {
            expected: 9,
            found: bytes.len(),
        });
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if count != layout.len() {
        return Err(FormatError::ParamCount {
            expected: layout.len(),
            found: count,
        });
    }
    let payload = &bytes[9..];
    if payload.len() < 4 * count {
        return Err(FormatError::Truncated {
            expected: 4 * count,
            found: payload.len(),
        });
    }
    if payload.len() > 4 * count {
        return Err(FormatError::TrailingBytes(payload.len() - 4 * count));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFiniteValue(i));
    }
    Ok(ParamVector::from_values(layout, values).expect("count and values checked"))
}

pub fn write(path: &Path, p: &ParamVector) -> Result<()> {
    fs::write(path, encode(p)).map_err(CliError::io(path))
}

pub fn read(path: &Path, layout: Layout) -> Result<ParamVector> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes, layout).map_err(CliError::format(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use asc_core::model::{init_params, NetConfig};

    #[test]
    fn round_trip_through_f32() {
        let cfg = NetConfig::new(8, 4, 3).unwrap();
        let p = init_params(&cfg);
        let bytes = encode(&p);
        assert_eq!(bytes.len(), 9 + 4 * 1996);
        assert_eq!(&bytes[5..9], &1996u32.to_le_bytes());
        let back = decode(&bytes, cfg.layout()).unwrap();
        for (a, b) in p.values().iter().zip(back.values()) {
            assert_eq!(*a as f32, *b as f32);
        }
        // A second pass is exact once values are representable in f32.
        assert_eq!(decode(&encode(&back), cfg.layout()).unwrap(), back);
    }

    #[test]
    fn rejects_wrong_network() {
        let p = init_params(&NetConfig::new(2, 2, 0).unwrap());
        let other = NetConfig::new(8, 4, 0).unwrap().layout();
        assert!(matches!(
            decode(&encode(&p), other),
            Err(FormatError::ParamCount { .. })
        ));
        assert!(matches!(decode(b"ASCQ1", other), Err(FormatError::BadMagic { .. })));
        let mut bytes = encode(&p);
        bytes.pop();
        assert!(matches!(decode(&bytes, p.layout()), Err(FormatError::Truncated { .. })));
    }
}
