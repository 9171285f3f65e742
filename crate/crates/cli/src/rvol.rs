//! `RVOL1` volume files: 5-byte magic, 1-byte dtype tag (0 f32, 1 u8),
//! three little-endian u32 dims (D, H, W), then the little-endian payload in
//! row-major order with W fastest.

use std::fs;
use std::path::Path;

use asc_core::{Dims, LabelMap, Volume};

use crate::error::{CliError, FormatError, Result};

pub const MAGIC: &[u8; 5] = b"RVOL1";
const HEADER_LEN: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
}

impl Dtype {
    fn from_tag(tag: u8) -> std::result::Result<Self, FormatError> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            t => Err(FormatError::UnknownDtype(t)),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32 volume",
            Dtype::U8 => "u8 label",
        }
    }
}

/// Contents of an RVOL file.
#[derive(Debug, Clone, PartialEq)]
pub enum Rvol {
    Volume(Volume),
    Labels(LabelMap),
}

fn header(dtype: Dtype, dims: Dims) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + dims.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    for n in dims.as_array() {
        let n = u32::try_from(n).expect("dims fit in u32");
        out.extend_from_slice(&n.to_le_bytes());
    }
    out
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = header(Dtype::F32, v.dims());
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn encode_labels(y: &LabelMap) -> Vec<u8> {
    let mut out = header(Dtype::U8, y.dims());
    out.extend_from_slice(y.data());
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Rvol, FormatError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(FormatError::BadMagic {
            expected: "RVOL1",
            found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dtype = Dtype::from_tag(bytes[5])?;
    let dim = |k: usize| u32::from_le_bytes(bytes[6 + 4 * k..10 + 4 * k].try_into().unwrap());
    let (d, h, w) = (dim(0), dim(1), dim(2));
    let count = (d as usize)
        .checked_mul(h as usize)
        .and_then(|n| n.checked_mul(w as usize))
        .filter(|&n| n > 0)
        .ok_or(FormatError::BadDims { d, h, w })?;
    let expected = count
        .checked_mul(dtype.width())
        .ok_or(FormatError::BadDims { d, h, w })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::TrailingBytes(payload.len() - expected));
    }
    let dims = Dims::new(d as usize, h as usize, w as usize);
    let parsed = match dtype {
        Dtype::F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Volume::new(dims, data).map(Rvol::Volume)
        }
        Dtype::U8 => LabelMap::new(dims, payload.to_vec()).map(Rvol::Labels),
    };
    Ok(parsed.expect("length checked against dims"))
}

fn read_file(path: &Path) -> Result<Rvol> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes).map_err(CliError::format(path))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match read_file(path)? {
        Rvol::Volume(v) => Ok(v),
        Rvol::Labels(_) => Err(CliError::format(path)(FormatError::WrongDtype {
            expected: Dtype::F32.name(),
            found: Dtype::U8.name(),
        })),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    match read_file(path)? {
        Rvol::Labels(y) => Ok(y),
        Rvol::Volume(_) => Err(CliError::format(path)(FormatError::WrongDtype {
            expected: Dtype::U8.name(),
            found: Dtype::F32.name(),
        })),
    }
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    fs::write(path, encode_volume(v)).map_err(CliError::io(path))
}

pub fn write_labels(path: &Path, y: &LabelMap) -> Result<()> {
    fs::write(path, encode_labels(y)).map_err(CliError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_cube_round_trip() {
        let v = Volume::filled(Dims::cube(2), 0.5);
        let bytes = encode_volume(&v);
        assert_eq!(bytes.len(), 18 + 32);
        assert_eq!(&bytes[..6], b"RVOL1\0");
        assert_eq!(decode(&bytes).unwrap(), Rvol::Volume(v));
    }

    #[test]
    fn header_layout() {
        let y = LabelMap::new(Dims::new(1, 2, 3), vec![0, 1, 2, 3, 4, 5]).unwrap();
        let bytes = encode_labels(&y);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..18], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[18..], &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode(b"XXXX"), Err(FormatError::BadMagic { .. })));
        let mut bytes = encode_volume(&Volume::filled(Dims::cube(4), 1.0));
        bytes.truncate(18 + 40);
        assert!(matches!(
            decode(&bytes),
            Err(FormatError::Truncated { expected: 256, found: 40 })
        ));
        let mut bytes = encode_volume(&Volume::filled(Dims::cube(2), 1.0));
        bytes[5] = 7;
        assert!(matches!(decode(&bytes), Err(FormatError::UnknownDtype(7))));
        let mut bytes = encode_volume(&Volume::filled(Dims::cube(2), 1.0));
        bytes[6] = 0;
        assert!(matches!(decode(&bytes), Err(FormatError::BadDims { .. })));
        let mut bytes = encode_volume(&Volume::filled(Dims::cube(2), 1.0));
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(FormatError::TrailingBytes(1))));
    }

    proptest! {
        #[test]
        fn volume_round_trip_is_bit_exact(
            (dims, data) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(d, h, w)| {
                let finite = prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO;
                (Just(Dims::new(d, h, w)), prop::collection::vec(finite, d * h * w))
            }),
        ) {
            let v = Volume::new(dims, data).unwrap();
            let Rvol::Volume(back) = decode(&encode_volume(&v)).unwrap() else {
                panic!("dtype changed")
            };
            let bits = |x: &Volume| x.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&v));
        }

        #[test]
        fn labels_round_trip(data in proptest::collection::vec(any::<u8>(), 1..64)) {
            let y = LabelMap::new(Dims::new(1, 1, data.len()), data).unwrap();
            prop_assert_eq!(decode(&encode_labels(&y)).unwrap(), Rvol::Labels(y));
        }
    }
}
