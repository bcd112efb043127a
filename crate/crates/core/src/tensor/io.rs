//! `.dcdn` files: `"DCDN"`, `u32` version, four `u32` dims, then raw `f32`
//! payload, all little-endian, no padding and no trailing bytes.

use std::fs;
use std::path::Path;

use super::{GridShape, LatentGrid, MAX_ELEMENTS};
use crate::{Error, Result};

pub const DCDN_MAGIC: &[u8; 4] = b"DCDN";
pub const DCDN_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_grid(grid: &LatentGrid) -> Vec<u8> {
    let s = grid.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * s.len());
    out.extend_from_slice(DCDN_MAGIC);
    out.extend_from_slice(&DCDN_VERSION.to_le_bytes());
    for d in [s.frames, s.height, s.width, s.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_grid(bytes: &[u8]) -> Result<LatentGrid> {
    if bytes.len() < 4 {
        return Err(Error::Length(format!(
            "{} bytes is shorter than the magic",
            bytes.len()
        )));
    }
    if &bytes[..4] != DCDN_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let version = read_u32(bytes, 4);
    if version != DCDN_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dims: Vec<usize> = (0..4).map(|i| read_u32(bytes, 8 + 4 * i) as usize).collect();
    let total = dims
        .iter()
        .try_fold(1u128, |acc, &d| acc.checked_mul(d as u128))
        .unwrap_or(u128::MAX);
    if total > MAX_ELEMENTS as u128 {
        return Err(Error::Capacity(format!(
            "dims {dims:?} hold {total} elements, cap is {MAX_ELEMENTS}"
        )));
    }
    let shape = GridShape::new(dims[0], dims[1], dims[2], dims[3])?;
    let expected = HEADER_LEN + 4 * shape.len();
    if bytes.len() != expected {
        return Err(Error::Length(format!(
            "payload for {shape} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LatentGrid::from_vec(shape, data).map_err(|e| match e {
        Error::Numeric(m) => Error::Format(m),
        other => other,
    })
}

pub fn save_grid(grid: &LatentGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_grid(grid)).map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<LatentGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_grid;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = gaussian_grid(GridShape::new(2, 3, 4, 1).unwrap(), 0).unwrap();
        let bytes = encode_grid(&g);
        assert_eq!(&bytes[..4], b"DCDN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let dims: Vec<u32> = (0..4).map(|i| read_u32(&bytes, 8 + 4 * i)).collect();
        assert_eq!(dims, vec![2, 3, 4, 1]);
        assert_eq!(bytes.len(), 24 + 4 * 24);
    }

    #[test]
    fn bad_magic() {
        let g = gaussian_grid(GridShape::new(1, 1, 1, 1).unwrap(), 0).unwrap();
        let mut bytes = encode_grid(&g);
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_grid(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_and_trailing() {
        let g = gaussian_grid(GridShape::new(1, 2, 2, 1).unwrap(), 0).unwrap();
        let bytes = encode_grid(&g);
        assert!(matches!(
            decode_grid(&bytes[..bytes.len() - 1]),
            Err(Error::Length(_))
        ));
        assert!(matches!(decode_grid(&bytes[..10]), Err(Error::Length(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_grid(&long), Err(Error::Length(_))));
    }

    #[test]
    fn dimension_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DCDN");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        for d in [u32::MAX, u32::MAX, 2, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        assert!(matches!(decode_grid(&bytes), Err(Error::Capacity(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.dcdn");
        let g = gaussian_grid(GridShape::new(3, 2, 5, 2).unwrap(), 9).unwrap();
        save_grid(&g, &path).unwrap();
        assert!(load_grid(&path).unwrap().bit_eq(&g));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn roundtrip_is_bit_exact(t in 1usize..5, h in 1usize..9, w in 1usize..9, c in 1usize..5, seed in any::<u64>()) {
            let g = gaussian_grid(GridShape::new(t, h, w, c).unwrap(), seed).unwrap();
            let back = decode_grid(&encode_grid(&g)).unwrap();
            prop_assert!(back.bit_eq(&g));
        }
    }
}
