//! Binary parameter file.
//!
//! ```text
//! "CRLW" | version: u16
//! repeated: name_len: u16 | name (UTF-8) | rank: u8 | dims: u32 * rank | data: f64 * prod(dims)
//! crc32 of every preceding byte: u32
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::codec::{put_f64s, Reader};
use crate::error::{Error, Result};
use crate::nn::tensor::{ParameterSet, Tensor};

pub const MAGIC: &[u8; 4] = b"CRLW";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode(params: &ParameterSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, t) in params.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::Checkpoint(format!("parameter name too long: {name}")))?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::Checkpoint(format!("rank too large for `{name}`")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dimension too large in `{name}`")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_f64s(&mut out, t.data());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ParameterSet> {
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("CRC32 mismatch".into()));
    }
    if &body[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut r = Reader::new(&body[4..]);
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut params = ParameterSet::new();
    while r.remaining() > 0 {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().product();
        let data = r.f64s(numel)?;
        params.insert(name, Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?)?;
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ParameterSet) -> Result<()> {
    let bytes = encode(params)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParameterSet> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("l0.weight", Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0]).unwrap())
            .unwrap();
        p.insert("l0.bias", Tensor::vector(vec![0.25, f64::MIN_POSITIVE])).unwrap();
        p
    }

    #[test]
    fn layout_is_bit_exact() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let bytes = encode(&p).unwrap();
        let mut expected = b"CRLW".to_vec();
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.push(b'w');
        expected.push(1);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        let crc = crc32fast::hash(&expected);
        expected.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[10] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
        assert!(decode(b"CRLW").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.crlw");
        save(&path, &sample()).unwrap();
        assert_eq!(load(&path).unwrap(), sample());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_names_order_and_bits(
            entries in prop::collection::btree_map("[a-z]{1,8}", prop::collection::vec(any::<f64>(), 1..20), 1..6)
        ) {
            let mut p = ParameterSet::new();
            for (k, v) in &entries {
                p.insert(k.clone(), Tensor::vector(v.clone())).unwrap();
            }
            let back = decode(&encode(&p).unwrap()).unwrap();
            let names: Vec<_> = back.names().cloned().collect();
            let orig: Vec<_> = p.names().cloned().collect();
            prop_assert_eq!(names, orig);
            for ((_, a), (_, b)) in back.iter().zip(p.iter()) {
                let abits: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }
}
