//! Per-video frame features on disk.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `DIFX`                  |
//! | 4      | 2    | version, `u16`, currently 1   |
//! | 6      | 4    | frame count `T`, `u32`        |
//! | 10     | 4    | feature dim `D`, `u32`        |
//! | 14     | 4·T·D | `f32` payload, frame-major   |
//!
//! Values are held as `f64` in memory and quantised to `f32` on write.

use std::path::Path;

use super::bytes::Reader;
use super::{read_all, write_atomic};
use crate::denseimage::FrameFeatureSequence;
use crate::error::{ensure, Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: [u8; 4] = *b"DIFX";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

pub fn encode_feature_file(seq: &FrameFeatureSequence) -> Result<Vec<u8>> {
    let (t, d) = (seq.num_frames(), seq.dim());
    ensure!(u32::try_from(t).is_ok(), "{t} frames do not fit the header");
    ensure!(u32::try_from(d).is_ok(), "dimension {d} does not fit the header");
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * d);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in seq.features().as_slice() {
        let q = v as f32;
        ensure!(q.is_finite(), "value {v} is not representable as a finite f32");
        out.extend_from_slice(&q.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_file(bytes: &[u8], path: &Path) -> Result<FrameFeatureSequence> {
    let mut r = Reader::new(bytes, path);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "bad magic, expected DIFX"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let t = r.u32("frame count")? as usize;
    let d = r.u32("feature dim")? as usize;
    if t == 0 || d == 0 {
        return Err(Error::format(path, format!("empty payload shape {t}x{d}")));
    }
    let expected = (t as u64) * (d as u64) * 4;
    if r.remaining() as u64 != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header implies {expected}", r.remaining()),
        ));
    }
    let data = r
        .take(4 * t * d, "payload")?
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let m = Matrix::from_vec(t, d, data)?;
    FrameFeatureSequence::new(m).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_feature_file(path: impl AsRef<Path>, seq: &FrameFeatureSequence) -> Result<()> {
    write_atomic(path.as_ref(), &encode_feature_file(seq)?)
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FrameFeatureSequence> {
    let path = path.as_ref();
    decode_feature_file(&read_all(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[&[f64]]) -> FrameFeatureSequence {
        FrameFeatureSequence::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn single_value_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.difx");
        let s = seq(&[&[1.0]]);
        write_feature_file(&path, &s).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 18);
        assert_eq!(read_feature_file(&path).unwrap(), s);
    }

    #[test]
    fn header_bytes() {
        let bytes = encode_feature_file(&seq(&[&[0.5, 2.0], &[-1.0, 3.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(&bytes[..4], b"DIFX");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[3, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        assert_eq!(&bytes[14..18], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 6);
    }

    #[test]
    fn rejects_malformed() {
        let p = Path::new("mem");
        let good = encode_feature_file(&seq(&[&[1.0, 2.0]])).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_feature_file(&bad_magic, p), Err(Error::Format { .. })));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(decode_feature_file(&bad_version, p), Err(Error::Format { .. })));

        assert!(matches!(decode_feature_file(&good[..good.len() - 1], p), Err(Error::Format { .. })));
        assert!(matches!(decode_feature_file(&good[..10], p), Err(Error::Format { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(decode_feature_file(&trailing, p), Err(Error::Format { .. })));

        let mut zero_frames = good.clone();
        zero_frames[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_feature_file(&zero_frames[..HEADER_LEN], p), Err(Error::Format { .. })));
    }

    #[test]
    fn non_finite_f32_rejected_on_write() {
        let s = seq(&[&[1e300]]);
        assert!(encode_feature_file(&s).is_err());
    }
}
