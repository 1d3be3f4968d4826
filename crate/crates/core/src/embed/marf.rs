//! MARF feature files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MARF"
//! 4       4           version (u32 LE, = 1)
//! 8       4           d, embedding width (u32 LE, > 0)
//! 12      4           k, frame count (u32 LE, > 0)
//! 16      4           tag length in bytes (u32 LE)
//! 20      tag_len     backbone tag, UTF-8
//! ..      4 * k       frame indices (u32 LE)
//! ..      4 * k * d   values (f32 LE), frame-major
//! ```
//!
//! The video id is not stored; readers take it from the file stem.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::VideoFeature;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MARF";
pub const VERSION: u32 = 1;

pub fn encode(feature: &VideoFeature) -> Result<Vec<u8>> {
    feature.validate()?;
    let tag = feature.backbone.as_bytes();
    let mut out = Vec::with_capacity(20 + tag.len() + 4 * feature.k * (feature.d + 1));
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, feature.d as u32, feature.k as u32, tag.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(tag);
    for &i in &feature.frame_indices {
        let i = u32::try_from(i)
            .map_err(|_| Error::InvalidInput(format!("frame index {i} exceeds u32")))?;
        out.extend_from_slice(&i.to_le_bytes());
    }
    for v in &feature.vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(self.err(format!(
                "truncated {what}: need {n} bytes, {remaining} left"
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8], video_id: &str) -> Result<VideoFeature> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        cur.pos = 0;
        return Err(cur.err("bad magic, expected \"MARF\""));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        cur.pos -= 4;
        return Err(cur.err(format!("unsupported version {version}")));
    }
    let d = cur.u32("dimension")? as usize;
    if d == 0 {
        cur.pos -= 4;
        return Err(cur.err("embedding dimension is 0"));
    }
    let k = cur.u32("frame count")? as usize;
    if k == 0 {
        cur.pos -= 4;
        return Err(cur.err("frame count is 0"));
    }
    let tag_len = cur.u32("tag length")? as usize;
    let tag_start = cur.pos;
    let backbone = std::str::from_utf8(cur.take(tag_len, "backbone tag")?)
        .map_err(|e| Error::Format {
            offset: (tag_start + e.valid_up_to()) as u64,
            message: "backbone tag is not UTF-8".into(),
        })?
        .to_string();
    let frame_indices = cur
        .take(4 * k, "frame indices")?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    let n_values = k
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| cur.err("k * d overflows"))?;
    let vector = cur
        .take(n_values, "values")?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if cur.pos != bytes.len() {
        return Err(cur.err(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(VideoFeature {
        video_id: video_id.to_string(),
        vector,
        k,
        d,
        frame_indices,
        backbone,
    })
}

pub fn write_feature(path: &Path, feature: &VideoFeature) -> Result<()> {
    let bytes = encode(feature)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a MARF file; the video id is the file stem.
pub fn read_feature(path: &Path) -> Result<VideoFeature> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode(&bytes, &id).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VideoFeature {
        VideoFeature {
            video_id: "clip_0007".into(),
            vector: vec![1.0, -2.5, f32::MIN_POSITIVE, 3.25, 0.0, -0.0],
            k: 2,
            d: 3,
            frame_indices: vec![4, 19],
            backbone: "vit-s14".into(),
        }
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let bytes = encode(&sample()).unwrap();
        let mut expected = b"MARF".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 7, 0, 0, 0]);
        expected.extend_from_slice(b"vit-s14");
        expected.extend_from_slice(&[4, 0, 0, 0, 19, 0, 0, 0]);
        assert_eq!(&bytes[..expected.len()], &expected[..]);
        assert_eq!(bytes.len(), expected.len() + 6 * 4);
        assert_eq!(&bytes[expected.len()..expected.len() + 4], &1.0f32.to_le_bytes());
    }

    #[test]
    fn decode_inverts_encode() {
        let f = sample();
        let back = decode(&encode(&f).unwrap(), "clip_0007").unwrap();
        assert_eq!(back, f);
        assert!(back.vector[5].is_sign_negative());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode(&sample()).unwrap();
        let err = decode(&bytes[..bytes.len() - 3], "x").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 35),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_headers() {
        let good = encode(&sample()).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic, "x"), Err(Error::Format { offset: 0, .. })));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(decode(&bad_version, "x"), Err(Error::Format { offset: 4, .. })));

        let mut zero_dim = good.clone();
        zero_dim[8] = 0;
        assert!(matches!(decode(&zero_dim, "x"), Err(Error::Format { offset: 8, .. })));

        let mut trailing = good;
        trailing.push(0);
        assert!(matches!(decode(&trailing, "x"), Err(Error::Format { .. })));

        assert!(matches!(decode(b"MA", "x"), Err(Error::Format { offset: 0, .. })));
    }
}
