//! Big-endian IDX files, optionally gzip-compressed.
//!
//! Layout: a 4-byte magic (`0x00000803` for `u8` images with three
//! dimensions, `0x00000801` for `u8` labels with one), one big-endian `u32`
//! per dimension, then the raw bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Dataset;
use crate::{Error, IdxErrorKind, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw image block of an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize) -> std::result::Result<u32, IdxErrorKind> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxErrorKind::Truncated { needed: at + 4, have: bytes.len() })
}

fn check_magic(bytes: &[u8], expected: u32) -> std::result::Result<(), IdxErrorKind> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxErrorKind::BadMagic { expected, found });
    }
    Ok(())
}

fn body(bytes: &[u8], header: usize, len: usize) -> std::result::Result<&[u8], IdxErrorKind> {
    let needed = header + len;
    if bytes.len() < needed {
        return Err(IdxErrorKind::Truncated { needed, have: bytes.len() });
    }
    Ok(&bytes[header..needed])
}

pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<IdxImages, IdxErrorKind> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = body(bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, IdxErrorKind> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let labels = body(bytes, 8, count)?.to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(IdxErrorKind::BadLabel { index, label });
    }
    Ok(labels)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads an image/label file pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx_images(&read_maybe_gz(ip)?).map_err(|kind| Error::Idx { path: ip.to_path_buf(), kind })?;
    let labels = parse_idx_labels(&read_maybe_gz(lp)?).map_err(|kind| Error::Idx { path: lp.to_path_buf(), kind })?;
    if images.count != labels.len() {
        return Err(Error::Idx {
            path: lp.to_path_buf(),
            kind: IdxErrorKind::CountMismatch { images: images.count, labels: labels.len() },
        });
    }
    let pixels = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(pixels, labels, images.rows, images.cols)
}

fn encode_images(ds: &Dataset) -> Result<Vec<u8>> {
    let (rows, cols) = ds.shape();
    let mut out = Vec::with_capacity(16 + ds.images().len());
    for v in [IMAGES_MAGIC, ds.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for &x in ds.images() {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(format!("pixel value {x} outside [0, 1] cannot be stored as IDX")));
        }
        out.push((x * 255.0).round() as u8);
    }
    Ok(out)
}

fn encode_labels(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    out.extend_from_slice(ds.labels());
    out
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let data = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(io)?;
        enc.finish().map_err(io)?
    } else {
        bytes.to_vec()
    };
    fs::write(path, data).map_err(io)
}

/// Writes pixels as `round(255·x)`; paths ending in `.gz` are compressed.
pub fn write_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    write_maybe_gz(images_path.as_ref(), &encode_images(ds)?)?;
    write_maybe_gz(labels_path.as_ref(), &encode_labels(ds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_images() -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, 2, 2, 2] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(&[0, 255, 255, 0, 255, 255, 0, 0]);
        b
    }

    fn fixture_labels() -> Vec<u8> {
        let mut b = Vec::new();
        for v in [LABELS_MAGIC, 2] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(&[7, 3]);
        b
    }

    #[test]
    fn hand_crafted_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        fs::write(&ip, fixture_images()).unwrap();
        fs::write(&lp, fixture_labels()).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.shape(), (2, 2));
        assert_eq!(ds.images(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(ds.labels(), &[7, 3]);
    }

    #[test]
    fn wrong_magic_is_named() {
        let mut bad = fixture_labels();
        bad[3] = 0x03;
        let err = parse_idx_labels(&bad).unwrap_err();
        assert_eq!(err, IdxErrorKind::BadMagic { expected: LABELS_MAGIC, found: IMAGES_MAGIC });
        assert!(err.to_string().contains("0x00000803"), "{err}");
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let img = fixture_images();
        assert!(matches!(parse_idx_images(&img[..20]), Err(IdxErrorKind::Truncated { needed: 24, have: 20 })));
        assert!(matches!(parse_idx_images(&img[..2]), Err(IdxErrorKind::Truncated { .. })));
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        fs::write(&ip, img).unwrap();
        let mut lbl = fixture_labels();
        lbl[7] = 1;
        lbl.pop();
        fs::write(&lp, lbl).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(err, Error::Idx { kind: IdxErrorKind::CountMismatch { images: 2, labels: 1 }, .. }), "{err}");
        assert!(matches!(load_idx(dir.path().join("missing"), &lp), Err(Error::Io { .. })));
    }

    #[test]
    fn gzip_round_trip() {
        let ds = Dataset::new(vec![0.0, 1.0, 128.0 / 255.0, 3.0 / 255.0], vec![4, 9], 1, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i.gz"), dir.path().join("l.gz"));
        write_idx(&ds, &ip, &lp).unwrap();
        assert!(fs::read(&ip).unwrap().starts_with(&GZIP_MAGIC));
        assert_eq!(load_idx(&ip, &lp).unwrap(), ds);
    }
}
