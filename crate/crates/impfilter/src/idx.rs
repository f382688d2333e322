//! IDX image/label files (the MNIST distribution format).

use std::fs;
use std::path::Path;

use impfilter_core::datasets::Dataset;
use impfilter_core::Matrix;

use crate::error::{CliError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw unsigned-byte images, row-major per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn data_error(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| data_error(path, "truncated header"))
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(data_error(path, format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < expected {
        return Err(data_error(
            path,
            format!("truncated file: {} pixel bytes, header promises {expected}", body.len()),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..expected].to_vec(),
    })
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(data_error(path, format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(data_error(
            path,
            format!("truncated file: {} labels, header promises {count}", body.len()),
        ));
    }
    Ok(body[..count].to_vec())
}

pub fn write_images(path: &Path, images: &IdxImages) -> Result<()> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(CliError::Config("pixel buffer does not match image dimensions".into()));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Loads an image/label pair with pixels scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(data_error(
            labels_path,
            format!("{} labels for {} images", labels.len(), images.count),
        ));
    }
    if images.count == 0 {
        return Err(data_error(images_path, "no images"));
    }
    let dim = images.rows * images.cols;
    let features: Vec<f64> = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let matrix = Matrix::from_vec(images.count, dim, features)?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    Ok(Dataset::with_inferred_classes(matrix, labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_images() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let images = IdxImages { count: 3, rows: 2, cols: 2, pixels: vec![0; 12] };
        write_images(&ip, &images).unwrap();
        write_labels(&lp, &[0, 0, 0]).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.dim(), 4);
        assert!(d.features().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn header_bytes_are_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        write_images(&ip, &IdxImages { count: 1, rows: 1, cols: 2, pixels: vec![7, 255] }).unwrap();
        let bytes = fs::read(&ip).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &[0, 0, 0, 1]);
        assert_eq!(&bytes[16..], &[7, 255]);
    }

    #[test]
    fn malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad");
        fs::write(&bad, [0u8; 16]).unwrap();
        let err = read_images(&bad).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");

        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_images(&ip, &IdxImages { count: 2, rows: 1, cols: 1, pixels: vec![1, 2] }).unwrap();
        write_labels(&lp, &[1]).unwrap();
        assert!(load_idx(&ip, &lp).is_err());

        let mut truncated = fs::read(&ip).unwrap();
        truncated.pop();
        fs::write(&ip, truncated).unwrap();
        assert!(read_images(&ip).unwrap_err().to_string().contains("truncated"));
        assert!(read_labels(&ip).is_err());
    }
}
