use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::Idx(format!(
                "{what}: truncated header, expected at least {} bytes, found {}",
                at + 4,
                bytes.len()
            ))
        })
}

fn check_magic(bytes: &[u8], want: u32, what: &str) -> Result<()> {
    let got = read_u32(bytes, 0, what)?;
    if got != want {
        return Err(Error::Idx(format!(
            "{what}: magic mismatch, expected {want:#010x}, found {got:#010x}"
        )));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let expected = header + len;
    if bytes.len() != expected {
        return Err(Error::Idx(format!(
            "{what}: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    Ok(&bytes[header..])
}

/// Parsed image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(bytes, IMAGES_MAGIC, "image file")?;
    let n = read_u32(bytes, 4, "image file")? as usize;
    let rows = read_u32(bytes, 8, "image file")? as usize;
    let cols = read_u32(bytes, 12, "image file")? as usize;
    let pixels = payload(bytes, 16, n * rows * cols, "image file")?;
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABELS_MAGIC, "label file")?;
    let n = read_u32(bytes, 4, "label file")? as usize;
    payload(bytes, 8, n, "label file")
}

/// Box-filter resize of one `rows x cols` plane to `size x size`.
fn resize(src: &[f32], rows: usize, cols: usize, size: usize) -> Vec<f32> {
    let span = |i: usize, from: usize| {
        let lo = i * from / size;
        let hi = ((i + 1) * from).div_ceil(size).max(lo + 1);
        lo..hi.min(from)
    };
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let ys = span(y, rows);
        for x in 0..size {
            let xs = span(x, cols);
            let mut sum = 0.0;
            for r in ys.clone() {
                sum += src[r * cols + xs.start..r * cols + xs.end].iter().sum::<f32>();
            }
            out.push(sum / (ys.len() * xs.len()) as f32);
        }
    }
    out
}

/// Builds a dataset from in-memory IDX image and label files. Pixels are
/// scaled to [0, 1]; `image_size` resizes square planes when given.
pub fn idx_dataset_from_bytes(
    images: &[u8],
    labels: &[u8],
    image_size: Option<usize>,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Idx(format!(
            "image file holds {n} images but label file holds {} labels",
            labels.len()
        )));
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let size = image_size.unwrap_or(rows);
    if image_size.is_none() && rows != cols {
        return Err(Error::Idx(format!("non-square {rows}x{cols} images need an explicit image size")));
    }
    let plane = rows * cols;
    let mut data = Vec::with_capacity(n * size * size);
    for i in 0..n {
        let img: Vec<f32> = pixels[i * plane..(i + 1) * plane]
            .iter()
            .map(|&p| p as f32 / 255.0)
            .collect();
        if size == rows && size == cols {
            data.extend_from_slice(&img);
        } else {
            data.extend(resize(&img, rows, cols, size));
        }
    }
    Dataset::new([1, size, size], classes, data, labels)
}

pub fn load_idx_dataset(
    images_path: &Path,
    labels_path: &Path,
    image_size: Option<usize>,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    idx_dataset_from_bytes(&images, &labels, image_size, num_classes)
}

/// Serializes square single-channel images and labels as an IDX pair.
pub fn encode_idx(images: &[Vec<u8>], size: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * size * size);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(size as u32).to_be_bytes());
    img.extend_from_slice(&(size as u32).to_be_bytes());
    for i in images {
        img.extend_from_slice(i);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> (Vec<u8>, Vec<u8>) {
        let images: Vec<Vec<u8>> = (0..4u8).map(|i| vec![i * 60; 16]).collect();
        encode_idx(&images, 4, &[0, 1, 2, 1])
    }

    #[test]
    fn parses_four_images() {
        let (img, lab) = four();
        let d = idx_dataset_from_bytes(&img, &lab, None, None).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.labels(), &[0, 1, 2, 1]);
        assert_eq!(d.num_classes(), 3);
        assert_eq!(d.image_shape(), [1, 4, 4]);
        assert!((d.image(3)[0] - 180.0 / 255.0).abs() < 1e-7);
        let d10 = idx_dataset_from_bytes(&img, &lab, None, Some(10)).unwrap();
        assert_eq!(d10.num_classes(), 10);
    }

    #[test]
    fn truncated_file_names_byte_counts() {
        let (img, lab) = four();
        let err = idx_dataset_from_bytes(&img[..img.len() - 3], &lab, None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 80 bytes, found 77"), "{msg}");
        let err = idx_dataset_from_bytes(&img[..6], &lab, None, None).unwrap_err();
        assert!(err.to_string().contains("found 6"), "{err}");
    }

    #[test]
    fn wrong_magic_is_reported() {
        let (img, _) = four();
        let err = idx_dataset_from_bytes(&img, &img, None, None).unwrap_err();
        assert!(err.to_string().contains("magic mismatch"), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let (img, _) = four();
        let (_, lab) = encode_idx(&[], 4, &[0, 1, 2]);
        let err = idx_dataset_from_bytes(&img, &lab, None, None).unwrap_err();
        assert!(err.to_string().contains("4 images but label file holds 3"), "{err}");
    }

    #[test]
    fn downsampling_averages_blocks() {
        let img: Vec<u8> = (0..16).map(|i| if i % 4 < 2 { 0 } else { 255 }).collect();
        let (img, lab) = encode_idx(&[img], 4, &[0]);
        let d = idx_dataset_from_bytes(&img, &lab, Some(2), None).unwrap();
        assert_eq!(d.image(0), &[0.0, 1.0, 0.0, 1.0]);
        let up = idx_dataset_from_bytes(&img, &lab, Some(3), None).unwrap();
        assert_eq!(up.image_shape(), [1, 3, 3]);
        assert!(up.image(0).iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
