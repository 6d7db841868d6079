//! IDX image/label ingestion and amplitude preprocessing.
//!
//! An image becomes a unit vector of `side²` amplitudes: it is placed on a
//! zero canvas, flattened row-major, and normalised. Pixel `(r, c)` of the
//! canvas is the amplitude of the bitstring `r·side + c`.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub rows: usize,
    pub cols: usize,
    /// Row-major intensities.
    pub pixels: Vec<u8>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadPolicy {
    /// Equal margins on every side; odd surplus goes to the bottom/right.
    #[default]
    Centred,
    /// Image in the top-left corner.
    Corner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeVector {
    pub amplitudes: Vec<f64>,
    pub label: usize,
}

impl AmplitudeVector {
    /// Builds a normalised vector. The length must be a power of two.
    pub fn new(mut amplitudes: Vec<f64>, label: usize) -> Result<Self> {
        if !amplitudes.len().is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "amplitude count {} is not a power of two",
                amplitudes.len()
            )));
        }
        let norm = amplitudes.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::InvalidInput("non-finite amplitudes".into()));
        }
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        amplitudes.iter_mut().for_each(|x| *x /= norm);
        Ok(Self { amplitudes, label })
    }

    pub fn qubit_count(&self) -> usize {
        self.amplitudes.len().trailing_zeros() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub items: Vec<AmplitudeVector>,
    pub class_count: usize,
    pub qubit_count: usize,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("bad gzip stream: {e}")))?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Parses an IDX image file into `(rows, cols, pixel blocks)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(path, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * size {
        return Err(Error::format(
            path,
            format!("expected {} pixel bytes, found {}", count * size, body.len()),
        ));
    }
    let images = if size == 0 {
        vec![Vec::new(); count]
    } else {
        body.chunks_exact(size).map(<[u8]>::to_vec).collect()
    };
    Ok((rows, cols, images))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(path, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(
            path,
            format!("expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

/// Loads an IDX image/label pair. Either file may be gzip-compressed.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Vec<RawImage>> {
    let (image_path, label_path) = (image_path.as_ref(), label_path.as_ref());
    let (rows, cols, images) = read_idx_images(image_path)?;
    let labels = read_idx_labels(label_path)?;
    if images.len() != labels.len() {
        return Err(Error::format(
            label_path,
            format!(
                "label count {} does not match image count {} in {}",
                labels.len(),
                images.len(),
                image_path.display()
            ),
        ));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| RawImage {
            rows,
            cols,
            pixels,
            label,
        })
        .collect())
}

/// Pads `image` onto a `target_side²` canvas and normalises it.
pub fn preprocess(image: &RawImage, target_side: usize, pad: PadPolicy) -> Result<AmplitudeVector> {
    if target_side < image.rows || target_side < image.cols {
        return Err(Error::InvalidInput(format!(
            "{}x{} image does not fit a side of {target_side}",
            image.rows, image.cols
        )));
    }
    if !(target_side * target_side).is_power_of_two() {
        return Err(Error::InvalidInput(format!(
            "side {target_side} does not give a power-of-two pixel count"
        )));
    }
    let (top, left) = match pad {
        PadPolicy::Centred => ((target_side - image.rows) / 2, (target_side - image.cols) / 2),
        PadPolicy::Corner => (0, 0),
    };
    let mut canvas = vec![0.0; target_side * target_side];
    for r in 0..image.rows {
        for c in 0..image.cols {
            canvas[(r + top) * target_side + c + left] = f64::from(image.pixels[r * image.cols + c]);
        }
    }
    AmplitudeVector::new(canvas, usize::from(image.label))
}

impl Dataset {
    pub fn new(items: Vec<AmplitudeVector>, class_count: usize) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyInput("dataset"))?;
        let qubit_count = first.qubit_count();
        if let Some(bad) = items.iter().find(|v| v.qubit_count() != qubit_count) {
            return Err(Error::Shape(format!(
                "mixed qubit counts {qubit_count} and {}",
                bad.qubit_count()
            )));
        }
        if let Some(bad) = items.iter().find(|v| v.label >= class_count) {
            return Err(Error::InvalidInput(format!(
                "label {} outside {class_count} classes",
                bad.label
            )));
        }
        Ok(Self {
            items,
            class_count,
            qubit_count,
        })
    }

    pub fn from_raw(images: &[RawImage], target_side: usize, pad: PadPolicy, class_count: usize) -> Result<Self> {
        let items = images
            .iter()
            .map(|im| preprocess(im, target_side, pad))
            .collect::<Result<Vec<_>>>()?;
        Self::new(items, class_count)
    }

    /// Loads and preprocesses an IDX pair with centred padding into 10 classes.
    pub fn from_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>, target_side: usize) -> Result<Self> {
        let raw = load_idx(image_path, label_path)?;
        Self::from_raw(&raw, target_side, PadPolicy::Centred, crate::CLASS_COUNT)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items of class `label` in dataset order.
    pub fn class_items(&self, label: usize) -> Vec<&AmplitudeVector> {
        self.items.iter().filter(|v| v.label == label).collect()
    }

    /// First `n` items, preserving order.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            items: self.items[..n.min(self.items.len())].to_vec(),
            class_count: self.class_count,
            qubit_count: self.qubit_count,
        }
    }

    /// SHA-256 over labels and amplitude bits in order; any reordering of
    /// the items changes it.
    pub fn ordering_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.items {
            h.update((v.label as u64).to_le_bytes());
            for a in &v.amplitudes {
                h.update(a.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn image(rows: usize, cols: usize, pixels: Vec<u8>) -> RawImage {
        RawImage {
            rows,
            cols,
            pixels,
            label: 3,
        }
    }

    #[test]
    fn uniform_image_spreads_evenly() {
        let v = preprocess(&image(28, 28, vec![1; 784]), 32, PadPolicy::Centred).unwrap();
        assert_eq!(v.amplitudes.len(), 1024);
        let nonzero: Vec<f64> = v.amplitudes.iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nonzero.len(), 784);
        assert!(nonzero.iter().all(|&x| (x - 1.0 / 28.0).abs() < 1e-15));
        assert_eq!(v.amplitudes[0], 0.0);
        assert!(v.amplitudes[2 * 32 + 2] > 0.0);
        assert_eq!(v.qubit_count(), 10);
    }

    #[test]
    fn single_pixel_is_a_basis_vector() {
        let mut px = vec![0; 784];
        px[0] = 200;
        let v = preprocess(&image(28, 28, px.clone()), 32, PadPolicy::Centred).unwrap();
        assert_eq!(v.amplitudes[2 * 32 + 2], 1.0);
        let c = preprocess(&image(28, 28, px), 32, PadPolicy::Corner).unwrap();
        assert_eq!(c.amplitudes[0], 1.0);
    }

    #[test]
    fn zero_image_cannot_be_normalised() {
        let r = preprocess(&image(2, 2, vec![0; 4]), 2, PadPolicy::Centred);
        assert!(matches!(r, Err(Error::ZeroNorm)));
    }

    #[test]
    fn rejects_bad_sides() {
        assert!(preprocess(&image(4, 4, vec![1; 16]), 3, PadPolicy::Centred).is_err());
        assert!(preprocess(&image(4, 4, vec![1; 16]), 6, PadPolicy::Centred).is_err());
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    fn idx_images(count: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for x in [IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&x.to_be_bytes());
        }
        b.extend_from_slice(body);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn reads_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i", &idx_images(2, 2, 2, &[1, 2, 3, 4, 5, 6, 7, 8]));
        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&idx_labels(&[7, 1])).unwrap();
        let lab = write(dir.path(), "l.gz", &gz.finish().unwrap());
        let raw = load_idx(&img, &lab).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw[1].pixels, vec![5, 6, 7, 8]);
        assert_eq!(raw[0].label, 7);
    }

    #[test]
    fn format_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(dir.path(), "empty", &[]);
        let labels = write(dir.path(), "labels", &idx_labels(&[0; 9]));
        match load_idx(&empty, &labels) {
            Err(Error::Format { path, .. }) => assert_eq!(path, empty),
            other => panic!("expected format error, got {other:?}"),
        }
        let ten = write(dir.path(), "ten", &idx_images(10, 1, 1, &[1; 10]));
        assert!(matches!(load_idx(&ten, &labels), Err(Error::Format { .. })));
        let truncated = write(dir.path(), "short", &idx_images(10, 1, 1, &[1; 5]));
        assert!(matches!(load_idx(&truncated, &labels), Err(Error::Format { .. })));
        assert!(matches!(load_idx(&labels, &labels), Err(Error::Format { .. })));
    }

    #[test]
    fn digest_tracks_order() {
        let a = AmplitudeVector::new(vec![1.0, 0.0], 0).unwrap();
        let b = AmplitudeVector::new(vec![0.0, 1.0], 1).unwrap();
        let d1 = Dataset::new(vec![a.clone(), b.clone()], 2).unwrap();
        let d2 = Dataset::new(vec![b, a], 2).unwrap();
        assert_ne!(d1.ordering_digest(), d2.ordering_digest());
        assert_eq!(d1.ordering_digest(), d1.clone().ordering_digest());
    }
}
