//! Image dataset ingestion.
//!
//! * IDX: big-endian `[0, 0, dtype, ndim]` magic followed by `ndim` u32
//!   dimensions, as in the classic handwritten-digit releases. Images must be
//!   u8 (`0x08`); labels live in a companion IDX file of any integer dtype.
//! * CSV: one sample per line, `label,p0,p1,...` with pixels in 0..=255.
//! * raw-u8: a 16-byte little-endian header `(magic, n, h, w)` followed by
//!   `n` records of one label byte and `h·w` pixel bytes.
//!
//! Pixels are normalized to `[0, 1]` and labels remapped to `0..C`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `b"RWU8"` read as a little-endian u32.
pub const RAW_U8_MAGIC: u32 = u32::from_le_bytes(*b"RWU8");

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageFormat {
    Idx { labels: PathBuf },
    Csv,
    RawU8,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: needed {n} bytes, {} available",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX header, returning `(dtype, dims)`.
fn idx_header(r: &mut Reader<'_>) -> Result<(u8, Vec<usize>)> {
    let magic = r.take(4, "idx magic")?;
    if magic[0] != 0 || magic[1] != 0 {
        return Err(Error::Format(format!(
            "bad idx magic {:02x}{:02x}{:02x}{:02x}",
            magic[0], magic[1], magic[2], magic[3]
        )));
    }
    let (dtype, ndim) = (magic[2], magic[3] as usize);
    if ndim == 0 {
        return Err(Error::Format("idx file declares zero dimensions".into()));
    }
    let dims = (0..ndim)
        .map(|_| r.u32_be("idx dimension").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok((dtype, dims))
}

fn idx_labels(bytes: &[u8]) -> Result<Vec<i64>> {
    let mut r = Reader::new(bytes);
    let (dtype, dims) = idx_header(&mut r)?;
    if dims.len() != 1 {
        return Err(Error::Format(format!(
            "label file must be 1-d, got {dims:?}"
        )));
    }
    let n = dims[0];
    let width = match dtype {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C => 4,
        other => {
            return Err(Error::Format(format!(
                "unsupported label dtype 0x{other:02x}"
            )))
        }
    };
    let raw = r.take(n * width, "idx labels")?;
    Ok(raw
        .chunks_exact(width)
        .map(|c| match dtype {
            0x08 => i64::from(c[0]),
            0x09 => i64::from(c[0] as i8),
            0x0B => i64::from(i16::from_be_bytes([c[0], c[1]])),
            _ => i64::from(i32::from_be_bytes([c[0], c[1], c[2], c[3]])),
        })
        .collect())
}

fn remap_labels(raw: &[i64]) -> Result<Vec<usize>> {
    if let Some(bad) = raw.iter().find(|&&l| l < 0) {
        return Err(Error::Format(format!(
            "label {bad} outside the non-negative label range"
        )));
    }
    let distinct: Vec<i64> = raw
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(raw
        .iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect())
}

fn normalize(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&p| f32::from(p) / 255.0).collect()
}

fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let bytes = read_file(images)?;
    let mut r = Reader::new(&bytes);
    let (dtype, dims) = idx_header(&mut r)?;
    if dtype != 0x08 {
        return Err(Error::Format(format!(
            "image dtype 0x{dtype:02x} is not u8"
        )));
    }
    let n = dims[0];
    let sample_shape: Vec<usize> = match &dims[1..] {
        [] => vec![1],
        [h, w] => vec![1, *h, *w],
        rest => rest.to_vec(),
    };
    let per: usize = sample_shape.iter().product();
    let pixels = r.take(n * per, "idx image payload")?;
    let raw_labels = idx_labels(&read_file(labels)?)?;
    if raw_labels.len() != n {
        return Err(Error::Format(format!(
            "{} labels for {n} images",
            raw_labels.len()
        )));
    }
    let mut shape = vec![n];
    shape.extend(sample_shape);
    LabeledDataset::new(
        Tensor::new(shape, normalize(pixels))?,
        remap_labels(&raw_labels)?,
        (0.0, 1.0),
    )
}

fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let bytes = read_file(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(bytes.as_slice());
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            Error::Parse {
                offset,
                message: e.to_string(),
            }
        })?;
        let offset = record.position().map_or(0, |p| p.byte());
        let mut fields = record.iter();
        let label: i64 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                offset,
                message: "missing or non-integer label".into(),
            })?;
        labels.push(label);
        let before = pixels.len();
        for f in fields {
            let v: u16 = f.trim().parse().map_err(|_| Error::Parse {
                offset,
                message: format!("non-integer pixel {f:?}"),
            })?;
            if v > 255 {
                return Err(Error::Format(format!(
                    "pixel {v} outside 0..=255 at byte {offset}"
                )));
            }
            pixels.push(v as u8);
        }
        let w = pixels.len() - before;
        if w == 0 || *width.get_or_insert(w) != w {
            return Err(Error::Parse {
                offset,
                message: "inconsistent feature count".into(),
            });
        }
    }
    let n = labels.len();
    let w = width.ok_or_else(|| Error::Format("csv file holds no samples".into()))?;
    let side = (w as f64).sqrt().round() as usize;
    let shape = if side * side == w && w > 1 {
        vec![n, 1, side, side]
    } else {
        vec![n, w]
    };
    LabeledDataset::new(
        Tensor::new(shape, normalize(&pixels))?,
        remap_labels(&labels)?,
        (0.0, 1.0),
    )
}

fn load_raw_u8(path: &Path) -> Result<LabeledDataset> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes);
    let magic = r.u32_le("raw-u8 magic")?;
    if magic != RAW_U8_MAGIC {
        return Err(Error::Format(format!("bad raw-u8 magic 0x{magic:08x}")));
    }
    let n = r.u32_le("raw-u8 count")? as usize;
    let h = r.u32_le("raw-u8 height")? as usize;
    let w = r.u32_le("raw-u8 width")? as usize;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * h * w);
    for _ in 0..n {
        labels.push(i64::from(r.take(1, "raw-u8 label")?[0]));
        pixels.extend_from_slice(r.take(h * w, "raw-u8 pixels")?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos as u64,
            message: "trailing bytes after declared records".into(),
        });
    }
    LabeledDataset::new(
        Tensor::new(vec![n, 1, h, w], normalize(&pixels))?,
        remap_labels(&labels)?,
        (0.0, 1.0),
    )
}

/// Loads a small image dataset; values in `[0, 1]`, labels remapped to `0..C`.
pub fn load_image_dataset(path: &Path, format: &ImageFormat) -> Result<LabeledDataset> {
    match format {
        ImageFormat::Idx { labels } => load_idx(path, labels),
        ImageFormat::Csv => load_csv(path),
        ImageFormat::RawU8 => load_raw_u8(path),
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn image_dims(data: &LabeledDataset) -> Vec<usize> {
    match data.sample_shape() {
        [1, h, w] => vec![*h, *w],
        other => other.to_vec(),
    }
}

/// Writes `[0, 1]` samples as u8 IDX images plus a u8 IDX label file.
pub fn write_idx(images: &Path, labels: &Path, data: &LabeledDataset) -> Result<()> {
    let dims = image_dims(data);
    let mut out = vec![0, 0, 0x08, (dims.len() + 1) as u8];
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    out.extend(data.samples().data().iter().map(|&v| quantize(v)));
    write_file(images, &out)?;

    let mut lab = vec![0, 0, 0x08, 1];
    lab.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for &l in data.labels() {
        let l = u8::try_from(l).map_err(|_| Error::Format(format!("label {l} exceeds u8")))?;
        lab.push(l);
    }
    write_file(labels, &lab)
}

pub fn write_csv(path: &Path, data: &LabeledDataset) -> Result<()> {
    let mut out = Vec::new();
    for i in 0..data.len() {
        write!(out, "{}", data.labels()[i]).expect("vec write");
        for &v in data.sample(i) {
            write!(out, ",{}", quantize(v)).expect("vec write");
        }
        out.push(b'\n');
    }
    write_file(path, &out)
}

pub fn write_raw_u8(path: &Path, data: &LabeledDataset) -> Result<()> {
    let (h, w) = match data.sample_shape() {
        [1, h, w] | [h, w] => (*h, *w),
        other => (1, other.iter().product()),
    };
    let mut out = Vec::with_capacity(16 + data.len() * (1 + h * w));
    for v in [RAW_U8_MAGIC, data.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..data.len() {
        let l = u8::try_from(data.labels()[i])
            .map_err(|_| Error::Format(format!("label {} exceeds u8", data.labels()[i])))?;
        out.push(l);
        out.extend(data.sample(i).iter().map(|&v| quantize(v)));
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_images() -> LabeledDataset {
        let pixels: Vec<f32> = (0..32).map(|i| (i * 8) as f32 / 255.0).collect();
        LabeledDataset::new(
            Tensor::new(vec![2, 1, 4, 4], pixels).unwrap(),
            vec![1, 0],
            (0.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn idx_header_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("x.idx"), dir.path().join("y.idx"));
        write_idx(&img, &lab, &tiny_images()).unwrap();
        let bytes = fs::read(&img).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let d = load_image_dataset(&img, &ImageFormat::Idx { labels: lab }).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.samples().row_len(), 16);
    }

    #[test]
    fn csv_row_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "3,0,255,51\n5,255,0,0\n").unwrap();
        let d = load_image_dataset(&path, &ImageFormat::Csv).unwrap();
        // Labels {3, 5} remap to {0, 1}.
        assert_eq!(d.labels(), &[0, 1]);
        assert_eq!(d.sample(0), &[0.0, 1.0, 0.2]);
    }

    #[test]
    fn roundtrips_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_images();

        let (img, lab) = (dir.path().join("x.idx"), dir.path().join("y.idx"));
        write_idx(&img, &lab, &data).unwrap();
        let idx = load_image_dataset(&img, &ImageFormat::Idx { labels: lab }).unwrap();

        let csv_path = dir.path().join("d.csv");
        write_csv(&csv_path, &data).unwrap();
        let csv = load_image_dataset(&csv_path, &ImageFormat::Csv).unwrap();

        let raw_path = dir.path().join("d.raw");
        write_raw_u8(&raw_path, &data).unwrap();
        let raw = load_image_dataset(&raw_path, &ImageFormat::RawU8).unwrap();

        for loaded in [idx, csv, raw] {
            assert_eq!(loaded.samples(), data.samples());
            assert_eq!(loaded.labels(), data.labels());
        }
    }

    #[test]
    fn truncated_idx_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("x.idx"), dir.path().join("y.idx"));
        write_idx(&img, &lab, &tiny_images()).unwrap();
        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..20]).unwrap();
        match load_image_dataset(&img, &ImageFormat::Idx { labels: lab }) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_raw_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.raw");
        write_raw_u8(&path, &tiny_images()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..30]).unwrap();
        match load_image_dataset(&path, &ImageFormat::RawU8) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 17),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn negative_idx_label_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("x.idx"), dir.path().join("y.idx"));
        write_idx(&img, &lab, &tiny_images()).unwrap();
        // i8 labels: 0x09 dtype with a negative entry.
        let mut bytes = vec![0, 0, 0x09, 1, 0, 0, 0, 2];
        bytes.extend_from_slice(&[1, 0xFF]);
        fs::write(&lab, bytes).unwrap();
        assert!(matches!(
            load_image_dataset(&img, &ImageFormat::Idx { labels: lab }),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn csv_rejects_out_of_range_pixels_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "1,0,300\n").unwrap();
        assert!(matches!(
            load_image_dataset(&path, &ImageFormat::Csv),
            Err(Error::Format(_))
        ));
        fs::write(&path, "1,0,3\n2,4\n").unwrap();
        assert!(matches!(
            load_image_dataset(&path, &ImageFormat::Csv),
            Err(Error::Parse { .. })
        ));
    }
}
