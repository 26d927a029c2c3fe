//! Datasets: IDX image/label pairs, synthetic Gaussian blobs, a plain-text
//! cache format, and Poisson subsampling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng::{RngStream, StreamTag};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub d_in: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::contract("a dataset needs at least one example"));
        }
        if inputs.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let d_in = inputs[0].len();
        if d_in == 0 {
            return Err(Error::contract("inputs must have positive dimension"));
        }
        if let Some(i) = inputs.iter().position(|x| x.len() != d_in) {
            return Err(Error::contract(format!("example {i} has the wrong dimension")));
        }
        if let Some(i) = labels.iter().position(|&y| y >= n_classes) {
            return Err(Error::contract(format!(
                "example {i} has label {} outside [0, {n_classes})",
                labels[i]
            )));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
            d_in,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.inputs.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    /// Cache format: header `name,n,d_in,n_classes`, then one row per
    /// example with the label first. Floats use the shortest round-trip
    /// representation, so a reload is bit-identical.
    pub fn to_cache_string(&self) -> String {
        let mut out = format!("{},{},{},{}\n", self.name, self.len(), self.d_in, self.n_classes);
        for (x, y) in self.iter() {
            write!(out, "{y}").expect("write to String");
            for v in x {
                write!(out, ",{v}").expect("write to String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_cache_str(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |offset: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        let mut offset = 0usize;
        let mut lines = text.split_inclusive('\n');
        let header = lines
            .next()
            .ok_or_else(|| parse_err(0, "missing header line".into()))?;
        let fields: Vec<&str> = header.trim_end().split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(0, "header must be name,n,d_in,n_classes".into()));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| parse_err(0, format!("header field {what} is not an integer: {s:?}")))
        };
        let (name, n, d_in, n_classes) = (
            fields[0].to_string(),
            num(fields[1], "n")?,
            num(fields[2], "d_in")?,
            num(fields[3], "n_classes")?,
        );
        offset += header.len();
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for line in lines {
            let row = line.trim_end();
            if row.is_empty() {
                offset += line.len();
                continue;
            }
            let mut parts = row.split(',');
            let label: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(offset, "row does not start with an integer label".into()))?;
            let x: Vec<f64> = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(offset, format!("bad feature value: {e}")))?;
            if x.len() != d_in {
                return Err(parse_err(
                    offset,
                    format!("row has {} features, header says {d_in}", x.len()),
                ));
            }
            inputs.push(x);
            labels.push(label);
            offset += line.len();
        }
        if inputs.len() != n {
            return Err(parse_err(
                offset,
                format!("header declares {n} examples, found {}", inputs.len()),
            ));
        }
        Dataset::new(name, inputs, labels, n_classes)
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_cache_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_cache_str(&text, path)
    }
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl IdxReader<'_> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message,
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let raw = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.err("file truncated inside the header".into()))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(raw.try_into().expect("4-byte slice")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32()?;
        if got != expected {
            self.pos -= 4;
            return Err(self.err(format!(
                "bad magic 0x{got:08x}, expected 0x{expected:08x}"
            )));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.err(format!(
                "file truncated: need {len} payload bytes, only {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let data = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(data)
    }
}

/// Parses an IDX image file (magic `0x00000803`) and label file (magic
/// `0x00000801`). Pixels are scaled to `[0, 1]`; `limit` truncates.
pub fn load_idx_pair(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    if limit == Some(0) {
        return Err(Error::contract("limit must be at least 1"));
    }
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let mut img = IdxReader {
        bytes: &image_bytes,
        pos: 0,
        path: images_path,
    };
    img.magic(IDX_IMAGES_MAGIC)?;
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let pixels = img.payload(count * rows * cols)?;

    let mut lab = IdxReader {
        bytes: &label_bytes,
        pos: 0,
        path: labels_path,
    };
    lab.magic(IDX_LABELS_MAGIC)?;
    let label_count = lab.u32()? as usize;
    if label_count != count {
        return Err(lab.err(format!(
            "label count {label_count} does not match image count {count}"
        )));
    }
    let raw_labels = lab.payload(label_count)?;

    let n = limit.map_or(count, |l| l.min(count));
    let d_in = rows * cols;
    let inputs = pixels
        .chunks_exact(d_in)
        .take(n)
        .map(|px| px.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();
    let labels: Vec<usize> = raw_labels.iter().take(n).map(|&y| y as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(1, |m| m + 1).max(10);
    Dataset::new("idx", inputs, labels, n_classes)
}

/// Writes an IDX pair; used to build fixtures.
pub fn write_idx_pair(
    images_path: &Path,
    labels_path: &Path,
    rows: u32,
    cols: u32,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, labels.len() as u32, rows, cols] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [IDX_LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Unit-variance Gaussian blobs. Class centers sit on scaled coordinate
/// axes (random directions when `n_classes > d_in`), shifted to have zero
/// mean, with every pairwise distance at least `margin`. Labels cycle
/// through the classes.
pub fn gen_synthetic(
    n: usize,
    d_in: usize,
    n_classes: usize,
    margin: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 || d_in == 0 || n < n_classes {
        return Err(Error::contract(format!(
            "invalid synthetic sizes n={n}, d_in={d_in}, n_classes={n_classes}"
        )));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::contract(format!("margin must be positive, got {margin}")));
    }
    let mut centers: Vec<Vec<f64>> = if n_classes <= d_in {
        (0..n_classes)
            .map(|k| {
                let mut c = vec![0.0; d_in];
                c[k] = margin / 2f64.sqrt();
                c
            })
            .collect()
    } else {
        let stream = RngStream::new(seed, 0, StreamTag::Data, -2);
        let raw = stream.gaussians(n_classes * d_in, 1.0);
        let mut cs: Vec<Vec<f64>> = raw.chunks(d_in).map(<[f64]>::to_vec).collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..n_classes {
            for j in (i + 1)..n_classes {
                let d: f64 = cs[i].iter().zip(&cs[j]).map(|(a, b)| (a - b).powi(2)).sum();
                min_dist = min_dist.min(d.sqrt());
            }
        }
        if !(min_dist > 0.0) {
            return Err(Error::contract("degenerate synthetic centers"));
        }
        let s = margin / min_dist;
        cs.iter_mut().for_each(|c| c.iter_mut().for_each(|v| *v *= s));
        cs
    };
    for j in 0..d_in {
        let mean = centers.iter().map(|c| c[j]).sum::<f64>() / n_classes as f64;
        centers.iter_mut().for_each(|c| c[j] -= mean);
    }
    let noise = RngStream::new(seed, 0, StreamTag::Data, -1).gaussians(n * d_in, 1.0);
    let labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let inputs = noise
        .chunks(d_in)
        .zip(&labels)
        .map(|(z, &y)| z.iter().zip(&centers[y]).map(|(a, b)| a + b).collect())
        .collect();
    Dataset::new(
        format!("synthetic-{n}x{d_in}-k{n_classes}-m{margin}"),
        inputs,
        labels,
        n_classes,
    )
}

/// Inclusion indices of a Poisson sample: each example enters
/// independently with probability `q`, in index order.
pub fn poisson_indices(n: usize, q: f64, stream: &RngStream) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::contract(format!("sampling ratio must lie in [0, 1], got {q}")));
    }
    let mut rng = stream.rng();
    Ok((0..n)
        .filter(|_| {
            let u: f64 = rng.random();
            u < q
        })
        .collect())
}

pub fn poisson_sample(dataset: &Dataset, q: f64, stream: &RngStream) -> Result<Batch> {
    let idx = poisson_indices(dataset.len(), q, stream)?;
    Batch::new(
        idx.iter().map(|&i| dataset.inputs[i].clone()).collect(),
        idx.iter().map(|&i| dataset.labels[i]).collect(),
    )
}
