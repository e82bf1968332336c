//! Datasets, the IDX (MNIST) file format, synthetic generators and seeded
//! minibatch sampling.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::Mat;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-per-sample inputs (`N × d`) and targets (`N × k`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    inputs: Mat,
    targets: Mat,
    normalization: String,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Mat, targets: Mat, normalization: impl Into<String>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if inputs.rows() != targets.rows() {
            return Err(Error::shape(
                "Dataset",
                format!("{} inputs but {} targets", inputs.rows(), targets.rows()),
            ));
        }
        if !inputs.all_finite() || !targets.all_finite() {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Dataset { name: name.into(), inputs, targets, normalization: normalization.into() })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn normalization(&self) -> &str {
        &self.normalization
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }

    pub fn targets(&self) -> &Mat {
        &self.targets
    }

    /// Rows `indices` of the inputs and targets.
    pub fn gather(&self, indices: &[usize]) -> (Mat, Mat) {
        (gather_rows(&self.inputs, indices), gather_rows(&self.targets, indices))
    }

    /// Contiguous slices of at most `size` samples, in storage order.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = (Mat, Mat)> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
            self.gather(&idx)
        })
    }

    /// First `n` samples (all of them if `n ≥ len`).
    pub fn truncate(mut self, n: usize) -> Self {
        if n < self.len() {
            let idx: Vec<usize> = (0..n.max(1)).collect();
            let (x, y) = self.gather(&idx);
            self.inputs = x;
            self.targets = y;
        }
        self
    }
}

fn gather_rows(m: &Mat, indices: &[usize]) -> Mat {
    let c = m.cols();
    let mut data = Vec::with_capacity(indices.len() * c);
    for &i in indices {
        data.extend_from_slice(m.row(i));
    }
    Mat::from_matrix(indices.len(), c, data).expect("sized")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdxMode {
    /// Targets equal the inputs.
    Autoencoder,
    /// One-hot targets over 10 classes.
    Classify,
}

fn format_err(field: &str, detail: impl Into<String>) -> Error {
    Error::Format { field: field.into(), detail: detail.into() }
}

fn be_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(field, format!("file ends at byte {} before the header is complete", bytes.len())))
}

/// Parsed IDX image file: `count` images of `rows × cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err("magic", format!("expected 0x{IDX_IMAGES_MAGIC:08x} for images, found 0x{magic:08x}")));
    }
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(format_err(
            "pixel data",
            format!("header declares {count}×{rows}×{cols} = {need} bytes, file has {}", body.len()),
        ));
    }
    Ok(IdxImages { count, rows, cols, pixels: body.to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err("magic", format!("expected 0x{IDX_LABELS_MAGIC:08x} for labels, found 0x{magic:08x}")));
    }
    let count = be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(format_err("label data", format!("header declares {count} labels, file has {}", body.len())));
    }
    Ok(body.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an IDX image file (and optionally its label file), scaling pixels to
/// `[0, 1]`. Classification mode requires labels.
pub fn load_mnist_idx(images: &Path, labels: Option<&Path>, mode: IdxMode) -> Result<Dataset> {
    let imgs = parse_idx_images(&fs::read(images)?)?;
    let labels = labels.map(|p| fs::read(p).map_err(Error::from).and_then(|b| parse_idx_labels(&b))).transpose()?;
    if let Some(l) = &labels {
        if l.len() != imgs.count {
            return Err(format_err("label count", format!("{} labels for {} images", l.len(), imgs.count)));
        }
    }
    let d = imgs.rows * imgs.cols;
    let inputs = Mat::from_matrix(imgs.count, d, imgs.pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let targets = match mode {
        IdxMode::Autoencoder => inputs.clone(),
        IdxMode::Classify => {
            let l = labels.ok_or_else(|| Error::InvalidArgument("classification needs a label file".into()))?;
            if let Some(&bad) = l.iter().find(|&&c| c >= 10) {
                return Err(format_err("label value", format!("class id {bad} outside 0..10")));
            }
            Mat::from_fn(imgs.count, 10, |n, c| if l[n] as usize == c { 1.0 } else { 0.0 })
        }
    };
    let name = images.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(name, inputs, targets, "pixels/255")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Uniform inputs in `[-φ, φ]^d`, targets from a random tanh teacher.
    /// `dims = [d, k]`.
    BoundedRegression,
    /// Noisy class prototypes with pixels in `[0, φ]`, one-hot targets.
    /// `dims = [channels, height, width, classes]`.
    TinyImages,
    /// Rendered random curves on a `side × side` canvas in `[0, φ]`;
    /// autoencoder targets. `dims = [side]`.
    Curves,
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::BoundedRegression => "bounded-regression",
            SyntheticKind::TinyImages => "tiny-images",
            SyntheticKind::Curves => "curves",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounded-regression" => Ok(SyntheticKind::BoundedRegression),
            "tiny-images" => Ok(SyntheticKind::TinyImages),
            "curves" => Ok(SyntheticKind::Curves),
            _ => Err(Error::InvalidArgument(format!("unknown synthetic dataset '{s}'"))),
        }
    }
}

pub fn synthetic_dataset(kind: SyntheticKind, n: usize, dims: &[usize], seed: u64, phi: f64) -> Result<Dataset> {
    let expected = match kind {
        SyntheticKind::BoundedRegression => 2,
        SyntheticKind::TinyImages => 4,
        SyntheticKind::Curves => 1,
    };
    if n == 0 || dims.len() != expected || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("{kind} needs N ≥ 1 and {expected} positive dims, got {n}, {dims:?}")));
    }
    if !(phi >= 0.0) || !phi.is_finite() {
        return Err(Error::InvalidArgument(format!("phi must be finite and ≥ 0, got {phi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = format!("{kind}");
    match kind {
        SyntheticKind::BoundedRegression => {
            let (d, k) = (dims[0], dims[1]);
            let teacher = Mat::from_fn(k, d + 1, |_, _| rng.random_range(-1.0..1.0) / (d as f64).sqrt());
            let inputs = Mat::from_fn(n, d, |_, _| if phi > 0.0 { rng.random_range(-phi..=phi) } else { 0.0 });
            let targets = Mat::from_fn(n, k, |s, o| {
                let w = teacher.row(o);
                let z: f64 = inputs.row(s).iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + w[d];
                z.tanh()
            });
            Dataset::new(name, inputs, targets, format!("uniform in [-{phi}, {phi}]"))
        }
        SyntheticKind::TinyImages => {
            let (c, h, w, classes) = (dims[0], dims[1], dims[2], dims[3]);
            let d = c * h * w;
            let protos = Mat::from_fn(classes, d, |_, _| rng.random_range(0.0..1.0));
            let mut labels = Vec::with_capacity(n);
            let inputs = Mat::from_fn(n, d, |s, j| {
                if j == 0 {
                    labels.push(rng.random_range(0..classes));
                }
                let v = protos[(labels[s], j)] + 0.3 * rng.random_range(-1.0..1.0);
                phi * v.clamp(0.0, 1.0)
            });
            let targets = Mat::from_fn(n, classes, |s, o| if labels[s] == o { 1.0 } else { 0.0 });
            Dataset::new(name, inputs, targets, format!("clamped to [0, {phi}]"))
        }
        SyntheticKind::Curves => {
            let side = dims[0];
            let mut data = Vec::with_capacity(n * side * side);
            for _ in 0..n {
                data.extend(render_curve(&mut rng, side).into_iter().map(|v| phi * v));
            }
            let inputs = Mat::from_matrix(n, side * side, data)?;
            Dataset::new(name, inputs.clone(), inputs, format!("intensity in [0, {phi}]"))
        }
    }
}

/// One random cubic Bézier stroke rendered with a Gaussian pen, values in `[0, 1]`.
fn render_curve(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    let s = side as f64;
    let pts: Vec<(f64, f64)> = (0..4).map(|_| (rng.random_range(0.1..0.9) * s, rng.random_range(0.1..0.9) * s)).collect();
    let width = rng.random_range(0.6..1.4) * s / 28.0;
    let samples = 4 * side;
    let path: Vec<(f64, f64)> = (0..=samples)
        .map(|i| {
            let t = i as f64 / samples as f64;
            let u = 1.0 - t;
            let b = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
            (0..4).fold((0.0, 0.0), |acc, j| (acc.0 + b[j] * pts[j].0, acc.1 + b[j] * pts[j].1))
        })
        .collect();
    let mut img = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d2 = path.iter().map(|&(cx, cy)| (cx - px).powi(2) + (cy - py).powi(2)).fold(f64::INFINITY, f64::min);
            img[y * side + x] = (-d2 / (2.0 * width * width)).exp();
        }
    }
    img
}

/// Per-epoch random permutations cut into minibatches.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    batch_size: usize,
    drop_last: bool,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, drop_last: bool, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::InvalidArgument("sampler needs N ≥ 1 and m ≥ 1".into()));
        }
        if drop_last && batch_size > n {
            return Err(Error::InvalidArgument(format!("batch size {batch_size} exceeds N = {n} with drop_last")));
        }
        let mut s = BatchSampler {
            batch_size,
            drop_last,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: 0,
            epoch: 0,
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        let n = self.order.len();
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }

    /// Indices of the next minibatch; reshuffles at epoch boundaries.
    pub fn next_indices(&mut self) -> Vec<usize> {
        let n = self.order.len();
        let remaining = n - self.pos;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            self.epoch += 1;
            self.pos = 0;
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.pos + self.batch_size).min(n);
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        idx
    }

    pub fn next_batch(&mut self, data: &Dataset) -> (Mat, Mat) {
        let idx = self.next_indices();
        data.gather(&idx)
    }

    /// True when the last batch handed out finished an epoch.
    pub fn at_epoch_end(&self) -> bool {
        let remaining = self.order.len() - self.pos;
        remaining == 0 || (self.drop_last && remaining < self.batch_size)
    }
}
