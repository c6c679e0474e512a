//! Facial-image pipeline for the 2D model: decoding, resizing, rescaling,
//! random affine augmentation and batching.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use memscreen_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::health::epoch_order;
use crate::Batch;

/// Side length the 2D model expects.
pub const IMAGE_SIDE: usize = 224;

/// Largest accepted encoded image.
pub const MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;

pub const SPLITS: [&str; 3] = ["train", "test", "validation"];

/// Class directories and the label each one carries.
pub const CLASS_DIRS: [(&str, u8); 2] = [("demented", 1), ("non_demented", 0)];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image payload of {0} bytes exceeds the 10 MB limit")]
    TooLarge(usize),
    #[error("cannot decode image: {0}")]
    Decode(#[from] image::ImageError),
    #[error("missing directory {0}")]
    MissingDir(PathBuf),
    #[error("class directory {0} contains no decodable images")]
    EmptyClass(PathBuf),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no samples to batch")]
    Empty,
}

pub type Result<T> = std::result::Result<T, ImageError>;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// `[side, side, 3]`, values in `[0, 1]`.
    pub pixels: Tensor<f32>,
    /// 1 = demented, 0 = non-demented.
    pub label: u8,
    pub source_path: String,
}

impl ImageSample {
    pub fn side(&self) -> usize {
        self.pixels.shape()[0]
    }
}

/// Decodes PNG or JPEG bytes into a `[side, side, 3]` tensor scaled to
/// `[0, 1]`. Grayscale and alpha inputs are widened or dropped to RGB.
pub fn decode_image(bytes: &[u8], side: usize) -> Result<Tensor<f32>> {
    if bytes.len() > MAX_IMAGE_BYTES {
        return Err(ImageError::TooLarge(bytes.len()));
    }
    let img = image::load_from_memory(bytes)?.to_rgb8();
    let side32 = side as u32;
    let img = if img.width() == side32 && img.height() == side32 {
        img
    } else {
        image::imageops::resize(&img, side32, side32, FilterType::Triangle)
    };
    let data = img.into_raw().into_iter().map(|b| f32::from(b) / 255.0).collect();
    Ok(Tensor::new(vec![side, side, 3], data).expect("rgb buffer length"))
}

/// Encodes a `[h, w, 3]` tensor in `[0, 1]` as PNG.
pub fn encode_png(pixels: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = (pixels.shape()[0] as u32, pixels.shape()[1] as u32);
    let raw: Vec<u8> = pixels.data().iter().map(|&v| to_byte(v)).collect();
    let img = image::RgbImage::from_raw(w, h, raw).expect("rgb buffer length");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub(crate) fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Counts of loaded images for one split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub demented: usize,
    pub non_demented: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.demented + self.non_demented
    }
}

#[derive(Clone, Debug, Default)]
pub struct ImageDataset {
    pub train: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
    pub validation: Vec<ImageSample>,
    /// Files that could not be read or decoded.
    pub skipped: Vec<PathBuf>,
}

impl ImageDataset {
    pub fn split(&self, name: &str) -> &[ImageSample] {
        match name {
            "train" => &self.train,
            "test" => &self.test,
            _ => &self.validation,
        }
    }

    pub fn counts(&self, split: &str) -> ClassCounts {
        count_classes(self.split(split))
    }
}

pub fn count_classes(samples: &[ImageSample]) -> ClassCounts {
    let demented = samples.iter().filter(|s| s.label == 1).count();
    ClassCounts {
        demented,
        non_demented: samples.len() - demented,
    }
}

/// Loads `<root>/{train,test,validation}/{demented,non_demented}/*`.
/// Files are visited in name order. Undecodable files are skipped and
/// recorded; a class directory with nothing decodable is an error.
pub fn load_dataset(root: &Path, side: usize) -> Result<ImageDataset> {
    let mut ds = ImageDataset::default();
    for split in SPLITS {
        let mut samples = Vec::new();
        for (class, label) in CLASS_DIRS {
            let dir = root.join(split).join(class);
            let loaded = load_class_dir(&dir, label, side, &mut ds.skipped)?;
            if loaded.is_empty() {
                return Err(ImageError::EmptyClass(dir));
            }
            samples.extend(loaded);
        }
        match split {
            "train" => ds.train = samples,
            "test" => ds.test = samples,
            _ => ds.validation = samples,
        }
    }
    Ok(ds)
}

/// Loads a single split directory `<dir>/{demented,non_demented}/*`.
pub fn load_split(dir: &Path, side: usize) -> Result<(Vec<ImageSample>, Vec<PathBuf>)> {
    let mut skipped = Vec::new();
    let mut samples = Vec::new();
    for (class, label) in CLASS_DIRS {
        let class_dir = dir.join(class);
        let loaded = load_class_dir(&class_dir, label, side, &mut skipped)?;
        if loaded.is_empty() {
            return Err(ImageError::EmptyClass(class_dir));
        }
        samples.extend(loaded);
    }
    Ok((samples, skipped))
}

fn load_class_dir(
    dir: &Path,
    label: u8,
    side: usize,
    skipped: &mut Vec<PathBuf>,
) -> Result<Vec<ImageSample>> {
    if !dir.is_dir() {
        return Err(ImageError::MissingDir(dir.to_path_buf()));
    }
    let io = |source| ImageError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let decoded = fs::read(&path)
            .map_err(|e| e.to_string())
            .and_then(|b| decode_image(&b, side).map_err(|e| e.to_string()));
        match decoded {
            Ok(pixels) => out.push(ImageSample {
                pixels,
                label,
                source_path: path.display().to_string(),
            }),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                skipped.push(path);
            }
        }
    }
    Ok(out)
}

/// Ranges for the random affine augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub width_shift_frac: f64,
    pub height_shift_frac: f64,
    pub shear_max_deg: f64,
    /// Zoom factors are drawn from `[1 - zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    pub horizontal_flip: bool,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max_deg: 20.0,
            width_shift_frac: 0.1,
            height_shift_frac: 0.1,
            shear_max_deg: 10.0,
            zoom_range: 0.1,
            horizontal_flip: true,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            width_shift_frac: 0.0,
            height_shift_frac: 0.0,
            shear_max_deg: 0.0,
            zoom_range: 0.0,
            horizontal_flip: false,
            rng_seed: 0,
        }
    }

    fn is_identity(&self) -> bool {
        self.rotation_max_deg == 0.0
            && self.width_shift_frac == 0.0
            && self.height_shift_frac == 0.0
            && self.shear_max_deg == 0.0
            && self.zoom_range == 0.0
            && !self.horizontal_flip
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, max: f64) -> f64 {
    if max > 0.0 {
        rng.gen_range(-max..=max)
    } else {
        0.0
    }
}

/// Applies one random affine transform. Output pixels are sampled from
/// the source through the inverse map with bilinear interpolation and
/// reflected borders.
pub fn augment<R: Rng + ?Sized>(sample: &ImageSample, config: &AugmentConfig, rng: &mut R) -> ImageSample {
    if config.is_identity() {
        return sample.clone();
    }
    let (h, w) = (sample.pixels.shape()[0], sample.pixels.shape()[1]);
    let theta = symmetric(rng, config.rotation_max_deg).to_radians();
    let tx = symmetric(rng, config.width_shift_frac) * w as f64;
    let ty = symmetric(rng, config.height_shift_frac) * h as f64;
    let shear = symmetric(rng, config.shear_max_deg).to_radians();
    let zx = 1.0 + symmetric(rng, config.zoom_range);
    let zy = 1.0 + symmetric(rng, config.zoom_range);
    let flip = config.horizontal_flip && rng.gen_bool(0.5);

    // Inverse map, output (y, x) relative to centre -> source (y, x):
    // rotate, shear, then zoom, then shift.
    let (s, c) = theta.sin_cos();
    let rot = [[c, -s], [s, c]];
    let sh = [[1.0, -shear.sin()], [0.0, shear.cos()]];
    let m = mat_mul(mat_mul(rot, sh), [[zy, 0.0], [0.0, zx]]);

    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = sample.pixels.data();
    let mut out = vec![0.0f32; src.len()];
    for oy in 0..h {
        for ox in 0..w {
            let (dy, dx) = (oy as f64 - cy, ox as f64 - cx);
            let sy = m[0][0] * dy + m[0][1] * dx + cy - ty;
            let sx = m[1][0] * dy + m[1][1] * dx + cx - tx;
            let base = (oy * w + if flip { w - 1 - ox } else { ox }) * 3;
            sample_bilinear(src, h, w, sy, sx, &mut out[base..base + 3]);
        }
    }
    ImageSample {
        pixels: Tensor::new(vec![h, w, 3], out).expect("same extents"),
        label: sample.label,
        source_path: sample.source_path.clone(),
    }
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Half-sample symmetric reflection: `d c b a | a b c d | d c b a`.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

fn sample_bilinear(src: &[f32], h: usize, w: usize, y: f64, x: f64, out: &mut [f32]) {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let rows = [reflect(y0, h), reflect(y0 + 1, h)];
    let cols = [reflect(x0, w), reflect(x0 + 1, w)];
    let weights = [
        (1.0 - fy) * (1.0 - fx),
        (1.0 - fy) * fx,
        fy * (1.0 - fx),
        fy * fx,
    ];
    for (ch, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for (k, wgt) in weights.iter().enumerate() {
            let idx = (rows[k / 2] * w + cols[k % 2]) * 3 + ch;
            acc += wgt * f64::from(src[idx]);
        }
        *o = acc.clamp(0.0, 1.0) as f32;
    }
}

pub fn flip_horizontal(sample: &ImageSample) -> ImageSample {
    let (h, w) = (sample.pixels.shape()[0], sample.pixels.shape()[1]);
    let src = sample.pixels.data();
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let from = (y * w + w - 1 - x) * 3;
            let to = (y * w + x) * 3;
            out[to..to + 3].copy_from_slice(&src[from..from + 3]);
        }
    }
    ImageSample {
        pixels: Tensor::new(vec![h, w, 3], out).expect("same extents"),
        label: sample.label,
        source_path: sample.source_path.clone(),
    }
}

/// Stacks the given samples (optionally augmented) into one batch.
pub fn make_batch<R: Rng + ?Sized>(
    samples: &[&ImageSample],
    augment_with: Option<&AugmentConfig>,
    rng: &mut R,
) -> Batch {
    let tensors: Vec<Tensor<f32>> = samples
        .iter()
        .map(|s| match augment_with {
            Some(cfg) => augment(s, cfg, rng).pixels,
            None => s.pixels.clone(),
        })
        .collect();
    Batch {
        inputs: Tensor::stack(&tensors).expect("uniform image extents"),
        labels: samples.iter().map(|s| s.label).collect(),
    }
}

/// Seeded stream for augmenting epoch `epoch`.
pub fn augment_rng(config: &AugmentConfig, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(epoch);
    rng
}

/// All batches of one epoch. `shuffle = Some((seed, epoch))` permutes the
/// order; augmentation, when given, draws from `augment_rng(config, epoch)`.
pub fn batches(
    samples: &[ImageSample],
    batch_size: usize,
    augment_with: Option<&AugmentConfig>,
    shuffle: Option<(u64, u64)>,
) -> Result<Vec<Batch>> {
    if samples.is_empty() {
        return Err(ImageError::Empty);
    }
    let order = match shuffle {
        Some((seed, epoch)) => epoch_order(samples.len(), seed, epoch),
        None => (0..samples.len()).collect(),
    };
    let epoch = shuffle.map_or(0, |(_, e)| e);
    let mut rng = augment_with.map(|c| augment_rng(c, epoch));
    Ok(order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let refs: Vec<&ImageSample> = chunk.iter().map(|&i| &samples[i]).collect();
            match (&mut rng, augment_with) {
                (Some(r), Some(cfg)) => make_batch(&refs, Some(cfg), r),
                _ => make_batch::<ChaCha8Rng>(&refs, None, &mut ChaCha8Rng::seed_from_u64(0)),
            }
        })
        .collect())
}
