//! Dataset ingestion, normalization, downsampling, and synthetic fixtures.
//!
//! On disk a dataset is either a directory of grayscale PGM files named
//! `<class>_<index>.pgm` or the packed binary format: magic `UDLB`,
//! u32 version, u32 n, u32 h, u32 w, u32 channels, u32 class_count, then
//! `n*h*w*channels` little-endian f32 pixels in [0, 1], then `n`
//! little-endian u32 labels.

use crate::error::UdllError;
use crate::metrics::LabelVector;
use crate::tensor::Tensor;
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 4] = b"UDLB";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4;

/// Grayscale image collection with ground-truth labels and provenance notes.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    /// `[n, h, w, 1]`, pixel values in `[0, 1]`.
    pub images: Tensor,
    pub labels: LabelVector,
    pub name: String,
    /// Human-readable notes: normalization, downsampling, warnings.
    pub provenance: Vec<String>,
}

impl ImageDataset {
    pub fn n(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.images.shape();
        if shape.len() != 4 || shape[3] != 1 {
            return Err(UdllError::Data(format!(
                "dataset images must be [n, h, w, 1], got {shape:?}"
            )));
        }
        if shape[0] != self.labels.len() {
            return Err(UdllError::Data(format!(
                "{} images but {} labels",
                shape[0],
                self.labels.len()
            )));
        }
        if self
            .images
            .data()
            .iter()
            .any(|&v| !v.is_finite() || !(0.0..=1.0).contains(&v))
        {
            return Err(UdllError::Data(
                "pixel values must be finite and in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses the packed binary dataset format.
pub fn load_binary(path: &Path) -> Result<ImageDataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(UdllError::Data(format!(
            "{}: file too short for header ({} bytes, need {HEADER_LEN})",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(UdllError::Data(format!(
            "{}: bad magic {:?}, expected UDLB",
            path.display(),
            &bytes[..4]
        )));
    }
    let version = read_u32(&bytes, 4);
    if version != FORMAT_VERSION {
        return Err(UdllError::Data(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let n = read_u32(&bytes, 8) as usize;
    let h = read_u32(&bytes, 12) as usize;
    let w = read_u32(&bytes, 16) as usize;
    let channels = read_u32(&bytes, 20) as usize;
    let class_count = read_u32(&bytes, 24) as usize;
    if channels != 1 {
        return Err(UdllError::Data(format!(
            "{}: only single-channel images are supported, got {channels}",
            path.display()
        )));
    }
    let pixel_count = n * h * w * channels;
    let expected = HEADER_LEN + pixel_count * 4 + n * 4;
    if bytes.len() != expected {
        return Err(UdllError::Data(format!(
            "{}: truncated or oversized payload, expected {expected} bytes, got {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut pixels = Vec::with_capacity(pixel_count);
    let mut at = HEADER_LEN;
    for _ in 0..pixel_count {
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as f64;
        pixels.push(v);
        at += 4;
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(read_u32(&bytes, at) as usize);
        at += 4;
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= class_count {
            return Err(UdllError::Data(format!(
                "{}: label {l} of sample {i} out of range for {class_count} classes",
                path.display()
            )));
        }
    }
    let mut provenance = vec![format!("loaded from {}", path.display())];
    if n == 0 {
        provenance.push("warning: empty dataset (n = 0)".into());
    }
    let ds = ImageDataset {
        images: Tensor::from_vec(&[n, h, w, 1], pixels)?,
        labels: LabelVector::new(labels, class_count.max(1))?,
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        provenance,
    };
    if ds.n() > 0 {
        ds.validate()?;
    }
    Ok(ds)
}

/// Writes the packed binary dataset format (pixels stored as f32).
pub fn save_binary(dataset: &ImageDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let shape = dataset.images.shape();
    let mut bytes = Vec::with_capacity(HEADER_LEN + dataset.images.len() * 4);
    bytes.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION,
        shape[0] as u32,
        shape[1] as u32,
        shape[2] as u32,
        shape[3] as u32,
        dataset.labels.class_count() as u32,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &p in dataset.images.data() {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    for &l in dataset.labels.labels() {
        bytes.extend_from_slice(&(l as u32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

struct PgmImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>, // already scaled to [0, 1]
}

fn parse_pgm(bytes: &[u8], name: &str) -> Result<PgmImage> {
    let magic = bytes
        .get(..2)
        .ok_or_else(|| UdllError::Data(format!("{name}: empty file")))?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        b"P6" | b"P3" => {
            return Err(UdllError::Data(format!(
                "{name}: color PPM is not a grayscale PGM"
            )))
        }
        _ => {
            return Err(UdllError::Data(format!(
                "{name}: not a PGM file (magic {:?})",
                String::from_utf8_lossy(magic)
            )))
        }
    };
    // header tokens: width, height, maxval; `#` starts a comment
    let mut pos = 2;
    let mut tokens = Vec::with_capacity(3);
    while tokens.len() < 3 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(UdllError::Data(format!("{name}: truncated PGM header")));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| UdllError::Data(format!("{name}: non-ascii PGM header")))?;
        let v: usize = tok
            .parse()
            .map_err(|_| UdllError::Data(format!("{name}: bad PGM header token `{tok}`")))?;
        tokens.push(v);
    }
    let (width, height, maxval) = (tokens[0], tokens[1], tokens[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(UdllError::Data(format!(
            "{name}: invalid PGM maxval {maxval}"
        )));
    }
    let count = width * height;
    let scale = 1.0 / maxval as f64;
    let pixels = if binary {
        pos += 1; // single whitespace after maxval
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let body = bytes.get(pos..pos + need).ok_or_else(|| {
            UdllError::Data(format!(
                "{name}: truncated PGM body, need {need} bytes after header"
            ))
        })?;
        if wide {
            body.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
                .collect()
        } else {
            body.iter().map(|&b| b as f64 * scale).collect()
        }
    } else {
        let text = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| UdllError::Data(format!("{name}: non-ascii P2 body")))?;
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map(|v| v as f64 * scale)
                    .map_err(|_| UdllError::Data(format!("{name}: bad P2 pixel `{t}`")))
            })
            .collect::<Result<_>>()?;
        if vals.len() < count {
            return Err(UdllError::Data(format!(
                "{name}: P2 body has {} pixels, need {count}",
                vals.len()
            )));
        }
        vals[..count].to_vec()
    };
    Ok(PgmImage {
        width,
        height,
        pixels,
    })
}

/// Loads every `<class>_<index>.<extension>` file from a directory of
/// grayscale PGMs. Ingestion order is (class, index) ascending regardless
/// of how the filesystem enumerates entries; class tokens are remapped to
/// dense labels in ascending token order.
pub fn load_image_dir(dir: &Path, extension: &str) -> Result<ImageDataset> {
    let mut entries: Vec<(usize, usize, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(fname) = path.file_name().and_then(|f| f.to_str()) else {
            continue;
        };
        let Some(stem) = fname.strip_suffix(&format!(".{extension}")) else {
            continue;
        };
        let Some((class_tok, index_tok)) = stem.split_once('_') else {
            return Err(UdllError::Data(format!(
                "{fname}: expected `<class>_<index>.{extension}`"
            )));
        };
        let class: usize = class_tok.parse().map_err(|_| {
            UdllError::Data(format!(
                "{fname}: class token `{class_tok}` is not an integer"
            ))
        })?;
        let index: usize = index_tok.parse().map_err(|_| {
            UdllError::Data(format!(
                "{fname}: index token `{index_tok}` is not an integer"
            ))
        })?;
        entries.push((class, index, path));
    }
    if entries.is_empty() {
        return Err(UdllError::Data(format!(
            "no .{extension} files found in {}",
            dir.display()
        )));
    }
    entries.sort();
    let mut classes: Vec<usize> = entries.iter().map(|e| e.0).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut pixels = Vec::new();
    let mut labels = Vec::with_capacity(entries.len());
    let mut dims: Option<(usize, usize)> = None;
    for (class, _, path) in &entries {
        let bytes = std::fs::read(path)?;
        let img = parse_pgm(&bytes, &path.display().to_string())?;
        match dims {
            None => dims = Some((img.height, img.width)),
            Some((h, w)) if (h, w) != (img.height, img.width) => {
                return Err(UdllError::Data(format!(
                    "{}: size {}x{} differs from first image {h}x{w}",
                    path.display(),
                    img.height,
                    img.width
                )));
            }
            _ => {}
        }
        pixels.extend_from_slice(&img.pixels);
        labels.push(classes.binary_search(class).expect("class present"));
    }
    let (h, w) = dims.expect("at least one image");
    let ds = ImageDataset {
        images: Tensor::from_vec(&[entries.len(), h, w, 1], pixels)?,
        labels: LabelVector::new(labels, classes.len())?,
        name: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        provenance: vec![
            format!("loaded {} PGM files from {}", entries.len(), dir.display()),
            "pixels normalized to [0, 1] by the PGM maxval".into(),
            format!("class tokens remapped densely: {classes:?}"),
        ],
    };
    ds.validate()?;
    Ok(ds)
}

/// Bilinear downsampling with pixel-center alignment; constants are
/// preserved exactly and outputs stay in [0, 1].
pub fn downsample(image: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(UdllError::Shape {
            op: "downsample",
            detail: format!("expected [h, w, c], got {shape:?}"),
        });
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if target_h == 0 || target_w == 0 {
        return Err(UdllError::Param(
            "downsample: target dims must be positive".into(),
        ));
    }
    if target_h > h || target_w > w {
        return Err(UdllError::Param(format!(
            "downsample: target {target_h}x{target_w} exceeds source {h}x{w}"
        )));
    }
    if (target_h, target_w) == (h, w) {
        return Ok(image.clone());
    }
    let mut out = Tensor::zeros(&[target_h, target_w, c]);
    let scale_y = h as f64 / target_h as f64;
    let scale_x = w as f64 / target_w as f64;
    for ty in 0..target_h {
        let sy = ((ty as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for tx in 0..target_w {
            let sx = ((tx as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let p = |y: usize, x: usize| image.data()[(y * w + x) * c + ch];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.data_mut()[(ty * target_w + tx) * c + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(out)
}

/// Downsamples every image in the dataset, recording the operation.
pub fn downsample_dataset(
    dataset: &ImageDataset,
    target_h: usize,
    target_w: usize,
) -> Result<ImageDataset> {
    let n = dataset.n();
    let (h, w) = (dataset.height(), dataset.width());
    let mut pixels = Vec::with_capacity(n * target_h * target_w);
    for i in 0..n {
        let start = i * h * w;
        let img = Tensor::from_vec(
            &[h, w, 1],
            dataset.images.data()[start..start + h * w].to_vec(),
        )?;
        pixels.extend_from_slice(downsample(&img, target_h, target_w)?.data());
    }
    let mut provenance = dataset.provenance.clone();
    provenance.push(format!(
        "bilinear downsample {h}x{w} -> {target_h}x{target_w}"
    ));
    Ok(ImageDataset {
        images: Tensor::from_vec(&[n, target_h, target_w, 1], pixels)?,
        labels: dataset.labels.clone(),
        name: dataset.name.clone(),
        provenance,
    })
}

/// Synthetic clustering fixture: each class is a bright rectangle at a
/// class-specific position (a horizontal band) plus Gaussian pixel noise,
/// clamped to [0, 1]. Seeded and bitwise reproducible.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    h: usize,
    w: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<ImageDataset> {
    if classes < 2 {
        return Err(UdllError::Param(format!(
            "synth_blobs: need at least 2 classes, got {classes}"
        )));
    }
    if per_class == 0 || h == 0 || w == 0 {
        return Err(UdllError::Param("synth_blobs: empty dimensions".into()));
    }
    if classes > h {
        return Err(UdllError::Param(format!(
            "synth_blobs: {classes} classes need at least {classes} rows, got {h}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * per_class;
    let mut pixels = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        let row0 = class * h / classes;
        let row1 = (class + 1) * h / classes;
        for _ in 0..per_class {
            for y in 0..h {
                let base = if y >= row0 && y < row1 { 1.0 } else { 0.0 };
                for _ in 0..w {
                    let noisy = base + noise_sigma * standard_normal(&mut rng);
                    pixels.push(noisy.clamp(0.0, 1.0));
                }
            }
            labels.push(class);
        }
    }
    let ds = ImageDataset {
        images: Tensor::from_vec(&[n, h, w, 1], pixels)?,
        labels: LabelVector::new(labels, classes)?,
        name: "synth-blobs".into(),
        provenance: vec![format!(
            "synthetic blobs: {classes} classes x {per_class}, {h}x{w}, sigma {noise_sigma}, seed {seed}, clamped to [0, 1]"
        )],
    };
    ds.validate()?;
    Ok(ds)
}

// Box-Muller; two uniforms per normal keeps the stream layout simple.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
