//! Seeded synthetic shapes: one square, disk or triangle per image on a
//! textured background.
//!
//! Image `i` of a dataset depends only on `(seed, i)`; its label is `i % 3`,
//! which keeps every prefix of a dataset class-balanced within one.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autonet::{Arch, SHAPE_LABELS};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::netpbm;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 3;
pub const BACKGROUND_MAX: f64 = 0.3;
const SHAPE_MIN: f64 = 0.6;
pub const MANIFEST: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[1, H, W]`, values in `[0, 1]` on the 1/255 grid.
    pub image: Tensor,
    pub label: usize,
}

fn q(v: f64) -> f64 {
    netpbm::quantize(v) as f64 / 255.0
}

/// Renders image `index` of the dataset identified by `seed`.
pub fn generate_image(seed: u64, index: usize, h: usize, w: usize) -> Result<LabeledImage> {
    Arch::for_input(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let label = index % NUM_CLASSES;

    let mut px: Vec<f64> = (0..h * w).map(|_| q(rng.gen_range(0.0..=BACKGROUND_MAX))).collect();
    let ink = q(rng.gen_range(SHAPE_MIN..=1.0));
    let scale = h.min(w) as f64 / 32.0;
    let (hf, wf) = (h as f64, w as f64);
    // one pixel of margin on every side
    let inside: Box<dyn Fn(f64, f64) -> bool> = match label {
        0 => {
            let side = (rng.gen_range(10.0..=18.0) * scale).round();
            let x0 = rng.gen_range(1.0..=wf - 1.0 - side).floor();
            let y0 = rng.gen_range(1.0..=hf - 1.0 - side).floor();
            Box::new(move |x, y| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side)
        }
        1 => {
            let r = rng.gen_range(5.0..=9.0) * scale;
            let cx = rng.gen_range(1.0 + r..=wf - 1.0 - r);
            let cy = rng.gen_range(1.0 + r..=hf - 1.0 - r);
            Box::new(move |x, y| (x + 0.5 - cx).powi(2) + (y + 0.5 - cy).powi(2) <= r * r)
        }
        _ => {
            let base = rng.gen_range(12.0..=20.0) * scale;
            let height = 0.9 * base;
            let cx = rng.gen_range(1.0 + base / 2.0..=wf - 1.0 - base / 2.0);
            let top = rng.gen_range(1.0..=hf - 1.0 - height);
            Box::new(move |x, y| {
                let dy = y + 0.5 - top;
                dy >= 0.0 && dy <= height && (x + 0.5 - cx).abs() <= dy / height * base / 2.0
            })
        }
    };
    for y in 0..h {
        for x in 0..w {
            if inside(x as f64, y as f64) {
                px[y * w + x] = ink;
            }
        }
    }
    Ok(LabeledImage {
        image: Tensor::from_vec(&[1, h, w], px)?,
        label,
    })
}

pub fn generate_dataset(seed: u64, n: usize, h: usize, w: usize) -> Result<Vec<LabeledImage>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be >= 1"));
    }
    (0..n).map(|i| generate_image(seed, i, h, w)).collect()
}

/// Mean pixel value over a set of images.
pub fn dataset_mean(images: &[LabeledImage]) -> f64 {
    let (sum, count) = images
        .iter()
        .fold((0.0, 0usize), |(s, c), li| (s + li.image.sum(), c + li.image.len()));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Writes `00000.pgm, 00001.pgm, …` plus a `labels.csv` manifest
/// (`filename,label` header, label as class index).
pub fn export_dataset(images: &[LabeledImage], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("filename,label\n");
    for (i, li) in images.iter().enumerate() {
        let name = format!("{i:05}.pgm");
        write_atomic(&dir.join(&name), &netpbm::encode_pgm(&li.image)?)?;
        manifest += &format!("{name},{}\n", li.label);
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

pub fn import_dataset(dir: &Path) -> Result<Vec<LabeledImage>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let here = offset;
        offset += line.len();
        let line = line.trim_end_matches(['\n', '\r']);
        if n == 0 {
            if line != "filename,label" {
                return Err(Error::parse(here, format!("bad manifest header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (name, label) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(here, format!("bad manifest row {line:?}")))?;
        let label: usize = label
            .parse()
            .ok()
            .filter(|&l| l < SHAPE_LABELS.len())
            .ok_or_else(|| Error::parse(here, format!("bad label {label:?}")))?;
        let image = netpbm::decode_pgm(&fs::read(dir.join(name))?)?;
        out.push(LabeledImage { image, label });
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{} lists no images", dir.join(MANIFEST).display())));
    }
    Ok(out)
}
