//! Synthetic PPM datasets with a planted, class-dependent pattern.
//!
//! Each image is mid-gray noise with one square patch of stripes. The
//! stripe orientation is `class % 2` (horizontal, vertical) and the period
//! grows with `class / 2`, so the cue survives flips and translations.
//! Image `i` is positive for class `i % classes` only.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, ManifestEntry, Split};
use super::pnm;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub train: usize,
    pub test: usize,
    pub classes: Vec<String>,
    pub size: usize,
    pub patch: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            train: 64,
            test: 0,
            classes: vec!["pneumonia".into(), "tb".into()],
            size: 36,
            patch: 16,
            seed: 0,
        }
    }
}

/// Stripe period in pixels for a class.
pub fn stripe_period(class: usize) -> usize {
    4 + 2 * (class / 2)
}

/// Renders one image of `class`.
pub fn render<R: Rng + ?Sized>(class: usize, size: usize, patch: usize, rng: &mut R) -> Result<Tensor> {
    if patch == 0 || patch > size {
        return Err(Error::Argument(format!("patch {patch} does not fit a {size}px image")));
    }
    let mut data: Vec<f32> = (0..size * size)
        .flat_map(|_| [rng.random_range(0.35..0.65f32); 3])
        .collect();
    let top = rng.random_range(0..=size - patch);
    let left = rng.random_range(0..=size - patch);
    let period = stripe_period(class);
    for y in top..top + patch {
        for x in left..left + patch {
            let along = if class.is_multiple_of(2) { y } else { x };
            let v = if along % period < period / 2 { 0.9 } else { 0.1 };
            data[(y * size + x) * 3..(y * size + x + 1) * 3].fill(v);
        }
    }
    Tensor::new(&[size, size, 3], data)
}

/// Writes the images and `manifest.csv` into `out`; returns the manifest
/// path.
pub fn generate(out: &Path, cfg: &FixtureConfig) -> Result<PathBuf> {
    if cfg.classes.is_empty() {
        return Err(Error::Config("fixture needs at least one class".into()));
    }
    std::fs::create_dir_all(out)
        .map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::substream(cfg.seed, "fixture"));
    let mut manifest = Manifest::new(cfg.classes.clone(), out);
    for (split, count) in [(Split::Train, cfg.train), (Split::Test, cfg.test)] {
        for i in 0..count {
            let class = i % cfg.classes.len();
            let img = render(class, cfg.size, cfg.patch, &mut rng)?;
            let name = format!("{split}_{i:04}.ppm");
            let path = out.join(&name);
            std::fs::write(&path, pnm::encode_ppm(&img)?)
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            let mut labels = vec![0; cfg.classes.len()];
            labels[class] = 1;
            manifest.entries.push(ManifestEntry {
                path: name,
                split,
                labels,
            });
        }
    }
    let path = out.join(MANIFEST_NAME);
    manifest.write(&path)?;
    Ok(path)
}
