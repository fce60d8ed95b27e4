use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::balance::{BalancedSampler, Draw};
use super::manifest::Manifest;
use super::pnm;
use super::transform::{self, JitterConfig};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Environment variable capping loader worker threads; unset or `0` means
/// single-threaded.
pub const THREADS_ENV: &str = "XG_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Images are first resized to `resize × resize`.
    pub resize: usize,
    /// Then cropped to `crop × crop` (random in training, centered in eval).
    pub crop: usize,
    pub flip_lr: bool,
    pub flip_ud: bool,
    pub jitter: JitterConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resize: 256,
            crop: 224,
            flip_lr: true,
            flip_ud: true,
            jitter: JitterConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop > self.resize {
            return Err(Error::Config(format!(
                "crop {} must be in 1..={} (the resize size)",
                self.crop, self.resize
            )));
        }
        self.jitter.validate()
    }

    /// Online augmentation of an already resized image: random crop,
    /// flips, photometric jitter, standardization.
    pub fn augment(&self, resized: &Tensor, sample_seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let img = transform::random_crop(resized, self.crop, &mut rng)?;
        let img = transform::random_flip(&img, self.flip_lr, self.flip_ud, &mut rng);
        let img = transform::photometric_jitter(&img, self.jitter.sample(&mut rng))?;
        Ok(transform::standardize(&img))
    }

    /// Deterministic evaluation path: center crop and standardize.
    pub fn eval(&self, resized: &Tensor) -> Result<Tensor> {
        Ok(transform::standardize(&transform::center_crop(resized, self.crop)?))
    }

    pub fn resize(&self, img: &Tensor) -> Result<Tensor> {
        transform::resize_bilinear(img, self.resize, self.resize)
    }
}

/// A preprocessed image with its labels and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[crop, crop, 3]`, standardized.
    pub image: Tensor,
    pub labels: Vec<f32>,
    pub index: usize,
    /// Augmentation seed; `None` on the eval path.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[N, crop, crop, 3]`.
    pub images: Tensor,
    /// `[N, classes]` multi-hot.
    pub targets: Tensor,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let n = samples.len();
        let classes = samples
            .first()
            .ok_or_else(|| Error::Argument("empty batch".into()))?
            .labels
            .len();
        let targets: Vec<f32> = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
        let indices = samples.iter().map(|s| s.index).collect();
        let images: Vec<Tensor> = samples.into_iter().map(|s| s.image).collect();
        Ok(Self {
            images: Tensor::stack(&images)?,
            targets: Tensor::new(&[n, classes], targets)?,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Worker count from [`THREADS_ENV`].
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Decodes, resizes and augments manifest entries. Decoded and resized
/// images are cached; augmentation is redone on every draw.
pub struct Loader {
    manifest: Manifest,
    config: PipelineConfig,
    cache: Vec<OnceLock<Tensor>>,
    pool: Option<rayon::ThreadPool>,
}

impl Loader {
    /// `threads == 0` produces samples on the calling thread.
    pub fn new(manifest: Manifest, config: PipelineConfig, threads: usize) -> Result<Self> {
        config.validate()?;
        let pool = if threads == 0 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        };
        let cache = (0..manifest.entries.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            manifest,
            config,
            cache,
            pool,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    /// Decoded and resized image of entry `index`.
    pub fn resized(&self, index: usize) -> Result<&Tensor> {
        let cell = &self.cache[index];
        if let Some(t) = cell.get() {
            return Ok(t);
        }
        let entry = &self.manifest.entries[index];
        let img = pnm::read(self.manifest.resolve(entry))?;
        let _ = cell.set(self.config.resize(&img)?);
        Ok(cell.get().expect("just set"))
    }

    fn labels(&self, index: usize) -> Vec<f32> {
        self.manifest.entries[index]
            .labels
            .iter()
            .map(|&l| l as f32)
            .collect()
    }

    pub fn train_sample(&self, draw: Draw, global_seed: u64) -> Result<Sample> {
        let s = seed::sample_seed(global_seed, draw.epoch, draw.index);
        Ok(Sample {
            image: self.config.augment(self.resized(draw.index)?, s)?,
            labels: self.labels(draw.index),
            index: draw.index,
            seed: Some(s),
        })
    }

    pub fn eval_sample(&self, index: usize) -> Result<Sample> {
        Ok(Sample {
            image: self.config.eval(self.resized(index)?)?,
            labels: self.labels(index),
            index,
            seed: None,
        })
    }

    fn produce<F>(&self, n: usize, f: F) -> Result<Vec<Sample>>
    where
        F: Fn(usize) -> Result<Sample> + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        }
    }

    pub fn train_batch(&self, draws: &[Draw], global_seed: u64) -> Result<Batch> {
        Batch::from_samples(self.produce(draws.len(), |i| self.train_sample(draws[i], global_seed))?)
    }

    pub fn eval_batch(&self, indices: &[usize]) -> Result<Batch> {
        Batch::from_samples(self.produce(indices.len(), |i| self.eval_sample(indices[i]))?)
    }

    /// Every entry once, in manifest order, through the eval path.
    pub fn eval_batches(&self, batch_size: usize) -> impl Iterator<Item = Result<Batch>> + '_ {
        let all: Vec<usize> = (0..self.len()).collect();
        let size = batch_size.max(1);
        (0..all.len().div_ceil(size)).map(move |b| {
            let end = ((b + 1) * size).min(all.len());
            self.eval_batch(&all[b * size..end])
        })
    }
}

/// Endless stream of augmented, class-balanced training batches.
pub struct BatchStream<'a> {
    loader: &'a Loader,
    sampler: BalancedSampler,
    seed: u64,
}

impl<'a> BatchStream<'a> {
    pub fn new(loader: &'a Loader, batch_size: usize, seed: u64) -> Result<Self> {
        let labels: Vec<Vec<u8>> = loader
            .manifest
            .entries
            .iter()
            .map(|e| e.labels.clone())
            .collect();
        let sampler = BalancedSampler::new(
            &labels,
            &loader.manifest.classes,
            batch_size,
            seed::substream(seed, "sampler"),
        )?;
        Ok(Self {
            loader,
            sampler,
            seed: seed::substream(seed, "augment"),
        })
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        let draws = self.sampler.next_batch();
        Some(self.loader.train_batch(&draws, self.seed))
    }
}
