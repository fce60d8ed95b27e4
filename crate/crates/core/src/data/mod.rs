//! Manifests, PPM/PGM decoding, preprocessing and augmentation, and
//! class-balanced batching.

pub mod balance;
pub mod fixture;
pub mod manifest;
pub mod pipeline;
pub mod pnm;
pub mod transform;

pub use balance::{BalancedSampler, Draw};
pub use fixture::{generate as generate_fixture, FixtureConfig};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use pipeline::{threads_from_env, Batch, BatchStream, Loader, PipelineConfig, Sample};
pub use transform::{JitterConfig, Jitter};
