//! Generates the synthetic planted-stripe dataset, trains the small
//! config on it and reports per-class AUC on held-out images.
//!
//! ```text
//! cargo run --release --example train_fixture -- 400
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xgrade::commands::{class_reports, predict_manifest, OperatingRule};
use xgrade::data::{generate_fixture, BatchStream, FixtureConfig, Loader, Manifest, PipelineConfig, Split};
use xgrade::metrics::report;
use xgrade::nn::{Network, NetworkConfig, TruncGaussSpec};
use xgrade::train::{self, LoopOptions, LossConfig, OptimState, TrainConfig};

fn main() -> xgrade::Result<()> {
    let steps = std::env::args().nth(1).map_or(Ok(400), |s| s.parse()).expect("steps must be an integer");
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = generate_fixture(dir.path(), &FixtureConfig { train: 128, test: 64, ..FixtureConfig::default() })?;
    let manifest = Manifest::load(manifest)?;
    let pipeline = PipelineConfig { resize: 36, crop: 32, ..PipelineConfig::default() };
    let loader = Loader::new(manifest.split(Split::Train), pipeline.clone(), 0)?;

    let cfg = NetworkConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/toy.cfg"))?;
    let mut net = Network::build(cfg, &TruncGaussSpec::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let tc = TrainConfig { base_lr: 0.05, end_lr: 5e-4, total_steps: steps, batch_size: 16, ..TrainConfig::default() };
    let loss = LossConfig::uniform(2);

    let stream = BatchStream::new(&loader, tc.batch_size, tc.seed)?;
    train::train_loop(&mut net, &mut OptimState::default(), stream, &tc, &loss, &LoopOptions::default(), |_, r| {
        if r.step % 50 == 0 || r.step == 1 {
            println!("step {:>4}  lr {:.4}  loss {:.4}  |g| {:.3}", r.step, r.lr, r.loss, r.grad_norm);
        }
        Ok(true)
    })?;

    let test = manifest.split(Split::Test);
    let pred = predict_manifest(&net, &test, &pipeline)?;
    let labels: Vec<Vec<u8>> = test.entries.iter().map(|e| e.labels.clone()).collect();
    let reports = class_reports(&pred, &labels, OperatingRule::default())?;
    print!("\n{}", report::performance_text(&reports));
    Ok(())
}
