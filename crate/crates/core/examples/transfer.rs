//! Pretrains a 14-class network briefly, saves a checkpoint, and loads it
//! into a 2-class network. Everything except the classification head is
//! copied; the head is re-initialized because its shape changed.
//!
//! ```text
//! cargo run --release --example transfer
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xgrade::data::{generate_fixture, BatchStream, FixtureConfig, Loader, Manifest, PipelineConfig};
use xgrade::metrics::CHESTXRAY14_CLASSES;
use xgrade::nn::{Network, NetworkConfig, TruncGaussSpec};
use xgrade::train::{self, Checkpoint, LoopOptions, LossConfig, OptimState, TrainConfig};

fn main() -> xgrade::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let configs = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    let init = TruncGaussSpec::default();
    let classes: Vec<String> = CHESTXRAY14_CLASSES.iter().map(|s| s.to_string()).collect();
    let manifest = generate_fixture(dir.path(), &FixtureConfig { train: 56, classes, ..FixtureConfig::default() })?;
    let pipeline = PipelineConfig { resize: 36, crop: 32, ..PipelineConfig::default() };
    let loader = Loader::new(Manifest::load(manifest)?, pipeline, 0)?;

    let mut source = Network::build(NetworkConfig::load(format!("{configs}/toy14.cfg"))?, &init, &mut ChaCha8Rng::seed_from_u64(1))?;
    let tc = TrainConfig { base_lr: 0.05, total_steps: 30, batch_size: 14, ..TrainConfig::default() };
    let mut optim = OptimState::default();
    let stream = BatchStream::new(&loader, tc.batch_size, tc.seed)?;
    let records = train::train_loop(&mut source, &mut optim, stream, &tc, &LossConfig::uniform(14), &LoopOptions::default(), |_, _| Ok(true))?;
    println!("pretrained 14-class network: loss {:.4} -> {:.4}", records[0].loss, records.last().unwrap().loss);

    let path = dir.path().join("pretrained.xgc");
    Checkpoint::from_network(&source, Some(&optim)).write(&path)?;

    let mut target = Network::build(NetworkConfig::load(format!("{configs}/toy.cfg"))?, &init, &mut ChaCha8Rng::seed_from_u64(2))?;
    let report = Checkpoint::read(&path)?.restore(&mut target, &mut OptimState::default(), &init, &mut ChaCha8Rng::seed_from_u64(3))?;
    println!("copied {} tensors", report.loaded.len());
    println!("re-initialized {:?}", report.reinitialized);
    Ok(())
}
