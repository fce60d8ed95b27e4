//! Counts layers and parameters of a network config without allocating
//! weights, then optionally builds it and times one inference pass.
//!
//! ```text
//! cargo run --release --example network_summary -- crates/core/configs/cxr211.cfg --forward
//! ```

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xgrade::nn::{count_layers_and_params, Network, NetworkConfig, TruncGaussSpec};

fn main() -> xgrade::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/cxr211.cfg").into());
    let forward = args.any(|a| a == "--forward");

    let cfg = NetworkConfig::load(&path)?;
    let (layers, params) = count_layers_and_params(&cfg)?;
    println!("{}: input {:?}, {} classes", cfg.name, cfg.input, cfg.num_classes);
    println!("  counted layers        {layers}");
    println!("  trainable parameters  {params}");
    println!("  stages                {}", cfg.stages.len());

    if forward {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let [h, w, c] = cfg.input;
        let init = TruncGaussSpec::default();
        let net = Network::<f32>::build(cfg, &init, &mut rng)?;
        let x = init.sample(&[1, h, w, c], &mut rng)?;
        let start = Instant::now();
        let p = net.predict(&x)?;
        println!("  forward pass          {:.2?}, scores {:?}", start.elapsed(), p.data());
    }
    Ok(())
}
