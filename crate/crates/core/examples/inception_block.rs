//! One residual-inception block on its own: parameter counts for the
//! standard and factorized variants, a forward pass, and gradients
//! flowing back to every weight.
//!
//! ```text
//! cargo run --example inception_block
//! ```

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xgrade::autograd::{Graph, Mode};
use xgrade::nn::{InceptionBlock, InceptionBlockConfig, TruncGaussSpec};
use xgrade::tensor::Tensor;

fn main() -> xgrade::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let init = TruncGaussSpec::default();
    let (h, w, c) = (17, 17, 32);

    let standard = InceptionBlockConfig::standard(c, [16, 16, 24, 8], 48);
    let factorized = standard.clone().factorized(true);
    let small = InceptionBlock::<f32>::new(factorized, h, w, &init, &mut rng)?;
    let mut block = InceptionBlock::<f32>::new(standard, h, w, &init, &mut rng)?;
    println!("standard block:   {} parameters", block.param_count());
    println!("factorized block: {} parameters", small.param_count());

    let x = init.sample::<f32, _>(&[4, h, w, c], &mut rng)?;
    let mut g = Graph::new();
    let xv = g.constant(x)?;
    let (y, params) = block.forward(&mut g, xv, Mode::Train, BTreeMap::new())?;
    println!("input [4, {h}, {w}, {c}] -> output {:?}", g.value(y).shape());
    let loss = g.mean(y)?;
    g.backward(loss)?;

    let zero = Tensor::<f32>::zeros(&[1]);
    for (name, v) in &params {
        let grad = g.grad(*v).unwrap_or(&zero);
        println!("  {name:<28} {:>12?}  |grad| {:.3e}", g.value(*v).shape(), grad.sq_norm().sqrt());
    }
    Ok(())
}
