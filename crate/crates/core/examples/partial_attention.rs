//! Which encoder feature maps can feed a decoder stage: spatial ratios,
//! admissible pooling strides, and the projections that get created.
//!
//! ```text
//! cargo run --example partial_attention
//! ```

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xgrade::autograd::Graph;
use xgrade::nn::{admissible_stride, attention_ratio, PartialAttention, TruncGaussSpec};

fn main() -> xgrade::Result<()> {
    let target = (14, 14);
    for enc in [(56, 56), (28, 28), (21, 21), (14, 14), (7, 7)] {
        let r = attention_ratio(enc, target);
        match admissible_stride(r) {
            Some(s) => println!("{enc:?} -> {target:?}: ratio {r}, max-pool stride {s}"),
            None => println!("{enc:?} -> {target:?}: ratio {r}, skipped"),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = TruncGaussSpec::default();
    let sources = vec![
        ("stem".to_string(), vec![56, 56, 16]),
        ("stage1".to_string(), vec![28, 28, 32]),
        ("odd".to_string(), vec![21, 21, 32]),
    ];
    let mut attn = PartialAttention::<f32>::new(sources.clone(), vec![14, 14, 64], &init, &mut rng)?;
    println!("admitted sources: {:?}", attn.admitted());

    let mut g = Graph::new();
    let encoder = sources
        .iter()
        .map(|(_, d)| g.constant(init.sample(&[2, d[0], d[1], d[2]], &mut rng)?))
        .collect::<xgrade::Result<Vec<_>>>()?;
    let t = g.constant(init.sample(&[2, 14, 14, 64], &mut rng)?)?;
    let (out, _) = attn.forward(&mut g, &encoder, t, BTreeMap::new())?;
    println!("attended target: {:?}", g.value(out).shape());
    Ok(())
}
