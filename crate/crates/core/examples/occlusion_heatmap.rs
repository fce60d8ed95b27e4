//! Occlusion sensitivity with a hand-written scorer that only looks at a
//! planted bright square. The heatmap peak lands on that square; the map
//! is printed as ASCII and written as a PGM.
//!
//! ```text
//! cargo run --example occlusion_heatmap
//! ```

use xgrade::explain::{occlusion_heatmap, FnScorer, OcclusionConfig};
use xgrade::tensor::Tensor;

const SIZE: usize = 96;
const SPOT: (usize, usize) = (56, 24);

fn main() -> xgrade::Result<()> {
    let mut img = Tensor::full(&[SIZE, SIZE, 3], 0.3f32);
    for y in SPOT.0..SPOT.0 + 16 {
        for x in SPOT.1..SPOT.1 + 16 {
            img.data_mut()[(y * SIZE + x) * 3..(y * SIZE + x + 1) * 3].fill(0.9);
        }
    }
    // Score = mean brightness inside the spot, per image in the batch.
    let scorer = FnScorer(|batch: &Tensor| {
        let (n, _, w, c) = batch.dims4()?;
        let scores = batch
            .data()
            .chunks(batch.numel() / n)
            .map(|im| {
                let mut s = 0.0;
                for y in SPOT.0..SPOT.0 + 16 {
                    s += im[(y * w + SPOT.1) * c..(y * w + SPOT.1 + 16) * c].iter().sum::<f32>();
                }
                s / (16 * 16 * c) as f32
            })
            .collect();
        Tensor::new(&[n, 1], scores)
    });

    let cfg = OcclusionConfig { patch: 16, stride: 8, ..OcclusionConfig::default() };
    let hm = occlusion_heatmap(&scorer, &img, 0, &cfg)?;
    let (r, c) = hm.argmax();
    println!("{}x{} grid, peak at cell ({r}, {c}) = pixel ({}, {})", hm.rows, hm.cols, r * cfg.stride, c * cfg.stride);

    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let levels = hm.normalized();
    for row in levels.chunks(hm.cols) {
        println!("  {}", row.iter().map(|&v| shades[v as usize * 9 / 255]).collect::<String>());
    }

    let out = std::env::temp_dir().join("xgrade-heatmap.pgm");
    std::fs::write(&out, hm.to_pgm(SIZE, SIZE)?).map_err(|e| xgrade::Error::io("writing heatmap", e))?;
    println!("wrote {}", out.display());
    Ok(())
}
