//! Runs one image through the training augmentation several times and
//! writes the results as PPM files for inspection.
//!
//! ```text
//! cargo run --example augmentation -- path/to/image.ppm out_dir
//! ```
//! Without arguments a synthetic gradient image is used.

use std::path::PathBuf;

use xgrade::data::{pnm, PipelineConfig};
use xgrade::tensor::Tensor;

fn synthetic(size: usize) -> Tensor {
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f32 / size as f32, x as f32 / size as f32);
            data.extend([fx, fy, if (x / 8 + y / 8) % 2 == 0 { 0.8 } else { 0.2 }]);
        }
    }
    Tensor::new(&[size, size, 3], data).unwrap()
}

/// Maps a standardized image back to [0, 1] for viewing.
fn rescale(img: &Tensor) -> Tensor {
    let (lo, hi) = img.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    img.map(|v| (v - lo) / (hi - lo).max(1e-6))
}

fn main() -> xgrade::Result<()> {
    let mut args = std::env::args().skip(1);
    let source = args.next();
    let out = PathBuf::from(args.next().unwrap_or_else(|| std::env::temp_dir().join("xgrade-augment").display().to_string()));
    std::fs::create_dir_all(&out).map_err(|e| xgrade::Error::io("creating output dir", e))?;

    let img = match source {
        Some(p) => pnm::read(p)?,
        None => synthetic(128),
    };
    let pipeline = PipelineConfig { resize: 128, crop: 112, ..PipelineConfig::default() };
    let resized = pipeline.resize(&img)?;

    let write = |name: &str, t: &Tensor| -> xgrade::Result<()> {
        let path = out.join(name);
        std::fs::write(&path, pnm::encode_ppm(&rescale(t))?).map_err(|e| xgrade::Error::io("writing", e))?;
        println!("{}", path.display());
        Ok(())
    };
    write("eval.ppm", &pipeline.eval(&resized)?)?;
    for seed in 0..8u64 {
        write(&format!("augment_{seed}.ppm"), &pipeline.augment(&resized, seed)?)?;
    }
    Ok(())
}
