use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xgrade::data::pnm;
use xgrade::explain::{grid_extent, occlusion_heatmap, ClassScorer, Fill, FnScorer, Heatmap, OcclusionConfig};
use xgrade::nn::{Network, NetworkConfig, TruncGaussSpec};
use xgrade::tensor::Tensor;
use xgrade::Error;

fn noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(&[h, w, 3], (0..h * w * 3).map(|_| rng.random_range(0.2..0.5)).collect()).unwrap()
}

/// Scores each image by the mean brightness of the square
/// `[top, top + size) × [left, left + size)`.
fn window_scorer(top: usize, left: usize, size: usize) -> impl ClassScorer {
    FnScorer(move |batch: &Tensor| {
        let (n, _, w, c) = batch.dims4()?;
        let per = batch.numel() / n;
        let scores = batch
            .data()
            .chunks(per)
            .map(|img| {
                let mut acc = 0.0;
                for y in top..top + size {
                    for x in left..left + size {
                        acc += img[(y * w + x) * c..(y * w + x + 1) * c].iter().sum::<f32>();
                    }
                }
                acc / (size * size * c) as f32
            })
            .collect();
        Tensor::new(&[n, 1], scores)
    })
}

fn cfg(patch: usize, stride: usize) -> OcclusionConfig {
    OcclusionConfig { patch, stride, ..OcclusionConfig::default() }
}

#[test]
fn grid_shape_for_full_size_input() {
    assert_eq!(grid_extent(224, 32, 16).unwrap(), 13);
    let hm = occlusion_heatmap(&window_scorer(0, 0, 4), &Tensor::zeros(&[224, 224, 3]), 0, &cfg(32, 16)).unwrap();
    assert_eq!((hm.rows, hm.cols, hm.grid.len()), (13, 13, 169));
}

#[test]
fn oversized_patch_is_rejected() {
    let r = occlusion_heatmap(&window_scorer(0, 0, 4), &Tensor::zeros(&[16, 16, 3]), 0, &cfg(32, 16));
    assert!(matches!(r, Err(Error::Argument(_))));
}

#[test]
fn input_independent_network_gives_zero_grid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy.cfg");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::<f32>::build(NetworkConfig::load(path).unwrap(), &TruncGaussSpec::default(), &mut rng).unwrap();
    for (name, t) in net.params_mut().iter_mut() {
        if name.starts_with("head/") {
            t.data_mut().fill(0.0);
        }
    }
    let img = noise(32, 32, &mut rng);
    let hm = occlusion_heatmap(&net, &img, 1, &cfg(8, 4)).unwrap();
    assert!(hm.grid.iter().all(|&v| v == 0.0));
    assert!(hm.normalized().iter().all(|&v| v == 128));
}

#[test]
fn top_left_quadrant_network_peaks_in_top_left() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut img = noise(64, 64, &mut rng);
    for y in 0..32 {
        for x in 0..32 {
            img.data_mut()[(y * 64 + x) * 3..(y * 64 + x + 1) * 3].fill(0.95);
        }
    }
    let hm = occlusion_heatmap(&window_scorer(0, 0, 32), &img, 0, &cfg(16, 8)).unwrap();
    let (r, c) = hm.argmax();
    let center = |i: usize| i * 8 + 8;
    assert!(center(r) < 32 && center(c) < 32, "argmax at {:?}", (r, c));
}

#[test]
fn heatmap_follows_the_sensitive_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut img = noise(64, 64, &mut rng);
    for (top, left) in [(8, 8), (24, 40)] {
        for y in top..top + 8 {
            img.data_mut()[(y * 64 + left) * 3..(y * 64 + left + 8) * 3].fill(0.95);
        }
    }
    let a = occlusion_heatmap(&window_scorer(8, 8, 8), &img, 0, &cfg(16, 8)).unwrap();
    let b = occlusion_heatmap(&window_scorer(24, 40, 8), &img, 0, &cfg(16, 8)).unwrap();
    let (ra, ca) = a.argmax();
    let (rb, cb) = b.argmax();
    assert_eq!((rb - ra, cb - ca), (2, 4));
}

#[test]
fn zero_fill_and_mean_fill_differ() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = noise(32, 32, &mut rng);
    let mean = occlusion_heatmap(&window_scorer(0, 0, 16), &img, 0, &cfg(8, 8)).unwrap();
    let zero = occlusion_heatmap(
        &window_scorer(0, 0, 16),
        &img,
        0,
        &OcclusionConfig { fill: Fill::Zero, ..cfg(8, 8) },
    )
    .unwrap();
    assert!(zero.at(0, 0) > mean.at(0, 0));
    assert_eq!("zero".parse::<Fill>().unwrap(), Fill::Zero);
    assert!("blur".parse::<Fill>().is_err());
}

#[test]
fn heatmaps_are_deterministic_and_thread_independent() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy.cfg");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Network::<f32>::build(NetworkConfig::load(path).unwrap(), &TruncGaussSpec::default(), &mut rng).unwrap();
    let img = noise(32, 32, &mut rng);
    let a = occlusion_heatmap(&net, &img, 0, &cfg(8, 4)).unwrap();
    let b = occlusion_heatmap(&net, &img, 0, &cfg(8, 4)).unwrap();
    let c = occlusion_heatmap(&net, &img, 0, &OcclusionConfig { parallel: true, ..cfg(8, 4) }).unwrap();
    let bits = |h: &Heatmap| h.grid.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&a), bits(&c));
}

#[test]
fn pgm_export_round_trips() {
    let hm = Heatmap {
        rows: 2,
        cols: 3,
        grid: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        patch: 8,
        stride: 8,
        class: 0,
    };
    assert_eq!(hm.normalized(), [0, 51, 102, 153, 204, 255]);
    let bytes = hm.to_pgm(4, 6).unwrap();
    let img = pnm::decode(&bytes, Path::new("h.pgm")).unwrap();
    assert_eq!(img.shape(), [4, 6, 3]);
    for y in 0..4 {
        for x in 0..6 {
            let want = hm.normalized()[(y / 2) * 3 + x / 2] as f32 / 255.0;
            assert_eq!(img.data()[(y * 6 + x) * 3], want);
        }
    }
    let flat = Heatmap { grid: vec![0.25; 6], ..hm };
    let img = pnm::decode(&flat.to_pgm(4, 6).unwrap(), Path::new("f.pgm")).unwrap();
    assert!(img.data().iter().all(|&v| v == 128.0 / 255.0));
}
