use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use xgrade::data::transform::{self, Jitter, JitterConfig};
use xgrade::data::{
    generate_fixture, pnm, BalancedSampler, BatchStream, FixtureConfig, Loader, Manifest, ManifestEntry,
    PipelineConfig, Split,
};
use xgrade::seed;
use xgrade::tensor::Tensor;
use xgrade::Error;

fn image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(&[h, w, 3], (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn parse(text: &str) -> xgrade::Result<Manifest> {
    Manifest::parse(text.as_bytes(), Path::new("m.csv"), PathBuf::from("/data"))
}

fn hash_of<T: Hash + ?Sized>(v: &T) -> u64 {
    let mut h = DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}

fn tensor_hash(t: &Tensor) -> u64 {
    hash_of(&t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
}

#[test]
fn manifest_examples() {
    let m = parse("path,split,pneumonia,tb\n").unwrap();
    assert!(m.entries.is_empty());
    let m = parse("path,split,pneumonia,tb\na.ppm,train,1,0\n").unwrap();
    assert_eq!(m.entries[0].labels, [1, 0]);
    assert_eq!(m.entries[0].split, Split::Train);
    assert_eq!(m.resolve(&m.entries[0]), Path::new("/data/a.ppm"));
}

#[test]
fn malformed_manifest_rows_report_line_numbers() {
    for (text, line) in [
        ("path,split,a\nx.ppm,train,1\ny.ppm,train,2\n", 3),
        ("path,split,a\nx.ppm,train\n", 2),
        ("path,split,a\nx.ppm,holdout,1\n", 2),
        ("path,split,a\nx.ppm,train,1\nx.ppm,test,0\n", 3),
    ] {
        match parse(text) {
            Err(Error::Manifest { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn unknown_class_is_named() {
    let m = parse("path,split,pneumonia,flu\n").unwrap();
    let err = m.check_classes(&["pneumonia".into(), "tb".into()]).unwrap_err();
    assert!(err.to_string().contains("flu"), "{err}");
}

#[test]
fn decode_examples() {
    let red = pnm::decode(b"P6\n1 1\n255\n\xff\x00\x00", Path::new("r.ppm")).unwrap();
    assert_eq!(red.shape(), [1, 1, 3]);
    assert_eq!(red.data(), [1.0, 0.0, 0.0]);
    let gray = pnm::decode(b"P5\n# comment\n2 1\n255\n\x80\x80", Path::new("g.pgm")).unwrap();
    assert_eq!(gray.shape(), [1, 2, 3]);
    assert!(gray.data().iter().all(|&v| v == 128.0 / 255.0));
}

#[test]
fn decode_errors() {
    let png = b"\x89PNG\r\n\x1a\n0000";
    match pnm::decode(png, Path::new("x.png")) {
        Err(Error::UnsupportedFormat { format, .. }) => assert!(format.contains("PNG")),
        other => panic!("{other:?}"),
    }
    let jpeg = b"\xff\xd8\xff\xe0rest";
    assert!(matches!(pnm::decode(jpeg, Path::new("x.jpg")), Err(Error::UnsupportedFormat { .. })));
    assert!(matches!(pnm::decode(b"P6\n2 2\n255\n\x00\x00", Path::new("t.ppm")), Err(Error::Data(_))));
}

#[test]
fn ppm_encoding_is_byte_exact() {
    let img = Tensor::new(&[1, 2, 3], vec![1.0, 0.0, 0.5, 0.2, 0.4, 1.0]).unwrap();
    let bytes = pnm::encode_ppm(&img).unwrap();
    // 0.5 -> 127.5 rounds to 128; 0.2 -> 51; 0.4 -> 102.
    assert_eq!(bytes, b"P6\n2 1\n255\n\xff\x00\x80\x33\x66\xff");
    let back = pnm::decode(&bytes, Path::new("x.ppm")).unwrap();
    let again = pnm::encode_ppm(&back).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn resize_identity_and_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = image(7, 5, &mut rng);
    let same = transform::resize_bilinear(&img, 7, 5).unwrap();
    assert!(same.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    let flat = Tensor::full(&[3, 4, 3], 0.3f32);
    let big = transform::resize_bilinear(&flat, 9, 11).unwrap();
    assert!(big.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
}

#[test]
fn checkerboard_resize_matches_hand_computation() {
    // [[0, 1], [1, 0]]; half-pixel sampling of 4 outputs from 2 inputs
    // lands at source offsets 0, 0.25, 0.75 and 1 (after clamping).
    let cb = Tensor::new(&[2, 2, 3], [0.0, 1.0, 1.0, 0.0].iter().flat_map(|&v| [v; 3]).collect()).unwrap();
    let out = transform::resize_bilinear(&cb, 4, 4).unwrap();
    let f = [0.0f32, 0.25, 0.75, 1.0];
    for y in 0..4 {
        for x in 0..4 {
            let want = f[x] + f[y] - 2.0 * f[x] * f[y];
            for c in 0..3 {
                let got = out.data()[(y * 4 + x) * 3 + c];
                assert!((got - want).abs() < 1e-6, "({y},{x}) {got} vs {want}");
            }
        }
    }
}

#[test]
fn crop_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = image(8, 8, &mut rng);
    assert_eq!(transform::random_crop(&img, 8, &mut rng).unwrap(), img);
    assert!(matches!(transform::random_crop(&img, 9, &mut rng), Err(Error::Argument(_))));
    let c = transform::center_crop(&img, 4).unwrap();
    assert_eq!(c, transform::crop(&img, 2, 2, 4, 4).unwrap());
}

#[test]
fn crop_offsets_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, size) = (40, 32);
    let bins = h - size + 1;
    let mut counts = vec![0u32; bins * bins];
    let draws = 81_000;
    for _ in 0..draws {
        let (t, l) = transform::random_crop_offsets(h, h, size, &mut rng).unwrap();
        assert!(t < bins && l < bins);
        counts[t * bins + l] += 1;
    }
    let expected = draws as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi2 {chi2}, p {p}");
}

#[test]
fn flips() {
    let row = Tensor::new(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(transform::flip_lr(&row).data(), [4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = image(5, 6, &mut rng);
    assert_eq!(transform::flip_lr(&transform::flip_lr(&img)), img);
    assert_eq!(transform::flip_ud(&transform::flip_ud(&img)), img);
    assert_eq!(transform::random_flip(&img, false, false, &mut rng), img);
    let mut seen = HashSet::new();
    for _ in 0..64 {
        seen.insert(tensor_hash(&transform::random_flip(&img, true, true, &mut rng)));
    }
    assert_eq!(seen.len(), 4);
}

#[test]
fn jitter_identity_and_desaturation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = image(6, 6, &mut rng);
    let id = JitterConfig::IDENTITY.sample(&mut rng);
    assert_eq!(transform::photometric_jitter(&img, id).unwrap(), img);
    let gray = transform::photometric_jitter(&img, Jitter { contrast: 1.0, saturation: 0.0, hue: 0.0 }).unwrap();
    for px in gray.data().chunks(3) {
        assert!((px[0] - px[1]).abs() < 1e-6 && (px[1] - px[2]).abs() < 1e-6);
    }
}

#[test]
fn jitter_stays_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = image(8, 8, &mut rng);
    for contrast in [0.0, 0.5, 1.0, 1.5, 3.0] {
        for saturation in [0.0, 0.7, 1.0, 2.5] {
            for hue in [-0.5, -0.05, 0.0, 0.2, 0.5] {
                let out = transform::photometric_jitter(&img, Jitter { contrast, saturation, hue }).unwrap();
                assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

#[test]
fn hsv_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let (r, g, b) = (rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>());
        let (h, s, v) = transform::rgb_to_hsv(r, g, b);
        let (r2, g2, b2) = transform::hsv_to_rgb(h, s, v);
        assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
    }
}

#[test]
fn standardize_matches_two_pass_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = image(9, 7, &mut rng);
    let n = img.numel() as f64;
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (img.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let denom = std.max(1.0 / n.sqrt());
    let out = transform::standardize(&img);
    for (o, &v) in out.data().iter().zip(img.data()) {
        assert!((*o as f64 - (v as f64 - mean) / denom).abs() < 1e-5);
    }
    let flat = transform::standardize(&Tensor::full(&[4, 4, 3], 0.7));
    assert!(flat.data().iter().all(|&v| v == 0.0));
}

fn labels(counts: &[(usize, Vec<u8>)]) -> Vec<Vec<u8>> {
    counts.iter().flat_map(|(n, l)| std::iter::repeat_n(l.clone(), *n)).collect()
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn strata_counts(l: &[Vec<u8>], draws: &[xgrade::data::Draw], strata: usize) -> Vec<usize> {
    let mut counts = vec![0; strata];
    for d in draws {
        counts[l[d.index].iter().position(|&v| v == 1).unwrap_or(strata - 1)] += 1;
    }
    counts
}

#[test]
fn balanced_equal_targets() {
    let l = labels(&[(30, vec![1, 0]), (10, vec![0, 1])]);
    let mut s = BalancedSampler::new(&l, &names(2), 8, 0).unwrap();
    for _ in 0..200 {
        let c = strata_counts(&l, &s.next_batch(), 2);
        assert!(c.iter().all(|&k| (3..=5).contains(&k)), "{c:?}");
    }
}

#[test]
fn batch_size_one_alternates() {
    let l = labels(&[(30, vec![1, 0]), (10, vec![0, 1])]);
    let mut s = BalancedSampler::new(&l, &names(2), 1, 0).unwrap();
    let draws: Vec<_> = (0..400).flat_map(|_| s.next_batch()).collect();
    for window in draws.chunks(4) {
        let c = strata_counts(&l, window, 2);
        assert!(c.iter().all(|&k| (1..=3).contains(&k)), "{c:?}");
    }
}

#[test]
fn missing_positives_are_named() {
    let l = labels(&[(5, vec![1, 0]), (5, vec![0, 0])]);
    let err = BalancedSampler::new(&l, &["pneumonia".into(), "tb".into()], 4, 0).unwrap_err();
    assert!(err.to_string().contains("tb"), "{err}");
}

#[test]
fn long_run_frequencies_are_balanced() {
    let l = labels(&[(50, vec![1, 0, 0]), (8, vec![0, 1, 0]), (3, vec![0, 0, 1])]);
    let mut s = BalancedSampler::new(&l, &names(3), 7, 1).unwrap();
    let mut totals = vec![0usize; 3];
    for _ in 0..3000 {
        for (t, c) in totals.iter_mut().zip(strata_counts(&l, &s.next_batch(), 3)) {
            *t += c;
        }
    }
    let sum: usize = totals.iter().sum();
    for t in totals {
        assert!((t as f64 / sum as f64 - 1.0 / 3.0).abs() < 0.02);
    }
}

#[test]
fn sampler_epochs_cover_the_majority_stratum() {
    let l = labels(&[(12, vec![1, 0]), (3, vec![0, 1])]);
    let mut s = BalancedSampler::new(&l, &names(2), 4, 2).unwrap();
    let mut seen = HashSet::new();
    while s.epoch() == 0 {
        for d in s.next_batch() {
            if d.epoch == 0 && l[d.index][0] == 1 {
                seen.insert(d.index);
            }
        }
    }
    assert_eq!(seen.len(), 12);
}

fn fixture(dir: &Path, cfg: FixtureConfig) -> Loader {
    let manifest = generate_fixture(dir, &cfg).unwrap();
    let pipeline = PipelineConfig { resize: 36, crop: 32, ..Default::default() };
    Loader::new(Manifest::load(manifest).unwrap(), pipeline, 0).unwrap()
}

#[test]
fn online_augmentation_differs_across_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let loader = fixture(dir.path(), FixtureConfig::default());
    let pipeline = loader.config().clone();
    let resized = loader.resized(0).unwrap();
    let hashes: HashSet<u64> = (0..200)
        .map(|epoch| tensor_hash(&pipeline.augment(resized, seed::sample_seed(9, epoch, 0)).unwrap()))
        .collect();
    assert!(hashes.len() >= 190, "{} distinct of 200", hashes.len());
}

#[test]
fn eval_path_is_deterministic_and_finite() {
    let dir = tempfile::tempdir().unwrap();
    let loader = fixture(dir.path(), FixtureConfig { train: 16, test: 8, ..FixtureConfig::default() });
    for i in 0..loader.len() {
        let a = loader.eval_sample(i).unwrap();
        let b = loader.eval_sample(i).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.image.shape(), [32, 32, 3]);
        assert!(a.image.is_finite());
    }
    let mut stream = BatchStream::new(&loader, 8, 0).unwrap();
    let batch = stream.next().unwrap().unwrap();
    assert_eq!(batch.images.shape(), [8, 32, 32, 3]);
    assert!(batch.images.is_finite());
}

#[test]
fn fixture_contract() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_fixture(&dir.path().join("a"), &FixtureConfig { seed: 1, ..FixtureConfig::default() }).unwrap();
    let m = Manifest::load(&manifest).unwrap();
    assert_eq!(m.entries.len(), 64);
    let ppm = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm"))
        .count();
    assert_eq!(ppm, 64);
    let pos = m.positives();
    assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);

    let other = generate_fixture(&dir.path().join("b"), &FixtureConfig { seed: 2, ..FixtureConfig::default() }).unwrap();
    let hashes = |p: &Path| -> HashSet<u64> {
        let m = Manifest::load(p).unwrap();
        m.entries.iter().map(|e| hash_of(&std::fs::read(m.resolve(e)).unwrap())).collect()
    };
    assert!(hashes(&manifest).is_disjoint(&hashes(&other)));
}

fn arb_manifest() -> impl Strategy<Value = Manifest> {
    (1usize..5).prop_flat_map(|classes| {
        let entry = (
            "[a-z][a-z0-9_]{0,8}\\.ppm",
            prop_oneof![Just(Split::Train), Just(Split::Val), Just(Split::Test)],
            proptest::collection::vec(0u8..2, classes),
        );
        proptest::collection::vec(entry, 0..20).prop_map(move |rows| {
            let mut m = Manifest::new((0..classes).map(|c| format!("class {c}")).collect(), "/data");
            let mut seen = HashSet::new();
            for (path, split, labels) in rows {
                if seen.insert(path.clone()) {
                    m.entries.push(ManifestEntry { path, split, labels });
                }
            }
            m
        })
    })
}

proptest! {
    #[test]
    fn manifest_round_trip(m in arb_manifest()) {
        let text = m.to_csv().unwrap();
        let back = Manifest::parse(text.as_bytes(), Path::new("m.csv"), PathBuf::from("/data")).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn resize_preserves_range(h in 1usize..12, w in 1usize..12, oh in 1usize..20, ow in 1usize..20, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = image(h, w, &mut rng);
        let out = transform::resize_bilinear(&img, oh, ow).unwrap();
        prop_assert_eq!(out.shape(), &[oh, ow, 3]);
        prop_assert!(out.data().iter().all(|v| (-1e-6..=1.0 + 1e-6).contains(v)));
    }
}
