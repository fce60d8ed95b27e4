use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xgrade::autograd::{BatchNormState, Graph, Mode, Padding};
use xgrade::tensor::Tensor;
use xgrade::Error;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct convolution with explicit loops over every index.
fn conv_reference(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    padding: Padding,
) -> Tensor<f64> {
    let (n, h, w, c) = x.dims4().unwrap();
    let (kh, kw, _, f) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let (oh, ow, pt, pl) = match padding {
        Padding::Valid => ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0),
        Padding::Same => {
            let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
            let ph = ((oh - 1) * stride + kh).saturating_sub(h);
            let pw = ((ow - 1) * stride + kw).saturating_sub(w);
            (oh, ow, ph / 2, pw / 2)
        }
    };
    let mut out = vec![0.0; n * oh * ow * f];
    for bi in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for fi in 0..f {
                    let mut acc = b[fi];
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (oy * stride + dy) as isize - pt as isize;
                            let ix = (ox * stride + dx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                let xv = x.data()[((bi * h + iy as usize) * w + ix as usize) * c + ci];
                                let kv = k.data()[((dy * kw + dx) * c + ci) * f + fi];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((bi * oh + oy) * ow + ox) * f + fi] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, oh, ow, f], out).unwrap()
}

fn run_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, padding: Padding) -> Tensor<f64> {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone()).unwrap();
    let kv = g.constant(k.clone()).unwrap();
    let bv = b.map(|b| g.constant(b.clone()).unwrap());
    let y = g.conv2d(xv, kv, bv, stride, padding).unwrap();
    g.value(y).clone()
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_identity_kernel() {
    let x = Tensor::<f64>::ones(&[1, 3, 3, 1]);
    let k = Tensor::<f64>::ones(&[1, 1, 1, 1]);
    assert_eq!(run_conv(&x, &k, None, 1, Padding::Same), x);
}

#[test]
fn conv_sum_reduction() {
    let x = Tensor::<f64>::from_f64(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let k = Tensor::<f64>::ones(&[2, 2, 1, 1]);
    let y = run_conv(&x, &k, None, 1, Padding::Valid);
    assert_eq!(y.shape(), [1, 1, 1, 1]);
    assert_eq!(y.data(), [10.0]);
}

#[test]
fn conv_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&[1, 5, 5, 2], &mut rng);
    let k = rand_tensor(&[3, 3, 2, 3], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    for padding in [Padding::Same, Padding::Valid] {
        for stride in [1, 2, 3] {
            let got = run_conv(&x, &k, Some(&b), stride, padding);
            let want = conv_reference(&x, &k, b.data(), stride, padding);
            assert!(max_abs_diff(&got, &want) < 1e-6, "{padding:?} stride {stride}");
        }
    }
}

#[test]
fn conv_shape_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..60 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let (kh, kw) = (rng.random_range(1..=h.min(4)), rng.random_range(1..=w.min(4)));
        let (c, f) = (rng.random_range(1..4), rng.random_range(1..4));
        let n = rng.random_range(1..3);
        let stride = rng.random_range(1..4);
        let x = rand_tensor(&[n, h, w, c], &mut rng);
        let k = rand_tensor(&[kh, kw, c, f], &mut rng);
        let b = rand_tensor(&[f], &mut rng);
        for padding in [Padding::Same, Padding::Valid] {
            let got = run_conv(&x, &k, Some(&b), stride, padding);
            let want = conv_reference(&x, &k, b.data(), stride, padding);
            assert!(max_abs_diff(&got, &want) < 1e-9, "{:?} {:?} s{stride} {padding:?}", x.shape(), k.shape());
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 4, 4, 3])).unwrap();
    let k = g.constant(Tensor::zeros(&[3, 3, 2, 4])).unwrap();
    assert!(matches!(g.conv2d(x, k, None, 1, Padding::Same), Err(Error::Shape(_))));
}

#[test]
fn conv_rejects_non_finite_input() {
    let mut g = Graph::<f32>::new();
    let mut t = Tensor::zeros(&[1, 2, 2, 1]);
    t.data_mut()[1] = f32::NAN;
    // Rejected as soon as it enters the graph.
    assert!(matches!(g.constant(t), Err(Error::Numeric(_))));
}

fn run_pool(x: &Tensor<f64>, window: usize, stride: usize) -> xgrade::Result<Tensor<f64>> {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone())?;
    let y = g.maxpool2d(xv, window, stride, Padding::Valid)?;
    Ok(g.value(y).clone())
}

#[test]
fn maxpool_examples() {
    let x = Tensor::<f64>::from_f64(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(run_pool(&x, 2, 2).unwrap().data(), [4.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = rand_tensor(&[2, 5, 4, 3], &mut rng);
    assert_eq!(run_pool(&r, 1, 1).unwrap(), r);
    assert!(matches!(run_pool(&x, 3, 1), Err(Error::Shape(_))));
}

#[test]
fn maxpool_matches_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&[1, 8, 8, 1], &mut rng);
    let y = run_pool(&x, 2, 2).unwrap();
    assert_eq!(y.shape(), [1, 4, 4, 1]);
    for oy in 0..4 {
        for ox in 0..4 {
            let mut best = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    best = best.max(x.data()[(oy * 2 + dy) * 8 + ox * 2 + dx]);
                }
            }
            assert_eq!(y.data()[oy * 4 + ox], best);
        }
    }
}

fn run_bn(x: &Tensor<f64>, gamma: f64, beta: f64, mode: Mode, state: &mut BatchNormState<f64>) -> Tensor<f64> {
    let c = *x.shape().last().unwrap();
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone()).unwrap();
    let gv = g.constant(Tensor::full(&[c], gamma)).unwrap();
    let bv = g.constant(Tensor::full(&[c], beta)).unwrap();
    let y = g.batch_norm(xv, gv, bv, state, mode).unwrap();
    g.value(y).clone()
}

fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
    let c = *t.shape().last().unwrap();
    let vals: Vec<f64> = t.data().iter().skip(ch).step_by(c).copied().collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    (mean, var)
}

#[test]
fn batch_norm_train_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&[8, 4, 4, 3], &mut rng).map(|v| 2.0 * v + 1.0);
    let y = run_bn(&x, 1.0, 0.0, Mode::Train, &mut BatchNormState::new(3));
    for ch in 0..3 {
        let (mean, var) = channel_moments(&y, ch);
        assert!(mean.abs() < 1e-5, "channel {ch} mean {mean}");
        // Epsilon shrinks the variance slightly: var/(var+eps).
        let (_, xv) = channel_moments(&x, ch);
        assert!((var - xv / (xv + 1e-5)).abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-4, "channel {ch} variance {var}");
    }
}

#[test]
fn batch_norm_fixed_point_and_zero_scale() {
    let raw = Tensor::<f64>::from_f64(&[4, 1, 1, 1], &[1.0, -1.0, 1.0, -1.0]).unwrap();
    let y = run_bn(&raw, 1.0, 0.0, Mode::Train, &mut BatchNormState::new(1));
    let shrink = 1.0 / (1.0f64 + 1e-5).sqrt();
    for (a, b) in y.data().iter().zip(raw.data()) {
        assert!((a - b * shrink).abs() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&[3, 2, 2, 2], &mut rng);
    let y = run_bn(&x, 0.0, 0.7, Mode::Train, &mut BatchNormState::new(2));
    assert!(y.data().iter().all(|&v| v == 0.7));
}

#[test]
fn batch_norm_running_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&[6, 3, 3, 2], &mut rng).map(|v| v + 5.0);
    let mut state = BatchNormState::<f64>::new(2);
    run_bn(&x, 1.0, 0.0, Mode::Train, &mut state);
    for ch in 0..2 {
        let (mean, _) = channel_moments(&x, ch);
        let want = 0.9 * 0.0 + 0.1 * mean;
        assert!((state.running_mean.data()[ch] - want).abs() < 1e-12);
    }
    let frozen = state.clone();
    let y = run_bn(&x, 1.0, 0.0, Mode::Infer, &mut state);
    assert_eq!(state, frozen);
    let (m, v) = (state.running_mean.data()[0], state.running_var.data()[0]);
    assert!((y.data()[0] - (x.data()[0] - m) / (v + 1e-5).sqrt()).abs() < 1e-12);
}

#[test]
fn batch_norm_rejects_empty_batch() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[0, 2, 2, 1])).unwrap();
    let gm = g.constant(Tensor::ones(&[1])).unwrap();
    let bt = g.constant(Tensor::zeros(&[1])).unwrap();
    let r = g.batch_norm(x, gm, bt, &mut BatchNormState::new(1), Mode::Train);
    assert!(matches!(r, Err(Error::Argument(_))));
}

#[test]
fn dropout_rate_zero_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&[3, 4], &mut rng);
    for mode in [Mode::Train, Mode::Infer] {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone()).unwrap();
        let y = g.dropout(xv, 0.0, &mut rng, mode).unwrap();
        assert_eq!(g.value(y), &x);
    }
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone()).unwrap();
    let y = g.dropout(xv, 0.5, &mut rng, Mode::Infer).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn backward_linear_and_quadratic() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &Tensor::ones(&[2, 3]));

    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), [2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::zeros(&[2])).unwrap();
    assert!(matches!(g.backward(x), Err(Error::Argument(_))));
}

fn forward_backward_bits(seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&[2, 6, 6, 3], &mut rng).cast::<f32>();
    let k = rand_tensor(&[3, 3, 3, 4], &mut rng).cast::<f32>();
    let mut g = Graph::<f32>::new();
    let xv = g.param(x).unwrap();
    let kv = g.param(k).unwrap();
    let y = g.conv2d(xv, kv, None, 1, Padding::Same).unwrap();
    let y = g.relu(y).unwrap();
    let y = g.maxpool2d(y, 2, 2, Padding::Valid).unwrap();
    let y = g.mean(y).unwrap();
    g.backward(y).unwrap();
    let fwd = g.value(y).data().iter().map(|v| v.to_bits() as u64).collect();
    let bwd = g.grad(kv).unwrap().data().iter().map(|v| v.to_bits() as u64).collect();
    (fwd, bwd)
}

#[test]
fn single_threaded_runs_are_bitwise_identical() {
    assert_eq!(forward_backward_bits(9), forward_backward_bits(9));
}

proptest! {
    #[test]
    fn same_padding_output_extent(h in 1usize..20, w in 1usize..20, k in 1usize..6, s in 1usize..5) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, h, w, 1])).unwrap();
        let kv = g.constant(Tensor::zeros(&[k, k, 1, 2])).unwrap();
        let y = g.conv2d(x, kv, None, s, Padding::Same).unwrap();
        prop_assert_eq!(g.value(y).shape(), &[1, h.div_ceil(s), w.div_ceil(s), 2]);
    }

    #[test]
    fn relu_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
        let mut g = Graph::<f64>::new();
        let n = v.len();
        let x = g.constant(Tensor::new(&[n], v).unwrap()).unwrap();
        let a = g.relu(x).unwrap();
        let b = g.relu(a).unwrap();
        prop_assert_eq!(g.value(a), g.value(b));
    }
}
