//! Builds a small conv → batch-norm → ReLU → dense graph in `f64` and
//! compares every analytic gradient against central differences.
//!
//! ```text
//! cargo run --example gradcheck
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use xgrade::autograd::{BatchNormState, Graph, Mode, Padding, Var};
use xgrade::gradcheck::{check_gradients, GradCheckConfig};
use xgrade::tensor::Tensor;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>()).unwrap()
}

fn main() -> xgrade::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![
        randn(&[2, 5, 5, 3], &mut rng), // images
        randn(&[3, 3, 3, 4], &mut rng), // conv kernel
        randn(&[4], &mut rng),          // gamma
        randn(&[4], &mut rng),          // beta
        randn(&[4, 2], &mut rng),       // dense weight
        randn(&[2], &mut rng),          // dense bias
    ];
    let targets = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0])?;

    let model = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.conv2d(v[0], v[1], None, 2, Padding::Same)?;
        let mut bn = BatchNormState::new(4);
        let y = g.batch_norm(y, v[2], v[3], &mut bn, Mode::Train)?;
        let y = g.relu(y)?;
        let y = g.global_avg_pool(y)?;
        let z = g.dense(y, v[4], v[5])?;
        g.sigmoid_ce(z, &targets, &[1.0, 2.0], false)
    };

    let report = check_gradients(&inputs, model, GradCheckConfig::default())?;
    println!(
        "checked {} partial derivatives; worst relative error {:.2e} (input {}, element {}): analytic {:.6e} vs numeric {:.6e}",
        report.checked, report.max_rel_error, report.worst.0, report.worst.1, report.analytic, report.numeric
    );
    Ok(())
}
