//! ROC analysis on simulated scores: AUC, operating points and the
//! report tables written by `xgrade evaluate`.
//!
//! ```text
//! cargo run --example roc_report
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use xgrade::metrics::report::{self, ClassReport};
use xgrade::metrics::{confusion_counts, operating_point, roc_curve, sensitivity, specificity, Target};

fn main() -> xgrade::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut reports = Vec::new();
    // Each class gets a different separation between positives and negatives.
    for (name, shift) in [("Atelectasis", 0.6), ("Cardiomegaly", 1.8), ("Effusion", 1.1), ("Hernia", 0.0)] {
        let labels: Vec<u8> = (0..400).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let z: f64 = Normal::new(shift * l as f64, 1.0).unwrap().sample(&mut rng);
                1.0 / (1.0 + (-z).exp())
            })
            .collect();
        let roc = roc_curve(&scores, &labels)?;
        let youden = operating_point(&roc, Target::YoudenMax)?;
        let at90 = operating_point(&roc, Target::Sensitivity(0.9))?;
        println!(
            "{name:<13} AUC {:.3}  Youden t={:.3} (sens {:.2}, spec {:.2})  sens>=0.9 t={:.3} (spec {:.2})",
            roc.auc, youden.threshold, youden.sensitivity, youden.specificity, at90.threshold, at90.specificity
        );
        let counts = confusion_counts(&scores, &labels, youden.threshold)?;
        reports.push(ClassReport {
            name: name.into(),
            threshold: youden.threshold,
            counts,
            sensitivity: sensitivity(&counts).ok(),
            specificity: specificity(&counts).ok(),
            auc: Some(roc.auc),
        });
        if name == "Cardiomegaly" {
            let csv = report::roc_csv(&roc);
            println!("  first ROC rows:\n    {}", csv.lines().take(4).collect::<Vec<_>>().join("\n    "));
        }
    }
    println!("\n{}", report::performance_text(&reports));
    print!("{}", report::performance_csv(&reports));
    Ok(())
}
