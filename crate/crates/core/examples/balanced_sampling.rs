//! Class-balanced batches from a skewed label set: prints the stratum
//! quota for a few batches and the long-run share of each stratum.
//!
//! ```text
//! cargo run --example balanced_sampling
//! ```

use xgrade::data::BalancedSampler;

fn main() -> xgrade::Result<()> {
    let classes: Vec<String> = ["nodule", "mass", "effusion"].iter().map(|s| s.to_string()).collect();
    // 500 healthy, 60 nodule, 25 mass, 8 effusion.
    let mut labels = vec![vec![0, 0, 0]; 500];
    labels.extend(vec![vec![1, 0, 0]; 60]);
    labels.extend(vec![vec![0, 1, 0]; 25]);
    labels.extend(vec![vec![0, 0, 1]; 8]);

    let mut sampler = BalancedSampler::new(&labels, &classes, 10, 42)?;
    println!("{} strata", sampler.num_strata());
    for b in 0..4 {
        println!("batch {b} quota {:?}", sampler.quota(b));
    }

    let mut counts = [0usize; 4];
    let mut batches = 0;
    while sampler.epoch() == 0 {
        for d in sampler.next_batch() {
            let stratum = labels[d.index].iter().position(|&l| l == 1).map_or(3, |c| c);
            counts[stratum] += 1;
        }
        batches += 1;
    }
    let total: usize = counts.iter().sum();
    println!("first epoch: {batches} batches");
    for (name, n) in classes.iter().map(String::as_str).chain(["no finding"]).zip(counts) {
        println!("  {name:<10} {:.1}%", 100.0 * n as f64 / total as f64);
    }
    Ok(())
}
