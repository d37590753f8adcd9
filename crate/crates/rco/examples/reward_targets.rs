//! From preference scores to regression targets: critique utilities, the
//! shared log-partition value, and the exp-mean identity that ties a
//! reward group together.
//!
//! Run with: `cargo run --example reward_targets`

use rco::reward::{critique_utility, log_partition, rco_targets, reward_group};

fn main() {
    // Four critiques, each judged 2M = 10 times (both orders of five
    // refinements).
    let judged: [Vec<f64>; 4] = [
        vec![1.0; 10],
        vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0],
        vec![1.0, 0.5, 0.5, 0.0, 1.0, 0.5, 0.5, 0.0, 0.5, 0.5],
        vec![0.5; 10],
    ];
    let beta = 0.1;

    let mut cus = Vec::new();
    for (i, ps) in judged.iter().enumerate() {
        let cu = critique_utility(ps).unwrap();
        println!(
            "critique {}: cu = {:.2} over {} judgments",
            i + 1,
            cu.value,
            cu.valid_judgments
        );
        cus.push((i as u32 + 1, cu));
    }

    let values: Vec<f64> = cus.iter().map(|(_, cu)| cu.value).collect();
    let log_z = log_partition(&values, beta).unwrap();
    println!("\nlog Z (beta = {beta}) = {log_z:.4}");

    let targets = rco_targets(&values, beta).unwrap();
    for ((index, _), target) in cus.iter().zip(&targets) {
        println!("target {index}: cu/beta - log Z = {target:+.4}");
    }
    let mean_exp = targets.iter().map(|t| t.exp()).sum::<f64>() / targets.len() as f64;
    println!("mean of exp(target) = {mean_exp:.15} (identically 1)");

    let records = reward_group("demo-prompt", &cus, beta).unwrap();
    println!("\nreward rows:");
    for record in &records {
        println!("  {}", serde_json::to_string(record).unwrap());
    }
}
