//! Fit a categorical critique policy by gradient descent on the squared
//! residual objective and compare it with the closed-form optimum, then
//! sweep beta to show the reward sharpening the policy.
//!
//! Run with: `cargo run --example toy_training`

use rco::trainer::{closed_form_policy, fit, kl_divergence, ReferencePolicy, ToyInstance};

fn main() {
    let instance = ToyInstance::new(
        ReferencePolicy::uniform(4),
        vec![1.0, 0.0, 0.5, 0.5],
        0.1,
    )
    .unwrap();

    let outcome = fit(&instance, vec![0.0; 4], 0.1, 100_000, 1e-10).unwrap();
    let fitted = outcome.policy.probabilities();
    let optimal = closed_form_policy(&instance).unwrap();
    println!(
        "converged in {} steps (loss {:.2e}, grad {:.2e})",
        outcome.report.steps, outcome.report.final_loss, outcome.report.grad_norm
    );
    println!("fitted:      {fitted:.6?}");
    println!("closed form: {optimal:.6?}");
    println!("KL(fitted || closed form) = {:.3e}\n", kl_divergence(&fitted, &optimal));

    // A sampled subset uses the subset partition; only the sampled indices
    // are pinned by the loss.
    let subset = instance.clone().with_sampled_indices(vec![1, 3]).unwrap();
    let outcome = fit(&subset, vec![0.0; 4], 0.1, 100_000, 1e-10).unwrap();
    println!(
        "subset fit over indices [1, 3]: probabilities {:.6?}\n",
        outcome.policy.probabilities()
    );

    println!("beta sweep (uniform reference, cus = [0.9, 0.2, 0.5, 0.1]):");
    for beta in [1.0, 0.5, 0.2, 0.1, 0.05] {
        let sharpened = ToyInstance::new(
            ReferencePolicy::uniform(4),
            vec![0.9, 0.2, 0.5, 0.1],
            beta,
        )
        .unwrap();
        let optimal = closed_form_policy(&sharpened).unwrap();
        println!("  beta {beta:>4}: p(best critique) = {:.4}", optimal[0]);
    }
}
