//! The turn-by-turn critique-refine loop: each turn critiques the latest
//! response greedily and refines it once.
//!
//! Run with: `cargo run --example iterative_refinement`

use rco::fixtures::desk_prompts;
use rco::gateway::{make_mock_backend, MockBehavior};
use rco::sampler::{generate_initial, iterate, SamplerOptions};
use rco::templates::CriticStyle;

fn main() {
    let records = desk_prompts();
    let record = records.iter().find(|r| r.id == "summ-01").unwrap();
    let actor = make_mock_backend(3, MockBehavior::Generate);
    let critic = make_mock_backend(4, MockBehavior::Generate);
    let opts = SamplerOptions::default();

    let initial = generate_initial(std::slice::from_ref(record), &actor, &opts)
        .items
        .remove(0);
    println!("turn 0: {}", initial.text);

    let outcome = iterate(record, &initial, &critic, &actor, CriticStyle::Generic, 3, &opts);
    for response in &outcome.items {
        println!("turn {}: {}", response.turn, response.text);
    }
    assert!(outcome.failures.is_empty());
    println!("\n{} turns completed; trajectory is seed-reproducible", outcome.items.len());
}
