//! Collect one record's full sample bundle with mock endpoints: the
//! initial response, N critiques, and M refinements per critique.
//!
//! Run with: `cargo run --example collect_bundle`

use rco::fixtures::desk_prompts;
use rco::gateway::{make_mock_backend, MockBehavior};
use rco::sampler::{collect_bundle, generate_initial, SamplerOptions};
use rco::templates::CriticStyle;

fn main() {
    let records = desk_prompts();
    let record = &records[0];
    let actor = make_mock_backend(7, MockBehavior::Generate);
    let critic = make_mock_backend(8, MockBehavior::Generate);
    let opts = SamplerOptions { base_seed: 42, ..SamplerOptions::default() };

    let initials = generate_initial(std::slice::from_ref(record), &actor, &opts);
    let initial = &initials.items[0];
    println!("initial ({}): {}", initial.actor_id, initial.text);

    let (bundle, failures) =
        collect_bundle(record, initial, &critic, &actor, CriticStyle::Generic, 4, 5, &opts);
    assert!(failures.is_empty());
    println!(
        "bundle complete: {} ({} critiques, {} refinements)",
        bundle.is_complete(4, 5),
        bundle.critiques.len(),
        bundle.refinements.values().map(Vec::len).sum::<usize>(),
    );
    for critique in &bundle.critiques {
        println!("critique {}: {}", critique.index, critique.text);
        for refinement in &bundle.refinements[&critique.index] {
            println!("  refinement {}: {}", refinement.refinement_index, refinement.text);
        }
    }
}
