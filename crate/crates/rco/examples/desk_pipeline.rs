//! The full mock-backed pipeline at desk scale: 20 prompts through
//! response collection, critique sampling, refinement, debiased judging,
//! and reward computation, followed by the evaluation report.
//!
//! Run with: `cargo run --example desk_pipeline`

use rco::config::PipelineConfig;
use rco::fixtures::desk_prompts;
use rco::records::write_records;
use rco::stages::{run_desk_chain, run_stage, StageCommand, StageInputs};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = dir.path().join("prompts.jsonl");
    write_records(&desk_prompts(), &prompts).unwrap();

    let config = PipelineConfig {
        seed: 42,
        parallelism: 4,
        max_tokens: 256,
        ..PipelineConfig::default()
    };
    let root = dir.path().join("run");
    for summary in run_desk_chain(&config, &prompts, &root).unwrap() {
        for (name, count) in &summary.written {
            println!("{:<18} {name} ({count} records)", summary.stage);
        }
    }

    let eval_dir = root.join("eval");
    run_stage(
        StageCommand::Eval,
        &config,
        &StageInputs {
            records: Some(prompts.clone()),
            responses: Some(root.join("responses/responses.jsonl")),
            critiques: Some(root.join("critiques/critiques.jsonl")),
            ..StageInputs::default()
        },
        &eval_dir,
        false,
    )
    .unwrap();

    println!("\nevaluation report:");
    print!("{}", std::fs::read_to_string(eval_dir.join("report.txt")).unwrap());
    println!("\nconsistency accuracy:");
    print!("{}", std::fs::read_to_string(eval_dir.join("accuracy.jsonl")).unwrap());

    println!("\nfirst reward rows:");
    let rewards = std::fs::read_to_string(root.join("rewards/rewards.jsonl")).unwrap();
    for line in rewards.lines().take(4) {
        println!("  {line}");
    }
}
