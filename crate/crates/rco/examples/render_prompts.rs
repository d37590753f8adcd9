//! Render the prompt templates for one record through every stage.
//!
//! Run with: `cargo run --example render_prompts`

use std::collections::BTreeMap;

use rco::fixtures::desk_prompts;
use rco::templates::{render, slots_for_record, CriticStyle, TemplateStage};

fn main() {
    let records = desk_prompts();
    let record = records.iter().find(|r| r.id == "math-02").unwrap();
    println!("record: {} ({}, source {})\n", record.id, record.task, record.source);

    let mut slots: BTreeMap<String, String> = slots_for_record(record);
    slots.insert("response".into(), "The library lent 60 more books.".into());
    slots.insert("answer".into(), "The library lent 60 more books.".into());
    slots.insert("critique".into(), "Check the March row again: 410 - 340 is 70.".into());
    slots.insert("answer_0".into(), "It lent 70 more books.".into());
    slots.insert("answer_1".into(), "The library lent 60 more books.".into());
    slots.insert("critique_0".into(), "The subtraction is wrong.".into());
    slots.insert("critique_1".into(), "Looks fine to me.".into());

    for stage in [
        TemplateStage::Initial,
        TemplateStage::Critique,
        TemplateStage::Refinement,
        TemplateStage::SelfRefinement,
        TemplateStage::JudgePair,
        TemplateStage::JudgeScore,
        TemplateStage::CritiquePref,
    ] {
        let rendered = render(stage, record.task, &slots, CriticStyle::Generic).unwrap();
        println!("================ {:?} ================", stage);
        if let Some(system) = &rendered.system {
            println!("--- system ---\n{system}");
        }
        println!("--- user ---\n{}\n", rendered.user);
    }

    // The auto_j and ultra_cm critique formats replace the generic one.
    for style in [CriticStyle::AutoJ, CriticStyle::UltraCm] {
        let rendered = render(TemplateStage::Critique, record.task, &slots, style).unwrap();
        println!("================ Critique ({style:?}) ================");
        println!("{}\n", rendered.user.lines().next().unwrap());
    }
}
