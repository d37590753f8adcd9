//! Sample records for demos and desk-scale tests: four prompts per task,
//! covering every template variant (multiple choice, table math, code
//! completion vs. problem form, both summarization sources).

use crate::records::{PromptRecord, TaskKind};

fn record(
    id: &str,
    task: TaskKind,
    prompt: &str,
    source: &str,
) -> PromptRecord {
    PromptRecord {
        id: id.into(),
        task,
        prompt: prompt.into(),
        choices: None,
        table_title: None,
        table_content: None,
        reference_answer: None,
        source: source.into(),
    }
}

/// Twenty prompts, four per task.
pub fn desk_prompts() -> Vec<PromptRecord> {
    let mut records = vec![
        record(
            "dialog-01",
            TaskKind::Dialog,
            "Human: My sourdough starter smells like acetone. What should I do?\n\nAssistant:",
            "fixture",
        ),
        record(
            "dialog-02",
            TaskKind::Dialog,
            "Human: Recommend a quiet hobby I can do in a small apartment.\n\nAssistant:",
            "fixture",
        ),
        record(
            "dialog-03",
            TaskKind::Dialog,
            "Human: How do I politely decline a meeting that has no agenda?\n\nAssistant:",
            "fixture",
        ),
        record(
            "dialog-04",
            TaskKind::Dialog,
            "Human: Explain why the sky is dark at night to a curious child.\n\nAssistant:",
            "fixture",
        ),
        record(
            "summ-01",
            TaskKind::Summarization,
            "City council voted 7-2 on Tuesday to convert the disused rail spur into a \
             pedestrian greenway. Construction bids open in March; the projected cost is \
             $4.2 million, funded by a state grant and local bonds.",
            "cnn_dailymail",
        ),
        record(
            "summ-02",
            TaskKind::Summarization,
            "Researchers released a survey of 1,200 commuters showing bicycle use doubled \
             after the protected lane network opened, while average car commute times fell \
             by four minutes during peak hours.",
            "cnn_dailymail",
        ),
        record(
            "summ-03",
            TaskKind::Summarization,
            "SUBREDDIT: r/cooking\nTITLE: Fixed my grandmother's stew recipe\nPOST: For years \
             the stew came out thin. Turns out she browned the flour before adding stock. I \
             tried it side by side and the browned-flour batch was richer and darker.",
            "tldr",
        ),
        record(
            "summ-04",
            TaskKind::Summarization,
            "SUBREDDIT: r/diy\nTITLE: Squeaky stairs\nPOST: The third stair squeaked for two \
             years. A single construction screw through the tread into the stringer fixed it \
             in five minutes. Wish I had done it sooner.",
            "tldr",
        ),
        record(
            "qa-03",
            TaskKind::QuestionAnswering,
            "Why do onions make your eyes water when you cut them?",
            "fixture",
        ),
        record(
            "qa-04",
            TaskKind::QuestionAnswering,
            "What is the tallest mountain in the solar system?",
            "fixture",
        ),
        record(
            "math-03",
            TaskKind::Math,
            "A train travels 180 km in 2.5 hours. What is its average speed in km/h?",
            "fixture",
        ),
        record(
            "code-01",
            TaskKind::Code,
            "def running_max(values: list[int]) -> list[int]:\n    \"\"\"Return the running \
             maximum of the input list.\"\"\"\n",
            "humaneval",
        ),
        record(
            "code-02",
            TaskKind::Code,
            "def is_balanced(s: str) -> bool:\n    \"\"\"Return True if the bracket string is \
             balanced.\"\"\"\n",
            "humaneval",
        ),
        record(
            "code-03",
            TaskKind::Code,
            "Problem: given a pandas DataFrame df with a 'price' column, add a column \
             'price_rank' with the dense rank of each price.\nA:\n<code>\nimport pandas as pd\n\
             df = pd.DataFrame({'price': [10, 20, 20, 30]})\n</code>\nBEGIN SOLUTION",
            "ds1000",
        ),
        record(
            "code-04",
            TaskKind::Code,
            "Problem: compute the row-wise softmax of a numpy array a.\nA:\n<code>\nimport \
             numpy as np\na = np.array([[1.0, 2.0], [3.0, 4.0]])\n</code>\nBEGIN SOLUTION",
            "ds1000",
        ),
    ];

    let mut qa_choice = record(
        "qa-01",
        TaskKind::QuestionAnswering,
        "Which gas makes up most of Earth's atmosphere?",
        "fixture",
    );
    qa_choice.choices = Some(vec![
        "Oxygen".into(),
        "Nitrogen".into(),
        "Carbon dioxide".into(),
        "Argon".into(),
    ]);
    qa_choice.reference_answer = Some("B".into());
    records.push(qa_choice);

    let mut qa_choice2 = record(
        "qa-02",
        TaskKind::QuestionAnswering,
        "Which ocean is the deepest on average?",
        "fixture",
    );
    qa_choice2.choices = Some(vec![
        "Atlantic".into(),
        "Indian".into(),
        "Pacific".into(),
        "Arctic".into(),
    ]);
    qa_choice2.reference_answer = Some("C".into());
    records.push(qa_choice2);

    let mut math_choice = record(
        "math-01",
        TaskKind::Math,
        "If 3x + 5 = 20, what is x?",
        "fixture",
    );
    math_choice.choices = Some(vec!["3".into(), "5".into(), "15".into(), "25".into()]);
    math_choice.reference_answer = Some("B".into());
    records.push(math_choice);

    let mut math_table = record(
        "math-02",
        TaskKind::Math,
        "How many more books did the library lend in March than in January?",
        "fixture",
    );
    math_table.table_title = Some("Monthly book loans".into());
    math_table.table_content = Some("January | 340\nFebruary | 365\nMarch | 410".into());
    math_table.reference_answer = Some("70".into());
    records.push(math_table);

    let mut math_plain = record(
        "math-04",
        TaskKind::Math,
        "What is the sum of the first 20 positive integers?",
        "fixture",
    );
    math_plain.reference_answer = Some("210".into());
    records.push(math_plain);

    // qa-03/04 get reference answers so consistency checking has gold.
    for r in records.iter_mut() {
        if r.id == "qa-03" {
            r.reference_answer = Some("Cutting releases syn-propanethial-S-oxide".into());
        }
        if r.id == "qa-04" {
            r.reference_answer = Some("Olympus Mons".into());
        }
        if r.id == "math-03" {
            r.reference_answer = Some("72".into());
        }
    }

    records.sort_by(|a, b| a.id.cmp(&b.id));
    records
}
