//! Rendered prompts for the demo assignment, compared against checked-in
//! renderings. Set `UPDATE_GOLDEN=1` to rewrite them after a deliberate
//! template change.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use copilot_core::ingest::{parse_bundle, AssignmentBundle};
use copilot_core::privacy::build_pseudonym_map;
use copilot_core::prompting::{
    render_evaluation_prompt, render_synthesis_prompt, render_task_feedback_prompt, PromptStage, RenderedPrompt,
};
use copilot_core::{AssignmentSpec, PromptVariant, StudentRecord};

fn demo() -> (AssignmentSpec, Vec<StudentRecord>) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/bundle");
    parse_bundle(&AssignmentBundle::from_dir(dir).unwrap()).unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn as_golden(p: &RenderedPrompt) -> String {
    format!("=== system ===\n{}\n=== user ===\n{}\n", p.system_text, p.user_text)
}

fn check(name: &str, p: &RenderedPrompt) {
    let path = golden_dir().join(name);
    let rendered = as_golden(p);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, &rendered).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(rendered, expected, "{name} differs from its golden rendering");
}

fn task_prompt(variant: PromptVariant) -> RenderedPrompt {
    let (a, students) = demo();
    let s = students.iter().find(|s| s.student_id == "u1002").unwrap();
    let t = &a.tasks[0];
    render_task_feedback_prompt(variant, &a, t, s.response(&t.task_id).unwrap()).unwrap()
}

fn synthesis_prompt(variant: PromptVariant) -> RenderedPrompt {
    let (a, _) = demo();
    let feedbacks: Vec<String> = (1..=5).map(|i| format!("Feedback on task {i}.")).collect();
    render_synthesis_prompt(variant, &a, &feedbacks).unwrap()
}

#[test]
fn golden_renderings() {
    check("base_task_T1.txt", &task_prompt(PromptVariant::Base));
    check("advanced_task_T1.txt", &task_prompt(PromptVariant::Advanced));
    check("base_synthesis.txt", &synthesis_prompt(PromptVariant::Base));
    check("advanced_synthesis.txt", &synthesis_prompt(PromptVariant::Advanced));
    check(
        "evaluation.txt",
        &render_evaluation_prompt("Good use of JOIN. Consider checking the date boundary.").unwrap(),
    );
}

#[test]
fn anchor_strings_by_variant() {
    let base = task_prompt(PromptVariant::Base).system_text;
    let adv = task_prompt(PromptVariant::Advanced).system_text;
    assert!(base.contains("Explain what has been done incorrectly."));
    assert!(!base.contains("helpful mentor"));
    assert!(!base.contains("<feedback criteria>"));
    assert!(adv.contains("You are a friendly, helpful mentor"));
    assert!(adv.contains("<feedback criteria>") && adv.contains("</feedback criteria>"));
    assert!(adv.contains("Constructive feedback"));
    for p in [&base, &adv] {
        assert!(p.contains("<assignment context>") && p.contains("</assignment context>"));
        assert!(p.contains("There are 5 tasks in this assignment."));
    }
    let syn = synthesis_prompt(PromptVariant::Advanced).system_text;
    assert!(syn.contains("provide process-based feedback"));
    assert!(!synthesis_prompt(PromptVariant::Base)
        .system_text
        .contains("process-based"));

    let eval = render_evaluation_prompt("x").unwrap();
    assert!(eval.system_text.contains("give *a verbatim example*"));
    assert!(eval.system_text.contains("Be as strict as possible"));
    assert!(eval.system_text.contains("provide a score from 0 to 10"));
    assert_eq!(PromptStage::infer(&eval.system_text), PromptStage::Evaluation);
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Block {
    MentorRole,
    ProcessFeedback,
    Criteria,
}

/// Which template-specified block a line belongs to, if any.
fn classify(line: &str, in_criteria: bool) -> Option<Block> {
    let l = line.to_lowercase();
    if in_criteria || l.contains("criteria") {
        Some(Block::Criteria)
    } else if l.contains("mentor") {
        Some(Block::MentorRole)
    } else if l.contains("process") || l.contains("such feedback includes") {
        Some(Block::ProcessFeedback)
    } else {
        None
    }
}

/// Lines of `a` that do not occur in `b`, tagged with whether they sit
/// inside the criteria delimiters.
fn only_in<'a>(a: &'a str, b: &str) -> Vec<(&'a str, bool)> {
    let other: BTreeSet<&str> = b.lines().collect();
    let mut inside = false;
    let mut out = Vec::new();
    for line in a.lines() {
        let opening = line.trim() == "<feedback criteria>";
        if opening {
            inside = true;
        }
        if !line.trim().is_empty() && !other.contains(line) {
            out.push((line, inside));
        }
        if line.trim() == "</feedback criteria>" {
            inside = false;
        }
    }
    out
}

struct StructuredDiff {
    blocks: BTreeSet<Block>,
    unclassified: Vec<String>,
    removed: Vec<String>,
}

fn structured_diff(base: &RenderedPrompt, adv: &RenderedPrompt) -> StructuredDiff {
    let mut blocks = BTreeSet::new();
    let mut unclassified = Vec::new();
    for (line, inside) in only_in(&adv.system_text, &base.system_text) {
        match classify(line, inside) {
            Some(b) => {
                blocks.insert(b);
            }
            None => unclassified.push(line.trim().to_string()),
        }
    }
    let removed = only_in(&base.system_text, &adv.system_text)
        .into_iter()
        .map(|(l, _)| l.trim().to_string())
        .collect();
    StructuredDiff {
        blocks,
        unclassified,
        removed,
    }
}

#[test]
fn variants_differ_only_in_template_blocks() {
    let all = BTreeSet::from([Block::MentorRole, Block::ProcessFeedback, Block::Criteria]);

    let (base, adv) = (task_prompt(PromptVariant::Base), task_prompt(PromptVariant::Advanced));
    assert_eq!(base.user_text, adv.user_text);
    let d = structured_diff(&base, &adv);
    assert_eq!(d.blocks, all);
    assert!(d.unclassified.is_empty(), "{:?}", d.unclassified);
    // the closing instruction is reworded to point at the criteria
    assert_eq!(
        d.removed,
        ["Provide detailed feedback on their response to the given question considering the provided sample solution, students' response and graded rubric."]
    );

    let (base, adv) = (
        synthesis_prompt(PromptVariant::Base),
        synthesis_prompt(PromptVariant::Advanced),
    );
    assert_eq!(base.user_text, adv.user_text);
    let d = structured_diff(&base, &adv);
    assert_eq!(d.blocks, all);
    // the one-line access list becomes the two-item list that names the criteria
    assert_eq!(
        d.removed,
        ["You have access to: an assignment context (provided below and delineated with <assignment context>)."]
    );
    assert_eq!(
        d.unclassified,
        [
            "You have access to:",
            "i) assignment context (provided below and delineated with <assignment context> ) and"
        ]
    );

    let context = |p: &RenderedPrompt| {
        let s = p.system_text.find("<assignment context>\n").unwrap();
        let e = p.system_text.find("</assignment context>").unwrap();
        p.system_text[s..e].to_string()
    };
    assert_eq!(context(&base), context(&adv));
}

#[test]
fn rendering_is_pure() {
    assert_eq!(
        task_prompt(PromptVariant::Advanced),
        task_prompt(PromptVariant::Advanced)
    );
    assert_eq!(
        synthesis_prompt(PromptVariant::Base),
        synthesis_prompt(PromptVariant::Base)
    );
}

#[test]
fn injected_pii_is_caught_by_the_scan() {
    let (a, students) = demo();
    let map = build_pseudonym_map(&students, 7).unwrap();
    let alice = students.iter().find(|s| s.student_id == "u1001").unwrap();
    let t = &a.tasks[0];
    let raw = render_task_feedback_prompt(PromptVariant::Base, &a, t, alice.response("T1").unwrap()).unwrap();
    assert!(raw.user_text.contains("Alice Chen"));
    assert!(!map.scan_for_pii(&raw.user_text).is_empty());

    let mut clean = alice.response("T1").unwrap().clone();
    clean.answer_text = map.pseudonymize_text(&clean.answer_text);
    let safe = render_task_feedback_prompt(PromptVariant::Base, &a, t, &clean).unwrap();
    assert!(map.scan_for_pii(&safe.system_text).is_empty());
    assert!(map.scan_for_pii(&safe.user_text).is_empty());
}
