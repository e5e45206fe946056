//! Golden-file checks for the LLM output parsers.

use std::fs;
use std::path::{Path, PathBuf};

use taco::querygen::{parse_questions, parse_tuples};
use taco::reformulation::{parse_paraphrases, ReformulationError};

fn golden_dir(grammar: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(grammar)
}

pub fn check(grammar: &str, render: fn(&str) -> String) {
    let dir = golden_dir(grammar);
    let mut inputs: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    inputs.sort();
    assert!(!inputs.is_empty(), "no golden inputs in {}", dir.display());
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut failures = Vec::new();
    for input in inputs {
        let actual = render(&fs::read_to_string(&input).unwrap());
        let expected_path = input.with_extension("expected");
        if update {
            fs::write(&expected_path, &actual).unwrap();
            continue;
        }
        let expected =
            fs::read_to_string(&expected_path).unwrap_or_else(|_| panic!("missing {}", expected_path.display()));
        if actual != expected {
            failures.push(format!(
                "{}\n--- expected\n{expected}--- actual\n{actual}",
                input.display()
            ));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

pub fn render_tuples(input: &str) -> String {
    match parse_tuples(input) {
        Ok(tuples) if tuples.is_empty() => "(no tuples)\n".into(),
        Ok(tuples) => tuples.iter().map(|t| t.render() + "\n").collect(),
        Err(e) => format!("ERROR {e}\n"),
    }
}

pub fn render_questions(input: &str) -> String {
    match parse_questions(input) {
        Ok(parsed) => {
            let mut out = String::new();
            for q in &parsed.accepted {
                out.push_str(&format!("ACCEPT {} | {}\n", q.id, q.text));
            }
            for r in &parsed.rejected {
                let reasons: Vec<String> = r.violations.iter().map(ToString::to_string).collect();
                out.push_str(&format!("REJECT {} | {} | {}\n", r.id, r.text, reasons.join("; ")));
            }
            if out.is_empty() {
                out.push_str("(no questions)\n");
            }
            out
        }
        Err(e) => format!("ERROR {e}\n"),
    }
}

/// The first line of a paraphrase case is the requested count.
pub fn render_paraphrases(input: &str) -> String {
    let (n, body) = input.split_once('\n').unwrap();
    let n: usize = n.trim().parse().unwrap();
    let list = |items: &[String]| items.iter().map(|p| format!("- {p}\n")).collect::<String>();
    match parse_paraphrases(body, n) {
        Ok(items) => list(&items),
        Err(ReformulationError::TooFewParaphrases { expected, valid }) => {
            format!("SHORT {} of {expected}\n{}", valid.len(), list(&valid))
        }
        Err(e) => format!("ERROR {e}\n"),
    }
}
