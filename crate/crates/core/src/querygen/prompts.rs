use std::path::Path;

use serde::{Deserialize, Serialize};

use super::taxonomy::TAXONOMY_BLOCK;
use super::{AtomicTuple, QueryGenError};

pub const TUPLE_TASK: &str = r#"Task: Based on the example input questions, the example output tuples, and the provided tuple taxonomy below, generate skill-specific tuples to help verify and refine the answer of the last input question.

Requirements:
1. Ensure the generated tuples fully capture the factual information of the input question, with each tuple representing a distinct atomic and positive statement. Subjective elements in the initial answer should be disregarded.
2. If the input question is irrelevant to any category, output "None."
3. You must remove any negative words including "not" and "no" from your generation regardless of whether it will result in the opposite meaning.
4. Do not generate trivial tuples about the image itself such as "entity - whole (image)".
5. Each tuple should be output in the following format: id | tuple"#;

pub const QUESTION_TASK: &str = r#"Task: Given the example input questions, skill-specific tuples, and the example output of generated binary questions, re-write each tuple from the last example into a standalone, positively framed natural language binary question.

Requirements:
1. Each binary question should be non-trivial for a vision model to verify. Exclude trivial tuples that do not help in verifying and refining the initial answer.
2. Each binary question should be self-contained and answerable independently, without requiring knowledge of other binary questions.
2. Generate one binary question only for the two or more tuples sharing the same meaning or the opposite meaning.
3. Ensure the generated questions fully capture the factual information of the input question. Create additional binary questions if they are helpful and complementary for refining the initial answer.
4. Treat conditional statements or given information in "Question:" as context that you don't need to ask questions from.
5. You must generate positively framed questions and remove any negative words including "not" and "no" from your generation regardless of whether it will result in the opposite meaning. For example, instead of generating "is this artwork not created by Jacob?", you should always ask its corresponding positive question "is this artwork created by Jacob?"
output format: id | question"#;

/// Header of the block that holds the question being decomposed. Everything
/// after the last occurrence of this marker is target-specific.
pub const TARGET_MARKER: &str = "### Target";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleShot {
    pub question: String,
    pub answer: String,
    /// Output lines, either `id | tuple` or the single line `None.`.
    pub tuples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionShot {
    pub question: String,
    pub tuples: Vec<String>,
    pub questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplars {
    pub version: u32,
    pub tuple_shots: Vec<TupleShot>,
    pub question_shots: Vec<QuestionShot>,
}

const BUNDLED_EXEMPLARS: &str = include_str!("../../data/exemplars.json");

impl Exemplars {
    /// The versioned exemplar set shipped with the crate (5 tuple shots,
    /// 2 question shots).
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_EXEMPLARS).expect("bundled exemplars are valid JSON")
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(std::io::Error::other)
    }
}

fn push_lines(out: &mut String, lines: &[String]) {
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
}

pub fn build_tuple_prompt(
    user_question: &str,
    initial_answer: &str,
    few_shots: &[TupleShot],
) -> Result<String, QueryGenError> {
    if few_shots.is_empty() {
        return Err(QueryGenError::NoExemplars);
    }
    let mut out = String::new();
    out.push_str(TUPLE_TASK);
    out.push_str("\n\nTuple taxonomy:\n```\n");
    out.push_str(TAXONOMY_BLOCK);
    out.push_str("\n```\n");
    for (idx, shot) in few_shots.iter().enumerate() {
        out.push_str(&format!("\n### Example {}\n", idx + 1));
        out.push_str(&format!("Question: {}\n", shot.question));
        out.push_str(&format!("Answer: {}\n", shot.answer));
        out.push_str("Tuples:\n");
        push_lines(&mut out, &shot.tuples);
    }
    out.push_str(&format!("\n{TARGET_MARKER}\n"));
    out.push_str(&format!("Question: {user_question}\n"));
    out.push_str(&format!("Answer: {initial_answer}\n"));
    out.push_str("Tuples:\n");
    Ok(out)
}

pub fn build_question_prompt(
    tuples: &[AtomicTuple],
    user_question: &str,
    few_shots: &[QuestionShot],
) -> Result<String, QueryGenError> {
    if tuples.is_empty() {
        return Err(QueryGenError::EmptyTupleList);
    }
    if few_shots.is_empty() {
        return Err(QueryGenError::NoExemplars);
    }
    let mut out = String::new();
    out.push_str(QUESTION_TASK);
    out.push('\n');
    for (idx, shot) in few_shots.iter().enumerate() {
        out.push_str(&format!("\n### Example {}\n", idx + 1));
        out.push_str(&format!("Question: {}\n", shot.question));
        out.push_str("Tuples:\n");
        push_lines(&mut out, &shot.tuples);
        out.push_str("Binary questions:\n");
        push_lines(&mut out, &shot.questions);
    }
    out.push_str(&format!("\n{TARGET_MARKER}\n"));
    out.push_str(&format!("Question: {user_question}\n"));
    out.push_str("Tuples:\n");
    for tuple in tuples {
        out.push_str(&tuple.render());
        out.push('\n');
    }
    out.push_str("Binary questions:\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querygen::taxonomy::{Category, Subcategory, TaxonomyCategory};

    fn tuple(id: u32, sub: Subcategory, arg: &str) -> AtomicTuple {
        AtomicTuple::new(id, TaxonomyCategory::new(Category::Entity, sub).unwrap(), arg).unwrap()
    }

    #[test]
    fn bundled_exemplars_shape() {
        let ex = Exemplars::bundled();
        assert_eq!(ex.tuple_shots.len(), 5);
        assert_eq!(ex.question_shots.len(), 2);
        // every exemplar output is itself parseable
        for shot in &ex.tuple_shots {
            crate::querygen::parse_tuples(&shot.tuples.join("\n")).unwrap();
        }
        for shot in &ex.question_shots {
            crate::querygen::parse_tuples(&shot.tuples.join("\n")).unwrap();
            crate::querygen::parse_questions(&shot.questions.join("\n"))
                .unwrap()
                .into_strict()
                .unwrap();
        }
    }

    #[test]
    fn tuple_prompt_contents() {
        let shots = Exemplars::bundled().tuple_shots;
        let prompt = build_tuple_prompt("Is there a truck?", "Yes, there is a truck.", &shots).unwrap();
        assert!(prompt.contains(TAXONOMY_BLOCK));
        assert!(prompt.contains("id | tuple"));
        assert!(prompt.ends_with("Question: Is there a truck?\nAnswer: Yes, there is a truck.\nTuples:\n"));

        let empty = build_tuple_prompt("Is there a truck?", "", &shots).unwrap();
        assert!(empty.ends_with("Answer: \nTuples:\n"));
        assert!(matches!(
            build_tuple_prompt("q", "a", &[]),
            Err(QueryGenError::NoExemplars)
        ));
    }

    #[test]
    fn prompts_differ_only_in_target_block() {
        let shots = Exemplars::bundled().tuple_shots;
        let a = build_tuple_prompt("Is there a truck?", "Yes.", &shots).unwrap();
        let b = build_tuple_prompt("Describe the image.", "A dog runs.", &shots).unwrap();
        let split = a.rfind(TARGET_MARKER).unwrap();
        assert_eq!(split, b.rfind(TARGET_MARKER).unwrap());
        assert_eq!(a[..split], b[..split]);
        let common = a.bytes().zip(b.bytes()).take_while(|(x, y)| x == y).count();
        assert!(common > split);
    }

    #[test]
    fn question_prompt() {
        let shots = Exemplars::bundled().question_shots;
        let one = build_question_prompt(&[tuple(1, Subcategory::Whole, "truck")], "Describe.", &shots).unwrap();
        assert!(one.contains("positively framed questions"));
        assert!(one.contains("output format: id | question"));

        let three = [
            tuple(1, Subcategory::Whole, "truck"),
            tuple(2, Subcategory::Whole, "street"),
            tuple(3, Subcategory::Part, "truck's wheel"),
        ];
        let prompt = build_question_prompt(&three, "Describe.", &shots).unwrap();
        let target = &prompt[prompt.rfind(TARGET_MARKER).unwrap()..];
        for t in &three {
            assert_eq!(target.matches(&t.render()).count(), 1);
        }
        assert_eq!(target.matches(" | entity - ").count(), 3);

        assert!(matches!(
            build_question_prompt(&[], "Describe.", &shots),
            Err(QueryGenError::EmptyTupleList)
        ));
    }
}
