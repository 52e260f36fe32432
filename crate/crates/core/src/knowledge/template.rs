use serde::{Deserialize, Serialize};

use crate::error::{HptError, Result};

/// Question wording reused across datasets. The first `N_h` are taken.
pub const QUESTION_POOL: [&str; 8] = [
    "What does [CLASS] look like among all [TYPE]?",
    "What are the distinct features of [CLASS] for recognition among all [TYPE]?",
    "How can you identify [CLASS] in appearance among all [TYPE]?",
    "What are the visual characteristics that set [CLASS] apart from other [TYPE]?",
    "Describe the appearance of [CLASS] so it can be told apart from other [TYPE].",
    "What parts and colors are typical of [CLASS] among all [TYPE]?",
    "Which shapes and textures does [CLASS] show compared to other [TYPE]?",
    "What would a photo of [CLASS] show that other [TYPE] would not?",
];

/// Per-dataset instruction wording.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetTemplate {
    pub dataset_name: String,
    /// Category name with a modifier, e.g. `"a pet [X]"`.
    pub class_token_pattern: String,
    /// e.g. `"types of pets"`.
    pub type_token: String,
    pub questions: Vec<String>,
}

impl DatasetTemplate {
    /// Template using the first `n_h` questions of [`QUESTION_POOL`].
    pub fn with_default_questions(
        dataset_name: &str,
        class_token_pattern: &str,
        type_token: &str,
        n_h: usize,
    ) -> Result<Self> {
        if n_h == 0 || n_h > QUESTION_POOL.len() {
            return Err(HptError::Template(format!(
                "N_h must be between 1 and {}, got {n_h}",
                QUESTION_POOL.len()
            )));
        }
        let template = Self {
            dataset_name: dataset_name.into(),
            class_token_pattern: class_token_pattern.into(),
            type_token: type_token.into(),
            questions: QUESTION_POOL[..n_h].iter().map(|q| q.to_string()).collect(),
        };
        template.validate(n_h)?;
        Ok(template)
    }

    pub fn validate(&self, n_h: usize) -> Result<()> {
        if !self.class_token_pattern.contains("[X]") {
            return Err(HptError::Template(format!(
                "class token pattern {:?} has no [X] placeholder",
                self.class_token_pattern
            )));
        }
        if self.questions.len() != n_h {
            return Err(HptError::Template(format!(
                "{} question templates for N_h = {n_h}",
                self.questions.len()
            )));
        }
        if let Some(q) = self.questions.iter().find(|q| !q.contains("[CLASS]")) {
            return Err(HptError::Template(format!(
                "question {q:?} has no [CLASS] placeholder"
            )));
        }
        Ok(())
    }

    pub fn class_token(&self, class_name: &str) -> Result<String> {
        render_instruction(&self.class_token_pattern, class_name, &self.type_token)
    }

    /// The `index`-th coarse question for `class_name`.
    pub fn coarse_instruction(&self, index: usize, class_name: &str) -> Result<String> {
        let question = self
            .questions
            .get(index)
            .ok_or_else(|| HptError::Template(format!("no question template at index {index}")))?;
        render_instruction(question, &self.class_token(class_name)?, &self.type_token)
    }

    /// The coarse question with the closest categories appended.
    pub fn fine_instruction(
        &self,
        index: usize,
        class_name: &str,
        closest: &[String],
    ) -> Result<String> {
        let base = self.coarse_instruction(index, class_name)?;
        let names = closest
            .iter()
            .map(|c| self.class_token(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(append_comparison(&base, &names))
    }
}

/// Substitutes `[X]` and `[CLASS]` with `class` and `[TYPE]` with
/// `type_token`. A template naming no class slot is an error.
pub fn render_instruction(template: &str, class: &str, type_token: &str) -> Result<String> {
    if !template.contains("[X]") && !template.contains("[CLASS]") {
        return Err(HptError::Template(format!(
            "template {template:?} has neither an [X] nor a [CLASS] placeholder"
        )));
    }
    Ok(template
        .replace("[X]", class)
        .replace("[CLASS]", class)
        .replace("[TYPE]", type_token))
}

/// `"... among all birds?"` → `"... among all birds compared with a, b?"`.
/// Questions without a trailing `?` get the suffix at the very end.
pub fn append_comparison(instruction: &str, closest: &[String]) -> String {
    if closest.is_empty() {
        return instruction.to_string();
    }
    let suffix = format!(" compared with {}", closest.join(", "));
    match instruction.strip_suffix('?') {
        Some(body) => format!("{body}{suffix}?"),
        None => format!("{instruction}{suffix}"),
    }
}

pub fn summarize_instruction(class_token: &str, d1: &str, d2: &str) -> String {
    format!(
        "Please summarize the following two descriptions as an overall description of \
         {class_token} encompassing all relevant features within these descriptions: {d1}, {d2}."
    )
}

/// Asks for every relation format the corpus schema can hold, as strict JSON.
pub fn relation_instruction(description: &str) -> String {
    format!(
        "Extract the structured knowledge of the following description. Reply with JSON only, \
         as an object with keys \"entities\" (list of strings), \"attributes\" (list of strings), \
         \"e2e\" (list of [entity, entity] pairs), \"e2a\" (list of [entity, attribute] pairs) and \
         \"triples\" (list of objects with \"subject\", \"verb\" and \"object\"). \
         Description: {description}"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_pattern_substitution() {
        assert_eq!(
            render_instruction("a pet [X]", "Abyssinian", "types of pets").unwrap(),
            "a pet Abyssinian"
        );
        assert!(render_instruction("a pet", "Abyssinian", "types of pets").is_err());
    }

    #[test]
    fn coarse_question_uses_class_and_type_tokens() {
        let t = DatasetTemplate::with_default_questions("pets", "a pet [X]", "types of pets", 5)
            .unwrap();
        assert_eq!(
            t.coarse_instruction(0, "Abyssinian").unwrap(),
            "What does a pet Abyssinian look like among all types of pets?"
        );
    }

    #[test]
    fn fine_suffix_lists_every_closest_class() {
        let t = DatasetTemplate::with_default_questions("pets", "a pet [X]", "types of pets", 5)
            .unwrap();
        let closest = vec!["Bengal".to_string(), "Birman".to_string()];
        let fine = t.fine_instruction(1, "Abyssinian", &closest).unwrap();
        assert!(
            fine.ends_with(" compared with a pet Bengal, a pet Birman?"),
            "{fine}"
        );
        assert_ne!(fine, t.coarse_instruction(1, "Abyssinian").unwrap());
    }

    #[test]
    fn summarize_embeds_inputs_verbatim() {
        let s = summarize_instruction("a pet Abyssinian", "first text", "second text");
        assert!(s.starts_with("Please summarize the following two descriptions as an overall description of a pet Abyssinian"));
        assert!(s.ends_with("first text, second text."));
    }

    #[test]
    fn template_validation() {
        let mut t =
            DatasetTemplate::with_default_questions("pets", "a pet [X]", "types of pets", 5)
                .unwrap();
        assert!(t.validate(4).is_err());
        t.class_token_pattern = "a pet".into();
        assert!(t.validate(5).is_err());
        assert!(DatasetTemplate::with_default_questions("pets", "a pet [X]", "pets", 0).is_err());
    }
}
