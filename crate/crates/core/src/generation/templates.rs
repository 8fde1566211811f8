//! Prompt templates and their renderers.
//!
//! Every prompt is a system message plus a user message laid out as
//! `context`, blank line, `instruction` (and, for inference, blank line,
//! `question`). Template constants are embedded verbatim; slot filling never
//! rescans the inserted value.

use serde::{Deserialize, Serialize};

use crate::corpus::Passage;

pub const DEFAULT_SYSTEM: &str = "You are a helpful assistant.";

pub const ANSWER_GENERATION: &str = "Based on the context, generate several candidate spans within the passage that are likely to be answers to a question. The answers can be entities, verbs or even numbers. Make sure that the answers are different and diverse. Separate different candidate answers with a semicolon (';').";

pub const ANSWER_SLOT: &str = "{answer}";
pub const QUESTION_GENERATION: &str = "Based on the context, please generate a question that is relevant to the information provided. The question should stand alone and not refer back to the context explicitly. The question should be clear and understandable without needing the context. The answer to the question should be {answer}.";

pub const POLARITY_SLOT: &str = "{polarity}";
pub const CLAIM_GENERATION: &str =
    "Based on the context, please generate a claim that can be {polarity} by the context.";

pub const CLAIM_SLOT: &str = "{claim}";

/// Task instructions used at training and inference time.
pub mod instructions {
    pub const SHORT_SPAN: &str = "Answer the following question with a short span.";
    pub const MULTIPLE_CHOICE: &str = "Answer the following question by selecting one of the provided options with A, B, C, or D. Please answer with the capitalized alphabet only, without adding any extra phrase or period.";
    pub const YES_NO: &str = "Answer the following question with Yes or No.";
    pub const CLAIM_VERIFICATION: &str =
        "Answer the following question with Yes or No. Is the statement {claim} correct?";
    pub const SHORT_PHRASE: &str = "Answer the following question with a short phrase.";
    pub const OPEN_ENDED: &str = "Please give a full and complete answer for the question.";
}

/// Question wording wrapped around a generated claim.
pub const CLAIM_QUESTION: &str = "Is the statement {claim} correct?";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptMessages {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Supported,
    Refuted,
}

impl Polarity {
    pub fn word(self) -> &'static str {
        match self {
            Polarity::Supported => "supported",
            Polarity::Refuted => "refuted",
        }
    }
}

/// Replace the first occurrence of `slot` in `template` with `value`.
pub fn fill(template: &str, slot: &str, value: &str) -> String {
    match template.split_once(slot) {
        Some((head, tail)) => format!("{head}{value}{tail}"),
        None => template.to_owned(),
    }
}

/// `Title: {title}, Text: {text}`, or just `Text: {text}` when untitled.
pub fn context_block(title: &str, text: &str) -> String {
    if title.trim().is_empty() {
        format!("Text: {text}")
    } else {
        format!("Title: {title}, Text: {text}")
    }
}

fn messages(system: &str, user: String) -> PromptMessages {
    PromptMessages {
        system: system.to_owned(),
        user,
    }
}

/// Prompt builder carrying the system preamble for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompter {
    pub system: String,
}

impl Default for Prompter {
    fn default() -> Self {
        Self {
            system: DEFAULT_SYSTEM.to_owned(),
        }
    }
}

impl Prompter {
    pub fn answer_prompt(&self, passage: &Passage) -> PromptMessages {
        let ctx = context_block(&passage.title, &passage.text);
        messages(&self.system, format!("{ctx}\n\n{ANSWER_GENERATION}"))
    }

    pub fn question_prompt(&self, passage: &Passage, answer: &str) -> PromptMessages {
        let ctx = context_block(&passage.title, &passage.text);
        let instr = fill(QUESTION_GENERATION, ANSWER_SLOT, answer);
        messages(&self.system, format!("{ctx}\n\n{instr}"))
    }

    pub fn claim_prompt(&self, passage: &Passage, polarity: Polarity) -> PromptMessages {
        let ctx = context_block(&passage.title, &passage.text);
        let instr = fill(CLAIM_GENERATION, POLARITY_SLOT, polarity.word());
        messages(&self.system, format!("{ctx}\n\n{instr}"))
    }

    /// Numbered contexts in rank order, then the instruction, then the
    /// question. An empty question leaves the instruction as the final block.
    pub fn inference_prompt<'a, I>(
        &self,
        contexts: I,
        instruction: &str,
        question: &str,
    ) -> PromptMessages
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut user = String::new();
        for (i, (title, text)) in contexts.into_iter().enumerate() {
            if i > 0 {
                user.push('\n');
            }
            user.push_str(&format!("[{}] {}", i + 1, context_block(title, text)));
        }
        user.push_str("\n\n");
        user.push_str(instruction);
        if !question.is_empty() {
            user.push_str("\n\n");
            user.push_str(question);
        }
        messages(&self.system, user)
    }

    pub fn inference_prompt_passages(
        &self,
        contexts: &[&Passage],
        instruction: &str,
        question: &str,
    ) -> PromptMessages {
        self.inference_prompt(
            contexts.iter().map(|p| (p.title.as_str(), p.text.as_str())),
            instruction,
            question,
        )
    }
}
