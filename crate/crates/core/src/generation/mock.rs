//! Deterministic in-process generator.
//!
//! The mock recognizes which template produced a prompt and answers in a
//! fixed shape, so the whole pipeline can run without a model:
//!
//! * answer prompts: capitalized spans from the first `answer_window`
//!   passage tokens, joined by `"; "`;
//! * question prompts: `What can you tell me about {answer}?`;
//! * claim prompts: the passage's first sentence, negated for `refuted`;
//! * inference prompts: a letter, `Yes`/`No` or a span picked from the first
//!   context, chosen by hashing the prompt and seed.
//!
//! Output is a pure function of the rendered messages and the seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendKind, Completion, GenerationConfig, GenerationError};
use super::templates::{instructions, PromptMessages, ANSWER_GENERATION};

const QUESTION_MARKER: &str = "The answer to the question should be ";
const CLAIM_MARKER: &str = "please generate a claim that can be ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockStyle {
    /// Questions embed the answer, claims restate the passage.
    #[default]
    Grounded,
    /// Questions and claims made of tokens that occur in no corpus.
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockBackend {
    pub answer_window: usize,
    pub style: MockStyle,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self {
            answer_window: 64,
            style: MockStyle::Grounded,
        }
    }
}

impl MockBackend {
    pub fn new(style: MockStyle) -> Self {
        Self {
            style,
            ..Self::default()
        }
    }

    /// The completion text for `messages` under `seed`.
    pub fn respond(&self, messages: &PromptMessages, seed: Option<u64>) -> String {
        let user = messages.user.as_str();
        let h = prompt_hash(messages, seed);
        if user.ends_with(ANSWER_GENERATION) {
            let ctx = generation_context(user);
            let spans = capitalized_spans(ctx, self.answer_window);
            return if spans.is_empty() {
                ctx.split_whitespace()
                    .next()
                    .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_owned())
                    .unwrap_or_default()
            } else {
                spans.join("; ")
            };
        }
        if let Some(pos) = user.rfind(QUESTION_MARKER) {
            let answer = user[pos + QUESTION_MARKER.len()..]
                .strip_suffix('.')
                .unwrap_or_default();
            return match self.style {
                MockStyle::Grounded => format!("What can you tell me about {answer}?"),
                MockStyle::Irrelevant => format!("{}?", nonsense(h, 3)),
            };
        }
        if let Some(pos) = user.rfind(CLAIM_MARKER) {
            let refuted = user[pos + CLAIM_MARKER.len()..].starts_with("refuted");
            if self.style == MockStyle::Irrelevant {
                return format!("{}.", nonsense(h, 6));
            }
            let first = generation_context(user)
                .split(['.', '!', '?'])
                .map(str::trim)
                .find(|s| !s.is_empty())
                .unwrap_or_default();
            return if refuted {
                format!("It is not true that {}.", lower_first(first))
            } else {
                format!("{first}.")
            };
        }
        self.infer(user, h)
    }

    fn infer(&self, user: &str, h: u64) -> String {
        if user.contains(instructions::MULTIPLE_CHOICE) {
            return ["A", "B", "C", "D"][(h % 4) as usize].to_owned();
        }
        if user.contains(instructions::YES_NO) {
            return if h.is_multiple_of(2) { "Yes" } else { "No" }.to_owned();
        }
        let first = user
            .lines()
            .next()
            .and_then(|l| l.split_once("Text: ").map(|(_, t)| t))
            .unwrap_or(user);
        capitalized_spans(first, self.answer_window)
            .into_iter()
            .next()
            .unwrap_or_else(|| {
                first
                    .split_whitespace()
                    .take(3)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(
        &self,
        messages: &PromptMessages,
        cfg: &GenerationConfig,
    ) -> Result<Completion, GenerationError> {
        Ok(Completion {
            text: self.respond(messages, cfg.seed),
            attempt: 1,
        })
    }
}

fn prompt_hash(m: &PromptMessages, seed: Option<u64>) -> u64 {
    let mut d = Sha256::new();
    d.update(m.system.as_bytes());
    d.update([0]);
    d.update(m.user.as_bytes());
    d.update([0]);
    d.update(seed.unwrap_or(0).to_le_bytes());
    let out = d.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

fn nonsense(mut h: u64, words: usize) -> String {
    let mut out = Vec::with_capacity(words);
    for i in 0..words {
        out.push(format!("zqx{:07x}", h & 0xfff_ffff));
        h = h.rotate_left(17) ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1));
    }
    let mut s = out.join(" ");
    s.replace_range(0..1, "Z");
    s
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Passage text from a `Title: ..., Text: ...\n\n<instruction>` prompt.
fn generation_context(user: &str) -> &str {
    let ctx = user.rsplit_once("\n\n").map_or(user, |(c, _)| c);
    if let Some(rest) = ctx.strip_prefix("Text: ") {
        return rest;
    }
    ctx.split_once(", Text: ").map_or(ctx, |(_, t)| t)
}

/// Runs of capitalized tokens among the first `window` tokens, with
/// surrounding punctuation trimmed. Every span is a substring of `text`.
pub fn capitalized_spans(text: &str, window: usize) -> Vec<String> {
    let mut spans = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    let flush = |run: &mut Vec<&str>, spans: &mut Vec<String>| {
        if !run.is_empty() {
            spans.push(run.join(" "));
            run.clear();
        }
    };
    for tok in text.split_whitespace().take(window) {
        let core = tok.trim_matches(|c: char| !c.is_alphanumeric());
        let capital = core.chars().next().is_some_and(char::is_uppercase);
        if !capital {
            flush(&mut run, &mut spans);
            continue;
        }
        let leading = !tok.starts_with(core);
        let trailing = !tok.ends_with(core);
        if leading {
            flush(&mut run, &mut spans);
        }
        run.push(core);
        if trailing {
            flush(&mut run, &mut spans);
        }
    }
    flush(&mut run, &mut spans);
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::generation::templates::{Polarity, Prompter};

    fn passage() -> Passage {
        Passage {
            passage_id: "ross#0".into(),
            doc_id: "ross".into(),
            title: "Histology Ross".into(),
            text: "Adipose tissue stores energy. The body uses Lipid Droplets, and (Triglycerides) too.".into(),
            start_token: 0,
            token_count: 12,
        }
    }

    #[test]
    fn spans_are_substrings() {
        let p = passage();
        let spans = capitalized_spans(&p.text, 64);
        assert_eq!(spans, ["Adipose", "The", "Lipid Droplets", "Triglycerides"]);
        for s in spans {
            assert!(p.text.contains(&s));
        }
    }

    #[test]
    fn answer_prompt_reply() {
        let m =
            MockBackend::default().respond(&Prompter::default().answer_prompt(&passage()), Some(1));
        assert_eq!(m, "Adipose; The; Lipid Droplets; Triglycerides");
    }

    #[test]
    fn question_embeds_answer() {
        let pr = Prompter::default();
        let q = MockBackend::default()
            .respond(&pr.question_prompt(&passage(), "Lipid Droplets"), Some(3));
        assert_eq!(q, "What can you tell me about Lipid Droplets?");
        let nq = MockBackend::new(MockStyle::Irrelevant)
            .respond(&pr.question_prompt(&passage(), "Lipid Droplets"), Some(3));
        assert!(nq.ends_with('?') && nq.starts_with("Zqx"));
    }

    #[test]
    fn claims_follow_polarity() {
        let pr = Prompter::default();
        let mock = MockBackend::default();
        assert_eq!(
            mock.respond(&pr.claim_prompt(&passage(), Polarity::Supported), None),
            "Adipose tissue stores energy."
        );
        assert_eq!(
            mock.respond(&pr.claim_prompt(&passage(), Polarity::Refuted), None),
            "It is not true that adipose tissue stores energy."
        );
    }

    #[test]
    fn deterministic_in_messages_and_seed() {
        let pr = Prompter::default();
        let p = passage();
        let m = pr.inference_prompt_passages(&[&p], instructions::MULTIPLE_CHOICE, "Q?");
        let mock = MockBackend::default();
        assert_eq!(mock.respond(&m, Some(7)), mock.respond(&m, Some(7)));
        let letters: std::collections::BTreeSet<_> =
            (0..32).map(|s| mock.respond(&m, Some(s))).collect();
        assert!(letters
            .iter()
            .all(|l| ["A", "B", "C", "D"].contains(&l.as_str())));
        assert!(letters.len() > 1);
    }
}
