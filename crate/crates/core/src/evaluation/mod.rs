//! Retrieval-augmented QA evaluation.
//!
//! Each item is answered from its top contexts at temperature 0 and scored
//! with the metrics of its task type:
//!
//! | task              | metrics      |
//! |-------------------|--------------|
//! | `short_span`      | `em`, `f1`   |
//! | `multiple_choice` | `accuracy`   |
//! | `yes_no`          | `accuracy`   |
//! | `open_ended`      | `rouge_l`    |

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::Passage;
use crate::generation::templates::instructions;
use crate::generation::{generate, Backend, GenerationConfig, Prompter};
use crate::retrieval::{PassageStore, Retriever};

pub use metrics::{
    exact_match, extract_choice, extract_yes_no, lcs_len, normalize, rouge_l, rouge_l_beta,
    rouge_l_tokens, token_f1,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no evaluation items")]
    NoItems,
    #[error("item {index}: {msg}")]
    BadItem { index: usize, msg: String },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    ShortSpan,
    MultipleChoice,
    YesNo,
    OpenEnded,
}

impl EvalTask {
    pub fn instruction(self) -> &'static str {
        match self {
            EvalTask::ShortSpan => instructions::SHORT_SPAN,
            EvalTask::MultipleChoice => instructions::MULTIPLE_CHOICE,
            EvalTask::YesNo => instructions::YES_NO,
            EvalTask::OpenEnded => instructions::OPEN_ENDED,
        }
    }
}

/// A context supplied with the item instead of retrieved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvidedContext {
    #[serde(default)]
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question: String,
    pub task_type: EvalTask,
    /// Answer text, or the option letter for multiple choice.
    pub gold: String,
    /// Option texts, lettered A, B, ... in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<Vec<ProvidedContext>>,
}

impl EvalItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        match (&self.options, self.task_type) {
            (Some(o), EvalTask::MultipleChoice) => {
                if !(2..=4).contains(&o.len()) {
                    return Err(format!("{} options, expected 2 to 4", o.len()));
                }
                let g = self.gold.trim();
                let ok = g.len() == 1
                    && g.chars().all(|c| {
                        ('A'..='D')
                            .take(o.len())
                            .any(|l| l.eq_ignore_ascii_case(&c))
                    });
                if !ok {
                    return Err(format!("gold {:?} is not an option letter", self.gold));
                }
            }
            (None, EvalTask::MultipleChoice) => {
                return Err("multiple_choice item without options".into())
            }
            (Some(_), t) => return Err(format!("{t:?} item must not have options")),
            (None, _) => {}
        }
        Ok(())
    }

    /// Question followed by `A. text` lines when there are options.
    pub fn rendered_question(&self) -> String {
        let mut q = self.question.clone();
        for (letter, text) in ('A'..='D').zip(self.options.iter().flatten()) {
            let _ = write!(q, "\n{letter}. {text}");
        }
        q
    }
}

pub fn load_items(path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    let file = fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.to_owned(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        item.validate().map_err(|msg| EvalError::Parse {
            path: path.to_owned(),
            msg: format!("line {}: {msg}", i + 1),
        })?;
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub context_budget: usize,
    /// Use contexts that come with an item instead of retrieving.
    pub use_provided_contexts: bool,
    pub rouge_beta: f64,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            context_budget: 10,
            use_provided_contexts: true,
            rouge_beta: 1.0,
            seed: 0,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub index: usize,
    pub task_type: EvalTask,
    pub prediction: Option<String>,
    /// Letter or yes/no pulled out of the prediction, where applicable.
    pub extracted: Option<String>,
    pub context_ids: Vec<String>,
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub errored: usize,
    /// Mean of each metric over the non-errored items that carry it.
    pub aggregates: BTreeMap<String, f64>,
    /// Slots for scores computed elsewhere (MAUVE, judge models).
    pub external: BTreeMap<String, Option<f64>>,
    pub items: Vec<ItemResult>,
}

impl EvalReport {
    fn from_items(items: Vec<ItemResult>) -> Self {
        let mut r = Self {
            n: items.len(),
            errored: items.iter().filter(|i| i.error.is_some()).count(),
            aggregates: BTreeMap::new(),
            external: [("mauve".to_owned(), None), ("judge".to_owned(), None)].into(),
            items,
        };
        r.aggregates = r.recompute_aggregates();
        r
    }

    /// Means recomputed from the per-item rows, summed in item order.
    pub fn recompute_aggregates(&self) -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for it in self.items.iter().filter(|i| i.error.is_none()) {
            for (k, v) in &it.scores {
                let e = sums.entry(k.clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        sums.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect()
    }

    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>8}", "metric", "mean");
        for (k, v) in &self.aggregates {
            let _ = writeln!(out, "{k:<10} {v:>8.4}");
        }
        let _ = writeln!(out, "items {}  errored {}", self.n, self.errored);
        out
    }
}

fn letter_index(c: char) -> usize {
    (c.to_ascii_uppercase() as u8 - b'A') as usize
}

/// Metric scores for one prediction.
pub fn score_item(
    item: &EvalItem,
    prediction: &str,
    rouge_beta: f64,
) -> (Option<String>, BTreeMap<String, f64>) {
    let mut scores = BTreeMap::new();
    let extracted = match item.task_type {
        EvalTask::ShortSpan => {
            scores.insert("em".into(), exact_match(prediction, &item.gold));
            scores.insert("f1".into(), token_f1(prediction, &item.gold));
            None
        }
        EvalTask::OpenEnded => {
            scores.insert(
                "rouge_l".into(),
                rouge_l_beta(prediction, &item.gold, rouge_beta),
            );
            None
        }
        EvalTask::MultipleChoice => {
            let options = item.options.as_deref().unwrap_or_default();
            let got = extract_choice(prediction, options);
            let gold = item.gold.trim().chars().next().map(letter_index);
            let hit = got.is_some_and(|c| Some(letter_index(c)) == gold);
            scores.insert("accuracy".into(), if hit { 1.0 } else { 0.0 });
            got.map(String::from)
        }
        EvalTask::YesNo => {
            let got = extract_yes_no(prediction);
            let hit = got.is_some_and(|g| extract_yes_no(&item.gold) == Some(g));
            scores.insert("accuracy".into(), if hit { 1.0 } else { 0.0 });
            got.map(String::from)
        }
    };
    (extracted, scores)
}

fn run_item(
    index: usize,
    item: &EvalItem,
    retriever: &dyn Retriever,
    store: &PassageStore,
    backend: &dyn Backend,
    prompter: &Prompter,
    cfg: &EvalConfig,
) -> ItemResult {
    let mut result = ItemResult {
        index,
        task_type: item.task_type,
        prediction: None,
        extracted: None,
        context_ids: Vec::new(),
        scores: BTreeMap::new(),
        error: None,
    };
    let question = item.rendered_question();
    let messages = match item.contexts.as_ref().filter(|_| cfg.use_provided_contexts) {
        Some(ctx) => prompter.inference_prompt(
            ctx.iter()
                .take(cfg.context_budget)
                .map(|c| (c.title.as_str(), c.text.as_str())),
            item.task_type.instruction(),
            &question,
        ),
        None => {
            let hits = match retriever.retrieve(&item.question, cfg.context_budget) {
                Ok(h) => h,
                Err(e) => {
                    result.error = Some(format!("retrieval: {e}"));
                    return result;
                }
            };
            let passages: Vec<&Passage> = hits
                .iter()
                .filter_map(|h| store.get(&h.passage_id))
                .collect();
            result.context_ids = passages.iter().map(|p| p.passage_id.clone()).collect();
            prompter.inference_prompt_passages(&passages, item.task_type.instruction(), &question)
        }
    };
    let gen_cfg = GenerationConfig::inference().with_seed(cfg.seed);
    match generate(&messages, &gen_cfg, backend) {
        Ok(r) => {
            let prediction = r.text.trim().to_owned();
            let (extracted, scores) = score_item(item, &prediction, cfg.rouge_beta);
            result.prediction = Some(prediction);
            result.extracted = extracted;
            result.scores = scores;
        }
        Err(e) => {
            warn!(item = index, error = %e, "generation failed");
            result.error = Some(e.to_string());
        }
    }
    result
}

/// Answer and score every item. Items run in parallel on up to
/// `max_in_flight` threads; the report keeps input order.
pub fn evaluate(
    items: &[EvalItem],
    retriever: &dyn Retriever,
    store: &PassageStore,
    backend: &dyn Backend,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    use rayon::prelude::*;

    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    for (index, it) in items.iter().enumerate() {
        it.validate()
            .map_err(|msg| EvalError::BadItem { index, msg })?;
    }
    let prompter = Prompter::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<ItemResult> = pool.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, it)| run_item(i, it, retriever, store, backend, &prompter, cfg))
            .collect()
    });
    Ok(EvalReport::from_items(results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::{FnBackend, GenerationError, MockBackend};
    use crate::retrieval::Bm25Index;

    fn store() -> PassageStore {
        PassageStore::new(vec![Passage {
            passage_id: "d#0".into(),
            doc_id: "d".into(),
            title: "Lungs".into(),
            text: "The Alveoli exchange oxygen.".into(),
            start_token: 0,
            token_count: 4,
        }])
    }

    fn item(task: EvalTask, gold: &str, options: Option<&[&str]>) -> EvalItem {
        EvalItem {
            question: "Where is oxygen exchanged?".into(),
            task_type: task,
            gold: gold.into(),
            options: options.map(|o| o.iter().map(|s| s.to_string()).collect()),
            contexts: None,
        }
    }

    #[test]
    fn echoing_gold_scores_full_marks() {
        let st = store();
        let idx = Bm25Index::build(st.passages()).unwrap();
        let items = vec![
            item(EvalTask::YesNo, "Yes", None),
            item(EvalTask::ShortSpan, "Yes", None),
        ];
        let echo = FnBackend::new(
            |_: &crate::generation::PromptMessages, _: &GenerationConfig| "Yes".to_owned(),
        );
        let r = evaluate(&items, &idx, &st, &echo, &EvalConfig::default()).unwrap();
        assert_eq!(r.aggregates["accuracy"], 1.0);
        assert_eq!(r.aggregates["em"], 1.0);
        assert_eq!(r.aggregates["f1"], 1.0);
        assert_eq!(r.items[0].context_ids, ["d#0"]);
        assert_eq!(r.recompute_aggregates(), r.aggregates);
    }

    #[test]
    fn failures_are_excluded_and_counted() {
        let st = store();
        let idx = Bm25Index::build(st.passages()).unwrap();
        let items = vec![
            item(EvalTask::ShortSpan, "alveoli", None),
            item(EvalTask::OpenEnded, "x", None),
        ];
        let flaky = FnBackend::new(
            |m: &crate::generation::PromptMessages, _: &GenerationConfig| {
                if m.user.contains(instructions::OPEN_ENDED) {
                    String::new()
                } else {
                    "the alveoli".into()
                }
            },
        );
        let r = evaluate(&items, &idx, &st, &flaky, &EvalConfig::default()).unwrap();
        assert_eq!(r.errored, 1);
        assert!(r.items[1]
            .error
            .as_deref()
            .unwrap()
            .contains(&GenerationError::EmptyOutput { attempt: 1 }.to_string()));
        assert!(!r.aggregates.contains_key("rouge_l"));
        assert_eq!(r.aggregates["em"], 1.0);
    }

    #[test]
    fn mock_is_deterministic_and_mc_uses_letters() {
        let st = store();
        let idx = Bm25Index::build(st.passages()).unwrap();
        let items: Vec<_> = (0..12)
            .map(|i| {
                let mut it = item(
                    EvalTask::MultipleChoice,
                    "B",
                    Some(&["lungs", "alveoli", "heart", "liver"]),
                );
                it.question = format!("Question {i}?");
                it
            })
            .collect();
        let mock = MockBackend::default();
        let cfg = EvalConfig {
            max_in_flight: 4,
            ..EvalConfig::default()
        };
        let a = evaluate(&items, &idx, &st, &mock, &cfg).unwrap();
        let b = evaluate(
            &items,
            &idx,
            &st,
            &mock,
            &EvalConfig {
                max_in_flight: 1,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.items.iter().all(|i| i.extracted.is_some()));
        assert!(a.summary_table().contains("accuracy"));
    }

    #[test]
    fn provided_contexts_skip_retrieval() {
        let st = store();
        let idx = Bm25Index::build(st.passages()).unwrap();
        let mut it = item(EvalTask::ShortSpan, "Mitochondria", None);
        it.contexts = Some(vec![ProvidedContext {
            title: String::new(),
            text: "Mitochondria make ATP.".into(),
        }]);
        let r = evaluate(
            &[it],
            &idx,
            &st,
            &MockBackend::default(),
            &EvalConfig::default(),
        )
        .unwrap();
        assert!(r.items[0].context_ids.is_empty());
        assert_eq!(r.items[0].prediction.as_deref(), Some("Mitochondria"));
    }

    #[test]
    fn item_validation() {
        assert!(item(EvalTask::MultipleChoice, "B", None)
            .validate()
            .is_err());
        assert!(item(EvalTask::YesNo, "Yes", Some(&["a", "b"]))
            .validate()
            .is_err());
        assert!(item(EvalTask::MultipleChoice, "D", Some(&["a", "b", "c"]))
            .validate()
            .is_err());
        assert!(item(EvalTask::MultipleChoice, "c", Some(&["a", "b", "c"]))
            .validate()
            .is_ok());
    }
}
