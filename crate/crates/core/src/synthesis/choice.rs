//! Multiple-choice items whose distractors are other extracted answers.

use std::collections::HashSet;

use rand::seq::SliceRandom;

use crate::corpus::parse_passage_id;
use crate::seed;
use crate::text::normalize_answer;

use super::generate::QuestionOutcome;
use super::types::{CandidateAnswer, ChoiceOption, SyntheticExample, TaskType};

pub const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone)]
struct PoolEntry {
    passage_id: String,
    doc_id: String,
    span: String,
    norm: String,
}

/// Every candidate answer extracted from the corpus, in corpus order.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    entries: Vec<PoolEntry>,
}

impl CandidatePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend<'a>(&mut self, candidates: impl IntoIterator<Item = &'a CandidateAnswer>) {
        for c in candidates {
            let doc_id = parse_passage_id(&c.passage_id)
                .map(|(d, _)| d.to_owned())
                .unwrap_or_else(|_| c.passage_id.clone());
            self.entries.push(PoolEntry {
                passage_id: c.passage_id.clone(),
                doc_id,
                span: c.span.clone(),
                norm: normalize_answer(&c.span),
            });
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<'a> FromIterator<&'a CandidateAnswer> for CandidatePool {
    fn from_iter<T: IntoIterator<Item = &'a CandidateAnswer>>(iter: T) -> Self {
        let mut p = Self::new();
        p.extend(iter);
        p
    }
}

/// Why an item could not be built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TooFewDistractors {
    pub found: usize,
}

/// Draw three distractors (same passage, then same document, then the rest
/// of the corpus, uniformly within each tier), shuffle the four options and
/// record the gold letter. Everything random is keyed by `seed`.
pub fn make_multiple_choice(
    answer: &CandidateAnswer,
    question: &str,
    pool: &CandidatePool,
    seed: u64,
) -> Result<SyntheticExample, TooFewDistractors> {
    let gold_norm = normalize_answer(&answer.span);
    let doc_id = parse_passage_id(&answer.passage_id)
        .map(|(d, _)| d)
        .unwrap_or(&answer.passage_id);
    let mut rng = seed::rng(seed, &["multiple_choice"]);

    let mut chosen: Vec<&str> = Vec::with_capacity(3);
    let mut used: HashSet<&str> = HashSet::from([gold_norm.as_str()]);
    let tiers: [&dyn Fn(&PoolEntry) -> bool; 3] = [
        &|e| e.passage_id == answer.passage_id,
        &|e| e.passage_id != answer.passage_id && e.doc_id == doc_id,
        &|e| e.doc_id != doc_id,
    ];
    for in_tier in tiers {
        if chosen.len() == 3 {
            break;
        }
        let mut tier_seen = HashSet::new();
        let mut tier: Vec<&PoolEntry> = pool
            .entries
            .iter()
            .filter(|e| in_tier(e) && !e.norm.is_empty() && !used.contains(e.norm.as_str()))
            .filter(|e| tier_seen.insert(e.norm.as_str()))
            .collect();
        tier.shuffle(&mut rng);
        for e in tier.into_iter().take(3 - chosen.len()) {
            used.insert(&e.norm);
            chosen.push(&e.span);
        }
    }
    if chosen.len() < 3 {
        return Err(TooFewDistractors {
            found: chosen.len(),
        });
    }

    let mut texts: Vec<&str> = Vec::with_capacity(4);
    texts.push(&answer.span);
    texts.extend(chosen);
    texts.shuffle(&mut rng);
    let gold_pos = texts
        .iter()
        .position(|t| *t == answer.span)
        .expect("gold option present");
    let options = LETTERS
        .iter()
        .zip(texts)
        .map(|(&letter, text)| ChoiceOption {
            letter,
            text: text.to_owned(),
        })
        .collect();

    let mut ex = SyntheticExample::new(
        format!("{}/multiple_choice/{}", answer.passage_id, answer.ordinal),
        TaskType::MultipleChoice,
        question.to_owned(),
        LETTERS[gold_pos].to_string(),
        &answer.passage_id,
    );
    ex.options = Some(options);
    Ok(ex)
}

/// Multiple-choice example for one candidate, or a dropped one when the
/// question is unusable or the pool is too thin.
pub fn multiple_choice_example(
    answer: &CandidateAnswer,
    outcome: &QuestionOutcome,
    pool: &CandidatePool,
    run_seed: u64,
) -> SyntheticExample {
    let question = match outcome {
        QuestionOutcome::Question(q) => {
            let s = seed::derive(
                run_seed,
                &[&answer.passage_id, "mc", &answer.ordinal.to_string()],
            );
            if let Ok(ex) = make_multiple_choice(answer, q, pool, s) {
                return ex;
            }
            q.clone()
        }
        _ => String::new(),
    };
    SyntheticExample::new(
        format!("{}/multiple_choice/{}", answer.passage_id, answer.ordinal),
        TaskType::MultipleChoice,
        question,
        answer.span.clone(),
        &answer.passage_id,
    )
    .malformed()
}

/// Invariants every multiple-choice item must satisfy.
pub fn check_multiple_choice(ex: &SyntheticExample, source_span: &str) -> Result<(), String> {
    let opts = ex.options.as_ref().ok_or("no options")?;
    if opts.len() != 4 {
        return Err(format!("{} options", opts.len()));
    }
    if opts.iter().map(|o| o.letter).ne(LETTERS) {
        return Err("letters are not A-D in order".into());
    }
    let norms: HashSet<String> = opts.iter().map(|o| normalize_answer(&o.text)).collect();
    if norms.len() != 4 {
        return Err("options not pairwise distinct".into());
    }
    if opts.iter().filter(|o| o.text == source_span).count() != 1 {
        return Err("source span must appear exactly once".into());
    }
    if ex.gold_option_text() != Some(source_span) {
        return Err(format!(
            "gold {} does not point at the source span",
            ex.gold
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(pid: &str, span: &str, ordinal: usize) -> CandidateAnswer {
        CandidateAnswer {
            passage_id: pid.into(),
            span: span.into(),
            ordinal,
        }
    }

    #[test]
    fn forced_selection_of_three() {
        let gold = cand("d#0", "gold", 0);
        let pool: CandidatePool = [
            gold.clone(),
            cand("e#0", "one", 0),
            cand("f#0", "two", 0),
            cand("g#1", "three", 0),
        ]
        .iter()
        .collect();
        let ex = make_multiple_choice(&gold, "Q?", &pool, 11).unwrap();
        check_multiple_choice(&ex, "gold").unwrap();
        let mut texts: Vec<_> = ex.options.unwrap().into_iter().map(|o| o.text).collect();
        texts.sort();
        assert_eq!(texts, ["gold", "one", "three", "two"]);
    }

    #[test]
    fn degenerate_pool_dropped() {
        let gold = cand("d#0", "The Cat", 0);
        let pool: CandidatePool = [
            gold.clone(),
            cand("e#0", "cat", 0),
            cand("f#0", "the cat.", 0),
            cand("g#0", "CAT", 0),
        ]
        .iter()
        .collect();
        assert_eq!(
            make_multiple_choice(&gold, "Q?", &pool, 1).unwrap_err(),
            TooFewDistractors { found: 0 }
        );
    }

    #[test]
    fn same_seed_same_order() {
        let gold = cand("d#0", "alpha", 0);
        let pool: CandidatePool = ["beta", "gamma", "delta", "epsilon", "zeta"]
            .iter()
            .enumerate()
            .map(|(i, s)| cand(&format!("x#{i}"), s, 0))
            .chain([gold.clone()])
            .collect::<Vec<_>>()
            .iter()
            .collect();
        let a = make_multiple_choice(&gold, "Q?", &pool, 99).unwrap();
        let b = make_multiple_choice(&gold, "Q?", &pool, 99).unwrap();
        assert_eq!(a, b);
        let golds: HashSet<String> = (0..40)
            .map(|s| make_multiple_choice(&gold, "Q?", &pool, s).unwrap().gold)
            .collect();
        assert!(golds.len() > 1, "gold letter should vary with the seed");
    }

    #[test]
    fn tiers_prefer_same_passage_then_document() {
        let gold = cand("d#0", "gold", 0);
        let pool: CandidatePool = [
            gold.clone(),
            cand("d#0", "sibling", 1),
            cand("d#1", "cousin a", 0),
            cand("d#1", "cousin b", 1),
            cand("z#0", "stranger", 0),
        ]
        .iter()
        .collect();
        for s in 0..20 {
            let ex = make_multiple_choice(&gold, "Q?", &pool, s).unwrap();
            let texts: HashSet<_> = ex.options.unwrap().into_iter().map(|o| o.text).collect();
            assert!(
                texts.contains("sibling")
                    && texts.contains("cousin a")
                    && texts.contains("cousin b")
            );
            assert!(!texts.contains("stranger"));
        }
    }
}
