//! The full synthesis run over a corpus.
//!
//! 1. Passages are shuffled once under the run seed.
//! 2. Answers are extracted from every passage; the union forms the
//!    distractor pool for multiple choice.
//! 3. Passages are then visited in shuffled order. Generation for a batch of
//!    passages runs in parallel, but results are committed strictly in order,
//!    so the output does not depend on thread timing or batch size.
//!
//! Each candidate answer feeds one short-span *or* one multiple-choice item:
//! whichever open type is furthest behind its quota. Each passage yields one
//! claim while the claim quota is open, alternating supported and refuted.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::corpus::Passage;
use crate::generation::{GenerationError, Polarity};
use crate::retrieval::{PassageStore, RetrievalError, Retriever};
use crate::seed;

use super::choice::{multiple_choice_example, CandidatePool};
use super::filter::{filter_and_assemble, FilterConfig};
use super::generate::{
    extract_answers, generate_claim, generate_short_span, short_span_example, Extraction,
    Generator, QuestionOutcome,
};
use super::types::{FilterStatus, Quotas, SynthesisReport, SyntheticExample, TaskType};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("synthesis needs at least one passage")]
    EmptyCorpus,
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("round-trip filter aborted: {0}")]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub quotas: Quotas,
    pub m_max: usize,
    pub filter: FilterConfig,
    pub context_budget: usize,
    pub reject_copies: bool,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            quotas: Quotas::LLAMA,
            m_max: 5,
            filter: FilterConfig::default(),
            context_budget: 10,
            reject_copies: true,
            seed: 0,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stage2Output {
    /// Kept examples in commit order.
    pub examples: Vec<SyntheticExample>,
    /// Dropped examples in commit order.
    pub rejects: Vec<SyntheticExample>,
    pub report: SynthesisReport,
}

/// Generation results for one passage, before any quota bookkeeping.
struct PassageWork {
    questions: Vec<QuestionOutcome>,
    claim: Option<SyntheticExample>,
}

struct Tally {
    quotas: Quotas,
    kept: [usize; 3],
}

impl Tally {
    fn idx(t: TaskType) -> usize {
        t as usize
    }

    fn open(&self, t: TaskType) -> bool {
        self.kept[Self::idx(t)] < self.quotas.get(t)
    }

    fn all_met(&self) -> bool {
        TaskType::ALL.iter().all(|&t| !self.open(t))
    }

    /// Open question type with the smallest kept/quota fraction; short span
    /// wins ties.
    fn question_type(&self) -> Option<TaskType> {
        let s = TaskType::ShortSpan;
        let m = TaskType::MultipleChoice;
        match (self.open(s), self.open(m)) {
            (false, false) => None,
            (true, false) => Some(s),
            (false, true) => Some(m),
            (true, true) => {
                let ks = self.kept[Self::idx(s)] * self.quotas.get(m);
                let km = self.kept[Self::idx(m)] * self.quotas.get(s);
                Some(if km < ks { m } else { s })
            }
        }
    }
}

fn thread_pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .expect("thread pool")
}

pub fn run_stage2(
    store: &PassageStore,
    gen: &Generator<'_>,
    retriever: &dyn Retriever,
    cfg: &SynthesisConfig,
) -> Result<Stage2Output, SynthesisError> {
    use rayon::prelude::*;

    if store.is_empty() {
        return Err(SynthesisError::EmptyCorpus);
    }
    let mut out = Stage2Output::default();
    out.report.quotas = cfg.quotas;
    if cfg.quotas.is_zero() {
        return Ok(out);
    }

    let mut order: Vec<&Passage> = store.passages().iter().collect();
    order.shuffle(&mut seed::rng(cfg.seed, &["passage-order"]));

    let pool = thread_pool(cfg.max_in_flight);
    let extractions: Vec<Extraction> = pool.install(|| {
        store
            .passages()
            .par_iter()
            .map(|p| extract_answers(gen, p, cfg.m_max, cfg.seed))
            .collect::<Result<_, _>>()
    })?;
    let candidates: CandidatePool = extractions.iter().flat_map(|e| &e.candidates).collect();
    let by_id: std::collections::HashMap<&str, &Extraction> = store
        .passages()
        .iter()
        .map(|p| p.passage_id.as_str())
        .zip(&extractions)
        .collect();
    info!(
        passages = store.len(),
        candidates = candidates.len(),
        "answer extraction done"
    );

    let mut tally = Tally {
        quotas: cfg.quotas,
        kept: [0; 3],
    };
    let batch = (cfg.max_in_flight * 4).max(1);
    let mut position = 0usize;
    'batches: for chunk in order.chunks(batch) {
        let want_questions = tally.question_type().is_some();
        let want_claims = tally.open(TaskType::ClaimVerification);
        let base = position;
        let work: Vec<PassageWork> = pool.install(|| {
            chunk
                .par_iter()
                .enumerate()
                .map(|(i, p)| -> Result<PassageWork, GenerationError> {
                    let ext = by_id[p.passage_id.as_str()];
                    let questions = if want_questions {
                        ext.candidates
                            .iter()
                            .map(|a| generate_short_span(gen, p, a, cfg.seed, cfg.reject_copies))
                            .collect::<Result<_, _>>()?
                    } else {
                        Vec::new()
                    };
                    let claim = if want_claims {
                        let polarity = if (base + i).is_multiple_of(2) {
                            Polarity::Supported
                        } else {
                            Polarity::Refuted
                        };
                        Some(generate_claim(gen, p, polarity, cfg.seed)?)
                    } else {
                        None
                    };
                    Ok(PassageWork { questions, claim })
                })
                .collect::<Result<_, _>>()
        })?;

        for (passage, work) in chunk.iter().zip(work) {
            position += 1;
            out.report.passages_visited += 1;
            let ext = by_id[passage.passage_id.as_str()];
            if ext.is_malformed() {
                out.report.extraction_malformed += 1;
            }
            for (answer, outcome) in ext.candidates.iter().zip(&work.questions) {
                let Some(kind) = tally.question_type() else {
                    break;
                };
                let ex = match kind {
                    TaskType::MultipleChoice => {
                        multiple_choice_example(answer, outcome, &candidates, cfg.seed)
                    }
                    _ => short_span_example(answer, outcome),
                };
                commit(ex, retriever, store, cfg, &mut tally, &mut out)?;
            }
            if let Some(claim) = work.claim {
                if tally.open(TaskType::ClaimVerification) {
                    commit(claim, retriever, store, cfg, &mut tally, &mut out)?;
                }
            }
            if tally.all_met() {
                break 'batches;
            }
        }
    }

    for t in TaskType::ALL {
        let (kept, quota) = (tally.kept[Tally::idx(t)], cfg.quotas.get(t));
        if kept < quota {
            let msg =
                format!("{t}: quota {quota} unreachable, kept {kept} after exhausting passages");
            warn!("{msg}");
            out.report.warnings.push(msg);
        }
    }
    out.report.finish();
    Ok(out)
}

fn commit(
    ex: SyntheticExample,
    retriever: &dyn Retriever,
    store: &PassageStore,
    cfg: &SynthesisConfig,
    tally: &mut Tally,
    out: &mut Stage2Output,
) -> Result<(), SynthesisError> {
    let ex = filter_and_assemble(ex, retriever, store, &cfg.filter, cfg.context_budget)?;
    let t = ex.task_type;
    out.report.counters_mut(t).record(ex.filter_status);
    if ex.filter_status == FilterStatus::Kept {
        tally.kept[Tally::idx(t)] += 1;
        out.examples.push(ex);
    } else {
        out.rejects.push(ex);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chunk_all, ChunkConfig, Document};
    use crate::generation::MockBackend;
    use crate::retrieval::Bm25Index;

    fn store() -> PassageStore {
        let docs: Vec<Document> = [
            ("heart", "The Heart pumps blood through Arteries and Veins. Cardiac Muscle contracts rhythmically under control of the Sinoatrial Node."),
            ("lung", "The Lungs exchange Oxygen and Carbon Dioxide in the Alveoli. The Diaphragm drives breathing."),
            ("kidney", "Each Kidney filters blood through millions of Nephrons. The Loop of Henle concentrates urine."),
            ("liver", "The Liver produces Bile, stores Glycogen and detoxifies Ammonia into Urea."),
            ("brain", "The Cerebellum coordinates movement while the Hippocampus supports Memory formation."),
            ("bone", "Osteoblasts build bone matrix and Osteoclasts resorb it. Calcium and Phosphate mineralize the matrix."),
        ]
        .iter()
        .map(|(id, body)| Document {
            doc_id: id.to_string(),
            title: id.to_string(),
            body: body.to_string(),
            source: "test".into(),
        })
        .collect();
        PassageStore::new(
            chunk_all(
                &docs,
                ChunkConfig {
                    window: 12,
                    stride: 12,
                },
            )
            .unwrap(),
        )
    }

    fn run(quotas: Quotas, seed: u64) -> Stage2Output {
        let st = store();
        let idx = Bm25Index::build(st.passages()).unwrap();
        let mock = MockBackend::default();
        let gen = Generator::new(&mock);
        let cfg = SynthesisConfig {
            quotas,
            seed,
            max_in_flight: 3,
            ..SynthesisConfig::default()
        };
        run_stage2(&st, &gen, &idx, &cfg).unwrap()
    }

    #[test]
    fn zero_quotas_do_nothing() {
        let out = run(Quotas::default(), 1);
        assert!(out.examples.is_empty());
        assert_eq!(out.report.total_generated(), 0);
        assert_eq!(out.report.passages_visited, 0);
    }

    #[test]
    fn meets_small_quotas_and_balances() {
        let q = Quotas {
            short_span: 6,
            multiple_choice: 3,
            claim_verification: 4,
        };
        let out = run(q, 7);
        for t in TaskType::ALL {
            let c = out.report.counters(t);
            assert!(c.balanced());
            assert_eq!(c.kept, q.get(t), "{t}: {:?}", out.report);
            assert_eq!(
                out.examples.iter().filter(|e| e.task_type == t).count(),
                c.kept
            );
        }
        assert!(out.report.warnings.is_empty());
        assert!(out.examples.iter().all(|e| !e.context_ids.is_empty()));
        let claims: Vec<_> = out
            .examples
            .iter()
            .chain(&out.rejects)
            .filter_map(|e| e.polarity)
            .collect();
        assert!(claims.contains(&Polarity::Supported) && claims.contains(&Polarity::Refuted));
    }

    #[test]
    fn unreachable_quota_warns() {
        let out = run(
            Quotas {
                short_span: 10_000,
                multiple_choice: 0,
                claim_verification: 0,
            },
            3,
        );
        assert_eq!(out.report.warnings.len(), 1);
        assert_eq!(out.report.passages_visited, store().len());
    }

    #[test]
    fn same_seed_same_dataset() {
        let q = Quotas {
            short_span: 5,
            multiple_choice: 3,
            claim_verification: 3,
        };
        assert_eq!(run(q, 42), run(q, 42));
    }
}
