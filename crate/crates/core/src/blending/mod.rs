//! Dataset blending and loss-masked training export.

mod apportion;
mod export;
mod records;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::templates::instructions;

pub use apportion::apportion;
pub use export::{export_jsonl, manifest_path, read_records, Manifest};
pub use records::{
    instantiate_instruction, load_external, synthetic_pool, training_record, Message, RecordMeta,
    Role, TrainingRecord,
};

#[derive(Debug, Error)]
pub enum BlendError {
    #[error("blend ratios sum to {0}, expected 1")]
    RatioSum(f64),
    #[error("entry {name:?}: ratio {ratio} outside [0, 1]")]
    BadRatio { name: String, ratio: f64 },
    #[error("entry {0:?} has a positive ratio but an empty pool")]
    EmptyPool(String),
    #[error("{entries} entries but {pools} pools")]
    PoolMismatch { entries: usize, pools: usize },
    #[error("no blend entries left")]
    NoEntries,
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendSource {
    SyntheticShortSpan,
    SyntheticMc,
    SyntheticClaim,
    ExternalFile,
}

impl BlendSource {
    pub fn task_type(self) -> Option<crate::synthesis::TaskType> {
        use crate::synthesis::TaskType;
        match self {
            BlendSource::SyntheticShortSpan => Some(TaskType::ShortSpan),
            BlendSource::SyntheticMc => Some(TaskType::MultipleChoice),
            BlendSource::SyntheticClaim => Some(TaskType::ClaimVerification),
            BlendSource::ExternalFile => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendEntry {
    pub name: String,
    pub source: BlendSource,
    pub ratio: f64,
    pub instruction: String,
    /// Training-record jsonl for external entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

const RATIO_TOLERANCE: f64 = 1e-9;

fn entry(name: &str, source: BlendSource, ratio: f64, instruction: &str) -> BlendEntry {
    BlendEntry {
        name: name.to_owned(),
        source,
        ratio,
        instruction: instruction.to_owned(),
        path: None,
    }
}

fn external(name: &str, ratio: f64, instruction: &str) -> BlendEntry {
    entry(name, BlendSource::ExternalFile, ratio, instruction)
}

const WEBGLM: &str = "Please give a full and complete answer for the question using only the provided search results (some of which might be irrelevant) and cite them properly. Use an unbiased and journalistic tone. When citing several search results, use [1][2][3].";
const TATQA_ARITHMETIC: &str =
    "Answer the following question with a number from context or the math arithmetic using +,-,*, or /.";
const TATQA_OTHERS: &str =
    "Answer the following question with a short span, or a full and complete answer.";

/// Second-stage mixture: the three pseudo-labeled task types plus the
/// general-domain datasets they were blended with. External entries carry no
/// path; attach files before blending or they are dropped by
/// [`resolve_blend`].
pub fn default_blend() -> Vec<BlendEntry> {
    use instructions::*;
    vec![
        entry(
            "short_span_qa",
            BlendSource::SyntheticShortSpan,
            0.2625,
            SHORT_SPAN,
        ),
        entry(
            "multiple_choice_qa",
            BlendSource::SyntheticMc,
            0.0875,
            MULTIPLE_CHOICE,
        ),
        entry(
            "claim_verification",
            BlendSource::SyntheticClaim,
            0.175,
            CLAIM_VERIFICATION,
        ),
        external("chatqa_sft", 0.12, ""),
        external("drop", 0.04, SHORT_SPAN),
        external("narrativeqa", 0.04, SHORT_SPAN),
        external("quoref", 0.015, SHORT_SPAN),
        external("ropes", 0.015, SHORT_SPAN),
        external("squad1.1", 0.035, SHORT_SPAN),
        external("squad2.0", 0.05, SHORT_SPAN),
        external("openbookqa", 0.005, MULTIPLE_CHOICE),
        external("logiqa", 0.006, MULTIPLE_CHOICE),
        external("nq", 0.04, SHORT_PHRASE),
        external("tatqa_arithmetic", 0.034, TATQA_ARITHMETIC),
        external("tatqa_others", 0.013, TATQA_OTHERS),
        external("webglm", 0.023, WEBGLM),
        external("strategyqa", 0.006, YES_NO),
        external("boolq", 0.013, YES_NO),
        external("faviq", 0.01, CLAIM_VERIFICATION),
        external("fever", 0.01, CLAIM_VERIFICATION),
    ]
}

pub fn validate_entries(entries: &[BlendEntry]) -> Result<(), BlendError> {
    if entries.is_empty() {
        return Err(BlendError::NoEntries);
    }
    for e in entries {
        if !(0.0..=1.0).contains(&e.ratio) {
            return Err(BlendError::BadRatio {
                name: e.name.clone(),
                ratio: e.ratio,
            });
        }
    }
    let sum: f64 = entries.iter().map(|e| e.ratio).sum();
    if (sum - 1.0).abs() > RATIO_TOLERANCE {
        return Err(BlendError::RatioSum(sum));
    }
    Ok(())
}

/// Drop external entries without a file and rescale the rest to sum to 1.
/// Returns the surviving entries and one warning per adjustment.
pub fn resolve_blend(
    entries: Vec<BlendEntry>,
) -> Result<(Vec<BlendEntry>, Vec<String>), BlendError> {
    let mut warnings = Vec::new();
    let (kept, dropped): (Vec<_>, Vec<_>) = entries
        .into_iter()
        .partition(|e| e.source != BlendSource::ExternalFile || e.path.is_some());
    if !dropped.is_empty() {
        let names: Vec<&str> = dropped.iter().map(|d| d.name.as_str()).collect();
        warnings.push(format!(
            "dropping {} external entries with no file configured: {}",
            names.len(),
            names.join(", ")
        ));
    }
    let sum: f64 = kept.iter().map(|e| e.ratio).sum();
    if kept.is_empty() || sum <= 0.0 {
        return Err(BlendError::NoEntries);
    }
    let kept: Vec<BlendEntry> = if (sum - 1.0).abs() > RATIO_TOLERANCE {
        warnings.push(format!("re-normalizing remaining ratios (sum was {sum})"));
        kept.into_iter()
            .map(|mut e| {
                e.ratio /= sum;
                e
            })
            .collect()
    } else {
        kept
    };
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok((kept, warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendOutput {
    pub records: Vec<TrainingRecord>,
    /// Per-entry record counts, in entry order.
    pub counts: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

/// Draw `total` records across entries by largest-remainder apportionment,
/// then shuffle globally. Pools are given per entry, aligned with `entries`.
pub fn blend(
    entries: &[BlendEntry],
    pools: &[Vec<TrainingRecord>],
    total: usize,
    seed: u64,
) -> Result<BlendOutput, BlendError> {
    use rand::seq::SliceRandom;
    use rand::Rng;

    validate_entries(entries)?;
    if entries.len() != pools.len() {
        return Err(BlendError::PoolMismatch {
            entries: entries.len(),
            pools: pools.len(),
        });
    }
    for (e, p) in entries.iter().zip(pools) {
        if e.ratio > 0.0 && p.is_empty() {
            return Err(BlendError::EmptyPool(e.name.clone()));
        }
    }
    let named: Vec<(&str, f64)> = entries.iter().map(|e| (e.name.as_str(), e.ratio)).collect();
    let counts = apportion(&named, total);

    let mut warnings = Vec::new();
    let mut records = Vec::with_capacity(total);
    for ((e, pool), &n) in entries.iter().zip(pools).zip(&counts) {
        if n == 0 {
            continue;
        }
        let mut rng = crate::seed::rng(seed, &["blend", &e.name]);
        if pool.len() >= n {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut rng);
            records.extend(idx[..n].iter().map(|&i| pool[i].clone()));
        } else {
            let msg = format!(
                "{}: pool of {} < {} requested, sampling with replacement",
                e.name,
                pool.len(),
                n
            );
            tracing::warn!("{msg}");
            warnings.push(msg);
            records.extend((0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()));
        }
    }
    records.shuffle(&mut crate::seed::rng(seed, &["blend-global"]));
    Ok(BlendOutput {
        records,
        counts: entries.iter().map(|e| e.name.clone()).zip(counts).collect(),
        warnings,
    })
}
