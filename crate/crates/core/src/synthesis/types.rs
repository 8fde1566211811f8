use std::fmt;

use serde::{Deserialize, Serialize};

use crate::generation::Polarity;
use crate::retrieval::RetrievalResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    ShortSpan,
    MultipleChoice,
    ClaimVerification,
}

impl TaskType {
    pub const ALL: [TaskType; 3] = [
        TaskType::ShortSpan,
        TaskType::MultipleChoice,
        TaskType::ClaimVerification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::ShortSpan => "short_span",
            TaskType::MultipleChoice => "multiple_choice",
            TaskType::ClaimVerification => "claim_verification",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    /// Built but not yet filtered.
    Pending,
    Kept,
    DroppedNotRetrieved,
    DroppedMalformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub passage_id: String,
    pub span: String,
    /// Position in the semicolon-separated completion.
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub letter: char,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub example_id: String,
    pub task_type: TaskType,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<ChoiceOption>>,
    pub gold: String,
    /// The generated statement, for claim verification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<Polarity>,
    pub source_passage_id: String,
    pub context_ids: Vec<String>,
    pub filter_status: FilterStatus,
    /// Retrieval used to reach the filter verdict.
    #[serde(default)]
    pub filter_retrieval: Vec<RetrievalResult>,
}

impl SyntheticExample {
    pub(crate) fn new(
        example_id: String,
        task_type: TaskType,
        question: String,
        gold: String,
        source: &str,
    ) -> Self {
        Self {
            example_id,
            task_type,
            question,
            options: None,
            gold,
            claim: None,
            polarity: None,
            source_passage_id: source.to_owned(),
            context_ids: Vec::new(),
            filter_status: FilterStatus::Pending,
            filter_retrieval: Vec::new(),
        }
    }

    pub(crate) fn malformed(mut self) -> Self {
        self.filter_status = FilterStatus::DroppedMalformed;
        self
    }

    /// Text of the gold option for multiple choice.
    pub fn gold_option_text(&self) -> Option<&str> {
        let letter = self.gold.chars().next()?;
        self.options
            .as_ref()?
            .iter()
            .find(|o| o.letter == letter)
            .map(|o| o.text.as_str())
    }

    /// Question followed by lettered options, one per line.
    pub fn question_with_options(&self) -> String {
        match &self.options {
            None => self.question.clone(),
            Some(opts) => {
                let mut s = self.question.clone();
                for o in opts {
                    s.push_str(&format!("\n{}. {}", o.letter, o.text));
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounters {
    pub generated: usize,
    pub kept: usize,
    pub dropped_not_retrieved: usize,
    pub dropped_malformed: usize,
}

impl TypeCounters {
    pub fn record(&mut self, status: FilterStatus) {
        self.generated += 1;
        match status {
            FilterStatus::Kept => self.kept += 1,
            FilterStatus::DroppedNotRetrieved => self.dropped_not_retrieved += 1,
            FilterStatus::DroppedMalformed => self.dropped_malformed += 1,
            FilterStatus::Pending => unreachable!("pending examples are never recorded"),
        }
    }

    pub fn balanced(&self) -> bool {
        self.kept + self.dropped_not_retrieved + self.dropped_malformed == self.generated
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quotas {
    pub short_span: usize,
    pub multiple_choice: usize,
    pub claim_verification: usize,
}

impl Quotas {
    /// Pseudo-labeled sample budget used with the Llama3-8B backbone.
    pub const LLAMA: Quotas = Quotas {
        short_span: 150_000,
        multiple_choice: 50_000,
        claim_verification: 100_000,
    };

    /// Pseudo-labeled sample budget used with the Gemma2-27B backbone.
    pub const GEMMA: Quotas = Quotas {
        short_span: 45_000,
        multiple_choice: 15_000,
        claim_verification: 30_000,
    };

    pub fn get(&self, t: TaskType) -> usize {
        match t {
            TaskType::ShortSpan => self.short_span,
            TaskType::MultipleChoice => self.multiple_choice,
            TaskType::ClaimVerification => self.claim_verification,
        }
    }

    pub fn is_zero(&self) -> bool {
        TaskType::ALL.iter().all(|&t| self.get(t) == 0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub short_span: TypeCounters,
    pub multiple_choice: TypeCounters,
    pub claim_verification: TypeCounters,
    pub retention_rate: f64,
    pub passages_visited: usize,
    /// Passages whose answer extraction produced no valid span.
    pub extraction_malformed: usize,
    pub quotas: Quotas,
    pub warnings: Vec<String>,
}

impl SynthesisReport {
    pub fn counters(&self, t: TaskType) -> &TypeCounters {
        match t {
            TaskType::ShortSpan => &self.short_span,
            TaskType::MultipleChoice => &self.multiple_choice,
            TaskType::ClaimVerification => &self.claim_verification,
        }
    }

    pub fn counters_mut(&mut self, t: TaskType) -> &mut TypeCounters {
        match t {
            TaskType::ShortSpan => &mut self.short_span,
            TaskType::MultipleChoice => &mut self.multiple_choice,
            TaskType::ClaimVerification => &mut self.claim_verification,
        }
    }

    pub fn total_generated(&self) -> usize {
        TaskType::ALL
            .iter()
            .map(|&t| self.counters(t).generated)
            .sum()
    }

    pub fn total_kept(&self) -> usize {
        TaskType::ALL.iter().map(|&t| self.counters(t).kept).sum()
    }

    pub(crate) fn finish(&mut self) {
        let g = self.total_generated();
        self.retention_rate = if g == 0 {
            0.0
        } else {
            self.total_kept() as f64 / g as f64
        };
    }
}
