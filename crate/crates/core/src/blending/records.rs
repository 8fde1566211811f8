use std::fs;
use std::io::{BufRead, BufReader};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::Passage;
use crate::generation::templates::{fill, CLAIM_SLOT};
use crate::generation::Prompter;
use crate::retrieval::PassageStore;
use crate::synthesis::SyntheticExample;

use super::{BlendEntry, BlendError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordMeta {
    pub blend_entry: String,
    pub example_id: String,
}

/// One training conversation. `loss_mask[i]` says whether message `i`
/// contributes to the loss; only the assistant turn does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub messages: Vec<Message>,
    pub loss_mask: Vec<bool>,
    pub meta: RecordMeta,
}

impl TrainingRecord {
    pub fn new(system: &str, user: String, assistant: String, meta: RecordMeta) -> Self {
        let messages = vec![
            Message {
                role: Role::System,
                content: system.to_owned(),
            },
            Message {
                role: Role::User,
                content: user,
            },
            Message {
                role: Role::Assistant,
                content: assistant,
            },
        ];
        Self::from_messages(messages, meta)
    }

    pub fn from_messages(messages: Vec<Message>, meta: RecordMeta) -> Self {
        let loss_mask = messages.iter().map(|m| m.role == Role::Assistant).collect();
        Self {
            messages,
            loss_mask,
            meta,
        }
    }

    /// Exactly one assistant message, and the mask marks only it.
    pub fn mask_ok(&self) -> bool {
        self.loss_mask.len() == self.messages.len()
            && self
                .messages
                .iter()
                .filter(|m| m.role == Role::Assistant)
                .count()
                == 1
            && self
                .messages
                .iter()
                .zip(&self.loss_mask)
                .all(|(m, &on)| on == (m.role == Role::Assistant))
    }

    pub fn content(&self, role: Role) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == role)
            .map(|m| m.content.as_str())
    }
}

/// Instruction and question blocks for an example under an entry's
/// instruction. When the instruction has a `{claim}` slot it absorbs the
/// question, matching the single-sentence claim-verification format.
pub fn instantiate_instruction(instruction: &str, ex: &SyntheticExample) -> (String, String) {
    if instruction.contains(CLAIM_SLOT) {
        if let Some(claim) = ex.claim.as_deref() {
            return (fill(instruction, CLAIM_SLOT, claim), String::new());
        }
    }
    (instruction.to_owned(), ex.question_with_options())
}

/// Render a synthetic example as a training conversation: retrieved
/// contexts, instruction and question in the user turn; the bare gold answer
/// as the assistant turn.
pub fn training_record(
    ex: &SyntheticExample,
    entry: &BlendEntry,
    store: &PassageStore,
    prompter: &Prompter,
) -> TrainingRecord {
    let contexts: Vec<&Passage> = ex
        .context_ids
        .iter()
        .filter_map(|id| {
            let p = store.get(id);
            if p.is_none() {
                warn!(passage_id = %id, example_id = %ex.example_id, "context id not in passage store");
            }
            p
        })
        .collect();
    let (instruction, question) = instantiate_instruction(&entry.instruction, ex);
    let prompt = prompter.inference_prompt_passages(&contexts, &instruction, &question);
    TrainingRecord::new(
        &prompt.system,
        prompt.user,
        ex.gold.clone(),
        RecordMeta {
            blend_entry: entry.name.clone(),
            example_id: ex.example_id.clone(),
        },
    )
}

/// Records for every example of the entry's task type.
pub fn synthetic_pool(
    examples: &[SyntheticExample],
    entry: &BlendEntry,
    store: &PassageStore,
    prompter: &Prompter,
) -> Vec<TrainingRecord> {
    let Some(task) = entry.source.task_type() else {
        return Vec::new();
    };
    examples
        .iter()
        .filter(|e| e.task_type == task)
        .map(|e| training_record(e, entry, store, prompter))
        .collect()
}

#[derive(Deserialize)]
struct ExternalRecord {
    messages: Vec<Message>,
    #[serde(default)]
    meta: Option<RecordMeta>,
}

/// Load an external entry's file. Lines that fail to parse or do not have
/// exactly one assistant message are skipped with a warning.
pub fn load_external(entry: &BlendEntry) -> Result<Vec<TrainingRecord>, BlendError> {
    let Some(path) = entry.path.as_deref() else {
        return Ok(Vec::new());
    };
    let file = fs::File::open(path).map_err(|source| BlendError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| BlendError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(rec) = serde_json::from_str::<ExternalRecord>(&line) else {
            skipped += 1;
            continue;
        };
        let example_id = rec
            .meta
            .map(|m| m.example_id)
            .filter(|id| !id.is_empty())
            .unwrap_or_else(|| format!("{}:{}", entry.name, i + 1));
        let r = TrainingRecord::from_messages(
            rec.messages,
            RecordMeta {
                blend_entry: entry.name.clone(),
                example_id,
            },
        );
        if r.mask_ok() {
            out.push(r);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        warn!(entry = %entry.name, skipped, "skipped unusable external records");
    }
    Ok(out)
}
