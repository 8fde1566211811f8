use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Passage;

use super::RetrievalError;

/// Passages addressable by id, in corpus order.
#[derive(Debug, Clone, Default)]
pub struct PassageStore {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl PassageStore {
    pub fn new(passages: Vec<Passage>) -> Self {
        let by_id = passages
            .iter()
            .enumerate()
            .map(|(i, p)| (p.passage_id.clone(), i))
            .collect();
        Self { passages, by_id }
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for p in &self.passages {
            serde_json::to_writer(&mut w, p).map_err(|e| RetrievalError::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, RetrievalError> {
        let r = BufReader::new(fs::File::open(path)?);
        let mut passages = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let p: Passage = serde_json::from_str(&line).map_err(|e| {
                RetrievalError::Format(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            passages.push(p);
        }
        Ok(Self::new(passages))
    }
}
