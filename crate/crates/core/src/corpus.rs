//! Corpus ingestion and sliding-window chunking.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("zero documents ingested from {0}")]
    Empty(PathBuf),
    #[error(
        "invalid chunking parameters: window={window}, stride={stride} (need 0 < stride <= window)"
    )]
    BadWindow { window: usize, stride: usize },
    #[error("malformed passage id {0:?}")]
    BadPassageId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IngestFormat {
    Jsonl,
    PlainTextDir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub start_token: usize,
    pub token_count: usize,
}

impl Passage {
    /// Chunk index encoded in the passage id.
    pub fn chunk_index(&self) -> usize {
        parse_passage_id(&self.passage_id)
            .map(|(_, i)| i)
            .unwrap_or_default()
    }
}

pub fn passage_id(doc_id: &str, chunk: usize) -> String {
    format!("{doc_id}#{chunk}")
}

/// Inverse of [`passage_id`]. Document ids may themselves contain `#`.
pub fn parse_passage_id(id: &str) -> Result<(&str, usize), CorpusError> {
    let (doc, idx) = id
        .rsplit_once('#')
        .ok_or_else(|| CorpusError::BadPassageId(id.to_owned()))?;
    let idx = idx
        .parse()
        .map_err(|_| CorpusError::BadPassageId(id.to_owned()))?;
    Ok((doc, idx))
}

/// Counters produced by [`ingest`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub skipped_count: usize,
    /// 1-based line numbers of skipped jsonl records.
    pub skipped_lines: Vec<usize>,
    pub dedup_count: usize,
    pub empty_count: usize,
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: Option<serde_json::Value>,
    title: Option<String>,
    text: String,
}

fn read_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Read {
        path: path.to_owned(),
        source,
    }
}

/// Read documents from a jsonl file or a directory of `*.txt` files.
///
/// Exact duplicate bodies (byte-equal after trimming) are dropped, as are
/// records whose id repeats an earlier one.
pub fn ingest(
    path: &Path,
    format: IngestFormat,
) -> Result<(Vec<Document>, IngestReport), CorpusError> {
    let mut report = IngestReport::default();
    let raw = match format {
        IngestFormat::Jsonl => read_jsonl(path, &mut report)?,
        IngestFormat::PlainTextDir => read_text_dir(path)?,
    };

    let mut seen_bodies = HashSet::new();
    let mut seen_ids = HashSet::new();
    let mut docs = Vec::with_capacity(raw.len());
    for (line, doc) in raw {
        let body = doc.body.trim();
        if body.is_empty() {
            report.empty_count += 1;
            continue;
        }
        if !seen_ids.insert(doc.doc_id.clone()) {
            warn!(doc_id = %doc.doc_id, line, "duplicate document id, skipping");
            report.skipped_count += 1;
            report.skipped_lines.push(line);
            continue;
        }
        if !seen_bodies.insert(body.to_owned()) {
            report.dedup_count += 1;
            continue;
        }
        docs.push(doc);
    }
    if report.dedup_count > 0 {
        info!(count = report.dedup_count, "dropped duplicate bodies");
    }
    if docs.is_empty() {
        return Err(CorpusError::Empty(path.to_owned()));
    }
    report.documents = docs.len();
    Ok((docs, report))
}

fn read_jsonl(
    path: &Path,
    report: &mut IngestReport,
) -> Result<Vec<(usize, Document)>, CorpusError> {
    let file = fs::File::open(path).map_err(read_err(path))?;
    let source = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(read_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                warn!(line = line_no, error = %e, "skipping malformed jsonl record");
                report.skipped_count += 1;
                report.skipped_lines.push(line_no);
                continue;
            }
        };
        let doc_id = match rec.id {
            Some(serde_json::Value::String(s)) if !s.is_empty() => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => format!("{source}:{line_no}"),
        };
        out.push((
            line_no,
            Document {
                doc_id,
                title: rec.title.unwrap_or_default(),
                body: rec.text,
                source: source.clone(),
            },
        ));
    }
    Ok(out)
}

fn read_text_dir(dir: &Path) -> Result<Vec<(usize, Document)>, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(read_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for (i, file) in files.iter().enumerate() {
        let body = fs::read_to_string(file).map_err(read_err(file))?;
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((
            i + 1,
            Document {
                doc_id: stem.clone(),
                title: stem,
                body,
                source: file.display().to_string(),
            },
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub window: usize,
    pub stride: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            window: 300,
            stride: 300,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.stride == 0 || self.stride > self.window {
            return Err(CorpusError::BadWindow {
                window: self.window,
                stride: self.stride,
            });
        }
        Ok(())
    }
}

/// Split a document into windows of at most `window` whitespace tokens.
///
/// A window starts at every multiple of `stride` below the token count, so
/// the tail window may be shorter than `window`.
///
/// ```
/// use rag_selftrain::corpus::{chunk, ChunkConfig, Document};
/// let doc = Document {
///     doc_id: "d".into(),
///     title: String::new(),
///     body: "t0 t1 t2 t3 t4 t5".into(),
///     source: "mem".into(),
/// };
/// let starts: Vec<usize> = chunk(&doc, ChunkConfig { window: 4, stride: 2 })
///     .unwrap()
///     .iter()
///     .map(|p| p.start_token)
///     .collect();
/// assert_eq!(starts, [0, 2, 4]);
/// ```
pub fn chunk(doc: &Document, cfg: ChunkConfig) -> Result<Vec<Passage>, CorpusError> {
    cfg.validate()?;
    let tokens: Vec<&str> = doc.body.split_whitespace().collect();
    let passages = (0..tokens.len())
        .step_by(cfg.stride)
        .enumerate()
        .map(|(i, start)| {
            let end = (start + cfg.window).min(tokens.len());
            Passage {
                passage_id: passage_id(&doc.doc_id, i),
                doc_id: doc.doc_id.clone(),
                title: doc.title.clone(),
                text: tokens[start..end].join(" "),
                start_token: start,
                token_count: end - start,
            }
        })
        .collect();
    Ok(passages)
}

/// Chunk every document, in parallel, preserving document order.
pub fn chunk_all(docs: &[Document], cfg: ChunkConfig) -> Result<Vec<Passage>, CorpusError> {
    cfg.validate()?;
    let nested: Result<Vec<Vec<Passage>>, _> = docs.par_iter().map(|d| chunk(d, cfg)).collect();
    Ok(nested?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn doc(body: &str) -> Document {
        Document {
            doc_id: "doc".into(),
            title: "T".into(),
            body: body.into(),
            source: "test".into(),
        }
    }

    fn counts(body: &str, window: usize, stride: usize) -> Vec<usize> {
        chunk(&doc(body), ChunkConfig { window, stride })
            .unwrap()
            .iter()
            .map(|p| p.token_count)
            .collect()
    }

    #[test]
    fn ten_tokens_window_four() {
        assert_eq!(counts("a b c d e f g h i j", 4, 4), [4, 4, 2]);
    }

    #[test]
    fn short_document_single_passage() {
        assert_eq!(counts("a b c d", 8, 8), [4]);
    }

    #[test]
    fn overlapping_windows_by_hand() {
        let ps = chunk(
            &doc("t0 t1 t2 t3 t4 t5"),
            ChunkConfig {
                window: 4,
                stride: 2,
            },
        )
        .unwrap();
        let got: Vec<_> = ps
            .iter()
            .map(|p| (p.start_token, p.text.as_str()))
            .collect();
        assert_eq!(got, [(0, "t0 t1 t2 t3"), (2, "t2 t3 t4 t5"), (4, "t4 t5")]);
    }

    #[test]
    fn empty_body_no_passages() {
        assert!(chunk(&doc("   \n "), ChunkConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn bad_stride_rejected() {
        assert!(chunk(
            &doc("a"),
            ChunkConfig {
                window: 2,
                stride: 3
            }
        )
        .is_err());
        assert!(chunk(
            &doc("a"),
            ChunkConfig {
                window: 2,
                stride: 0
            }
        )
        .is_err());
    }

    #[test]
    fn passage_id_parses_back() {
        assert_eq!(parse_passage_id("a#b#12").unwrap(), ("a#b", 12));
        assert!(parse_passage_id("nohash").is_err());
        assert!(parse_passage_id("x#y").is_err());
    }

    #[test]
    fn jsonl_skips_malformed() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","title":"A","text":"alpha"}}"#).unwrap();
        writeln!(f, "{{not json").unwrap();
        writeln!(f, r#"{{"text":"beta"}}"#).unwrap();
        let (docs, rep) = ingest(f.path(), IngestFormat::Jsonl).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(rep.skipped_count, 1);
        assert_eq!(rep.skipped_lines, [2]);
        assert_eq!(docs[0].doc_id, "a");
        assert!(docs[1].doc_id.ends_with(":3"));
    }

    #[test]
    fn jsonl_dedups_bodies() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","text":"same body"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","text":"  same body\n"}}"#).unwrap();
        let (docs, rep) = ingest(f.path(), IngestFormat::Jsonl).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(rep.dedup_count, 1);
    }

    #[test]
    fn empty_dir_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest(dir.path(), IngestFormat::PlainTextDir).unwrap_err();
        assert!(err.to_string().contains("zero documents"));
    }

    #[test]
    fn missing_path_is_fatal() {
        let err = ingest(Path::new("/nonexistent/x.jsonl"), IngestFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::Read { .. }));
    }

    #[test]
    fn text_dir_uses_file_stem() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "second").unwrap();
        fs::write(dir.path().join("a.txt"), "first").unwrap();
        fs::write(dir.path().join("skip.md"), "nope").unwrap();
        let (docs, _) = ingest(dir.path(), IngestFormat::PlainTextDir).unwrap();
        let ids: Vec<_> = docs
            .iter()
            .map(|d| (d.doc_id.as_str(), d.title.as_str()))
            .collect();
        assert_eq!(ids, [("a", "a"), ("b", "b")]);
    }

    proptest! {
        #[test]
        fn chunk_invariants(n in 0usize..60, window in 1usize..12, stride_frac in 1usize..12) {
            let stride = stride_frac.min(window);
            let body: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let d = doc(&body.join(" "));
            let ps = chunk(&d, ChunkConfig { window, stride }).unwrap();
            let mut covered = vec![false; n];
            for (i, p) in ps.iter().enumerate() {
                prop_assert!(p.token_count >= 1 && p.token_count <= window);
                prop_assert_eq!(p.start_token, i * stride);
                prop_assert_eq!(parse_passage_id(&p.passage_id).unwrap(), ("doc", i));
                for c in &mut covered[p.start_token..p.start_token + p.token_count] {
                    *c = true;
                }
            }
            prop_assert!(covered.iter().all(|&c| c));
            prop_assert_eq!(chunk(&d, ChunkConfig { window, stride }).unwrap(), ps);
        }
    }
}
