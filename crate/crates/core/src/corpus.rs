//! News corpus data model, loader and distribution statistics.
//!
//! A corpus file holds one JSON record per line. Images live beside the
//! corpus file and are referenced by relative path.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}{}: {message}", id.as_deref().map(|i| format!(" (id {i})")).unwrap_or_default())]
    Malformed {
        line: usize,
        id: Option<String>,
        message: String,
    },
    #[error("duplicate id {id} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("item {id}: unknown topic tag {tag:?}")]
    UnknownTopic { id: String, tag: String },
    #[error("item {id}: topics must not be empty")]
    EmptyTopics { id: String },
    #[error("empty corpus")]
    Empty,
    #[error("item {id}: image {path} does not decode: {message}")]
    Image {
        id: String,
        path: PathBuf,
        message: String,
    },
}

/// Binary veracity label, stored with the fact-checker's original wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Veracity {
    #[serde(rename = "true")]
    True,
    #[serde(rename = "pants-fire")]
    False,
}

impl Veracity {
    pub fn is_true(self) -> bool {
        matches!(self, Veracity::True)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Veracity::True => "true",
            Veracity::False => "false",
        }
    }
}

impl fmt::Display for Veracity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topic {
    Economy,
    Environment,
    Foreign,
    Health,
    Law,
    Politics,
    Society,
    Technology,
}

impl Topic {
    /// Canonical order used by the distribution table.
    pub const ALL: [Topic; 8] = [
        Topic::Economy,
        Topic::Environment,
        Topic::Foreign,
        Topic::Health,
        Topic::Law,
        Topic::Politics,
        Topic::Society,
        Topic::Technology,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::Economy => "economy",
            Topic::Environment => "environment",
            Topic::Foreign => "foreign",
            Topic::Health => "health",
            Topic::Law => "law",
            Topic::Politics => "politics",
            Topic::Society => "society",
            Topic::Technology => "technology",
        }
    }

    pub fn parse(tag: &str) -> Option<Topic> {
        Topic::ALL.into_iter().find(|t| t.as_str() == tag)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub headline: String,
    pub body: String,
    pub source: String,
    pub claim_date: NaiveDate,
    pub medium: String,
    pub veracity: Veracity,
    pub topics: Vec<Topic>,
    pub image_ref: Option<String>,
    pub person_present: bool,
    pub article_url: Option<String>,
}

/// Wire form of a record. Topics stay as strings so an unknown tag gets its
/// own error instead of a generic serde message.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    id: String,
    headline: String,
    body: String,
    source: String,
    claim_date: NaiveDate,
    medium: String,
    veracity: Veracity,
    topics: Vec<String>,
    image_ref: Option<String>,
    person_present: bool,
    article_url: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Decode every referenced image while loading.
    pub validate_images: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub items: Vec<NewsItem>,
    pub provenance: String,
    /// Directory that relative `image_ref`s resolve against.
    pub base_dir: PathBuf,
}

impl Corpus {
    pub fn new(items: Vec<NewsItem>, provenance: impl Into<String>) -> Self {
        Corpus {
            items,
            provenance: provenance.into(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn get(&self, id: &str) -> Option<&NewsItem> {
        self.items.iter().find(|n| n.id == id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn image_path(&self, item: &NewsItem) -> Option<PathBuf> {
        item.image_ref.as_ref().map(|r| {
            let p = Path::new(r);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    pub fn all_have_images(&self) -> bool {
        self.items.iter().all(|n| n.image_ref.is_some())
    }
}

/// Path of the bundled corpus shipped with the crate.
pub fn bundled_corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/corpus/corpus.ndjson")
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    load_corpus_with(path, &LoadOptions::default())
}

pub fn load_corpus_with(path: &Path, opts: &LoadOptions) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawItem = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            id: sniff_id(&line),
            message: e.to_string(),
        })?;
        let item = validate_record(raw)?;
        if !seen.insert(item.id.clone()) {
            return Err(CorpusError::DuplicateId {
                id: item.id,
                line: line_no,
            });
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(CorpusError::Empty);
    }
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let corpus = Corpus {
        items,
        provenance: read_provenance(path),
        base_dir,
    };
    if opts.validate_images {
        for item in &corpus.items {
            if let Some(p) = corpus.image_path(item) {
                check_image(&p).map_err(|message| CorpusError::Image {
                    id: item.id.clone(),
                    path: p.clone(),
                    message,
                })?;
            }
        }
    }
    Ok(corpus)
}

fn validate_record(raw: RawItem) -> Result<NewsItem, CorpusError> {
    if raw.topics.is_empty() {
        return Err(CorpusError::EmptyTopics { id: raw.id });
    }
    let mut topics = Vec::with_capacity(raw.topics.len());
    for tag in &raw.topics {
        let t = Topic::parse(tag).ok_or_else(|| CorpusError::UnknownTopic {
            id: raw.id.clone(),
            tag: tag.clone(),
        })?;
        if !topics.contains(&t) {
            topics.push(t);
        }
    }
    Ok(NewsItem {
        id: raw.id,
        headline: raw.headline,
        body: raw.body,
        source: raw.source,
        claim_date: raw.claim_date,
        medium: raw.medium,
        veracity: raw.veracity,
        topics,
        image_ref: raw.image_ref,
        person_present: raw.person_present,
        article_url: raw.article_url,
    })
}

fn sniff_id(line: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    v.get("id")?.as_str().map(str::to_owned)
}

fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn read_provenance(path: &Path) -> String {
    #[derive(Deserialize)]
    struct Meta {
        provenance: String,
    }
    fs::read_to_string(meta_path(path))
        .ok()
        .and_then(|s| serde_json::from_str::<Meta>(&s).ok())
        .map(|m| m.provenance)
        .unwrap_or_default()
}

fn check_image(path: &Path) -> Result<(), String> {
    image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Writes the corpus in the interchange format. Provenance goes to a
/// `<name>.meta.json` sidecar when non-empty.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for item in &corpus.items {
        let line = serde_json::to_string(item).expect("news items always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    if !corpus.provenance.is_empty() {
        let meta = serde_json::json!({ "provenance": corpus.provenance });
        fs::write(meta_path(path), serde_json::to_string_pretty(&meta).unwrap()).map_err(io_err)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CountRow {
    pub true_count: usize,
    pub false_count: usize,
}

impl CountRow {
    pub fn all(&self) -> usize {
        self.true_count + self.false_count
    }

    fn bump(&mut self, v: Veracity) {
        match v {
            Veracity::True => self.true_count += 1,
            Veracity::False => self.false_count += 1,
        }
    }
}

/// Distribution of items by topic, image content and veracity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub topics: Vec<(Topic, CountRow)>,
    pub person_present: CountRow,
    pub person_absent: CountRow,
    pub total: CountRow,
}

impl CorpusStats {
    pub fn topic(&self, t: Topic) -> CountRow {
        self.topics
            .iter()
            .find(|(x, _)| *x == t)
            .map(|(_, r)| *r)
            .unwrap_or_default()
    }
}

pub fn corpus_stats(c: &Corpus) -> CorpusStats {
    let mut topics: Vec<(Topic, CountRow)> =
        Topic::ALL.iter().map(|t| (*t, CountRow::default())).collect();
    let mut person_present = CountRow::default();
    let mut person_absent = CountRow::default();
    let mut total = CountRow::default();
    for item in &c.items {
        for t in &item.topics {
            let slot = Topic::ALL.iter().position(|x| x == t).unwrap();
            topics[slot].1.bump(item.veracity);
        }
        if item.person_present {
            person_present.bump(item.veracity);
        } else {
            person_absent.bump(item.veracity);
        }
        total.bump(item.veracity);
    }
    CorpusStats {
        topics,
        person_present,
        person_absent,
        total,
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = |f: &mut fmt::Formatter<'_>, name: &str, r: &CountRow| {
            writeln!(f, "{:<24}{:>6}{:>6}{:>6}", name, r.true_count, r.false_count, r.all())
        };
        writeln!(f, "{:<24}{:>6}{:>6}{:>6}", "Topics / Imagery", "True", "False", "All")?;
        for (t, r) in &self.topics {
            let mut name = t.as_str().to_string();
            name[..1].make_ascii_uppercase();
            row(f, &name, r)?;
        }
        row(f, "Image shows people", &self.person_present)?;
        row(f, "Image shows no people", &self.person_absent)?;
        row(f, "Total", &self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, topics: &str) -> String {
        format!(
            r#"{{"id":"{id}","headline":"h","body":"b","source":"s","claim_date":"2024-10-16","medium":"m","veracity":"true","topics":{topics},"image_ref":null,"person_present":false,"article_url":null}}"#
        )
    }

    fn write(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write(&[]);
        assert!(matches!(load_corpus(f.path()), Err(CorpusError::Empty)));
    }

    #[test]
    fn empty_topics_names_item() {
        let f = write(&[record("a1", "[]")]);
        let err = load_corpus(f.path()).unwrap_err();
        assert!(matches!(&err, CorpusError::EmptyTopics { id } if id == "a1"));
        assert!(err.to_string().contains("a1"));
    }

    #[test]
    fn unknown_topic_and_duplicate_id() {
        let f = write(&[record("a1", r#"["sports"]"#)]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::UnknownTopic { tag, .. }) if tag == "sports"
        ));
        let f = write(&[record("a1", r#"["law"]"#), record("a1", r#"["law"]"#)]);
        assert!(matches!(
            load_corpus(f.path()),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_and_id() {
        let bad = record("zz9", r#"["law"]"#).replace(r#""veracity":"true""#, r#""veracity":"mostly-true""#);
        let f = write(&[record("a1", r#"["law"]"#), bad]);
        match load_corpus(f.path()) {
            Err(CorpusError::Malformed { line, id, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(id.as_deref(), Some("zz9"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn multi_topic_item_counts_once_per_topic() {
        let f = write(&[record("a1", r#"["law","health"]"#)]);
        let stats = corpus_stats(&load_corpus(f.path()).unwrap());
        assert_eq!(stats.topic(Topic::Law).all(), 1);
        assert_eq!(stats.topic(Topic::Health).all(), 1);
        assert_eq!(stats.total.all(), 1);
    }

    #[test]
    fn missing_image_fails_only_when_validating() {
        let rec = record("a1", r#"["law"]"#).replace(r#""image_ref":null"#, r#""image_ref":"nope.png""#);
        let f = write(&[rec]);
        assert!(load_corpus(f.path()).is_ok());
        let opts = LoadOptions { validate_images: true };
        assert!(matches!(load_corpus_with(f.path(), &opts), Err(CorpusError::Image { .. })));
    }
}
