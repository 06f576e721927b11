//! Articles, comments and the sites they come from.
//!
//! Records arrive as NDJSON, one per line. A [`CorpusStore`] keeps them in
//! insertion order with secondary indexes (article → comments, site →
//! articles, day → articles). Optionally the store is backed by a directory
//! of append-only segment files that use the export format, so reopening a
//! directory replays the segments and rebuilds the indexes.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, NaiveDate, SecondsFormat, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteCategory {
    NewsMedia,
    GovernmentPolitics,
    ArtsEntertainment,
    Other,
}

impl SiteCategory {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "news_media" => Some(Self::NewsMedia),
            "government_politics" => Some(Self::GovernmentPolitics),
            "arts_entertainment" => Some(Self::ArtsEntertainment),
            "other" => Some(Self::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: String,
    pub domain_name: String,
    pub category: SiteCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub site_id: String,
    pub url: String,
    pub title: String,
    pub body: String,
    #[serde(with = "rfc3339")]
    pub published_at: DateTime<Utc>,
}

impl Article {
    pub fn day(&self) -> NaiveDate {
        self.published_at.date_naive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: String,
    pub article_id: String,
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_name: Option<String>,
    pub body: String,
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
    pub likes: u64,
    pub dislikes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_comment_id: Option<String>,
}

mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_timestamp(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Site,
    Article,
    Comment,
}

impl RecordKind {
    pub fn segment_file(self) -> &'static str {
        match self {
            RecordKind::Site => "sites.ndjson",
            RecordKind::Article => "articles.ndjson",
            RecordKind::Comment => "comments.ndjson",
        }
    }
}

impl std::str::FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "site" | "sites" => Ok(Self::Site),
            "article" | "articles" => Ok(Self::Article),
            "comment" | "comments" => Ok(Self::Comment),
            other => Err(format!("unknown record kind `{other}` (expected sites, articles or comments)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Site(Site),
    Article(Article),
    Comment(Comment),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("malformed record at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` has the wrong type: {reason}")]
    Schema { field: &'static str, reason: String },
    #[error("field `{field}` is invalid: {reason}")]
    Validation { field: &'static str, reason: String },
}

impl RecordError {
    pub fn reason(&self) -> &'static str {
        match self {
            RecordError::Syntax { .. } => "malformed",
            RecordError::MissingField(_) => "missing_field",
            RecordError::Schema { .. } => "schema",
            RecordError::Validation { .. } => "invalid_value",
        }
    }
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
    let t = DateTime::parse_from_rfc3339(s)?.with_timezone(&Utc);
    // seconds precision
    Ok(DateTime::from_timestamp(t.timestamp(), 0).expect("in range"))
}

struct Fields(Map<String, Value>);

impl Fields {
    fn get(&self, field: &'static str) -> Option<&Value> {
        self.0.get(field).filter(|v| !v.is_null())
    }

    fn string(&self, field: &'static str) -> Result<String, RecordError> {
        match self.get(field) {
            None => Err(RecordError::MissingField(field)),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(RecordError::Schema {
                field,
                reason: format!("expected string, got {other}"),
            }),
        }
    }

    fn id(&self, field: &'static str) -> Result<String, RecordError> {
        let s = self.string(field)?;
        if s.trim().is_empty() {
            return Err(RecordError::Validation {
                field,
                reason: "identifier is empty".into(),
            });
        }
        Ok(s)
    }

    fn opt_string(&self, field: &'static str) -> Result<Option<String>, RecordError> {
        match self.get(field) {
            None => Ok(None),
            Some(_) => self.string(field).map(Some),
        }
    }

    fn count(&self, field: &'static str) -> Result<u64, RecordError> {
        let v = self.get(field).ok_or(RecordError::MissingField(field))?;
        let n: i128 = match v {
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    i as i128
                } else if let Some(u) = n.as_u64() {
                    u as i128
                } else {
                    return Err(RecordError::Schema {
                        field,
                        reason: format!("expected an integer, got {n}"),
                    });
                }
            }
            Value::String(s) => s.trim().parse::<i128>().map_err(|_| RecordError::Schema {
                field,
                reason: format!("expected an integer, got {s:?}"),
            })?,
            other => {
                return Err(RecordError::Schema {
                    field,
                    reason: format!("expected an integer, got {other}"),
                })
            }
        };
        if n < 0 {
            return Err(RecordError::Validation {
                field,
                reason: format!("count must be non-negative, got {n}"),
            });
        }
        u64::try_from(n).map_err(|_| RecordError::Validation {
            field,
            reason: "count overflows".into(),
        })
    }

    fn timestamp(&self, field: &'static str) -> Result<DateTime<Utc>, RecordError> {
        let s = self.string(field)?;
        parse_timestamp(&s).map_err(|e| RecordError::Schema {
            field,
            reason: format!("not an RFC 3339 timestamp ({e})"),
        })
    }
}

/// Parse and validate one NDJSON record.
pub fn parse_record(line: &str, kind: RecordKind) -> Result<Record, RecordError> {
    let value: Value = serde_json::from_str(line).map_err(|e| RecordError::Syntax {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(RecordError::Syntax {
            offset: 0,
            message: "expected a JSON object".into(),
        });
    };
    let f = Fields(map);
    Ok(match kind {
        RecordKind::Site => {
            let category = f.string("category")?;
            Record::Site(Site {
                site_id: f.id("site_id")?,
                domain_name: f.string("domain_name")?.to_lowercase(),
                category: SiteCategory::parse(&category).ok_or_else(|| RecordError::Validation {
                    field: "category",
                    reason: format!("unknown category {category:?}"),
                })?,
            })
        }
        RecordKind::Article => Record::Article(Article {
            article_id: f.id("article_id")?,
            site_id: f.id("site_id")?,
            url: f.string("url")?,
            title: f.string("title")?,
            body: f.string("body")?,
            published_at: f.timestamp("published_at")?,
        }),
        RecordKind::Comment => Record::Comment(Comment {
            comment_id: f.id("comment_id")?,
            article_id: f.id("article_id")?,
            user_id: f.id("user_id")?,
            user_name: f.opt_string("user_name")?,
            body: f.string("body")?,
            created_at: f.timestamp("created_at")?,
            likes: f.count("likes")?,
            dislikes: f.count("dislikes")?,
            parent_comment_id: f.opt_string("parent_comment_id")?,
        }),
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    // serde_json reports 1-based lines and columns counted in bytes
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Why a well-formed record was not stored.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Rejection {
    #[error("duplicate identifier `{0}`")]
    Duplicate(String),
    #[error("comment references unknown article `{0}`")]
    OrphanComment(String),
    #[error("article references unknown site `{0}`")]
    UnknownSite(String),
    #[error("reply references `{0}`, which is not a stored comment of the same article")]
    UnknownParent(String),
    #[error("published_at {0} is outside the configured date bounds")]
    OutOfRange(String),
}

impl Rejection {
    pub fn reason(&self) -> &'static str {
        match self {
            Rejection::Duplicate(_) => "duplicate",
            Rejection::OrphanComment(_) => "orphan_comment",
            Rejection::UnknownSite(_) => "unknown_site",
            Rejection::UnknownParent(_) => "unknown_parent",
            Rejection::OutOfRange(_) => "out_of_range",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateBounds {
    pub not_before: Option<DateTime<Utc>>,
    pub not_after: Option<DateTime<Utc>>,
}

impl DateBounds {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.not_before.is_none_or(|b| t >= b) && self.not_after.is_none_or(|a| t <= a)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: usize,
    pub records_stored: usize,
    pub records_rejected: usize,
    pub rejection_reasons: BTreeMap<String, usize>,
    /// First few rejection messages, with 1-based line numbers.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub examples: Vec<String>,
}

const MAX_REPORTED_EXAMPLES: usize = 10;

impl IngestReport {
    fn reject(&mut self, line_no: usize, reason: &str, message: String) {
        self.records_rejected += 1;
        *self.rejection_reasons.entry(reason.to_string()).or_default() += 1;
        if self.examples.len() < MAX_REPORTED_EXAMPLES {
            self.examples.push(format!("line {line_no}: {message}"));
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O failure after {} records: {source}", report.records_read)]
    Io {
        #[source]
        source: io::Error,
        report: IngestReport,
    },
    #[error("segment {path}: line {line}: {message}")]
    CorruptSegment {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Other(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("density is undefined for zero articles")]
pub struct UndefinedDensity;

/// Mean number of comments per article.
pub fn density(comment_count: u64, article_count: u64) -> Result<f64, UndefinedDensity> {
    if article_count == 0 {
        return Err(UndefinedDensity);
    }
    Ok(comment_count as f64 / article_count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Day,
    Month,
}

impl std::str::FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(Bucket::Day),
            "month" => Ok(Bucket::Month),
            other => Err(format!("unknown bucket `{other}` (expected day or month)")),
        }
    }
}

impl Bucket {
    fn start_of(self, d: NaiveDate) -> NaiveDate {
        match self {
            Bucket::Day => d,
            Bucket::Month => d.with_day(1).expect("day 1 exists"),
        }
    }

    fn next(self, d: NaiveDate) -> NaiveDate {
        match self {
            Bucket::Day => d.succ_opt().expect("date in range"),
            Bucket::Month => d
                .checked_add_months(chrono::Months::new(1))
                .expect("date in range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket_start: NaiveDate,
    pub article_count: usize,
    pub comment_count: usize,
}

/// In-memory corpus with secondary indexes and optional on-disk segments.
///
/// Records are immutable once stored. Writers need `&mut`, so the borrow
/// checker already gives the single-writer/many-reader discipline.
#[derive(Debug, Default, Clone)]
pub struct CorpusStore {
    sites: IndexMap<String, Site>,
    articles: IndexMap<String, Article>,
    comments: IndexMap<String, Comment>,
    article_comments: HashMap<String, Vec<String>>,
    site_articles: HashMap<String, Vec<String>>,
    day_articles: BTreeMap<NaiveDate, Vec<String>>,
    replies: HashMap<String, Vec<String>>,
    bounds: DateBounds,
    segments: Option<PathBuf>,
}

impl CorpusStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_bounds(bounds: DateBounds) -> Self {
        Self {
            bounds,
            ..Self::default()
        }
    }

    /// Open (or create) a store backed by segment files in `dir`.
    pub fn open(dir: impl AsRef<Path>, bounds: DateBounds) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut store = Self::with_bounds(bounds);
        for kind in [RecordKind::Site, RecordKind::Article, RecordKind::Comment] {
            let path = dir.join(kind.segment_file());
            if !path.exists() {
                continue;
            }
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| StoreError::CorruptSegment {
                    path: path.clone(),
                    line: i + 1,
                    message,
                };
                let record = parse_record(&line, kind).map_err(|e| corrupt(e.to_string()))?;
                store.insert(record).map_err(|e| corrupt(e.to_string()))?;
            }
        }
        store.segments = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn segment_dir(&self) -> Option<&Path> {
        self.segments.as_deref()
    }

    pub fn bounds(&self) -> DateBounds {
        self.bounds
    }

    pub fn sites(&self) -> impl Iterator<Item = &Site> {
        self.sites.values()
    }

    pub fn articles(&self) -> impl Iterator<Item = &Article> {
        self.articles.values()
    }

    pub fn comments(&self) -> impl Iterator<Item = &Comment> {
        self.comments.values()
    }

    pub fn site(&self, id: &str) -> Option<&Site> {
        self.sites.get(id)
    }

    pub fn article(&self, id: &str) -> Option<&Article> {
        self.articles.get(id)
    }

    pub fn comment(&self, id: &str) -> Option<&Comment> {
        self.comments.get(id)
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn article_count(&self) -> usize {
        self.articles.len()
    }

    pub fn comment_count(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty() && self.articles.is_empty() && self.comments.is_empty()
    }

    /// Comments of an article in insertion order.
    pub fn comments_of(&self, article_id: &str) -> impl Iterator<Item = &Comment> {
        self.article_comments
            .get(article_id)
            .into_iter()
            .flatten()
            .map(|id| &self.comments[id])
    }

    pub fn articles_of_site(&self, site_id: &str) -> impl Iterator<Item = &Article> {
        self.site_articles
            .get(site_id)
            .into_iter()
            .flatten()
            .map(|id| &self.articles[id])
    }

    pub fn articles_on(&self, day: NaiveDate) -> impl Iterator<Item = &Article> {
        self.day_articles
            .get(&day)
            .into_iter()
            .flatten()
            .map(|id| &self.articles[id])
    }

    /// Direct replies to a comment.
    pub fn replies_to(&self, comment_id: &str) -> impl Iterator<Item = &Comment> {
        self.replies
            .get(comment_id)
            .into_iter()
            .flatten()
            .map(|id| &self.comments[id])
    }

    pub fn reply_count(&self, comment_id: &str) -> usize {
        self.replies.get(comment_id).map_or(0, Vec::len)
    }

    /// Validate referential constraints and store the record.
    pub fn insert(&mut self, record: Record) -> Result<(), Rejection> {
        match record {
            Record::Site(site) => {
                if self.sites.contains_key(&site.site_id) {
                    return Err(Rejection::Duplicate(site.site_id));
                }
                self.sites.insert(site.site_id.clone(), site);
            }
            Record::Article(article) => {
                if self.articles.contains_key(&article.article_id) {
                    return Err(Rejection::Duplicate(article.article_id));
                }
                if !self.sites.contains_key(&article.site_id) {
                    return Err(Rejection::UnknownSite(article.site_id));
                }
                if !self.bounds.contains(article.published_at) {
                    return Err(Rejection::OutOfRange(
                        article.published_at.to_rfc3339_opts(SecondsFormat::Secs, true),
                    ));
                }
                let id = article.article_id.clone();
                self.site_articles
                    .entry(article.site_id.clone())
                    .or_default()
                    .push(id.clone());
                self.day_articles
                    .entry(article.day())
                    .or_default()
                    .push(id.clone());
                self.article_comments.entry(id.clone()).or_default();
                self.articles.insert(id, article);
            }
            Record::Comment(comment) => {
                if self.comments.contains_key(&comment.comment_id) {
                    return Err(Rejection::Duplicate(comment.comment_id));
                }
                if !self.articles.contains_key(&comment.article_id) {
                    return Err(Rejection::OrphanComment(comment.article_id));
                }
                if let Some(parent) = &comment.parent_comment_id {
                    let same_article = self
                        .comments
                        .get(parent)
                        .is_some_and(|p| p.article_id == comment.article_id);
                    if !same_article {
                        return Err(Rejection::UnknownParent(parent.clone()));
                    }
                    self.replies
                        .entry(parent.clone())
                        .or_default()
                        .push(comment.comment_id.clone());
                }
                self.article_comments
                    .entry(comment.article_id.clone())
                    .or_default()
                    .push(comment.comment_id.clone());
                self.comments.insert(comment.comment_id.clone(), comment);
            }
        }
        Ok(())
    }

    /// Serialize one record kind in the normative export format.
    pub fn export_ndjson<W: Write>(&self, kind: RecordKind, mut out: W) -> io::Result<()> {
        match kind {
            RecordKind::Site => write_lines(&mut out, self.sites.values())?,
            RecordKind::Article => write_lines(&mut out, self.articles.values())?,
            RecordKind::Comment => write_lines(&mut out, self.comments.values())?,
        }
        out.flush()
    }

    /// Write `sites.ndjson`, `articles.ndjson` and `comments.ndjson` into `dir`.
    pub fn export_dir(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for kind in [RecordKind::Site, RecordKind::Article, RecordKind::Comment] {
            let f = BufWriter::new(File::create(dir.join(kind.segment_file()))?);
            self.export_ndjson(kind, f)?;
        }
        Ok(())
    }

    /// The whole store as export bytes (sites, then articles, then comments).
    pub fn export_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for kind in [RecordKind::Site, RecordKind::Article, RecordKind::Comment] {
            self.export_ndjson(kind, &mut buf).expect("writing to a Vec");
        }
        buf
    }

    /// Article and comment counts per day or month, covering the full stored
    /// range with empty buckets included. Articles are bucketed by
    /// `published_at`, comments by `created_at`.
    pub fn corpus_stats(&self, bucket: Bucket) -> Vec<BucketStats> {
        let article_days = self.articles.values().map(|a| a.day());
        let comment_days = self.comments.values().map(|c| c.created_at.date_naive());
        let all: Vec<NaiveDate> = article_days.chain(comment_days).collect();
        let (Some(&min), Some(&max)) = (all.iter().min(), all.iter().max()) else {
            return Vec::new();
        };

        let mut counts: BTreeMap<NaiveDate, (usize, usize)> = BTreeMap::new();
        let mut d = bucket.start_of(min);
        let last = bucket.start_of(max);
        while d <= last {
            counts.insert(d, (0, 0));
            d = bucket.next(d);
        }
        for a in self.articles.values() {
            counts.get_mut(&bucket.start_of(a.day())).expect("bucket in range").0 += 1;
        }
        for c in self.comments.values() {
            counts
                .get_mut(&bucket.start_of(c.created_at.date_naive()))
                .expect("bucket in range")
                .1 += 1;
        }
        counts
            .into_iter()
            .map(|(bucket_start, (article_count, comment_count))| BucketStats {
                bucket_start,
                article_count,
                comment_count,
            })
            .collect()
    }

    /// Scan-based check of the referential and index invariants.
    pub fn check_integrity(&self) -> Result<(), String> {
        for c in self.comments.values() {
            if !self.articles.contains_key(&c.article_id) {
                return Err(format!("comment {} is orphaned", c.comment_id));
            }
        }
        let indexed: usize = self.article_comments.values().map(Vec::len).sum();
        if indexed != self.comments.len() {
            return Err(format!(
                "article index lists {indexed} comments, store holds {}",
                self.comments.len()
            ));
        }
        let by_site: usize = self.site_articles.values().map(Vec::len).sum();
        if by_site != self.articles.len() {
            return Err(format!(
                "site index lists {by_site} articles, store holds {}",
                self.articles.len()
            ));
        }
        for (article, ids) in &self.article_comments {
            for id in ids {
                match self.comments.get(id) {
                    Some(c) if &c.article_id == article => {}
                    _ => return Err(format!("index entry {article} → {id} does not resolve")),
                }
            }
        }
        Ok(())
    }
}

fn write_lines<'a, W: Write, T: Serialize + 'a>(
    out: &mut W,
    items: impl Iterator<Item = &'a T>,
) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn record_line(record: &Record) -> String {
    match record {
        Record::Site(s) => serde_json::to_string(s),
        Record::Article(a) => serde_json::to_string(a),
        Record::Comment(c) => serde_json::to_string(c),
    }
    .expect("records always serialize")
}

/// Read NDJSON records of one kind from `source` into `store`.
///
/// Invalid records are counted and skipped. An I/O failure aborts the
/// stream and carries the partial report.
pub fn ingest_stream<R: BufRead>(
    mut source: R,
    kind: RecordKind,
    store: &mut CorpusStore,
) -> Result<IngestReport, StoreError> {
    let mut report = IngestReport::default();
    let mut segment = match &store.segments {
        Some(dir) => {
            let path = dir.join(kind.segment_file());
            match OpenOptions::new().create(true).append(true).open(path) {
                Ok(f) => Some(BufWriter::new(f)),
                Err(source) => return Err(StoreError::Io { source, report }),
            }
        }
        None => None,
    };

    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        match source.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) => {}
            Err(source) => return Err(StoreError::Io { source, report }),
        }
        line_no += 1;
        let Ok(line) = std::str::from_utf8(&buf) else {
            report.records_read += 1;
            report.reject(line_no, "malformed", "invalid UTF-8".into());
            continue;
        };
        if line.trim().is_empty() {
            continue;
        }
        report.records_read += 1;
        let record = match parse_record(line.trim_end_matches(['\n', '\r']), kind) {
            Ok(r) => r,
            Err(e) => {
                report.reject(line_no, e.reason(), e.to_string());
                continue;
            }
        };
        let line_out = segment.as_ref().map(|_| record_line(&record));
        match store.insert(record) {
            Ok(()) => {
                report.records_stored += 1;
                if let (Some(w), Some(l)) = (segment.as_mut(), line_out) {
                    if let Err(source) = writeln!(w, "{l}") {
                        return Err(StoreError::Io { source, report });
                    }
                }
            }
            Err(r) => report.reject(line_no, r.reason(), r.to_string()),
        }
    }
    if let Some(mut w) = segment {
        if let Err(source) = w.flush() {
            return Err(StoreError::Io { source, report });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SITE: &str = r#"{"site_id":"s1","domain_name":"News.Example.com","category":"news_media"}"#;
    const ARTICLE: &str = r#"{"article_id":"a1","site_id":"s1","url":"https://news.example.com/1","title":"T","body":"B","published_at":"2017-02-20T10:00:00+01:00"}"#;

    fn comment(id: &str, likes: &str) -> String {
        format!(
            r#"{{"comment_id":"{id}","article_id":"a1","user_id":"u1","body":"hi","created_at":"2017-02-20T12:00:00Z","likes":{likes},"dislikes":0}}"#
        )
    }

    #[test]
    fn parses_valid_comment() {
        let Record::Comment(c) = parse_record(&comment("c1", "5"), RecordKind::Comment).unwrap() else {
            panic!("expected comment");
        };
        assert_eq!(c.likes, 5);
        assert_eq!(c.user_name, None);
        assert_eq!(c.parent_comment_id, None);
    }

    #[test]
    fn normalizes_timestamps_and_domains() {
        let Record::Article(a) = parse_record(ARTICLE, RecordKind::Article).unwrap() else {
            panic!()
        };
        assert_eq!(a.published_at.to_rfc3339_opts(SecondsFormat::Secs, true), "2017-02-20T09:00:00Z");
        let Record::Site(s) = parse_record(SITE, RecordKind::Site).unwrap() else {
            panic!()
        };
        assert_eq!(s.domain_name, "news.example.com");
    }

    #[test]
    fn missing_field_is_named() {
        let line = r#"{"comment_id":"c1","user_id":"u","body":"","created_at":"2017-02-20T12:00:00Z","likes":0,"dislikes":0}"#;
        assert_eq!(
            parse_record(line, RecordKind::Comment),
            Err(RecordError::MissingField("article_id"))
        );
    }

    #[test]
    fn negative_counts_rejected() {
        for likes in [r#""-1""#, "-1"] {
            let err = parse_record(&comment("c1", likes), RecordKind::Comment).unwrap_err();
            assert!(matches!(err, RecordError::Validation { field: "likes", .. }), "{err:?}");
        }
        let err = parse_record(&comment("c1", r#""lots""#), RecordKind::Comment).unwrap_err();
        assert!(matches!(err, RecordError::Schema { field: "likes", .. }));
    }

    #[test]
    fn syntax_error_reports_offset() {
        let err = parse_record(r#"{"comment_id": oops}"#, RecordKind::Comment).unwrap_err();
        let RecordError::Syntax { offset, .. } = err else { panic!() };
        assert_eq!(offset, 15);
    }

    fn loaded() -> CorpusStore {
        let mut store = CorpusStore::new();
        let data = format!("{SITE}\n");
        ingest_stream(data.as_bytes(), RecordKind::Site, &mut store).unwrap();
        ingest_stream(ARTICLE.as_bytes(), RecordKind::Article, &mut store).unwrap();
        store
    }

    #[test]
    fn counts_malformed_lines() {
        let mut store = loaded();
        let data = format!(
            "{}\n{}\n{{not json\n\n{}\n",
            comment("c1", "1"),
            comment("c2", "2"),
            comment("c3", "3")
        );
        let r = ingest_stream(data.as_bytes(), RecordKind::Comment, &mut store).unwrap();
        assert_eq!((r.records_read, r.records_stored, r.records_rejected), (4, 3, 1));
        assert_eq!(r.rejection_reasons["malformed"], 1);
        assert_eq!(store.comments_of("a1").count(), 3);
    }

    #[test]
    fn duplicates_rejected_on_second_ingest() {
        let mut store = loaded();
        let data = format!("{}\n{}\n", comment("c1", "1"), comment("c2", "2"));
        ingest_stream(data.as_bytes(), RecordKind::Comment, &mut store).unwrap();
        let before = store.export_bytes();
        let r = ingest_stream(data.as_bytes(), RecordKind::Comment, &mut store).unwrap();
        assert_eq!(r.records_rejected, r.records_read);
        assert_eq!(r.rejection_reasons["duplicate"], 2);
        assert_eq!(store.export_bytes(), before);
    }

    #[test]
    fn orphans_and_bad_parents() {
        let mut store = loaded();
        let orphan = comment("c1", "0").replace(r#""a1""#, r#""nope""#);
        let reply = comment("c2", "0").replace(r#""dislikes":0"#, r#""dislikes":0,"parent_comment_id":"ghost""#);
        let data = format!("{orphan}\n{reply}\n");
        let r = ingest_stream(data.as_bytes(), RecordKind::Comment, &mut store).unwrap();
        assert_eq!(r.rejection_reasons["orphan_comment"], 1);
        assert_eq!(r.rejection_reasons["unknown_parent"], 1);
        assert_eq!(store.comment_count(), 0);
    }

    #[test]
    fn date_bounds_apply_to_articles() {
        let bounds = DateBounds {
            not_before: Some(parse_timestamp("2018-01-01T00:00:00Z").unwrap()),
            not_after: None,
        };
        let mut store = CorpusStore::with_bounds(bounds);
        ingest_stream(SITE.as_bytes(), RecordKind::Site, &mut store).unwrap();
        let r = ingest_stream(ARTICLE.as_bytes(), RecordKind::Article, &mut store).unwrap();
        assert_eq!(r.rejection_reasons["out_of_range"], 1);
    }

    #[test]
    fn density_values() {
        assert!((density(152_613, 581).unwrap() - 262.67).abs() < 0.01);
        assert_eq!(density(87_904, 200).unwrap(), 439.52);
        assert_eq!(density(0, 7).unwrap(), 0.0);
        assert_eq!(density(3, 0), Err(UndefinedDensity));
    }

    #[test]
    fn empty_stats() {
        assert!(CorpusStore::new().corpus_stats(Bucket::Day).is_empty());
    }

    #[test]
    fn monthly_stats() {
        let mut store = CorpusStore::new();
        ingest_stream(SITE.as_bytes(), RecordKind::Site, &mut store).unwrap();
        let articles = [
            ("a1", "2017-01-05T00:00:00Z"),
            ("a2", "2017-01-20T00:00:00Z"),
            ("a3", "2017-02-02T00:00:00Z"),
        ]
        .iter()
        .map(|(id, t)| {
            format!(r#"{{"article_id":"{id}","site_id":"s1","url":"u","title":"t","body":"b","published_at":"{t}"}}"#)
        })
        .collect::<Vec<_>>()
        .join("\n");
        ingest_stream(articles.as_bytes(), RecordKind::Article, &mut store).unwrap();
        let comments = (0..5)
            .map(|i| {
                let art = if i < 3 { "a1" } else { "a2" };
                format!(r#"{{"comment_id":"c{i}","article_id":"{art}","user_id":"u","body":"x","created_at":"2017-01-25T00:00:00Z","likes":0,"dislikes":0}}"#)
            })
            .collect::<Vec<_>>()
            .join("\n");
        ingest_stream(comments.as_bytes(), RecordKind::Comment, &mut store).unwrap();

        let stats = store.corpus_stats(Bucket::Month);
        let jan = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
        let feb = NaiveDate::from_ymd_opt(2017, 2, 1).unwrap();
        assert_eq!(
            stats,
            vec![
                BucketStats { bucket_start: jan, article_count: 2, comment_count: 5 },
                BucketStats { bucket_start: feb, article_count: 1, comment_count: 0 },
            ]
        );
        let daily = store.corpus_stats(Bucket::Day);
        // Jan 5 through Feb 2 inclusive
        assert_eq!(daily.len(), 29);
        assert_eq!(daily.iter().map(|b| b.comment_count).sum::<usize>(), 5);
        assert_eq!(daily.iter().map(|b| b.article_count).sum::<usize>(), 3);
        assert!(daily.windows(2).all(|w| w[0].bucket_start < w[1].bucket_start));
    }

    #[test]
    fn segments_persist_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = CorpusStore::open(dir.path(), DateBounds::default()).unwrap();
            ingest_stream(SITE.as_bytes(), RecordKind::Site, &mut store).unwrap();
            ingest_stream(ARTICLE.as_bytes(), RecordKind::Article, &mut store).unwrap();
            let data = comment("c1", "4");
            ingest_stream(data.as_bytes(), RecordKind::Comment, &mut store).unwrap();
        }
        let reopened = CorpusStore::open(dir.path(), DateBounds::default()).unwrap();
        assert_eq!(reopened.comment_count(), 1);
        assert_eq!(reopened.comment("c1").unwrap().likes, 4);
        reopened.check_integrity().unwrap();
    }
}
