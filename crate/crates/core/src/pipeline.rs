//! Tag → link → score over a whole store, with persisted annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{Annotations, SURFACE_PREFIX};
use crate::config::{MentionMode, PipelineConfig};
use crate::corpus::CorpusStore;
use crate::ner::{EntityMention, EntityType, Gazetteers, TaggerModel};
use crate::nel::{link_mentions, spot_mentions, KnowledgeBase, LinkParams};
use crate::sentiment::{score_from_probs, SentimentModel, SentimentScorer};
use crate::textproc::normalize_phrase;

pub const ANNOTATIONS_FILE: &str = "annotations.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot load {what} from {path}: {message}")]
    ModelLoad {
        what: &'static str,
        path: String,
        message: String,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("corrupt annotations file: {0}")]
    Annotations(#[from] serde_json::Error),
}

/// Everything the pipeline needs besides the store.
#[derive(Clone)]
pub struct Models {
    pub tagger: Option<TaggerModel>,
    pub kb: Arc<KnowledgeBase>,
    pub sentiment: Arc<dyn SentimentScorer + Send>,
    /// Identifies the loaded models; part of the up-to-date check.
    pub fingerprint: String,
}

fn file_digest(h: &mut Sha256, path: &Path) -> io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            h.update(e.file_name().to_string_lossy().as_bytes());
            file_digest(h, &e.path())?;
        }
    } else {
        h.update(fs::read(path)?);
    }
    Ok(())
}

impl Models {
    /// Load every model the config references. Missing KB means an empty KB
    /// (all mentions stay unlinked); a sentiment model is always required, and
    /// a tagger whenever mentions come from NER.
    pub fn load(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let fail = |what: &'static str, path: &Path, message: String| PipelineError::ModelLoad {
            what,
            path: path.display().to_string(),
            message,
        };
        let mut h = Sha256::new();

        let gazetteers = match &cfg.gazetteers {
            Some(p) => {
                file_digest(&mut h, p).map_err(|e| fail("gazetteers", p, e.to_string()))?;
                Some(Gazetteers::load_dir(p).map_err(|e| fail("gazetteers", p, e.to_string()))?)
            }
            None => None,
        };
        let tagger = match &cfg.ner_model {
            Some(p) => {
                file_digest(&mut h, p).map_err(|e| fail("NER model", p, e.to_string()))?;
                let f = File::open(p).map_err(|e| fail("NER model", p, e.to_string()))?;
                let mut m = TaggerModel::load(BufReader::new(f)).map_err(|e| fail("NER model", p, e.to_string()))?;
                if let Some(g) = gazetteers {
                    m.set_gazetteers(g);
                }
                Some(m)
            }
            None if cfg.mention_mode == MentionMode::Ner => {
                return Err(PipelineError::Config("mention_mode = \"ner\" needs ner_model".into()))
            }
            None => None,
        };
        let kb = match &cfg.kb_dir {
            Some(p) => {
                file_digest(&mut h, p).map_err(|e| fail("knowledge base", p, e.to_string()))?;
                KnowledgeBase::load_dir(p).map_err(|e| fail("knowledge base", p, e.to_string()))?
            }
            None => KnowledgeBase::default(),
        };
        let Some(sp) = &cfg.sentiment_model else {
            return Err(PipelineError::Config("sentiment_model is required".into()));
        };
        file_digest(&mut h, sp).map_err(|e| fail("sentiment model", sp, e.to_string()))?;
        let f = File::open(sp).map_err(|e| fail("sentiment model", sp, e.to_string()))?;
        let sentiment = SentimentModel::load(BufReader::new(f)).map_err(|e| fail("sentiment model", sp, e.to_string()))?;

        Ok(Self {
            tagger,
            kb: Arc::new(kb),
            sentiment: Arc::new(sentiment),
            fingerprint: hex(&h.finalize()),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub mode: MentionMode,
    pub link: LinkParams,
    pub link_comments: bool,
}

impl From<&PipelineConfig> for RunOptions {
    fn from(c: &PipelineConfig) -> Self {
        Self {
            mode: c.mention_mode,
            link: c.link,
            link_comments: c.link_comments,
        }
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: MentionMode::Ner,
            link: LinkParams::default(),
            link_comments: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Title,
    Body,
}

/// One mention with its resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionAnnotation {
    pub field: Field,
    pub surface: String,
    pub entity_type: EntityType,
    pub char_span: (usize, usize),
    /// KB id when the link was accepted, otherwise a `surface:` key.
    pub entity_key: String,
    pub linked: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Pipeline output persisted next to the store.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub content_hash: String,
    pub annotations: Annotations,
    /// Article id → mentions.
    pub article_mentions: BTreeMap<String, Vec<MentionAnnotation>>,
    /// Comment id → mentions; only filled when comments are linked.
    pub comment_mentions: BTreeMap<String, Vec<MentionAnnotation>>,
    pub report: PipelineReport,
}

impl AnnotationSet {
    pub fn save(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{ANNOTATIONS_FILE}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, self)?;
            w.flush()?;
        }
        fs::rename(tmp, dir.join(ANNOTATIONS_FILE))
    }

    /// `Ok(None)` when no annotations were written yet.
    pub fn load(dir: impl AsRef<Path>) -> Result<Option<Self>, PipelineError> {
        let path = dir.as_ref().join(ANNOTATIONS_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let f = BufReader::new(File::open(path)?);
        Ok(Some(serde_json::from_reader(f)?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    /// `completed` or `skipped: up-to-date`.
    pub status: String,
    pub documents_processed: usize,
    pub documents_failed: usize,
    pub mentions: usize,
    pub links_accepted: usize,
    pub comments_scored: usize,
}

pub const STATUS_COMPLETED: &str = "completed";
pub const STATUS_SKIPPED: &str = "skipped: up-to-date";

/// Hash of everything the annotations depend on.
pub fn content_hash(store: &CorpusStore, models: &Models, opts: &RunOptions) -> String {
    let mut h = Sha256::new();
    h.update(store.export_bytes());
    h.update(serde_json::to_vec(opts).expect("options serialize"));
    h.update(models.fingerprint.as_bytes());
    hex(&h.finalize())
}

pub fn surface_key(surface: &str) -> String {
    format!("{SURFACE_PREFIX}{}", normalize_phrase(surface))
}

fn find_mentions(models: &Models, mode: MentionMode, text: &str) -> Vec<EntityMention> {
    match (mode, &models.tagger) {
        (MentionMode::Ner, Some(t)) => t.tag_text(text),
        _ => spot_mentions(&models.kb, text),
    }
}

/// Mentions of one text, each resolved to an accepted KB id or a surface key.
pub fn annotate_text(models: &Models, opts: &RunOptions, field: Field, text: &str) -> Vec<MentionAnnotation> {
    let mentions = find_mentions(models, opts.mode, text);
    let links = link_mentions(&models.kb, &mentions, &opts.link);
    mentions
        .into_iter()
        .map(|m| {
            let link = links.iter().find(|l| l.mention == m && l.accepted);
            MentionAnnotation {
                field,
                entity_key: link.map_or_else(|| surface_key(&m.surface), |l| l.entity_id.clone()),
                linked: link.is_some(),
                score: link.map(|l| l.score),
                surface: m.surface,
                entity_type: m.entity_type,
                char_span: m.char_span,
            }
        })
        .filter(|m| m.entity_key != SURFACE_PREFIX)
        .collect()
}

fn score_comment(models: &Models, text: &str) -> Result<f64, String> {
    let p = models.sentiment.predict(text);
    score_from_probs(p.probabilities).map_err(|e| e.to_string())
}

/// Annotate every article and comment. When `previous` was computed from the
/// same content it is returned unchanged with status `skipped: up-to-date`.
/// Per-document failures are logged and counted.
pub fn run_pipeline(
    store: &CorpusStore,
    models: &Models,
    opts: &RunOptions,
    previous: Option<&AnnotationSet>,
) -> AnnotationSet {
    let hash = content_hash(store, models, opts);
    if let Some(prev) = previous.filter(|p| p.content_hash == hash) {
        let mut same = prev.clone();
        same.report = PipelineReport {
            status: STATUS_SKIPPED.to_string(),
            ..PipelineReport::default()
        };
        return same;
    }

    let articles: Vec<_> = store.articles().collect();
    let article_out = crate::exec::map(&articles, |a| {
        let mut m = annotate_text(models, opts, Field::Title, &a.title);
        m.extend(annotate_text(models, opts, Field::Body, &a.body));
        (a.article_id.clone(), m)
    });

    let comments: Vec<_> = store.comments().collect();
    let comment_out = crate::exec::map(&comments, |c| {
        let mentions = opts
            .link_comments
            .then(|| annotate_text(models, opts, Field::Body, &c.body));
        (c.comment_id.clone(), score_comment(models, &c.body), mentions)
    });

    let mut set = AnnotationSet {
        content_hash: hash,
        ..AnnotationSet::default()
    };
    let mut report = PipelineReport {
        status: STATUS_COMPLETED.to_string(),
        ..PipelineReport::default()
    };
    for (id, mentions) in article_out {
        report.documents_processed += 1;
        report.mentions += mentions.len();
        report.links_accepted += mentions.iter().filter(|m| m.linked).count();
        let keys: BTreeSet<String> = mentions.iter().map(|m| m.entity_key.clone()).collect();
        set.annotations.article_entities.insert(id.clone(), keys);
        set.article_mentions.insert(id, mentions);
    }
    for (id, score, mentions) in comment_out {
        report.documents_processed += 1;
        match score {
            Ok(s) => {
                report.comments_scored += 1;
                set.annotations.comment_scores.insert(id.clone(), s);
            }
            Err(e) => {
                report.documents_failed += 1;
                tracing::warn!(comment = %id, error = %e, "sentiment scoring failed");
            }
        }
        if let Some(m) = mentions {
            report.mentions += m.len();
            report.links_accepted += m.iter().filter(|x| x.linked).count();
            set.comment_mentions.insert(id, m);
        }
    }
    set.report = report;
    set
}
