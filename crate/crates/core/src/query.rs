//! Read-only query surface over a store plus its annotations.
//!
//! A [`Snapshot`] is immutable; the service swaps whole snapshots after
//! ingestion or a pipeline run. Every response is a deterministic function of
//! the snapshot and the request.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    aggregate_entities, aggregate_entity, daily_series, entity_scores, pdf_histogram, rank_users,
    smooth_series, user_influence, AnalyticsError, Averaging, DateRange, EntityAggregate, Measure,
    SentimentPdf, SmoothedSeries, TimeSeries, UserAggregate,
};
use crate::config::Smoothing;
use crate::corpus::{Bucket, BucketStats, CorpusStore};
use crate::nel::KnowledgeBase;
use crate::pipeline::{AnnotationSet, PipelineReport};
use crate::textproc::normalize_phrase;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("{0}")]
    BadRequest(String),
}

impl From<AnalyticsError> for QueryError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::UnknownEntity(k) => Self::UnknownEntity(k),
            other => Self::BadRequest(other.to_string()),
        }
    }
}

pub struct Snapshot {
    pub store: Arc<CorpusStore>,
    pub annotations: Arc<AnnotationSet>,
    pub kb: Arc<KnowledgeBase>,
    pub smoothing: Smoothing,
    entities: BTreeMap<String, EntityAggregate>,
    users: Vec<UserAggregate>,
}

impl Snapshot {
    /// Precomputes entity and user aggregates over the full range.
    pub fn new(
        store: Arc<CorpusStore>,
        annotations: Arc<AnnotationSet>,
        kb: Arc<KnowledgeBase>,
        smoothing: Smoothing,
    ) -> Self {
        let ann = &annotations.annotations;
        let entities = aggregate_entities(&store, ann, DateRange::all(), Averaging::Comment)
            .into_iter()
            .map(|a| (a.entity_key.clone(), a))
            .collect();
        let users = user_influence(&store, ann, 0).users;
        Self {
            store,
            annotations,
            kb,
            smoothing,
            entities,
            users,
        }
    }

    pub fn empty() -> Self {
        Self::new(
            Arc::new(CorpusStore::new()),
            Arc::new(AnnotationSet::default()),
            Arc::new(KnowledgeBase::default()),
            Smoothing::default(),
        )
    }

    pub fn entity(&self, key: &str) -> Option<&EntityAggregate> {
        self.entities.get(key)
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityAggregate> {
        self.entities.values()
    }

    pub fn users(&self) -> &[UserAggregate] {
        &self.users
    }

    fn require(&self, key: &str) -> Result<(), QueryError> {
        if self.entities.contains_key(key) {
            Ok(())
        } else {
            Err(QueryError::UnknownEntity(key.to_string()))
        }
    }

    fn title_of(&self, key: &str) -> String {
        match self.kb.entity(key) {
            Some(e) => e.title.clone(),
            None => key.strip_prefix(crate::analytics::SURFACE_PREFIX).unwrap_or(key).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub entity_key: String,
    pub title: String,
    /// Title or anchor text that matched.
    pub matched: String,
    pub linked: bool,
    pub article_count: usize,
    pub comment_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub results: Vec<SearchHit>,
}

pub const SEARCH_LIMIT: usize = 50;

/// Case-insensitive prefix match on KB titles and anchors, plus unlinked
/// surface keys. Only entities present in the annotations are returned,
/// most-commented first.
pub fn search(snap: &Snapshot, q: &str) -> Result<SearchResponse, QueryError> {
    let norm = normalize_phrase(q);
    if norm.is_empty() {
        return Err(QueryError::BadRequest("query must not be empty".into()));
    }
    let mut matched: BTreeMap<String, String> = snap.kb.search_prefix(&norm).into_iter().collect();
    for key in snap.entities.keys() {
        if let Some(s) = key.strip_prefix(crate::analytics::SURFACE_PREFIX) {
            if s.starts_with(&norm) {
                matched.entry(key.clone()).or_insert_with(|| s.to_string());
            }
        }
    }
    let mut results: Vec<SearchHit> = matched
        .into_iter()
        .filter_map(|(key, text)| {
            let agg = snap.entities.get(&key)?;
            Some(SearchHit {
                title: snap.title_of(&key),
                matched: text,
                linked: agg.linked,
                article_count: agg.article_count,
                comment_count: agg.comment_count,
                entity_key: key,
            })
        })
        .collect();
    results.sort_by(|a, b| {
        b.comment_count
            .cmp(&a.comment_count)
            .then_with(|| a.entity_key.cmp(&b.entity_key))
    });
    results.truncate(SEARCH_LIMIT);
    Ok(SearchResponse {
        query: q.to_string(),
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleView {
    pub site_id: String,
    pub domain_name: String,
    pub article_count: usize,
    pub comment_count: usize,
    pub mean_sentiment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubblesResponse {
    pub entity_key: String,
    pub title: String,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub bubbles: Vec<BubbleView>,
}

/// One bubble per site with an article in range mentioning the entity,
/// ordered by comment count descending, then site id.
pub fn bubbles(snap: &Snapshot, key: &str, range: DateRange) -> Result<BubblesResponse, QueryError> {
    snap.require(key)?;
    let agg = aggregate_entity(&snap.store, &snap.annotations.annotations, key, range, Averaging::Comment);
    let mut bubbles: Vec<BubbleView> = agg
        .map(|a| {
            a.per_site
                .into_iter()
                .map(|(site_id, s)| BubbleView {
                    domain_name: snap
                        .store
                        .site(&site_id)
                        .map(|x| x.domain_name.clone())
                        .unwrap_or_default(),
                    site_id,
                    article_count: s.article_count,
                    comment_count: s.comment_count,
                    mean_sentiment: s.mean_sentiment,
                })
                .collect()
        })
        .unwrap_or_default();
    bubbles.sort_by(|a, b| {
        b.comment_count
            .cmp(&a.comment_count)
            .then_with(|| a.site_id.cmp(&b.site_id))
    });
    Ok(BubblesResponse {
        entity_key: key.to_string(),
        title: snap.title_of(key),
        from: range.from,
        to: range.to,
        bubbles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineParams {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub window: usize,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineResponse {
    pub entity_key: String,
    pub parameters: TimelineParams,
    pub raw: TimeSeries,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothed: Option<SmoothedSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

/// Daily series, then interpolation and smoothing. With fewer than two
/// observed days, or a daily grid shorter than the window, only the raw
/// series is returned together with a notice.
pub fn timeline(
    snap: &Snapshot,
    key: &str,
    range: DateRange,
    window: Option<usize>,
    order: Option<usize>,
) -> Result<TimelineResponse, QueryError> {
    snap.require(key)?;
    let window = window.unwrap_or(snap.smoothing.window);
    let order = order.unwrap_or(snap.smoothing.order);
    if window < 3 || window.is_multiple_of(2) || order >= window {
        return Err(QueryError::BadRequest(format!(
            "window must be odd and >= 3 with order < window (got window {window}, order {order})"
        )));
    }
    let raw = daily_series(&snap.store, &snap.annotations.annotations, key, range)?;
    let (smoothed, notice) = if raw.points.len() < 2 {
        (None, Some(format!("smoothing needs at least 2 observed days, found {}", raw.points.len())))
    } else {
        let span = (raw.points[raw.points.len() - 1].day - raw.points[0].day).num_days() as usize + 1;
        if span < window {
            (None, Some(format!("daily grid of {span} days is shorter than the window {window}")))
        } else {
            (Some(smooth_series(&raw, window, order)?), None)
        }
    };
    Ok(TimelineResponse {
        entity_key: key.to_string(),
        parameters: TimelineParams {
            from: range.from,
            to: range.to,
            window,
            order,
        },
        raw,
        smoothed,
        notice,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfResponse {
    pub entity_key: String,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdf: Option<SentimentPdf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

pub fn pdf(snap: &Snapshot, key: &str, range: DateRange) -> Result<PdfResponse, QueryError> {
    snap.require(key)?;
    let scores = entity_scores(&snap.store, &snap.annotations.annotations, key, range)?;
    let count = scores.len();
    if scores.is_empty() {
        return Ok(PdfResponse {
            entity_key: key.to_string(),
            count,
            pdf: None,
            notice: Some("no scored comments".into()),
        });
    }
    Ok(PdfResponse {
        entity_key: key.to_string(),
        count,
        pdf: Some(pdf_histogram(&scores)?),
        notice: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedUser {
    pub rank: usize,
    pub value: u64,
    #[serde(flatten)]
    pub user: UserAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluencersResponse {
    pub metric: String,
    pub k: usize,
    pub users: Vec<RankedUser>,
}

pub fn influencers(snap: &Snapshot, metric: &str, k: usize) -> Result<InfluencersResponse, QueryError> {
    let m: Measure = metric.parse()?;
    let users = rank_users(&snap.users, m, k)
        .into_iter()
        .enumerate()
        .map(|(i, u)| RankedUser {
            rank: i + 1,
            value: u.measure(m),
            user: u.clone(),
        })
        .collect();
    Ok(InfluencersResponse {
        metric: m.as_str().to_string(),
        k,
        users,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub sites: usize,
    pub articles: usize,
    pub comments: usize,
    pub entities: usize,
    pub linked_entities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub bucket: Bucket,
    pub totals: Totals,
    pub buckets: Vec<BucketStats>,
    pub pipeline: PipelineReport,
}

pub fn stats(snap: &Snapshot, bucket: Bucket) -> StatsResponse {
    StatsResponse {
        bucket,
        totals: Totals {
            sites: snap.store.site_count(),
            articles: snap.store.article_count(),
            comments: snap.store.comment_count(),
            entities: snap.entities.len(),
            linked_entities: snap.entities.values().filter(|e| e.linked).count(),
        },
        buckets: snap.store.corpus_stats(bucket),
        pipeline: snap.annotations.report.clone(),
    }
}

/// `YYYY-MM-DD`, or `None` for an absent/empty parameter.
pub fn parse_day(s: Option<&str>) -> Result<Option<NaiveDate>, QueryError> {
    match s.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(v) => NaiveDate::parse_from_str(v, "%Y-%m-%d")
            .map(Some)
            .map_err(|_| QueryError::BadRequest(format!("invalid date `{v}` (expected YYYY-MM-DD)"))),
    }
}

pub fn parse_range(from: Option<&str>, to: Option<&str>) -> Result<DateRange, QueryError> {
    let r = DateRange::new(parse_day(from)?, parse_day(to)?);
    if let (Some(a), Some(b)) = (r.from, r.to) {
        if a > b {
            return Err(QueryError::BadRequest("`from` is after `to`".into()));
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::Annotations;
    use crate::corpus::{ingest_stream, RecordKind};

    fn snapshot() -> Snapshot {
        let mut s = CorpusStore::new();
        let sites = "{\"site_id\":\"A\",\"domain_name\":\"a.example\",\"category\":\"news_media\"}\n\
                     {\"site_id\":\"B\",\"domain_name\":\"b.example\",\"category\":\"other\"}";
        ingest_stream(sites.as_bytes(), RecordKind::Site, &mut s).unwrap();
        let mut arts = String::new();
        for (id, site, day) in [("a1", "A", 1), ("a2", "A", 3), ("b1", "B", 2)] {
            arts.push_str(&format!(
                "{{\"article_id\":\"{id}\",\"site_id\":\"{site}\",\"url\":\"u\",\"title\":\"t\",\"body\":\"b\",\"published_at\":\"2016-06-0{day}T08:00:00Z\"}}\n"
            ));
        }
        ingest_stream(arts.as_bytes(), RecordKind::Article, &mut s).unwrap();
        let mut ann = Annotations::default();
        let mut comments = String::new();
        // site A: 5 comments, mean 0.2; site B: 1 comment at -0.5
        for (i, (art, score)) in [("a1", 0.4), ("a1", 0.0), ("a1", 0.2), ("a2", 0.6), ("a2", -0.2), ("b1", -0.5)]
            .into_iter()
            .enumerate()
        {
            comments.push_str(&format!(
                "{{\"comment_id\":\"c{i}\",\"article_id\":\"{art}\",\"user_id\":\"u{}\",\"body\":\"x\",\"created_at\":\"2016-06-05T08:00:00Z\",\"likes\":{i},\"dislikes\":0}}\n",
                i % 2
            ));
            ann.comment_scores.insert(format!("c{i}"), score);
        }
        ingest_stream(comments.as_bytes(), RecordKind::Comment, &mut s).unwrap();
        for a in ["a1", "a2", "b1"] {
            ann.article_entities.insert(a.into(), ["Q1".to_string()].into());
        }
        ann.article_entities.get_mut("a1").unwrap().insert("surface:zed".into());
        let set = AnnotationSet {
            annotations: ann,
            ..AnnotationSet::default()
        };
        Snapshot::new(Arc::new(s), Arc::new(set), Arc::new(KnowledgeBase::default()), Smoothing::default())
    }

    #[test]
    fn bubble_fixture() {
        let snap = snapshot();
        let r = bubbles(&snap, "Q1", DateRange::all()).unwrap();
        assert_eq!(r.bubbles.len(), 2);
        let (a, b) = (&r.bubbles[0], &r.bubbles[1]);
        assert_eq!((a.site_id.as_str(), a.article_count, a.comment_count), ("A", 2, 5));
        assert!((a.mean_sentiment - 0.2).abs() < 1e-12);
        assert_eq!((b.site_id.as_str(), b.article_count, b.comment_count), ("B", 1, 1));
        assert_eq!(b.mean_sentiment, -0.5);
        let agg = snap.entity("Q1").unwrap();
        assert_eq!(r.bubbles.iter().map(|b| b.comment_count).sum::<usize>(), agg.comment_count);

        let none = parse_range(Some("2017-01-01"), None).unwrap();
        assert!(bubbles(&snap, "Q1", none).unwrap().bubbles.is_empty());
        assert_eq!(bubbles(&snap, "Q9", DateRange::all()), Err(QueryError::UnknownEntity("Q9".into())));
    }

    #[test]
    fn timeline_echo_and_notice() {
        let snap = snapshot();
        let r = timeline(&snap, "Q1", DateRange::all(), Some(3), Some(1)).unwrap();
        assert_eq!(r.parameters.window, 3);
        assert_eq!(r.parameters.order, 1);
        assert_eq!(r.raw.points.len(), 3);
        assert_eq!(r.smoothed.as_ref().unwrap().grid.len(), 3);
        let short = timeline(&snap, "Q1", DateRange::all(), None, None).unwrap();
        assert!(short.smoothed.is_none() && short.notice.is_some());
        let one = timeline(&snap, "surface:zed", DateRange::all(), Some(3), Some(1)).unwrap();
        assert!(one.notice.unwrap().contains("at least 2"));
        assert!(timeline(&snap, "Q1", DateRange::all(), Some(4), None).is_err());
    }

    #[test]
    fn pdf_influencers_stats_search() {
        let snap = snapshot();
        let p = pdf(&snap, "Q1", DateRange::all()).unwrap();
        assert_eq!(p.count, 6);
        let mass: f64 = p.pdf.unwrap().densities.iter().map(|d| d * 0.1).sum();
        assert!((mass - 1.0).abs() < 1e-9);

        let inf = influencers(&snap, "likes_count", 10).unwrap();
        // u1 has likes 1 + 3 + 5, u0 has 0 + 2 + 4
        assert_eq!(inf.users[0].user.user_id, "u1");
        assert_eq!(inf.users[0].value, 9);
        assert_eq!(inf.users.len(), 2);
        match influencers(&snap, "fame", 3) {
            Err(QueryError::BadRequest(m)) => assert!(m.contains("h-index-likes")),
            other => panic!("{other:?}"),
        }

        let st = stats(&snap, Bucket::Day);
        assert_eq!(st.totals.articles, 3);
        assert_eq!(st.totals.entities, 2);
        assert_eq!(st.buckets.len(), 5);

        let hits = search(&snap, "Z").unwrap();
        assert_eq!(hits.results[0].entity_key, "surface:zed");
        assert!(search(&snap, " ").is_err());
    }

    #[test]
    fn responses_are_deterministic() {
        let snap = snapshot();
        let a = serde_json::to_vec(&timeline(&snap, "Q1", DateRange::all(), Some(3), Some(1)).unwrap()).unwrap();
        let b = serde_json::to_vec(&timeline(&snap, "Q1", DateRange::all(), Some(3), Some(1)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn date_parsing() {
        assert_eq!(parse_day(Some("")).unwrap(), None);
        assert!(parse_day(Some("2016-13-01")).is_err());
        assert!(parse_range(Some("2016-02-01"), Some("2016-01-01")).is_err());
    }
}
