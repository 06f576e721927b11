//! Aggregation of linked and scored comments into entity, site, user and
//! time-series views.
//!
//! Everything here is a pure function of a [`CorpusStore`] and the
//! [`Annotations`] produced by the pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Article, CorpusStore};

/// Prefix of pseudo-identifiers for mentions that were not linked to the KB.
pub const SURFACE_PREFIX: &str = "surface:";

pub fn is_surface_key(key: &str) -> bool {
    key.starts_with(SURFACE_PREFIX)
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("correlation is undefined for a constant sequence")]
    DegenerateCorrelation,
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("score {0} is outside [-1, 1]")]
    ScoreOutOfRange(f64),
    #[error("unknown metric `{name}`; valid metrics: {}", valid.join(", "))]
    UnknownMetric { name: String, valid: Vec<String> },
}

/// Per-document output of the pipeline that analytics consumes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    /// Article id → entity keys (KB ids or `surface:` pseudo-ids).
    pub article_entities: BTreeMap<String, BTreeSet<String>>,
    /// Comment id → sentiment score in [-1, 1].
    pub comment_scores: BTreeMap<String, f64>,
}

impl Annotations {
    pub fn entities_of(&self, article_id: &str) -> Option<&BTreeSet<String>> {
        self.article_entities.get(article_id)
    }

    pub fn score(&self, comment_id: &str) -> Option<f64> {
        self.comment_scores.get(comment_id).copied()
    }

    pub fn entity_keys(&self) -> BTreeSet<&str> {
        self.article_entities
            .values()
            .flatten()
            .map(String::as_str)
            .collect()
    }

    pub fn knows_entity(&self, key: &str) -> bool {
        self.article_entities.values().any(|s| s.contains(key))
    }
}

/// Inclusive range of article publication days; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl DateRange {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn new(from: Option<NaiveDate>, to: Option<NaiveDate>) -> Self {
        Self { from, to }
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.from.is_none_or(|f| day >= f) && self.to.is_none_or(|t| day <= t)
    }
}

/// How an entity's mean sentiment is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Unweighted mean over comments.
    #[default]
    Comment,
    /// Mean of per-article means.
    Article,
    /// Comments weighted by `1 + likes`.
    LikeWeighted,
}

impl FromStr for Averaging {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "comment" => Ok(Self::Comment),
            "article" => Ok(Self::Article),
            "like_weighted" | "like-weighted" => Ok(Self::LikeWeighted),
            other => Err(AnalyticsError::InvalidParameter(format!("averaging `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteAggregate {
    pub article_count: usize,
    pub comment_count: usize,
    pub mean_sentiment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityAggregate {
    pub entity_key: String,
    /// False for `surface:` pseudo-ids.
    pub linked: bool,
    pub article_count: usize,
    pub comment_count: usize,
    /// Comments that carry a sentiment score.
    pub scored_count: usize,
    pub density: f64,
    pub mean_sentiment: f64,
    pub per_site: BTreeMap<String, SiteAggregate>,
}

#[derive(Default)]
struct MeanAcc {
    articles: usize,
    comments: usize,
    scored: usize,
    weighted_sum: f64,
    weight: f64,
    article_means: Vec<f64>,
}

impl MeanAcc {
    fn add_article(&mut self, store: &CorpusStore, ann: &Annotations, article: &Article, averaging: Averaging) {
        self.articles += 1;
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in store.comments_of(&article.article_id) {
            self.comments += 1;
            let Some(s) = ann.score(&c.comment_id) else { continue };
            self.scored += 1;
            sum += s;
            n += 1;
            let w = match averaging {
                Averaging::LikeWeighted => 1.0 + c.likes as f64,
                _ => 1.0,
            };
            self.weighted_sum += w * s;
            self.weight += w;
        }
        if n > 0 {
            self.article_means.push(sum / n as f64);
        }
    }

    fn mean(&self, averaging: Averaging) -> f64 {
        let m = match averaging {
            Averaging::Article if !self.article_means.is_empty() => {
                self.article_means.iter().sum::<f64>() / self.article_means.len() as f64
            }
            Averaging::Article => 0.0,
            _ if self.weight > 0.0 => self.weighted_sum / self.weight,
            _ => 0.0,
        };
        m.clamp(-1.0, 1.0)
    }
}

fn articles_in_range<'a>(
    store: &'a CorpusStore,
    ann: &'a Annotations,
    range: DateRange,
) -> impl Iterator<Item = (&'a Article, &'a BTreeSet<String>)> {
    store.articles().filter_map(move |a| {
        if !range.contains(a.day()) {
            return None;
        }
        ann.entities_of(&a.article_id).map(|e| (a, e))
    })
}

/// Entity key → articles in range mentioning it.
fn entity_index<'a>(
    store: &'a CorpusStore,
    ann: &'a Annotations,
    range: DateRange,
) -> BTreeMap<&'a str, Vec<&'a Article>> {
    let mut index: BTreeMap<&str, Vec<&Article>> = BTreeMap::new();
    for (article, keys) in articles_in_range(store, ann, range) {
        for k in keys {
            index.entry(k.as_str()).or_default().push(article);
        }
    }
    index
}

fn aggregate_one(
    store: &CorpusStore,
    ann: &Annotations,
    key: &str,
    articles: &[&Article],
    averaging: Averaging,
) -> EntityAggregate {
    let mut total = MeanAcc::default();
    let mut sites: BTreeMap<&str, MeanAcc> = BTreeMap::new();
    for a in articles {
        total.add_article(store, ann, a, averaging);
        sites
            .entry(a.site_id.as_str())
            .or_default()
            .add_article(store, ann, a, averaging);
    }
    let per_site = sites
        .into_iter()
        .map(|(site, acc)| {
            (
                site.to_string(),
                SiteAggregate {
                    article_count: acc.articles,
                    comment_count: acc.comments,
                    mean_sentiment: acc.mean(averaging),
                },
            )
        })
        .collect();
    EntityAggregate {
        entity_key: key.to_string(),
        linked: !is_surface_key(key),
        article_count: total.articles,
        comment_count: total.comments,
        scored_count: total.scored,
        density: total.comments as f64 / total.articles.max(1) as f64,
        mean_sentiment: total.mean(averaging),
        per_site,
    }
}

/// One aggregate per entity mentioned by an article published in `range`,
/// ordered by entity key. Every comment counts toward every entity of its
/// parent article.
pub fn aggregate_entities(
    store: &CorpusStore,
    ann: &Annotations,
    range: DateRange,
    averaging: Averaging,
) -> Vec<EntityAggregate> {
    let index: Vec<(&str, Vec<&Article>)> = entity_index(store, ann, range).into_iter().collect();
    crate::exec::map(&index, |(key, arts)| aggregate_one(store, ann, key, arts, averaging))
}

/// Aggregate for a single entity, or `None` when no article in range
/// mentions it.
pub fn aggregate_entity(
    store: &CorpusStore,
    ann: &Annotations,
    key: &str,
    range: DateRange,
    averaging: Averaging,
) -> Option<EntityAggregate> {
    let arts: Vec<&Article> = articles_in_range(store, ann, range)
        .filter(|(_, keys)| keys.contains(key))
        .map(|(a, _)| a)
        .collect();
    (!arts.is_empty()).then(|| aggregate_one(store, ann, key, &arts, averaging))
}

/// Largest `h` such that at least `h` values are `>= h`.
pub fn h_index(values: &[u64]) -> usize {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted
        .iter()
        .enumerate()
        .take_while(|&(i, &v)| v >= (i + 1) as u64)
        .count()
}

/// The seven per-user influence measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "comments_count")]
    CommentsCount,
    #[serde(rename = "replies_count")]
    RepliesCount,
    #[serde(rename = "likes_count")]
    LikesCount,
    #[serde(rename = "dislikes_count")]
    DislikesCount,
    #[serde(rename = "h-index-likes")]
    HIndexLikes,
    #[serde(rename = "h-index-dislikes")]
    HIndexDislikes,
    #[serde(rename = "h-index-replies")]
    HIndexReplies,
}

impl Measure {
    pub const ALL: [Measure; 7] = [
        Self::CommentsCount,
        Self::RepliesCount,
        Self::LikesCount,
        Self::DislikesCount,
        Self::HIndexLikes,
        Self::HIndexDislikes,
        Self::HIndexReplies,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CommentsCount => "comments_count",
            Self::RepliesCount => "replies_count",
            Self::LikesCount => "likes_count",
            Self::DislikesCount => "dislikes_count",
            Self::HIndexLikes => "h-index-likes",
            Self::HIndexDislikes => "h-index-dislikes",
            Self::HIndexReplies => "h-index-replies",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = AnalyticsError;

    /// Accepts the canonical names and their underscore spellings
    /// (`h_index_likes`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let canon = s.trim().to_ascii_lowercase().replace("h_index_", "h-index-");
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == canon)
            .ok_or_else(|| AnalyticsError::UnknownMetric {
                name: s.to_string(),
                valid: Self::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCount {
    pub entity_key: String,
    pub comments: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAggregate {
    pub user_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_name: Option<String>,
    pub comments_count: u64,
    /// Replies received by this user's comments.
    pub replies_count: u64,
    /// Replies this user wrote to other comments.
    pub replies_written: u64,
    pub likes_count: u64,
    pub dislikes_count: u64,
    pub h_index_likes: u64,
    pub h_index_dislikes: u64,
    pub h_index_replies: u64,
    pub top_entities: Vec<EntityCount>,
}

impl UserAggregate {
    pub fn empty(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            user_name: None,
            comments_count: 0,
            replies_count: 0,
            replies_written: 0,
            likes_count: 0,
            dislikes_count: 0,
            h_index_likes: 0,
            h_index_dislikes: 0,
            h_index_replies: 0,
            top_entities: Vec::new(),
        }
    }

    pub fn measure(&self, m: Measure) -> u64 {
        match m {
            Measure::CommentsCount => self.comments_count,
            Measure::RepliesCount => self.replies_count,
            Measure::LikesCount => self.likes_count,
            Measure::DislikesCount => self.dislikes_count,
            Measure::HIndexLikes => self.h_index_likes,
            Measure::HIndexDislikes => self.h_index_dislikes,
            Measure::HIndexReplies => self.h_index_replies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    /// All users, ordered by id.
    pub users: Vec<UserAggregate>,
    /// Measure name → top-k user ids.
    pub rankings: BTreeMap<String, Vec<String>>,
}

pub const TOP_ENTITIES: usize = 5;

/// All seven measures for every commenting user, plus a top-`top_k` ranking
/// per measure. Entity annotations only feed `top_entities`.
pub fn user_influence(store: &CorpusStore, ann: &Annotations, top_k: usize) -> InfluenceReport {
    let mut by_user: BTreeMap<&str, Vec<&crate::corpus::Comment>> = BTreeMap::new();
    for c in store.comments() {
        by_user.entry(c.user_id.as_str()).or_default().push(c);
    }
    let groups: Vec<(&str, Vec<&crate::corpus::Comment>)> = by_user.into_iter().collect();
    let users = crate::exec::map(&groups, |(user, comments)| {
        let mut u = UserAggregate::empty(*user);
        u.user_name = comments.iter().find_map(|c| c.user_name.clone());
        let mut likes = Vec::with_capacity(comments.len());
        let mut dislikes = Vec::with_capacity(comments.len());
        let mut replies = Vec::with_capacity(comments.len());
        let mut entities: BTreeMap<&str, usize> = BTreeMap::new();
        for c in comments {
            let r = store.reply_count(&c.comment_id) as u64;
            likes.push(c.likes);
            dislikes.push(c.dislikes);
            replies.push(r);
            u.replies_count += r;
            u.likes_count += c.likes;
            u.dislikes_count += c.dislikes;
            if c.parent_comment_id.is_some() {
                u.replies_written += 1;
            }
            if let Some(keys) = ann.entities_of(&c.article_id) {
                for k in keys {
                    *entities.entry(k.as_str()).or_default() += 1;
                }
            }
        }
        u.comments_count = comments.len() as u64;
        u.h_index_likes = h_index(&likes) as u64;
        u.h_index_dislikes = h_index(&dislikes) as u64;
        u.h_index_replies = h_index(&replies) as u64;
        let mut top: Vec<(&str, usize)> = entities.into_iter().collect();
        top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        u.top_entities = top
            .into_iter()
            .take(TOP_ENTITIES)
            .map(|(k, n)| EntityCount {
                entity_key: k.to_string(),
                comments: n,
            })
            .collect();
        u
    });
    let rankings = Measure::ALL
        .iter()
        .map(|&m| {
            let ids = rank_users(&users, m, top_k)
                .into_iter()
                .map(|u| u.user_id.clone())
                .collect();
            (m.as_str().to_string(), ids)
        })
        .collect();
    InfluenceReport { users, rankings }
}

/// Top `k` users by `measure`, descending, ties broken by user id.
pub fn rank_users(users: &[UserAggregate], measure: Measure, k: usize) -> Vec<&UserAggregate> {
    let mut v: Vec<&UserAggregate> = users.iter().collect();
    v.sort_by(|a, b| {
        b.measure(measure)
            .cmp(&a.measure(measure))
            .then_with(|| a.user_id.cmp(&b.user_id))
    });
    v.truncate(k);
    v
}

/// Sample Pearson correlation coefficient, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalyticsError::TooFewPoints { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::DegenerateCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub measure_names: Vec<String>,
    /// `None` where the correlation is undefined.
    pub values: Vec<Vec<Option<f64>>>,
    /// Measures that are constant across users.
    pub degenerate: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: Measure, b: Measure) -> Option<f64> {
        let i = Measure::ALL.iter().position(|&m| m == a)?;
        let j = Measure::ALL.iter().position(|&m| m == b)?;
        self.values[i][j]
    }
}

/// Pairwise Pearson correlation of the seven measures across users.
pub fn correlation_matrix(users: &[UserAggregate]) -> Result<CorrelationMatrix, AnalyticsError> {
    if users.len() < 2 {
        return Err(AnalyticsError::TooFewPoints { needed: 2, got: users.len() });
    }
    let cols: Vec<Vec<f64>> = Measure::ALL
        .iter()
        .map(|&m| users.iter().map(|u| u.measure(m) as f64).collect())
        .collect();
    let k = cols.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = pearson(&cols[i], &cols[j]).ok();
            let r = if i == j { r.map(|_| 1.0) } else { r };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    let degenerate = (0..k)
        .filter(|&i| values[i][i].is_none())
        .map(|i| Measure::ALL[i].as_str().to_string())
        .collect();
    Ok(CorrelationMatrix {
        measure_names: Measure::ALL.iter().map(|m| m.as_str().to_string()).collect(),
        values,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub day: NaiveDate,
    pub mean_sentiment: f64,
    pub comment_count: usize,
    pub article_count: usize,
    /// Population standard deviation of the day's article means.
    pub std_dev: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub points: Vec<SeriesPoint>,
}

impl TimeSeries {
    pub fn observations(&self) -> Vec<(NaiveDate, f64)> {
        self.points.iter().map(|p| (p.day, p.mean_sentiment)).collect()
    }
}

/// Daily sentiment of one entity: comments average into their article,
/// articles average into their publication day. Articles without scored
/// comments and days without such articles are left out.
pub fn daily_series(
    store: &CorpusStore,
    ann: &Annotations,
    key: &str,
    range: DateRange,
) -> Result<TimeSeries, AnalyticsError> {
    if !ann.knows_entity(key) {
        return Err(AnalyticsError::UnknownEntity(key.to_string()));
    }
    let mut days: BTreeMap<NaiveDate, (Vec<f64>, usize)> = BTreeMap::new();
    for (article, keys) in articles_in_range(store, ann, range) {
        if !keys.contains(key) {
            continue;
        }
        let scores: Vec<f64> = store
            .comments_of(&article.article_id)
            .filter_map(|c| ann.score(&c.comment_id))
            .collect();
        if scores.is_empty() {
            continue;
        }
        let e = days.entry(article.day()).or_default();
        e.0.push(scores.iter().sum::<f64>() / scores.len() as f64);
        e.1 += scores.len();
    }
    let points = days
        .into_iter()
        .map(|(day, (means, comments))| {
            let n = means.len() as f64;
            let mean = means.iter().sum::<f64>() / n;
            let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
            SeriesPoint {
                day,
                mean_sentiment: mean.clamp(-1.0, 1.0),
                comment_count: comments,
                article_count: means.len(),
                std_dev: var.sqrt(),
            }
        })
        .collect();
    Ok(TimeSeries { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyGrid {
    pub days: Vec<NaiveDate>,
    pub values: Vec<f64>,
    /// False for interpolated days.
    pub observed: Vec<bool>,
}

/// Fill every missing day between the first and last observation by linear
/// interpolation between the nearest observed neighbours. Input must be
/// sorted by day without duplicates.
pub fn interpolate_linear(obs: &[(NaiveDate, f64)]) -> Result<DailyGrid, AnalyticsError> {
    if obs.len() < 2 {
        return Err(AnalyticsError::TooFewPoints { needed: 2, got: obs.len() });
    }
    if obs.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(AnalyticsError::InvalidParameter("days must be strictly increasing".into()));
    }
    let mut grid = DailyGrid {
        days: Vec::new(),
        values: Vec::new(),
        observed: Vec::new(),
    };
    for w in obs.windows(2) {
        let ((d0, v0), (d1, v1)) = (w[0], w[1]);
        let gap = (d1 - d0).num_days();
        for k in 0..gap {
            let t = k as f64 / gap as f64;
            grid.days.push(d0 + Days::new(k as u64));
            grid.values.push(if k == 0 { v0 } else { v0 + (v1 - v0) * t });
            grid.observed.push(k == 0);
        }
    }
    let (last_day, last) = obs[obs.len() - 1];
    grid.days.push(last_day);
    grid.values.push(last);
    grid.observed.push(true);
    Ok(grid)
}

fn check_sg(len: usize, window: usize, order: usize) -> Result<(), AnalyticsError> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(AnalyticsError::InvalidParameter(format!(
            "window must be odd and at least 3, got {window}"
        )));
    }
    if order >= window {
        return Err(AnalyticsError::InvalidParameter(format!(
            "order {order} must be below window {window}"
        )));
    }
    if len < window {
        return Err(AnalyticsError::TooFewPoints { needed: window, got: len });
    }
    Ok(())
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        a.swap(col, p);
        b.swap(col, p);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Weights that, applied to a window, give the least-squares polynomial of
/// `order` evaluated at `offset` (relative to the window centre).
pub fn savgol_weights(window: usize, order: usize, offset: isize) -> Vec<f64> {
    let m = (window / 2) as isize;
    // abscissae scaled to [-1, 1] keeps the normal equations well conditioned
    let xs: Vec<f64> = (-m..=m).map(|i| i as f64 / m as f64).collect();
    let p = order + 1;
    let mut ata = vec![vec![0.0; p]; p];
    for &x in &xs {
        for r in 0..p {
            for c in 0..p {
                ata[r][c] += x.powi((r + c) as i32);
            }
        }
    }
    let x0 = offset as f64 / m as f64;
    let e: Vec<f64> = (0..p).map(|k| x0.powi(k as i32)).collect();
    let coef = solve(ata, e);
    xs.iter()
        .map(|&x| (0..p).map(|k| coef[k] * x.powi(k as i32)).sum())
        .collect()
}

/// Window start and centre offset used for output point `i`.
fn sg_window(len: usize, window: usize, i: usize) -> (usize, isize) {
    let m = window / 2;
    if i < m {
        (0, i as isize - m as isize)
    } else if i + m >= len {
        let start = len - window;
        (start, (i - start) as isize - m as isize)
    } else {
        (i - m, 0)
    }
}

/// Savitzky-Golay smoothing. The first and last `window / 2` points are
/// taken from the polynomial fitted to the first and last full window.
pub fn savitzky_golay(values: &[f64], window: usize, order: usize) -> Result<Vec<f64>, AnalyticsError> {
    check_sg(values.len(), window, order)?;
    let mut cache: HashMap<isize, Vec<f64>> = HashMap::new();
    Ok((0..values.len())
        .map(|i| {
            let (start, off) = sg_window(values.len(), window, i);
            let w = cache
                .entry(off)
                .or_insert_with(|| savgol_weights(window, order, off));
            dot(w, &values[start..start + window])
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedSeries {
    pub grid: Vec<NaiveDate>,
    /// Interpolated daily values the filter ran on.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    pub smoothed: Vec<f64>,
    /// Standard deviation of residuals within each point's window.
    pub band: Vec<f64>,
    pub window: usize,
    pub order: usize,
}

/// Interpolate the series onto a daily grid, smooth it and compute the band.
pub fn smooth_series(series: &TimeSeries, window: usize, order: usize) -> Result<SmoothedSeries, AnalyticsError> {
    let grid = interpolate_linear(&series.observations())?;
    let smoothed = savitzky_golay(&grid.values, window, order)?;
    let n = grid.values.len();
    let band = (0..n)
        .map(|i| {
            let (start, _) = sg_window(n, window, i);
            let res: Vec<f64> = (start..start + window)
                .map(|j| grid.values[j] - smoothed[j])
                .collect();
            let mean = res.iter().sum::<f64>() / window as f64;
            (res.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / window as f64).sqrt()
        })
        .collect();
    Ok(SmoothedSeries {
        grid: grid.days,
        values: grid.values,
        observed: grid.observed,
        smoothed,
        band,
        window,
        order,
    })
}

pub const PDF_BINS: usize = 20;
pub const PDF_BIN_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentPdf {
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub count: usize,
}

pub fn pdf_bin_edges() -> Vec<f64> {
    (0..=PDF_BINS).map(|i| (i as f64 - 10.0) / 10.0).collect()
}

/// Histogram density estimate over 20 bins of width 0.1 on [-1, 1]. Bins are
/// left-closed; the last one is closed on both sides.
pub fn pdf_histogram(scores: &[f64]) -> Result<SentimentPdf, AnalyticsError> {
    if scores.is_empty() {
        return Err(AnalyticsError::TooFewPoints { needed: 1, got: 0 });
    }
    let edges = pdf_bin_edges();
    let mut counts = [0usize; PDF_BINS];
    for &s in scores {
        if !(-1.0..=1.0).contains(&s) {
            return Err(AnalyticsError::ScoreOutOfRange(s));
        }
        let bin = edges[1..PDF_BINS].partition_point(|&e| e <= s);
        counts[bin] += 1;
    }
    let n = scores.len() as f64;
    Ok(SentimentPdf {
        bin_edges: edges,
        densities: counts.iter().map(|&c| c as f64 * 10.0 / n).collect(),
        count: scores.len(),
    })
}

/// Scores of comments on articles in range that mention `key`.
pub fn entity_scores(store: &CorpusStore, ann: &Annotations, key: &str, range: DateRange) -> Result<Vec<f64>, AnalyticsError> {
    if !ann.knows_entity(key) {
        return Err(AnalyticsError::UnknownEntity(key.to_string()));
    }
    Ok(articles_in_range(store, ann, range)
        .filter(|(_, keys)| keys.contains(key))
        .flat_map(|(a, _)| store.comments_of(&a.article_id))
        .filter_map(|c| ann.score(&c.comment_id))
        .collect())
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Columns: entity_key, linked, article_count, comment_count, scored_count,
/// density, mean_sentiment.
pub fn write_entities_csv<W: Write>(aggs: &[EntityAggregate], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "entity_key",
        "linked",
        "article_count",
        "comment_count",
        "scored_count",
        "density",
        "mean_sentiment",
    ])
    .map_err(csv_err)?;
    for a in aggs {
        w.write_record([
            a.entity_key.clone(),
            a.linked.to_string(),
            a.article_count.to_string(),
            a.comment_count.to_string(),
            a.scored_count.to_string(),
            a.density.to_string(),
            a.mean_sentiment.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// Columns: entity_key, site_id, article_count, comment_count, mean_sentiment.
pub fn write_entity_sites_csv<W: Write>(aggs: &[EntityAggregate], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["entity_key", "site_id", "article_count", "comment_count", "mean_sentiment"])
        .map_err(csv_err)?;
    for a in aggs {
        for (site, s) in &a.per_site {
            w.write_record([
                a.entity_key.clone(),
                site.clone(),
                s.article_count.to_string(),
                s.comment_count.to_string(),
                s.mean_sentiment.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()
}

/// Columns: user_id, user_name, then the seven measures in
/// [`Measure::ALL`] order, then replies_written and top_entities
/// (`key:count` joined by `;`).
pub fn write_users_csv<W: Write>(users: &[UserAggregate], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user_id", "user_name"];
    header.extend(Measure::ALL.iter().map(|m| m.as_str()));
    header.extend(["replies_written", "top_entities"]);
    w.write_record(&header).map_err(csv_err)?;
    for u in users {
        let mut row = vec![u.user_id.clone(), u.user_name.clone().unwrap_or_default()];
        row.extend(Measure::ALL.iter().map(|&m| u.measure(m).to_string()));
        row.push(u.replies_written.to_string());
        row.push(
            u.top_entities
                .iter()
                .map(|e| format!("{}:{}", e.entity_key, e.comments))
                .collect::<Vec<_>>()
                .join(";"),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// Square table with a leading `measure` column; undefined entries are blank.
pub fn write_correlation_csv<W: Write>(m: &CorrelationMatrix, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["measure".to_string()];
    header.extend(m.measure_names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in m.measure_names.iter().zip(&m.values) {
        let mut r = vec![name.clone()];
        r.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()
}

/// Columns: bucket_start, article_count, comment_count.
pub fn write_stats_csv<W: Write>(stats: &[crate::corpus::BucketStats], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bucket_start", "article_count", "comment_count"])
        .map_err(csv_err)?;
    for s in stats {
        w.write_record([
            s.bucket_start.to_string(),
            s.article_count.to_string(),
            s.comment_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// One JSON object per point.
pub fn write_series_ndjson<W: Write>(series: &TimeSeries, mut out: W) -> io::Result<()> {
    for p in &series.points {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Comment, Record, Site, SiteCategory};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2016, 6, d).unwrap()
    }

    fn site(id: &str) -> Record {
        Record::Site(Site {
            site_id: id.into(),
            domain_name: format!("{id}.example"),
            category: SiteCategory::NewsMedia,
        })
    }

    fn article(id: &str, site: &str, d: u32) -> Record {
        Record::Article(Article {
            article_id: id.into(),
            site_id: site.into(),
            url: format!("https://{site}.example/{id}"),
            title: id.into(),
            body: String::new(),
            published_at: Utc.with_ymd_and_hms(2016, 6, d, 9, 0, 0).unwrap(),
        })
    }

    fn comment(id: &str, article: &str, user: &str, likes: u64, parent: Option<&str>) -> Record {
        Record::Comment(Comment {
            comment_id: id.into(),
            article_id: article.into(),
            user_id: user.into(),
            user_name: None,
            body: String::new(),
            created_at: Utc.with_ymd_and_hms(2016, 6, 20, 10, 0, 0).unwrap(),
            likes,
            dislikes: 0,
            parent_comment_id: parent.map(str::to_string),
        })
    }

    /// E in a1 (3 comments) and a2 (1 comment), scores 0.5, 0.5, -0.5, 0.5.
    fn fixture() -> (CorpusStore, Annotations) {
        let mut s = CorpusStore::new();
        for r in [
            site("s1"),
            site("s2"),
            article("a1", "s1", 1),
            article("a2", "s2", 2),
            article("a3", "s1", 2),
            comment("c1", "a1", "u1", 10, None),
            comment("c2", "a1", "u2", 0, Some("c1")),
            comment("c3", "a1", "u1", 0, Some("c1")),
            comment("c4", "a2", "u2", 0, None),
            comment("c5", "a3", "u3", 0, None),
        ] {
            s.insert(r).unwrap();
        }
        let mut ann = Annotations::default();
        ann.article_entities.insert("a1".into(), ["E".to_string()].into());
        ann.article_entities.insert("a2".into(), ["E".to_string(), "F".to_string()].into());
        ann.article_entities.insert("a3".into(), BTreeSet::new());
        for (c, v) in [("c1", 0.5), ("c2", 0.5), ("c3", -0.5), ("c4", 0.5), ("c5", 0.9)] {
            ann.comment_scores.insert(c.into(), v);
        }
        (s, ann)
    }

    #[test]
    fn entity_aggregate_example() {
        let (s, ann) = fixture();
        let aggs = aggregate_entities(&s, &ann, DateRange::all(), Averaging::Comment);
        assert_eq!(aggs.iter().map(|a| a.entity_key.as_str()).collect::<Vec<_>>(), ["E", "F"]);
        let e = &aggs[0];
        assert_eq!((e.comment_count, e.article_count), (4, 2));
        assert_eq!(e.density, 2.0);
        assert!((e.mean_sentiment - 0.25).abs() < 1e-15);
        assert_eq!(e.per_site.values().map(|p| p.comment_count).sum::<usize>(), 4);
        assert_eq!(e.per_site["s1"].article_count, 1);
        // article averaging: mean(1/6, 1/2) = 1/3
        let by_article = aggregate_entity(&s, &ann, "E", DateRange::all(), Averaging::Article).unwrap();
        assert!((by_article.mean_sentiment - 1.0 / 3.0).abs() < 1e-15);
        // like weights 11, 1, 1, 1 → (5.5 + 0.5 - 0.5 + 0.5) / 14
        let liked = aggregate_entity(&s, &ann, "E", DateRange::all(), Averaging::LikeWeighted).unwrap();
        assert!((liked.mean_sentiment - 6.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn range_and_absent_entities() {
        let (s, ann) = fixture();
        let r = DateRange::new(Some(day(2)), Some(day(2)));
        let e = aggregate_entity(&s, &ann, "E", r, Averaging::Comment).unwrap();
        assert_eq!((e.article_count, e.comment_count), (1, 1));
        assert!(aggregate_entity(&s, &ann, "G", DateRange::all(), Averaging::Comment).is_none());
        let empty = DateRange::new(Some(day(10)), None);
        assert!(aggregate_entities(&s, &ann, empty, Averaging::Comment).is_empty());
    }

    #[test]
    fn h_index_examples() {
        assert_eq!(h_index(&[]), 0);
        assert_eq!(h_index(&[10, 5, 3, 1]), 3);
        assert_eq!(h_index(&[1, 1, 1]), 1);
        assert_eq!(h_index(&[0, 0]), 0);
        assert_eq!(h_index(&[100]), 1);
    }

    proptest! {
        #[test]
        fn h_index_matches_definition(v in proptest::collection::vec(0u64..20, 0..30), extra in 0u64..30) {
            let h = h_index(&v);
            let brute = (0..=v.len()).filter(|&h| v.iter().filter(|&&x| x >= h as u64).count() >= h).max().unwrap();
            prop_assert_eq!(h, brute);
            let mut more = v.clone();
            more.push(extra);
            prop_assert!(h_index(&more) >= h);
        }

        #[test]
        fn pearson_invariances(
            pts in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..20),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((r - pearson(&y, &x).unwrap()).abs() < 1e-12);
                let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                prop_assert!((r - pearson(&scaled, &y).unwrap()).abs() < 1e-9);
                let neg: Vec<f64> = y.iter().map(|v| -v).collect();
                prop_assert!((r + pearson(&x, &neg).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn user_measures() {
        let (s, ann) = fixture();
        let rep = user_influence(&s, &ann, 10);
        let u1 = rep.users.iter().find(|u| u.user_id == "u1").unwrap();
        assert_eq!(u1.comments_count, 2);
        // c1 got two replies
        assert_eq!((u1.replies_count, u1.replies_written), (2, 1));
        assert_eq!(u1.likes_count, 10);
        assert_eq!((u1.h_index_likes, u1.h_index_replies), (1, 1));
        assert_eq!(u1.top_entities[0], EntityCount { entity_key: "E".into(), comments: 2 });
        assert_eq!(rep.rankings["comments_count"], ["u1", "u2", "u3"]);
        assert_eq!(rep.rankings["likes_count"][0], "u1");
        let empty = UserAggregate::empty("nobody");
        assert!(Measure::ALL.iter().all(|&m| empty.measure(m) == 0));
        for u in &rep.users {
            for m in [Measure::HIndexLikes, Measure::HIndexDislikes, Measure::HIndexReplies] {
                assert!(u.measure(m) <= u.comments_count);
            }
        }
    }

    #[test]
    fn metric_names() {
        assert_eq!("h-index-likes".parse::<Measure>().unwrap(), Measure::HIndexLikes);
        assert_eq!("h_index_replies".parse::<Measure>().unwrap(), Measure::HIndexReplies);
        match "karma".parse::<Measure>() {
            Err(AnalyticsError::UnknownMetric { valid, .. }) => assert_eq!(valid.len(), 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 0.9819805060619656).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(AnalyticsError::DegenerateCorrelation));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn correlation_matrix_shape() {
        let mut users = Vec::new();
        for (i, likes) in [3u64, 7, 1, 9].into_iter().enumerate() {
            let mut u = UserAggregate::empty(format!("u{i}"));
            u.comments_count = i as u64 + 1;
            u.likes_count = likes;
            u.dislikes_count = 2 * likes;
            users.push(u);
        }
        let m = correlation_matrix(&users).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
        assert!((m.get(Measure::LikesCount, Measure::DislikesCount).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.get(Measure::LikesCount, Measure::LikesCount), Some(1.0));
        assert!(m.degenerate.contains(&"replies_count".to_string()));
        assert_eq!(m.get(Measure::RepliesCount, Measure::LikesCount), None);
        assert!(correlation_matrix(&users[..1]).is_err());
    }

    #[test]
    fn daily_series_two_level_mean() {
        let (mut s, mut ann) = fixture();
        s.insert(article("a4", "s2", 2)).unwrap();
        s.insert(comment("c6", "a4", "u9", 0, None)).unwrap();
        ann.article_entities.insert("a4".into(), ["E".to_string()].into());
        ann.comment_scores.insert("c6".into(), -0.3);
        let ts = daily_series(&s, &ann, "E", DateRange::all()).unwrap();
        assert_eq!(ts.points.len(), 2);
        let p1 = &ts.points[0];
        assert_eq!((p1.day, p1.comment_count), (day(1), 3));
        assert!((p1.mean_sentiment - 1.0 / 6.0).abs() < 1e-15);
        // day 2: articles a2 (0.5) and a4 (-0.3)
        let p2 = &ts.points[1];
        assert!((p2.mean_sentiment - 0.1).abs() < 1e-15);
        assert!((p2.std_dev - 0.4).abs() < 1e-15);
        assert_eq!(daily_series(&s, &ann, "nope", DateRange::all()), Err(AnalyticsError::UnknownEntity("nope".into())));
        assert!(daily_series(&s, &ann, "E", DateRange::new(Some(day(25)), None)).unwrap().points.is_empty());

        // a comment equal to its article's mean leaves the day unchanged
        s.insert(comment("c7", "a4", "u9", 0, None)).unwrap();
        ann.comment_scores.insert("c7".into(), -0.3);
        let again = daily_series(&s, &ann, "E", DateRange::all()).unwrap();
        assert_eq!(again.points[1].mean_sentiment, p2.mean_sentiment);
    }

    #[test]
    fn interpolation() {
        let g = interpolate_linear(&[(day(1), 0.0), (day(4), 0.9)]).unwrap();
        assert_eq!(g.days, vec![day(1), day(2), day(3), day(4)]);
        assert!((g.values[1] - 0.3).abs() < 1e-15 && (g.values[2] - 0.6).abs() < 1e-15);
        assert_eq!(g.observed, vec![true, false, false, true]);
        let mid = interpolate_linear(&[(day(1), 0.2), (day(3), 0.6)]).unwrap();
        assert!((mid.values[1] - 0.4).abs() < 1e-15);
        let dense = [(day(1), 0.1), (day(2), -0.2), (day(3), 0.7)];
        assert_eq!(interpolate_linear(&dense).unwrap().values, vec![0.1, -0.2, 0.7]);
        assert!(interpolate_linear(&dense[..1]).is_err());
        assert!(interpolate_linear(&[(day(2), 0.0), (day(1), 0.0)]).is_err());
    }

    #[test]
    fn savgol_impulse_and_weights() {
        let out = savitzky_golay(&[0.0, 0.0, 1.0, 0.0, 0.0], 5, 2).unwrap();
        assert!((out[2] - 17.0 / 35.0).abs() < 1e-12);
        let w = savgol_weights(5, 2, 0);
        for (a, b) in w.iter().zip([-3.0, 12.0, 17.0, 12.0, -3.0]) {
            assert!((a - b / 35.0).abs() < 1e-14);
        }
    }

    #[test]
    fn savgol_matches_reference_filter() {
        let x = [0.1, -0.3, 0.25, 0.4, -0.05, 0.0, 0.7, 0.2, -0.6, 0.15, 0.33];
        let want_7_2 = [
            0.0392857142857145, 0.00714285714285724, 0.0178571428571429, 0.07142857142857152,
            0.2428571428571431, 0.304761904761905, 0.14523809523809533, 0.09000000000000008,
            0.0985714285714285, 0.11428571428571432, 0.13714285714285737,
        ];
        let want_5_3 = [
            0.08357142857142727, -0.23428571428571213, 0.15142857142857152, 0.2885714285714288,
            0.03142857142857139, 0.17142857142857146, 0.46428571428571463, 0.11857142857142863,
            -0.25971428571428595, -0.07685714285714573, 0.386714285714283,
        ];
        for ((w, o), want) in [((7, 2), &want_7_2), ((5, 3), &want_5_3)] {
            let got = savitzky_golay(&x, w, o).unwrap();
            for (g, e) in got.iter().zip(want.iter()) {
                assert!((g - e).abs() < 1e-9, "{w},{o}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn savgol_parameter_errors() {
        let v = [0.0; 10];
        assert!(savitzky_golay(&v, 4, 1).is_err());
        assert!(savitzky_golay(&v, 1, 0).is_err());
        assert!(savitzky_golay(&v, 5, 5).is_err());
        assert!(savitzky_golay(&v[..3], 5, 2).is_err());
        assert_eq!(savitzky_golay(&[0.4; 7], 5, 2).unwrap().len(), 7);
    }

    #[test]
    fn smoothing_band_and_constant() {
        let ts = TimeSeries {
            points: (1..=6)
                .map(|d| SeriesPoint {
                    day: day(d * 2),
                    mean_sentiment: 0.25,
                    comment_count: 1,
                    article_count: 1,
                    std_dev: 0.0,
                })
                .collect(),
        };
        let s = smooth_series(&ts, 7, 2).unwrap();
        assert_eq!(s.grid.len(), 11);
        assert!(s.smoothed.iter().all(|v| (v - 0.25).abs() < 1e-12));
        assert!(s.band.iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn pdf_examples() {
        let p = pdf_histogram(&[0.05; 4]).unwrap();
        assert_eq!(p.bin_edges.len(), 21);
        assert_eq!(p.densities[10], 10.0);
        assert_eq!(p.densities.iter().filter(|&&d| d > 0.0).count(), 1);
        let centers: Vec<f64> = (0..20).map(|i| -0.95 + 0.1 * i as f64).collect();
        let u = pdf_histogram(&centers).unwrap();
        assert!(u.densities.iter().all(|&d| d == 0.5));
        let edges = pdf_histogram(&[-1.0, -0.9, 1.0]).unwrap();
        assert!(edges.densities[0] > 0.0 && edges.densities[1] > 0.0 && edges.densities[19] > 0.0);
        assert!(pdf_histogram(&[]).is_err());
        assert_eq!(pdf_histogram(&[1.5]), Err(AnalyticsError::ScoreOutOfRange(1.5)));
        let mass: f64 = edges.densities.iter().map(|d| d * PDF_BIN_WIDTH).sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_and_ndjson_exports() {
        let (s, ann) = fixture();
        let aggs = aggregate_entities(&s, &ann, DateRange::all(), Averaging::Comment);
        let mut buf = Vec::new();
        write_entities_csv(&aggs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "entity_key,linked,article_count,comment_count,scored_count,density,mean_sentiment");
        assert_eq!(text.lines().nth(1).unwrap(), "E,true,2,4,4,2,0.25");

        let rep = user_influence(&s, &ann, 3);
        let mut buf = Vec::new();
        write_users_csv(&rep.users, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);

        let ts = daily_series(&s, &ann, "E", DateRange::all()).unwrap();
        let mut buf = Vec::new();
        write_series_ndjson(&ts, &mut buf).unwrap();
        let first: SeriesPoint = serde_json::from_str(String::from_utf8(buf).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(first, ts.points[0]);
    }
}
