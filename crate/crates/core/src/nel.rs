//! Entity linking against an anchor dictionary and link graph.
//!
//! The pipeline follows the usual wikification recipe: look a mention's
//! normalized surface up in the anchor dictionary, drop it when its link
//! probability is too low, let the other mentions in context vote for each
//! candidate by relatedness weighted with their own commonness, keep the
//! candidates near the best vote, choose the most common of those, and
//! finally prune links whose combined link probability and coherence is low.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ner::{EntityMention, EntityType};
use crate::textproc::{normalize_phrase, tokenize};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("invalid knowledge base: {0}")]
    Invalid(String),
    #[error("{file}:{line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NelError {
    #[error("`{0}` is not an anchor")]
    NotAnAnchor(String),
    #[error("linked fraction is undefined for zero mentions")]
    UndefinedMetric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntity {
    pub title: String,
    pub inlinks: BTreeSet<String>,
}

/// Anchor dictionary plus link graph. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, KbEntity>,
    anchors: BTreeMap<String, BTreeMap<String, u64>>,
    anchor_freq: BTreeMap<String, u64>,
    total_pages: u64,
}

/// One page of a link corpus, the input of [`KnowledgeBase::build_from_pages`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub links: Vec<PageLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageLink {
    pub anchor: String,
    pub target: String,
}

impl KnowledgeBase {
    /// Assemble and validate a knowledge base. Anchor keys are normalized.
    pub fn new(
        entities: BTreeMap<String, KbEntity>,
        anchors: BTreeMap<String, BTreeMap<String, u64>>,
        anchor_freq: BTreeMap<String, u64>,
        total_pages: u64,
    ) -> Result<Self, KbError> {
        let mut norm_anchors: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (a, targets) in anchors {
            let slot = norm_anchors.entry(normalize_phrase(&a)).or_default();
            for (e, n) in targets {
                *slot.entry(e).or_default() += n;
            }
        }
        let mut norm_freq: BTreeMap<String, u64> = BTreeMap::new();
        for (a, n) in anchor_freq {
            *norm_freq.entry(normalize_phrase(&a)).or_default() += n;
        }
        let kb = Self {
            entities,
            anchors: norm_anchors,
            anchor_freq: norm_freq,
            total_pages,
        };
        kb.validate()?;
        Ok(kb)
    }

    fn validate(&self) -> Result<(), KbError> {
        if self.total_pages == 0 {
            return Err(KbError::Invalid("total page count W must be positive".into()));
        }
        if (self.total_pages as usize) < self.entities.len() {
            return Err(KbError::Invalid(format!(
                "W = {} is smaller than the entity count {}",
                self.total_pages,
                self.entities.len()
            )));
        }
        for (anchor, targets) in &self.anchors {
            for e in targets.keys() {
                if !self.entities.contains_key(e) {
                    return Err(KbError::Invalid(format!(
                        "anchor `{anchor}` targets unknown entity `{e}`"
                    )));
                }
            }
            let linked: u64 = targets.values().sum();
            let freq = self.anchor_freq.get(anchor).copied().unwrap_or(0);
            if linked > freq {
                return Err(KbError::Invalid(format!(
                    "anchor `{anchor}` is linked {linked} times but occurs only {freq} times"
                )));
            }
        }
        Ok(())
    }

    pub fn total_pages(&self) -> u64 {
        self.total_pages
    }

    pub fn entity(&self, id: &str) -> Option<&KbEntity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = (&String, &KbEntity)> {
        self.entities.iter()
    }

    pub fn anchors(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, u64>)> {
        self.anchors.iter()
    }

    pub fn targets(&self, anchor: &str) -> Option<&BTreeMap<String, u64>> {
        self.anchors.get(anchor)
    }

    pub fn max_anchor_words(&self) -> usize {
        self.anchors
            .keys()
            .map(|a| a.split(' ').count())
            .max()
            .unwrap_or(0)
    }

    /// Fraction of an anchor's textual occurrences that are links.
    pub fn link_probability(&self, anchor: &str) -> Result<f64, NelError> {
        let freq = self
            .anchor_freq
            .get(anchor)
            .copied()
            .ok_or_else(|| NelError::NotAnAnchor(anchor.to_string()))?;
        let linked: u64 = self.anchors.get(anchor).map_or(0, |t| t.values().sum());
        if freq == 0 {
            return Ok(0.0);
        }
        Ok(linked as f64 / freq as f64)
    }

    /// Share of an anchor's links that point at `entity_id`.
    pub fn commonness(&self, anchor: &str, entity_id: &str) -> Result<f64, NelError> {
        if !self.anchor_freq.contains_key(anchor) && !self.anchors.contains_key(anchor) {
            return Err(NelError::NotAnAnchor(anchor.to_string()));
        }
        let Some(targets) = self.anchors.get(anchor) else {
            return Ok(0.0);
        };
        let total: u64 = targets.values().sum();
        match targets.get(entity_id) {
            Some(&n) if total > 0 => Ok(n as f64 / total as f64),
            _ => Ok(0.0),
        }
    }

    /// Inlink-overlap relatedness of two entities, in [0, 1].
    pub fn relatedness(&self, a: &str, b: &str) -> f64 {
        let (Some(ea), Some(eb)) = (self.entities.get(a), self.entities.get(b)) else {
            return 0.0;
        };
        let (sa, sb) = (&ea.inlinks, &eb.inlinks);
        if sa.is_empty() || sb.is_empty() {
            return 0.0;
        }
        let (small, large) = if sa.len() <= sb.len() { (sa, sb) } else { (sb, sa) };
        let common = small.iter().filter(|x| large.contains(*x)).count();
        if common == 0 {
            return 0.0;
        }
        let num = (large.len() as f64).ln() - (common as f64).ln();
        if num == 0.0 {
            return 1.0;
        }
        let den = (self.total_pages as f64).ln() - (small.len() as f64).ln();
        if den <= 0.0 {
            return 0.0;
        }
        (1.0 - num / den).clamp(0.0, 1.0)
    }

    /// Entity ids whose title or any anchor starts with `prefix`
    /// (case-insensitive), with the matched text.
    pub fn search_prefix(&self, prefix: &str) -> Vec<(String, String)> {
        let q = normalize_phrase(prefix);
        let mut hits: BTreeMap<String, String> = BTreeMap::new();
        for (id, e) in &self.entities {
            if normalize_phrase(&e.title).starts_with(&q) {
                hits.entry(id.clone()).or_insert_with(|| e.title.clone());
            }
        }
        for (anchor, targets) in self.anchors.range(q.clone()..) {
            if !anchor.starts_with(&q) {
                break;
            }
            for id in targets.keys() {
                hits.entry(id.clone()).or_insert_with(|| anchor.clone());
            }
        }
        hits.into_iter().collect()
    }

    /// Build a knowledge base from a link corpus: inlinks from the link
    /// graph, anchor counts from link texts, and anchor frequencies from
    /// occurrences of each anchor as a token n-gram in page text.
    pub fn build_from_pages(pages: &[Page]) -> Result<Self, KbError> {
        let mut entities: BTreeMap<String, KbEntity> = pages
            .iter()
            .map(|p| {
                (
                    p.id.clone(),
                    KbEntity {
                        title: p.title.clone(),
                        inlinks: BTreeSet::new(),
                    },
                )
            })
            .collect();
        let mut anchors: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for p in pages {
            for link in &p.links {
                let Some(target) = entities.get_mut(&link.target) else {
                    continue;
                };
                if link.target != p.id {
                    target.inlinks.insert(p.id.clone());
                }
                let a = normalize_phrase(&link.anchor);
                if !a.is_empty() {
                    *anchors.entry(a).or_default().entry(link.target.clone()).or_default() += 1;
                }
            }
        }
        let max_n = anchors.keys().map(|a| a.split(' ').count()).max().unwrap_or(0);
        let mut freq: BTreeMap<String, u64> = BTreeMap::new();
        for p in pages {
            let words: Vec<String> = tokenize(&p.text)
                .tokens
                .into_iter()
                .map(|t| t.text.to_lowercase())
                .collect();
            for n in 1..=max_n.min(words.len()) {
                for w in words.windows(n) {
                    let g = w.join(" ");
                    if anchors.contains_key(&g) {
                        *freq.entry(g).or_default() += 1;
                    }
                }
            }
        }
        for (a, targets) in &anchors {
            let linked: u64 = targets.values().sum();
            let f = freq.entry(a.clone()).or_default();
            *f = (*f).max(linked);
        }
        let total = (pages.len() as u64).max(1);
        Self::new(entities, anchors, freq, total)
    }

    /// Write the five TSV files into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> io::Result<BufWriter<std::fs::File>> {
            Ok(BufWriter::new(std::fs::File::create(dir.join(name))?))
        };
        let mut f = open("entities.tsv")?;
        for (id, e) in &self.entities {
            writeln!(f, "{id}\t{}", e.title)?;
        }
        f.flush()?;
        let mut f = open("inlinks.tsv")?;
        for (id, e) in &self.entities {
            let ids: Vec<&str> = e.inlinks.iter().map(String::as_str).collect();
            writeln!(f, "{id}\t{}", ids.join(" "))?;
        }
        f.flush()?;
        let mut f = open("anchors.tsv")?;
        for (a, targets) in &self.anchors {
            for (e, n) in targets {
                writeln!(f, "{a}\t{e}\t{n}")?;
            }
        }
        f.flush()?;
        let mut f = open("anchor_freq.tsv")?;
        for (a, n) in &self.anchor_freq {
            writeln!(f, "{a}\t{n}")?;
        }
        f.flush()?;
        let mut f = open("meta.tsv")?;
        writeln!(f, "total_pages\t{}", self.total_pages)?;
        f.flush()
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, KbError> {
        let dir = dir.as_ref();
        let rows = |name: &str, cols: usize| -> Result<Vec<(usize, Vec<String>)>, KbError> {
            let reader = BufReader::new(std::fs::File::open(dir.join(name))?);
            let mut out = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let parts: Vec<String> = line.splitn(cols, '\t').map(str::to_string).collect();
                if parts.len() != cols {
                    return Err(KbError::Format {
                        file: name.to_string(),
                        line: i + 1,
                        message: format!("expected {cols} tab-separated columns"),
                    });
                }
                out.push((i + 1, parts));
            }
            Ok(out)
        };
        let count = |file: &str, line: usize, s: &str| -> Result<u64, KbError> {
            s.trim().parse().map_err(|_| KbError::Format {
                file: file.to_string(),
                line,
                message: format!("`{s}` is not a count"),
            })
        };

        let mut entities = BTreeMap::new();
        for (_, r) in rows("entities.tsv", 2)? {
            entities.insert(
                r[0].clone(),
                KbEntity {
                    title: r[1].clone(),
                    inlinks: BTreeSet::new(),
                },
            );
        }
        for (line, r) in rows("inlinks.tsv", 2)? {
            let e = entities.get_mut(&r[0]).ok_or_else(|| KbError::Format {
                file: "inlinks.tsv".into(),
                line,
                message: format!("unknown entity `{}`", r[0]),
            })?;
            e.inlinks = r[1].split_whitespace().map(str::to_string).collect();
        }
        let mut anchors: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (line, r) in rows("anchors.tsv", 3)? {
            let n = count("anchors.tsv", line, &r[2])?;
            *anchors.entry(r[0].clone()).or_default().entry(r[1].clone()).or_default() += n;
        }
        let mut freq = BTreeMap::new();
        for (line, r) in rows("anchor_freq.tsv", 2)? {
            freq.insert(r[0].clone(), count("anchor_freq.tsv", line, &r[1])?);
        }
        let mut total = None;
        for (line, r) in rows("meta.tsv", 2)? {
            if r[0] == "total_pages" {
                total = Some(count("meta.tsv", line, &r[1])?);
            }
        }
        let total = total.ok_or_else(|| KbError::Invalid("meta.tsv lacks total_pages".into()))?;
        Self::new(entities, anchors, freq, total)
    }
}

/// Which other mentions may vote for a mention's candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextWindow {
    /// Every other mention in the document.
    Document,
    /// Mentions at most this many sentences away.
    Sentences(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    pub lp_min: f64,
    pub epsilon: f64,
    pub rho_min: f64,
    pub context_window: ContextWindow,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            lp_min: 0.1,
            epsilon: 0.3,
            rho_min: 0.2,
            context_window: ContextWindow::Sentences(1),
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("lp_min", self.lp_min), ("epsilon", self.epsilon), ("rho_min", self.rho_min)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    fn in_window(&self, a: &EntityMention, b: &EntityMention) -> bool {
        match self.context_window {
            ContextWindow::Document => true,
            ContextWindow::Sentences(k) => a.sentence.abs_diff(b.sentence) <= k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub mention: EntityMention,
    /// Normalized surface used as the anchor key.
    pub anchor: String,
    pub link_probability: f64,
    /// Entity id → commonness.
    pub candidates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedEntity {
    pub mention: EntityMention,
    pub entity_id: String,
    pub commonness: f64,
    pub link_probability: f64,
    /// Final score, mean of link probability and coherence.
    pub score: f64,
    pub accepted: bool,
}

/// Look mentions up in the anchor dictionary. Unknown surfaces and those
/// whose link probability is below `lp_min` are dropped.
pub fn generate_candidates(
    kb: &KnowledgeBase,
    mentions: &[EntityMention],
    params: &LinkParams,
) -> Vec<CandidateSet> {
    let mut out = Vec::new();
    for m in mentions {
        let anchor = normalize_phrase(&m.surface);
        let Ok(lp) = kb.link_probability(&anchor) else {
            continue;
        };
        if lp < params.lp_min {
            continue;
        }
        let Some(targets) = kb.targets(&anchor) else {
            continue;
        };
        let total: u64 = targets.values().sum();
        if total == 0 {
            continue;
        }
        let candidates = targets
            .iter()
            .map(|(e, &n)| (e.clone(), n as f64 / total as f64))
            .collect();
        out.push(CandidateSet {
            mention: m.clone(),
            anchor,
            link_probability: lp,
            candidates,
        });
    }
    out
}

/// Spot anchors in raw text: greedy longest match, left to right, within
/// sentences. Spotted mentions carry type `OTHER`.
pub fn spot_mentions(kb: &KnowledgeBase, text: &str) -> Vec<EntityMention> {
    let tt = tokenize(text);
    let max_n = kb.max_anchor_words();
    let lower: Vec<String> = tt.tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let mut out = Vec::new();
    for (sentence, range) in tt.sentences().into_iter().enumerate() {
        let mut i = range.start;
        while i < range.end {
            let mut matched = None;
            for n in (1..=max_n.min(range.end - i)).rev() {
                let g = lower[i..i + n].join(" ");
                if kb.targets(&g).is_some() {
                    matched = Some(n);
                    break;
                }
            }
            match matched {
                Some(n) => {
                    let (cs, ce) = (tt.tokens[i].start, tt.tokens[i + n - 1].end);
                    out.push(EntityMention {
                        span: (i, i + n),
                        char_span: (cs, ce),
                        entity_type: EntityType::Other,
                        surface: tt.slice_chars(cs, ce),
                        sentence,
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
    }
    out
}

/// Memoized relatedness; keyed by the unordered pair so lookups stay symmetric.
pub struct Relatedness<'a> {
    kb: &'a KnowledgeBase,
    cache: Mutex<HashMap<(String, String), f64>>,
}

impl<'a> Relatedness<'a> {
    pub fn new(kb: &'a KnowledgeBase) -> Self {
        Self {
            kb,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, a: &str, b: &str) -> f64 {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        if let Some(&v) = self.cache.lock().expect("cache lock").get(&key) {
            return v;
        }
        let v = self.kb.relatedness(&key.0, &key.1);
        self.cache.lock().expect("cache lock").insert(key, v);
        v
    }
}

/// Pick a candidate: keep those whose vote is within `epsilon` (relative)
/// of the best, then take the highest commonness; ties go to the smallest id.
/// `votes` is aligned with the iteration order of `candidates`.
pub fn select_by_votes<'c>(
    candidates: &'c BTreeMap<String, f64>,
    votes: &[f64],
    epsilon: f64,
) -> Option<(&'c String, f64)> {
    let max = votes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = (1.0 - epsilon) * max;
    let mut best: Option<(&String, f64)> = None;
    for ((id, &c), &v) in candidates.iter().zip(votes) {
        if v >= threshold && best.is_none_or(|(_, bc)| c > bc) {
            best = Some((id, c));
        }
    }
    best
}

/// Per-candidate votes for mention `i` from the other mentions in context.
pub fn votes_for(
    rel: &Relatedness<'_>,
    sets: &[CandidateSet],
    i: usize,
    params: &LinkParams,
) -> Option<Vec<f64>> {
    let voters: Vec<&CandidateSet> = sets
        .iter()
        .enumerate()
        .filter(|&(j, s)| j != i && params.in_window(&sets[i].mention, &s.mention))
        .map(|(_, s)| s)
        .collect();
    if voters.is_empty() {
        return None;
    }
    let votes = sets[i]
        .candidates
        .keys()
        .map(|e| {
            voters
                .iter()
                .map(|v| {
                    let s: f64 = v
                        .candidates
                        .iter()
                        .map(|(e2, &c)| rel.get(e, e2) * c)
                        .sum();
                    s / v.candidates.len() as f64
                })
                .sum()
        })
        .collect();
    Some(votes)
}

/// Choose one entity per candidate set. Scores and acceptance are filled in
/// by [`prune`].
pub fn vote_and_disambiguate(
    kb: &KnowledgeBase,
    sets: &[CandidateSet],
    params: &LinkParams,
) -> Vec<LinkedEntity> {
    let rel = Relatedness::new(kb);
    disambiguate_with(&rel, sets, params)
}

fn disambiguate_with(rel: &Relatedness<'_>, sets: &[CandidateSet], params: &LinkParams) -> Vec<LinkedEntity> {
    sets.iter()
        .enumerate()
        .filter_map(|(i, set)| {
            let chosen = if set.candidates.len() == 1 {
                set.candidates.iter().next()
            } else {
                match votes_for(rel, sets, i, params) {
                    Some(votes) => select_by_votes(&set.candidates, &votes, params.epsilon)
                        .map(|(id, _)| (id, &set.candidates[id])),
                    None => max_commonness(&set.candidates),
                }
            };
            chosen.map(|(id, &c)| LinkedEntity {
                mention: set.mention.clone(),
                entity_id: id.clone(),
                commonness: c,
                link_probability: set.link_probability,
                score: 0.0,
                accepted: false,
            })
        })
        .collect()
}

fn max_commonness(c: &BTreeMap<String, f64>) -> Option<(&String, &f64)> {
    let mut best: Option<(&String, &f64)> = None;
    for (id, v) in c {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((id, v));
        }
    }
    best
}

/// Score every selection by `(link probability + coherence) / 2`, where
/// coherence is the mean relatedness to the other selections of the
/// document, and accept those scoring at least `rho_min`.
pub fn prune(kb: &KnowledgeBase, linked: Vec<LinkedEntity>, params: &LinkParams) -> Vec<LinkedEntity> {
    let rel = Relatedness::new(kb);
    prune_with(&rel, linked, params)
}

fn prune_with(rel: &Relatedness<'_>, mut linked: Vec<LinkedEntity>, params: &LinkParams) -> Vec<LinkedEntity> {
    let ids: Vec<String> = linked.iter().map(|l| l.entity_id.clone()).collect();
    let n = linked.len();
    for (i, l) in linked.iter_mut().enumerate() {
        let coherence = if n > 1 {
            ids.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, e)| rel.get(&ids[i], e))
                .sum::<f64>()
                / (n - 1) as f64
        } else {
            0.0
        };
        l.score = (l.link_probability + coherence) / 2.0;
        l.accepted = l.score >= params.rho_min;
    }
    linked
}

/// Candidates → votes → pruning for the mentions of one document.
pub fn link_mentions(kb: &KnowledgeBase, mentions: &[EntityMention], params: &LinkParams) -> Vec<LinkedEntity> {
    let rel = Relatedness::new(kb);
    let sets = generate_candidates(kb, mentions, params);
    let chosen = disambiguate_with(&rel, &sets, params);
    prune_with(&rel, chosen, params)
}

pub fn linked_fraction(mentions: usize, accepted: usize) -> Result<f64, NelError> {
    if mentions == 0 {
        return Err(NelError::UndefinedMetric);
    }
    Ok(accepted as f64 / mentions as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(title: &str, inlinks: &[&str]) -> KbEntity {
        KbEntity {
            title: title.to_string(),
            inlinks: inlinks.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn mention(surface: &str, sentence: usize) -> EntityMention {
        EntityMention {
            span: (0, 1),
            char_span: (0, surface.chars().count()),
            entity_type: EntityType::Other,
            surface: surface.to_string(),
            sentence,
        }
    }

    /// "barcelona" is ambiguous between the city (A, commonness 0.6) and the
    /// football club (B, 0.4). "messi" only points at C, which shares most
    /// inlinks with B and none with A.
    pub(crate) fn toy_kb() -> KnowledgeBase {
        let entities = BTreeMap::from([
            ("A_city".to_string(), ent("Barcelona", &["p1", "p2", "p3", "p4"])),
            ("B_club".to_string(), ent("FC Barcelona", &["p5", "p6", "p7", "p8"])),
            ("C_messi".to_string(), ent("Lionel Messi", &["p5", "p6", "p7", "p9"])),
            ("D_rare".to_string(), ent("Rare thing", &[])),
        ]);
        let anchors = BTreeMap::from([
            (
                "barcelona".to_string(),
                BTreeMap::from([("A_city".to_string(), 60), ("B_club".to_string(), 40)]),
            ),
            ("messi".to_string(), BTreeMap::from([("C_messi".to_string(), 50)])),
            ("the thing".to_string(), BTreeMap::from([("D_rare".to_string(), 5)])),
        ]);
        let freq = BTreeMap::from([
            ("barcelona".to_string(), 200),
            ("messi".to_string(), 50),
            ("the thing".to_string(), 100),
        ]);
        KnowledgeBase::new(entities, anchors, freq, 100).unwrap()
    }

    #[test]
    fn link_probability_contract() {
        let kb = toy_kb();
        assert_eq!(kb.link_probability("barcelona").unwrap(), 0.5);
        assert_eq!(kb.link_probability("messi").unwrap(), 1.0);
        assert_eq!(kb.link_probability("the thing").unwrap(), 0.05);
        assert_eq!(
            kb.link_probability("nowhere"),
            Err(NelError::NotAnAnchor("nowhere".into()))
        );
    }

    #[test]
    fn link_probability_quarter() {
        let entities = BTreeMap::from([("X".to_string(), ent("X", &[]))]);
        let anchors = BTreeMap::from([("x".to_string(), BTreeMap::from([("X".to_string(), 100)]))]);
        let freq = BTreeMap::from([("x".to_string(), 400)]);
        let kb = KnowledgeBase::new(entities, anchors, freq, 1).unwrap();
        assert_eq!(kb.link_probability("x").unwrap(), 0.25);
    }

    #[test]
    fn commonness_contract() {
        let kb = toy_kb();
        assert_eq!(kb.commonness("barcelona", "A_city").unwrap(), 0.6);
        assert_eq!(kb.commonness("messi", "C_messi").unwrap(), 1.0);
        assert_eq!(kb.commonness("messi", "A_city").unwrap(), 0.0);
        assert!(kb.commonness("nowhere", "A_city").is_err());
        let sum: f64 = ["A_city", "B_club"]
            .iter()
            .map(|e| kb.commonness("barcelona", e).unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation_catches_bad_kbs() {
        let entities = BTreeMap::from([("X".to_string(), ent("X", &[]))]);
        let dangling = BTreeMap::from([("x".to_string(), BTreeMap::from([("Y".to_string(), 1)]))]);
        let freq = BTreeMap::from([("x".to_string(), 10)]);
        assert!(KnowledgeBase::new(entities.clone(), dangling, freq.clone(), 5).is_err());
        let over = BTreeMap::from([("x".to_string(), BTreeMap::from([("X".to_string(), 11)]))]);
        assert!(KnowledgeBase::new(entities.clone(), over, freq.clone(), 5).is_err());
        assert!(KnowledgeBase::new(entities, BTreeMap::new(), freq, 0).is_err());
    }

    #[test]
    fn relatedness_values() {
        // W = 16, |A| = |B| = 4, |A ∩ B| = 2
        let entities = BTreeMap::from([
            ("a".to_string(), ent("a", &["1", "2", "3", "4"])),
            ("b".to_string(), ent("b", &["3", "4", "5", "6"])),
            ("c".to_string(), ent("c", &["7", "8"])),
            ("d".to_string(), ent("d", &[])),
        ]);
        let kb = KnowledgeBase::new(entities, BTreeMap::new(), BTreeMap::new(), 16).unwrap();
        assert!((kb.relatedness("a", "b") - 0.5).abs() < 1e-12);
        assert_eq!(kb.relatedness("a", "a"), 1.0);
        assert_eq!(kb.relatedness("a", "c"), 0.0);
        assert_eq!(kb.relatedness("a", "d"), 0.0);
        assert_eq!(kb.relatedness("a", "missing"), 0.0);
    }

    #[test]
    fn relatedness_with_full_inlink_sets() {
        let all: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let refs: Vec<&str> = all.iter().map(String::as_str).collect();
        let entities = BTreeMap::from([("a".to_string(), ent("a", &refs)), ("b".to_string(), ent("b", &refs))]);
        let kb = KnowledgeBase::new(entities, BTreeMap::new(), BTreeMap::new(), 4).unwrap();
        assert_eq!(kb.relatedness("a", "b"), 1.0);
    }

    #[test]
    fn candidate_generation() {
        let kb = toy_kb();
        let params = LinkParams::default();
        let ms = vec![mention("Barcelona", 0), mention("Gotham", 0), mention("the  thing", 0)];
        let sets = generate_candidates(&kb, &ms, &params);
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].anchor, "barcelona");
        let c: Vec<f64> = sets[0].candidates.values().copied().collect();
        assert_eq!(c, vec![0.6, 0.4]);
    }

    #[test]
    fn single_mention_falls_back_to_commonness() {
        let kb = toy_kb();
        let params = LinkParams::default();
        let sets = generate_candidates(&kb, &[mention("barcelona", 0)], &params);
        let linked = vote_and_disambiguate(&kb, &sets, &params);
        assert_eq!(linked[0].entity_id, "A_city");
    }

    #[test]
    fn coherence_overrides_commonness() {
        let kb = toy_kb();
        let params = LinkParams::default();
        let ms = [mention("barcelona", 0), mention("messi", 0)];
        let sets = generate_candidates(&kb, &ms, &params);
        let linked = vote_and_disambiguate(&kb, &sets, &params);
        assert_eq!(linked[0].entity_id, "B_club");
        assert_eq!(linked[1].entity_id, "C_messi");
    }

    #[test]
    fn distant_sentences_do_not_vote() {
        let kb = toy_kb();
        let params = LinkParams::default();
        let ms = [mention("barcelona", 0), mention("messi", 5)];
        let sets = generate_candidates(&kb, &ms, &params);
        assert_eq!(vote_and_disambiguate(&kb, &sets, &params)[0].entity_id, "A_city");
        let doc = LinkParams {
            context_window: ContextWindow::Document,
            ..params
        };
        assert_eq!(vote_and_disambiguate(&kb, &sets, &doc)[0].entity_id, "B_club");
    }

    #[test]
    fn epsilon_one_is_max_commonness() {
        let kb = toy_kb();
        let params = LinkParams {
            epsilon: 1.0,
            ..LinkParams::default()
        };
        let ms = [mention("barcelona", 0), mention("messi", 0)];
        let sets = generate_candidates(&kb, &ms, &params);
        assert_eq!(vote_and_disambiguate(&kb, &sets, &params)[0].entity_id, "A_city");
    }

    #[test]
    fn zero_votes_reduce_to_commonness() {
        let c = BTreeMap::from([("x".to_string(), 0.3), ("y".to_string(), 0.7)]);
        assert_eq!(select_by_votes(&c, &[0.0, 0.0], 0.3).unwrap().0, "y");
        let tie = BTreeMap::from([("x".to_string(), 0.5), ("y".to_string(), 0.5)]);
        assert_eq!(select_by_votes(&tie, &[1.0, 1.0], 0.3).unwrap().0, "x");
    }

    #[test]
    fn pruning_scores() {
        let kb = toy_kb();
        let params = LinkParams::default();
        let one = |lp: f64, id: &str| LinkedEntity {
            mention: mention("x", 0),
            entity_id: id.to_string(),
            commonness: 1.0,
            link_probability: lp,
            score: 0.0,
            accepted: false,
        };
        let single = prune(&kb, vec![one(0.1, "A_city")], &params);
        assert!((single[0].score - 0.05).abs() < 1e-15);
        assert!(!single[0].accepted);
        let pair = prune(&kb, vec![one(1.0, "B_club"), one(1.0, "B_club")], &params);
        assert_eq!(pair[0].score, 1.0);
        assert!(pair[0].accepted);
    }

    #[test]
    fn end_to_end_linking() {
        let kb = toy_kb();
        let linked = link_mentions(&kb, &[mention("barcelona", 0), mention("messi", 0)], &LinkParams::default());
        assert_eq!(linked.len(), 2);
        assert!(linked.iter().all(|l| l.accepted));
        assert!((linked_fraction(3, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn linked_fraction_contract() {
        assert!((linked_fraction(13, 7).unwrap() - 0.5385).abs() < 1e-4);
        assert_eq!(linked_fraction(4, 0).unwrap(), 0.0);
        assert_eq!(linked_fraction(0, 0), Err(NelError::UndefinedMetric));
    }

    #[test]
    fn spotting_prefers_longest_match() {
        let kb = toy_kb();
        let ms = spot_mentions(&kb, "The thing about Barcelona. Messi agrees");
        let surfaces: Vec<&str> = ms.iter().map(|m| m.surface.as_str()).collect();
        assert_eq!(surfaces, vec!["The thing", "Barcelona", "Messi"]);
        assert_eq!(ms[2].sentence, 1);
    }

    #[test]
    fn prefix_search() {
        let kb = toy_kb();
        let hits = kb.search_prefix("Bar");
        let ids: Vec<&str> = hits.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["A_city", "B_club"]);
        assert!(kb.search_prefix("zzz").is_empty());
        let fc = kb.search_prefix("fc b");
        assert_eq!(fc, vec![("B_club".to_string(), "FC Barcelona".to_string())]);
    }

    #[test]
    fn tsv_round_trip() {
        let kb = toy_kb();
        let dir = tempfile::tempdir().unwrap();
        kb.save_dir(dir.path()).unwrap();
        assert_eq!(KnowledgeBase::load_dir(dir.path()).unwrap(), kb);
    }

    #[test]
    fn build_from_link_corpus() {
        let page = |id: &str, text: &str, links: &[(&str, &str)]| Page {
            id: id.into(),
            title: id.into(),
            text: text.into(),
            links: links
                .iter()
                .map(|(a, t)| PageLink {
                    anchor: a.to_string(),
                    target: t.to_string(),
                })
                .collect(),
        };
        let pages = vec![
            page("P1", "Paris is in France. paris again", &[("Paris", "Paris"), ("France", "France")]),
            page("P2", "France borders Spain", &[("France", "France")]),
            page("Paris", "capital", &[]),
            page("France", "country", &[]),
        ];
        let kb = KnowledgeBase::build_from_pages(&pages).unwrap();
        assert_eq!(kb.total_pages(), 4);
        assert_eq!(kb.entity("France").unwrap().inlinks.len(), 2);
        assert_eq!(kb.link_probability("paris").unwrap(), 0.5);
        assert_eq!(kb.link_probability("france").unwrap(), 1.0);
    }
}
