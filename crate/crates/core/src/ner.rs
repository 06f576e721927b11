//! Named entity recognition with a feature-based linear sequence tagger.
//!
//! Tags are BILOU-encoded over [`EntityType`]. Decoding is exact Viterbi
//! over emission scores (sum of active feature weights) plus tag-to-tag
//! transition scores, with structurally invalid transitions excluded.
//! Weights come from an averaged structured perceptron.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::{normalize_phrase, shape_of, tokenize, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityType {
    Person,
    Org,
    Product,
    Facility,
    Location,
    Gpe,
    Date,
    Event,
    Other,
}

impl EntityType {
    pub const ALL: [EntityType; 9] = [
        EntityType::Person,
        EntityType::Org,
        EntityType::Product,
        EntityType::Facility,
        EntityType::Location,
        EntityType::Gpe,
        EntityType::Date,
        EntityType::Event,
        EntityType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Person => "PERSON",
            EntityType::Org => "ORG",
            EntityType::Product => "PRODUCT",
            EntityType::Facility => "FACILITY",
            EntityType::Location => "LOCATION",
            EntityType::Gpe => "GPE",
            EntityType::Date => "DATE",
            EntityType::Event => "EVENT",
            EntityType::Other => "OTHER",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = NerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| NerError::UnknownLabel(s.to_string()))
    }
}

/// A BILOU tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(EntityType),
    I(EntityType),
    L(EntityType),
    U(EntityType),
}

impl Tag {
    pub fn entity_type(self) -> Option<EntityType> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) | Tag::L(t) | Tag::U(t) => Some(t),
        }
    }

    pub fn can_start(self) -> bool {
        !matches!(self, Tag::I(_) | Tag::L(_))
    }

    pub fn can_end(self) -> bool {
        !matches!(self, Tag::B(_) | Tag::I(_))
    }

    /// Whether `next` may directly follow `self`.
    pub fn allows(self, next: Tag) -> bool {
        match self {
            Tag::B(t) | Tag::I(t) => matches!(next, Tag::I(u) | Tag::L(u) if u == t),
            Tag::O | Tag::L(_) | Tag::U(_) => next.can_start(),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
            Tag::L(t) => write!(f, "L-{t}"),
            Tag::U(t) => write!(f, "U-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = NerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, ty) = s
            .split_once('-')
            .ok_or_else(|| NerError::UnknownLabel(s.to_string()))?;
        let ty: EntityType = ty.parse().map_err(|_| NerError::UnknownLabel(s.to_string()))?;
        match prefix {
            "B" => Ok(Tag::B(ty)),
            "I" => Ok(Tag::I(ty)),
            "L" => Ok(Tag::L(ty)),
            "U" => Ok(Tag::U(ty)),
            _ => Err(NerError::UnknownLabel(s.to_string())),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `O` followed by B, I, L, U for every entity type.
pub fn full_label_set() -> Vec<Tag> {
    let mut labels = vec![Tag::O];
    for t in EntityType::ALL {
        labels.extend([Tag::B(t), Tag::I(t), Tag::L(t), Tag::U(t)]);
    }
    labels
}

pub fn is_valid_sequence(tags: &[Tag]) -> bool {
    match (tags.first(), tags.last()) {
        (None, _) => true,
        (Some(first), Some(last)) => {
            first.can_start() && last.can_end() && tags.windows(2).all(|w| w[0].allows(w[1]))
        }
        _ => unreachable!(),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NerError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("sentence {sentence}: gold tags are not a valid BILOU sequence")]
    InvalidGold { sentence: usize },
    #[error("sentence {sentence}: {tokens} tokens but {tags} tags")]
    LengthMismatch {
        sentence: usize,
        tokens: usize,
        tags: usize,
    },
    #[error("training data is empty")]
    EmptyData,
    #[error("label set must contain O")]
    MissingOutside,
    #[error("document `{0}` appears in only one of gold and predicted")]
    DocumentMismatch(String),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
}

/// A typed mention span over a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypedSpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: EntityType,
}

/// Convert a structurally valid BILOU sequence to spans.
pub fn tags_to_spans(tags: &[Tag]) -> Option<Vec<TypedSpan>> {
    if !is_valid_sequence(tags) {
        return None;
    }
    let mut spans = Vec::new();
    let mut open = None;
    for (i, tag) in tags.iter().enumerate() {
        match *tag {
            Tag::O => {}
            Tag::U(t) => spans.push(TypedSpan {
                start: i,
                end: i + 1,
                entity_type: t,
            }),
            Tag::B(_) => open = Some(i),
            Tag::I(_) => {}
            Tag::L(t) => spans.push(TypedSpan {
                start: open.take().expect("valid sequence"),
                end: i + 1,
                entity_type: t,
            }),
        }
    }
    Some(spans)
}

/// Encode non-overlapping spans over `len` tokens as BILOU.
pub fn spans_to_tags(len: usize, spans: &[TypedSpan]) -> Vec<Tag> {
    let mut tags = vec![Tag::O; len];
    for s in spans {
        let t = s.entity_type;
        if s.end - s.start == 1 {
            tags[s.start] = Tag::U(t);
        } else {
            tags[s.start] = Tag::B(t);
            for tag in &mut tags[s.start + 1..s.end - 1] {
                *tag = Tag::I(t);
            }
            tags[s.end - 1] = Tag::L(t);
        }
    }
    tags
}

/// Phrase lists keyed by name (usually an entity type).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteers {
    lists: BTreeMap<String, HashSet<String>>,
}

pub const MAX_GAZETTEER_WINDOW: usize = 3;

impl Gazetteers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, phrase: &str) {
        let p = normalize_phrase(phrase);
        if !p.is_empty() {
            self.lists.entry(name.to_string()).or_default().insert(p);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.lists.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str, phrase: &str) -> bool {
        self.lists.get(name).is_some_and(|s| s.contains(phrase))
    }

    /// Load every `*.txt` file in `dir`; the file stem names the list.
    pub fn load_dir(dir: impl AsRef<Path>) -> io::Result<Self> {
        let mut g = Self::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            for line in std::fs::read_to_string(&path)?.lines() {
                g.insert(&name, line);
            }
        }
        Ok(g)
    }

    fn sorted_entries(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        for (name, set) in &self.lists {
            let mut phrases: Vec<&str> = set.iter().map(String::as_str).collect();
            phrases.sort_unstable();
            out.extend(phrases.into_iter().map(|p| (name.as_str(), p)));
        }
        out
    }
}

fn prefix(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn suffix(s: &str, n: usize) -> String {
    let count = s.chars().count();
    s.chars().skip(count.saturating_sub(n)).collect()
}

/// Feature strings for the token at `position` within one sentence.
pub fn extract_features(
    tokens: &[Token],
    position: usize,
    gazetteers: &Gazetteers,
) -> BTreeSet<String> {
    let mut f = BTreeSet::new();
    let tok = &tokens[position];
    let lower = tok.text.to_lowercase();
    f.insert("bias".to_string());
    f.insert(format!("w:{lower}"));
    f.insert(format!("shape:{}", tok.shape));
    f.insert(format!("pre3:{}", prefix(&lower, 3)));
    f.insert(format!("suf3:{}", suffix(&lower, 3)));
    if position == 0 {
        f.insert("sent_initial".to_string());
    }
    match position.checked_sub(1).map(|p| &tokens[p]) {
        Some(prev) => {
            f.insert(format!("w-1:{}", prev.text.to_lowercase()));
            f.insert(format!("shape-1:{}", prev.shape));
        }
        None => {
            f.insert("w-1:<s>".to_string());
        }
    }
    match tokens.get(position + 1) {
        Some(next) => {
            f.insert(format!("w+1:{}", next.text.to_lowercase()));
            f.insert(format!("shape+1:{}", next.shape));
        }
        None => {
            f.insert("w+1:</s>".to_string());
        }
    }
    if !gazetteers.is_empty() {
        for k in 1..=MAX_GAZETTEER_WINDOW.min(tokens.len()) {
            let lo = (position + 1).saturating_sub(k);
            let hi = position.min(tokens.len() - k);
            for start in lo..=hi {
                let phrase = normalize_phrase(
                    &tokens[start..start + k]
                        .iter()
                        .map(|t| t.text.as_str())
                        .collect::<Vec<_>>()
                        .join(" "),
                );
                for name in gazetteers.names() {
                    if gazetteers.contains(name, &phrase) {
                        f.insert(format!("gaz:{name}:{k}"));
                        f.insert(format!("gaz:{name}:{k}:{}", position - start));
                    }
                }
            }
        }
    }
    f
}

/// Exact max-score decoding over `labels`.
///
/// `emissions[t][j]` scores label `j` at position `t`; `transitions[i * L + j]`
/// scores label `i` followed by label `j`. Structurally invalid starts, ends
/// and transitions are excluded. Ties go to the earlier label. Returns label
/// indexes, or `None` when no valid sequence exists.
pub fn viterbi(labels: &[Tag], emissions: &[Vec<f64>], transitions: &[f64]) -> Option<Vec<usize>> {
    let n = emissions.len();
    let l = labels.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let neg = f64::NEG_INFINITY;
    let mut score = vec![neg; l];
    for j in 0..l {
        if labels[j].can_start() {
            score[j] = emissions[0][j];
        }
    }
    let mut back = vec![vec![0usize; l]; n];
    for t in 1..n {
        let mut next = vec![neg; l];
        for j in 0..l {
            let mut best = neg;
            let mut arg = 0;
            for i in 0..l {
                if score[i] == neg || !labels[i].allows(labels[j]) {
                    continue;
                }
                let s = score[i] + transitions[i * l + j];
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            if best > neg {
                next[j] = best + emissions[t][j];
                back[t][j] = arg;
            }
        }
        score = next;
    }
    let mut best = neg;
    let mut last = None;
    for j in 0..l {
        if labels[j].can_end() && score[j] > best {
            best = score[j];
            last = Some(j);
        }
    }
    let mut j = last?;
    let mut path = vec![0; n];
    for t in (0..n).rev() {
        path[t] = j;
        j = back[t][j];
    }
    Some(path)
}

/// Score of a label-index path under the same decomposition `viterbi` uses.
pub fn path_score(emissions: &[Vec<f64>], transitions: &[f64], labels: usize, path: &[usize]) -> f64 {
    let mut s = 0.0;
    for (t, &j) in path.iter().enumerate() {
        if t > 0 {
            s += transitions[path[t - 1] * labels + j];
        }
        s += emissions[t][j];
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMention {
    /// Token span, end exclusive.
    pub span: (usize, usize),
    /// Character span, end exclusive.
    pub char_span: (usize, usize),
    pub entity_type: EntityType,
    pub surface: String,
    /// Sentence number within the source text.
    #[serde(default)]
    pub sentence: usize,
}

impl EntityMention {
    pub fn key(&self) -> TypedSpan {
        TypedSpan {
            start: self.span.0,
            end: self.span.1,
            entity_type: self.entity_type,
        }
    }
}

/// Trained tagger: per-feature label weights, transitions, gazetteers.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    labels: Vec<Tag>,
    features: HashMap<String, Vec<f64>>,
    transitions: Vec<f64>,
    gazetteers: Gazetteers,
}

pub const MODEL_HEADER: &str = "# commentlens-tagger v1";

impl TaggerModel {
    /// A zero-weight model over `labels`.
    pub fn new(labels: Vec<Tag>, gazetteers: Gazetteers) -> Result<Self, NerError> {
        if !labels.contains(&Tag::O) {
            return Err(NerError::MissingOutside);
        }
        let l = labels.len();
        Ok(Self {
            labels,
            features: HashMap::new(),
            transitions: vec![0.0; l * l],
            gazetteers,
        })
    }

    pub fn labels(&self) -> &[Tag] {
        &self.labels
    }

    pub fn gazetteers(&self) -> &Gazetteers {
        &self.gazetteers
    }

    /// Replace the gazetteers, e.g. with an updated list directory.
    pub fn set_gazetteers(&mut self, gazetteers: Gazetteers) {
        self.gazetteers = gazetteers;
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    fn label_index(&self, tag: Tag) -> Option<usize> {
        self.labels.iter().position(|&t| t == tag)
    }

    pub fn feature_weight(&self, feature: &str, tag: Tag) -> f64 {
        match (self.features.get(feature), self.label_index(tag)) {
            (Some(w), Some(j)) => w[j],
            _ => 0.0,
        }
    }

    pub fn set_feature_weight(&mut self, feature: &str, tag: Tag, weight: f64) {
        let j = self.label_index(tag).expect("tag in label set");
        let l = self.labels.len();
        self.features
            .entry(feature.to_string())
            .or_insert_with(|| vec![0.0; l])[j] = weight;
    }

    pub fn transition_weight(&self, from: Tag, to: Tag) -> f64 {
        match (self.label_index(from), self.label_index(to)) {
            (Some(i), Some(j)) => self.transitions[i * self.labels.len() + j],
            _ => 0.0,
        }
    }

    pub fn set_transition_weight(&mut self, from: Tag, to: Tag, weight: f64) {
        let l = self.labels.len();
        let i = self.label_index(from).expect("tag in label set");
        let j = self.label_index(to).expect("tag in label set");
        self.transitions[i * l + j] = weight;
    }

    /// Emission scores for every position of a sentence.
    pub fn emissions(&self, tokens: &[Token]) -> Vec<Vec<f64>> {
        let l = self.labels.len();
        (0..tokens.len())
            .map(|pos| {
                let mut row = vec![0.0; l];
                for f in extract_features(tokens, pos, &self.gazetteers) {
                    if let Some(w) = self.features.get(&f) {
                        for (r, w) in row.iter_mut().zip(w) {
                            *r += w;
                        }
                    }
                }
                row
            })
            .collect()
    }

    /// Highest-scoring valid tag sequence for one sentence.
    pub fn viterbi_decode(&self, tokens: &[Token]) -> Vec<Tag> {
        let em = self.emissions(tokens);
        let path = viterbi(&self.labels, &em, &self.transitions)
            .expect("an all-O sequence is always valid");
        path.into_iter().map(|j| self.labels[j]).collect()
    }

    /// Tag every sentence of `text` and return typed mentions in order.
    pub fn tag_text(&self, text: &str) -> Vec<EntityMention> {
        let tt = tokenize(text);
        let mut mentions = Vec::new();
        for (sentence, range) in tt.sentences().into_iter().enumerate() {
            let tokens = &tt.tokens[range.clone()];
            let tags = self.viterbi_decode(tokens);
            for span in tags_to_spans(&tags).expect("decoder output is valid") {
                let start = range.start + span.start;
                let end = range.start + span.end;
                let cs = tt.tokens[start].start;
                let ce = tt.tokens[end - 1].end;
                mentions.push(EntityMention {
                    span: (start, end),
                    char_span: (cs, ce),
                    entity_type: span.entity_type,
                    surface: tt.slice_chars(cs, ce),
                    sentence,
                });
            }
        }
        mentions
    }

    /// Write the model as sorted, tab-separated lines.
    pub fn save<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{MODEL_HEADER}")?;
        let labels: Vec<String> = self.labels.iter().map(Tag::to_string).collect();
        writeln!(out, "labels\t{}", labels.join(" "))?;
        for (name, phrase) in self.gazetteers.sorted_entries() {
            writeln!(out, "gazetteer\t{name}\t{phrase}")?;
        }
        let mut lines = Vec::new();
        for (feature, weights) in &self.features {
            for (tag, w) in self.labels.iter().zip(weights) {
                if *w != 0.0 {
                    lines.push(format!("feature\t{feature}\t{tag}\t{w}"));
                }
            }
        }
        let l = self.labels.len();
        for i in 0..l {
            for j in 0..l {
                let w = self.transitions[i * l + j];
                if w != 0.0 {
                    lines.push(format!("transition\t{}\t{}\t{w}", self.labels[i], self.labels[j]));
                }
            }
        }
        lines.sort_unstable();
        for line in lines {
            writeln!(out, "{line}")?;
        }
        out.flush()
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, NerError> {
        let io_err = |line, e: io::Error| NerError::Format {
            line,
            message: e.to_string(),
        };
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(NerError::Format {
            line: 1,
            message: "empty file".into(),
        })?;
        if header.map_err(|e| io_err(1, e))?.trim() != MODEL_HEADER {
            return Err(NerError::Format {
                line: 1,
                message: format!("expected header `{MODEL_HEADER}`"),
            });
        }
        let mut model: Option<TaggerModel> = None;
        let mut gazetteers = Gazetteers::new();
        for (i, line) in lines {
            let n = i + 1;
            let line = line.map_err(|e| io_err(n, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: &str| NerError::Format {
                line: n,
                message: message.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            match cols.as_slice() {
                ["labels", labels] => {
                    let labels = labels
                        .split(' ')
                        .map(str::parse)
                        .collect::<Result<Vec<Tag>, _>>()?;
                    model = Some(TaggerModel::new(labels, Gazetteers::new())?);
                }
                ["gazetteer", name, phrase] => gazetteers.insert(name, phrase),
                ["feature", feature, tag, w] => {
                    let m = model.as_mut().ok_or_else(|| bad("weights before label line"))?;
                    let tag: Tag = tag.parse()?;
                    if m.label_index(tag).is_none() {
                        return Err(bad("tag outside the label set"));
                    }
                    let w: f64 = w.parse().map_err(|_| bad("weight is not a number"))?;
                    if !w.is_finite() {
                        return Err(bad("weight is not finite"));
                    }
                    m.set_feature_weight(feature, tag, w);
                }
                ["transition", from, to, w] => {
                    let m = model.as_mut().ok_or_else(|| bad("weights before label line"))?;
                    let (from, to): (Tag, Tag) = (from.parse()?, to.parse()?);
                    if m.label_index(from).is_none() || m.label_index(to).is_none() {
                        return Err(bad("tag outside the label set"));
                    }
                    let w: f64 = w.parse().map_err(|_| bad("weight is not a number"))?;
                    if !w.is_finite() {
                        return Err(bad("weight is not finite"));
                    }
                    m.set_transition_weight(from, to, w);
                }
                _ => return Err(bad("unrecognized line")),
            }
        }
        let mut model = model.ok_or(NerError::Format {
            line: 0,
            message: "missing label line".into(),
        })?;
        model.gazetteers = gazetteers;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<Token>,
    pub gold: Vec<Tag>,
}

impl LabeledSentence {
    /// Build from bare words, assigning offsets as if joined by single spaces.
    pub fn from_words<S: AsRef<str>>(words: &[S], gold: Vec<Tag>) -> Self {
        let mut tokens = Vec::with_capacity(words.len());
        let mut offset = 0;
        for w in words {
            let text = w.as_ref().to_string();
            let len = text.chars().count();
            tokens.push(Token {
                shape: shape_of(&text).unwrap_or_default(),
                text,
                start: offset,
                end: offset + len,
            });
            offset += len + 1;
        }
        Self { tokens, gold }
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

/// Read CoNLL-style data: `token<TAB>tag` per line, blank line between
/// sentences. `-DOCSTART-` lines are ignored.
pub fn read_conll<R: BufRead>(input: R) -> Result<Vec<LabeledSentence>, NerError> {
    let mut out = Vec::new();
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut flush = |words: &mut Vec<String>, tags: &mut Vec<Tag>| {
        if !words.is_empty() {
            out.push(LabeledSentence::from_words(words, std::mem::take(tags)));
            words.clear();
        }
    };
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| NerError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            flush(&mut words, &mut tags);
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let mut cols = line.split(['\t', ' ']).filter(|c| !c.is_empty());
        let (Some(word), Some(tag)) = (cols.next(), cols.next_back()) else {
            return Err(NerError::Format {
                line: i + 1,
                message: "expected `token<TAB>tag`".into(),
            });
        };
        words.push(word.to_string());
        tags.push(tag.parse()?);
    }
    flush(&mut words, &mut tags);
    Ok(out)
}

pub fn write_conll<W: Write>(sentences: &[LabeledSentence], mut out: W) -> io::Result<()> {
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.gold) {
            writeln!(out, "{}\t{tag}", tok.text)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Averaged structured perceptron over the full BILOU label set.
pub fn train_perceptron(
    data: &[LabeledSentence],
    epochs: usize,
    seed: u64,
    gazetteers: Gazetteers,
) -> Result<TaggerModel, NerError> {
    train_perceptron_with_labels(data, full_label_set(), epochs, seed, gazetteers)
}

pub fn train_perceptron_with_labels(
    data: &[LabeledSentence],
    labels: Vec<Tag>,
    epochs: usize,
    seed: u64,
    gazetteers: Gazetteers,
) -> Result<TaggerModel, NerError> {
    if data.is_empty() {
        return Err(NerError::EmptyData);
    }
    let mut model = TaggerModel::new(labels, gazetteers)?;
    let l = model.labels.len();
    let index: HashMap<Tag, usize> = model.labels.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    // intern features in first-seen order
    let mut feature_ids: HashMap<String, usize> = HashMap::new();
    let mut feature_names: Vec<String> = Vec::new();
    let mut prepared = Vec::with_capacity(data.len());
    for (s, sentence) in data.iter().enumerate() {
        if sentence.tokens.len() != sentence.gold.len() {
            return Err(NerError::LengthMismatch {
                sentence: s,
                tokens: sentence.tokens.len(),
                tags: sentence.gold.len(),
            });
        }
        if !is_valid_sequence(&sentence.gold) {
            return Err(NerError::InvalidGold { sentence: s });
        }
        let gold = sentence
            .gold
            .iter()
            .map(|t| index.get(t).copied().ok_or_else(|| NerError::UnknownLabel(t.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let feats: Vec<Vec<usize>> = (0..sentence.tokens.len())
            .map(|pos| {
                extract_features(&sentence.tokens, pos, &model.gazetteers)
                    .into_iter()
                    .map(|f| {
                        *feature_ids.entry(f.clone()).or_insert_with(|| {
                            feature_names.push(f);
                            feature_names.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        prepared.push((feats, gold));
    }

    let nf = feature_names.len();
    let mut w = vec![0.0; nf * l];
    let mut u = vec![0.0; nf * l];
    let mut tw = vec![0.0; l * l];
    let mut tu = vec![0.0; l * l];
    let mut c = 1.0;

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &s in &order {
            let (feats, gold) = &prepared[s];
            let emissions: Vec<Vec<f64>> = feats
                .iter()
                .map(|fs| {
                    let mut row = vec![0.0; l];
                    for &f in fs {
                        for (r, x) in row.iter_mut().zip(&w[f * l..(f + 1) * l]) {
                            *r += x;
                        }
                    }
                    row
                })
                .collect();
            let pred = viterbi(&model.labels, &emissions, &tw).expect("all-O is valid");
            if &pred != gold {
                for t in 0..gold.len() {
                    let (g, p) = (gold[t], pred[t]);
                    if g != p {
                        for &f in &feats[t] {
                            w[f * l + g] += 1.0;
                            u[f * l + g] += c;
                            w[f * l + p] -= 1.0;
                            u[f * l + p] -= c;
                        }
                    }
                    if t > 0 {
                        let gt = gold[t - 1] * l + g;
                        let pt = pred[t - 1] * l + p;
                        if gt != pt {
                            tw[gt] += 1.0;
                            tu[gt] += c;
                            tw[pt] -= 1.0;
                            tu[pt] -= c;
                        }
                    }
                }
            }
            c += 1.0;
        }
    }

    for (f, name) in feature_names.into_iter().enumerate() {
        let avg: Vec<f64> = (0..l).map(|j| w[f * l + j] - u[f * l + j] / c).collect();
        if avg.iter().any(|&x| x != 0.0) {
            model.features.insert(name, avg);
        }
    }
    for k in 0..l * l {
        model.transitions[k] = tw[k] - tu[k] / c;
    }
    Ok(model)
}

/// Fraction of tokens whose decoded tag matches gold.
pub fn tag_accuracy(model: &TaggerModel, data: &[LabeledSentence]) -> f64 {
    let results = crate::exec::map(data, |s| {
        let pred = model.viterbi_decode(&s.tokens);
        let hits = pred.iter().zip(&s.gold).filter(|(a, b)| a == b).count();
        (hits, s.gold.len())
    });
    let (hits, total) = results
        .into_iter()
        .fold((0, 0), |(h, t), (a, b)| (h + a, t + b));
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEvaluation {
    pub per_type: BTreeMap<EntityType, (SpanCounts, Prf)>,
    /// Unweighted mean over types with at least one gold mention.
    pub macro_avg: Prf,
    pub micro: Prf,
}

/// Span-level evaluation of `model` on labeled sentences, each treated as
/// its own document.
pub fn evaluate_tagger(model: &TaggerModel, data: &[LabeledSentence]) -> SpanEvaluation {
    let predicted_tags = crate::exec::map(data, |s| model.viterbi_decode(&s.tokens));
    let mut gold = BTreeMap::new();
    let mut predicted = BTreeMap::new();
    for (i, (s, tags)) in data.iter().zip(predicted_tags).enumerate() {
        let doc = format!("{i:08}");
        gold.insert(doc.clone(), tags_to_spans(&s.gold).unwrap_or_default());
        predicted.insert(doc, tags_to_spans(&tags).expect("decoder output is valid"));
    }
    evaluate_spans(&gold, &predicted).expect("both maps share document ids")
}

/// Exact-match span evaluation: a prediction is correct iff its span and
/// type both equal a gold mention.
pub fn evaluate_spans(
    gold: &BTreeMap<String, Vec<TypedSpan>>,
    predicted: &BTreeMap<String, Vec<TypedSpan>>,
) -> Result<SpanEvaluation, NerError> {
    for doc in gold.keys().chain(predicted.keys()) {
        if !gold.contains_key(doc) || !predicted.contains_key(doc) {
            return Err(NerError::DocumentMismatch(doc.clone()));
        }
    }
    let mut counts: BTreeMap<EntityType, SpanCounts> = BTreeMap::new();
    for (doc, g) in gold {
        let g: BTreeSet<TypedSpan> = g.iter().copied().collect();
        let p: BTreeSet<TypedSpan> = predicted[doc].iter().copied().collect();
        for s in &g {
            counts.entry(s.entity_type).or_default().gold += 1;
        }
        for s in &p {
            let c = counts.entry(s.entity_type).or_default();
            c.predicted += 1;
            if g.contains(s) {
                c.correct += 1;
            }
        }
    }
    let per_type: BTreeMap<EntityType, (SpanCounts, Prf)> = counts
        .iter()
        .map(|(&t, &c)| (t, (c, Prf::from_counts(c.correct, c.predicted, c.gold))))
        .collect();
    let scored: Vec<Prf> = per_type
        .values()
        .filter(|(c, _)| c.gold > 0)
        .map(|(_, p)| *p)
        .collect();
    let macro_avg = if scored.is_empty() {
        Prf::default()
    } else {
        let n = scored.len() as f64;
        Prf {
            precision: scored.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: scored.iter().map(|p| p.recall).sum::<f64>() / n,
            f1: scored.iter().map(|p| p.f1).sum::<f64>() / n,
        }
    };
    let total = counts.values().fold(SpanCounts::default(), |a, c| SpanCounts {
        gold: a.gold + c.gold,
        predicted: a.predicted + c.predicted,
        correct: a.correct + c.correct,
    });
    Ok(SpanEvaluation {
        per_type,
        macro_avg,
        micro: Prf::from_counts(total.correct, total.predicted, total.gold),
    })
}
