//! The golden fixture: a three-article corpus with models trained from
//! checked-in data.

#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Arc;

use commentlens::config::Smoothing;
use commentlens::corpus::{ingest_stream, CorpusStore, RecordKind};
use commentlens::nel::KnowledgeBase;
use commentlens::ner::{read_conll, train_perceptron, Gazetteers, TaggerModel};
use commentlens::pipeline::{run_pipeline, AnnotationSet, Models, RunOptions};
use commentlens::query::Snapshot;
use commentlens::sentiment::{read_labeled_ndjson, train, SentimentModel, TrainConfig, Vocab};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub const KINDS: [(RecordKind, &str); 3] = [
    (RecordKind::Site, "sites.ndjson"),
    (RecordKind::Article, "articles.ndjson"),
    (RecordKind::Comment, "comments.ndjson"),
];

pub fn ingest_fixture(store: &mut CorpusStore) -> Vec<commentlens::corpus::IngestReport> {
    KINDS
        .iter()
        .map(|&(kind, file)| {
            let f = File::open(fixture_dir().join(file)).expect("fixture file");
            ingest_stream(BufReader::new(f), kind, store).expect("in-memory ingest")
        })
        .collect()
}

pub fn fixture_store() -> CorpusStore {
    let mut store = CorpusStore::new();
    ingest_fixture(&mut store);
    store
}

pub fn fixture_tagger() -> TaggerModel {
    let f = File::open(fixture_dir().join("ner.conll")).unwrap();
    let data = read_conll(BufReader::new(f)).unwrap();
    train_perceptron(&data, 20, 0, Gazetteers::new()).unwrap()
}

pub fn fixture_sentiment() -> SentimentModel {
    let f = File::open(fixture_dir().join("sentiment.ndjson")).unwrap();
    let data = read_labeled_ndjson(BufReader::new(f)).unwrap();
    let vocab = Vocab::build(data.iter().map(|d| d.text.as_str()), 1);
    let mut model = SentimentModel::new(vocab, 16, 8, &[3, 4, 5], 0).unwrap();
    let config = TrainConfig {
        learning_rate: 0.3,
        epochs: 30,
        batch_size: 4,
        seed: 0,
        max_tokens: 32,
    };
    train(&mut model, &data, &config).unwrap();
    model
}

pub fn fixture_models() -> Models {
    Models {
        tagger: Some(fixture_tagger()),
        kb: Arc::new(KnowledgeBase::load_dir(fixture_dir().join("kb")).unwrap()),
        sentiment: Arc::new(fixture_sentiment()),
        fingerprint: "golden-fixture".into(),
    }
}

pub struct Golden {
    pub store: Arc<CorpusStore>,
    pub models: Models,
    pub annotations: Arc<AnnotationSet>,
    pub snapshot: Snapshot,
}

pub fn golden() -> Golden {
    let store = Arc::new(fixture_store());
    let models = fixture_models();
    let annotations = Arc::new(run_pipeline(&store, &models, &RunOptions::default(), None));
    let snapshot = Snapshot::new(store.clone(), annotations.clone(), models.kb.clone(), Smoothing::default());
    Golden {
        store,
        models,
        annotations,
        snapshot,
    }
}
