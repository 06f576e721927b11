#![allow(dead_code)]

use std::path::{Path, PathBuf};

use clap::Parser;
use commentlens_server::cli::{execute, Cli};

pub fn core_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/golden")
}

pub fn golden(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name);
    std::fs::read(path).unwrap()
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(core_fixtures().join(name)).unwrap()
}

/// Run the CLI with `args` and return what it printed.
pub fn cli(args: &[&str]) -> String {
    let mut argv = vec!["commentlens"];
    argv.extend_from_slice(args);
    let mut out = Vec::new();
    execute(Cli::parse_from(argv), &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Train both models from the core fixtures with the golden settings and
/// write a config pointing at them. Returns the config path.
pub fn prepare(dir: &Path) -> PathBuf {
    let fx = core_fixtures();
    let ner = dir.join("ner.model");
    let sent = dir.join("sentiment.model");
    cli(&["train-ner", s(&fx.join("ner.conll")), "--out", s(&ner), "--epochs", "20"]);
    cli(&[
        "train-sentiment",
        s(&fx.join("sentiment.ndjson")),
        "--out",
        s(&sent),
        "--epochs",
        "30",
        "--lr",
        "0.3",
        "--batch-size",
        "4",
        "--dim",
        "16",
        "--maps",
        "8",
        "--max-tokens",
        "32",
    ]);
    let config = dir.join("config.toml");
    let toml = format!(
        "store_dir = {:?}\nner_model = {:?}\nkb_dir = {:?}\nsentiment_model = {:?}\n",
        s(&dir.join("store")),
        s(&ner),
        s(&fx.join("kb")),
        s(&sent),
    );
    std::fs::write(&config, toml).unwrap();
    config
}
