pub mod corpus;
pub mod exec;
pub mod textproc;
pub mod ner;
pub mod nel;
pub mod sentiment;
pub mod analytics;
pub mod config;
pub mod pipeline;
pub mod query;
