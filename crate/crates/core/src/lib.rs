//! Evaluation harness for how images, personas and news attributes change a
//! vision-language model's willingness to reshare news.

pub mod corpus;
pub mod modelio;
pub mod parse;
pub mod persona;
pub mod promptgen;
pub mod rng;
pub mod runner;
pub mod simulate;
pub mod stats;

pub use corpus::{corpus_stats, load_corpus, Corpus, CorpusStats, NewsItem, Topic, Veracity};
pub use modelio::{Client, CompletionRecord, EndpointConfig, MockPolicy, Protocol, RecordKey};
pub use parse::{extract_rating, InvalidReason, Rating};
pub use persona::{enumerate_conditions, Condition, DemographicProfile, PersonaSet, Trait};
pub use promptgen::{Modality, PromptBuilder, PromptBundle};
pub use runner::{analyze_store, RunConfig, Runner, StatReport};
pub use simulate::{power_curve, run_scenario, ScenarioSpec};
pub use stats::{CellKey, ObservationCell};
