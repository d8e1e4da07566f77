//! Evidence pipeline for multiple-choice medical question answering: source
//! balanced BM25 retrieval, LLM background generation, evidence selection and
//! a final reader, plus the evaluation harness around them.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod evidence;
pub mod harness;
pub mod kads;
pub mod kgcc;
pub mod llm;
pub mod pipeline;
pub mod question;
pub mod reader;
pub mod retrieval;
pub mod sync;
pub mod text;
pub mod trace;

pub use corpus::{CorpusStore, Snippet};
pub use dataset::{load_dataset, DatasetFormat};
pub use pipeline::{Mode, Pipeline};
pub use question::Question;
pub use reader::AnswerRecord;
