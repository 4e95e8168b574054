//! Beam search with a length penalty, plus decode output files.

mod beam;
mod output;

pub use beam::{beam_search, default_max_len, greedy, length_penalty, BeamConfig, BeamResult, Hypothesis, ModelScorer, StepScorer};
pub use output::{format_decodes, format_nbest, parse_decodes};
