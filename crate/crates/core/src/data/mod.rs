//! Utterances, the feature pipeline and the synthetic multi-speaker corpus.

mod corpus;
mod features;
mod utt_file;

pub use corpus::{balanced_selection, generate_corpus, Corpus, CorpusConfig, Split, SyntheticSpeaker};
pub use features::{speaker_normalize, stack_and_downsample, NORM_EPS};
pub use utt_file::{parse_utterances, write_utterances};

use crate::error::{contract_err, Result};
use crate::numerics::Tensor;

/// Reserved token ids. Content tokens start at [`FIRST_CONTENT`].
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const FIRST_CONTENT: usize = 4;

/// One training/evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    /// Binary speaker attribute used for balanced bank selection.
    pub attribute: u8,
    /// `[T, F]` feature frames.
    pub frames: Tensor,
    /// Target tokens, without start/end markers.
    pub tokens: Vec<usize>,
}

impl Utterance {
    pub fn validate(&self) -> Result<()> {
        for (what, s) in [("utterance id", &self.utt_id), ("speaker id", &self.speaker_id)] {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(contract_err!("{what} {s:?} must be a non-empty token"));
            }
        }
        if self.attribute > 1 {
            return Err(contract_err!("utterance `{}`: attribute must be 0 or 1", self.utt_id));
        }
        if self.frames.shape().len() != 2 {
            return Err(contract_err!("utterance `{}`: frames must be a [T, F] matrix", self.utt_id));
        }
        if !self.frames.is_finite() {
            return Err(contract_err!("utterance `{}` has non-finite frames", self.utt_id));
        }
        if self.tokens.contains(&PAD) {
            return Err(contract_err!("utterance `{}` contains the padding token", self.utt_id));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}
