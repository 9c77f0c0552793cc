//! Reflexive-anaphora generalization laboratory.
//!
//! Generates a small English fragment (names, intransitive and transitive
//! verbs, `herself`/`himself`) paired with predicate-calculus logical forms,
//! withholds classes of sentences according to an experiment, trains
//! recurrent encoder–decoder models from scratch and measures whether the
//! interpretation of reflexives carries over to the withheld antecedents.

pub mod checkpoint;
pub mod encoding;
pub mod experiment;
pub mod grammar;
pub mod holdout;
pub mod numerics;
pub mod report;
pub mod seq2seq;
pub mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use encoding::{build_vocabs, Vocab};
pub use grammar::{build_lexicon, enumerate_sentences, interpret, Dataset, Example, Form, Gender, Lexicon};
pub use holdout::{make_split, DataSplit, ExperimentId, HoldoutSpec};
pub use seq2seq::{AttentionKind, ModelConfig, Seq2Seq, Unit};
pub use checkpoint::Checkpoint;
pub use trainer::{train_run, RunHistory, TrainConfig};


/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Split = 1,
    Init = 2,
    Shuffle = 3,
    GradCheck = 4,
}

pub fn seeded_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
