//! Tokens, vocabularies, datasets and corpus readers.

mod dataset;
mod loaders;
mod synthetic;
mod token;
mod vocab;

pub use dataset::{
    read_corpus, read_unlabeled, write_corpus, CorpusRecord, DatasetSplits, IntentLabel, LabelSet,
    LabeledUtterance,
};
pub use loaders::{
    intent_histogram, labeled_from_corpus, load_clinc, load_snips, CLINC_OOS_LABEL, SNIPS_DEFAULT_HOLDOUT,
};
pub use synthetic::{generate_synthetic, synthetic_general_corpus, SyntheticConfig};
pub use token::{tokenize, Token, Utterance};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, MASK, UNK};
