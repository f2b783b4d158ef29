//! Examples, datasets, vocabularies, identifier splitting and the
//! synthetic task generators.

mod dataset;
mod example;
mod synthetic;
mod tokenize;
mod vocab;

pub use dataset::{load_dataset, save_dataset, validate_examples, Dataset, DATASET_SCHEMA};
pub use example::{ContextEnv, Example, Member};
pub use synthetic::{
    generate_synthetic, SyntheticGrammar, SyntheticTaskConfig, AMBIGUOUS_TAG, DIALOG_GRAMMAR,
    JAVA_GRAMMAR,
};
pub use tokenize::split_camel_case;
pub use vocab::{build_vocab, Vocab, BOS, EOS, PAD, UNK};
