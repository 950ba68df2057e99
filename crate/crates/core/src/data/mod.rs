//! Tokenization, corpora, masking, batching and the synthetic task family.

mod batch;
mod corpus;
mod mask;
mod synthetic;
mod task;
mod vocab;

pub use batch::{build_batch, encode, encode_text, Batch, BatchItem, Encoded};
pub use corpus::{sample_consecutive_pairs, GeneralCorpus};
pub use mask::{mask_tokens, Masked};
pub use synthetic::{generate_synthetic, SyntheticTaskSpec};
pub use task::{read_tsv, subsample_task, write_tsv, Split, TaskDataset, TaskExample};
pub use vocab::{Vocab, CLS, MASK, PAD, SEP, UNK};
