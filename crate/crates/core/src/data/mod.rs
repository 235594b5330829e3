//! Toy corpus synthesis, WAV corpus ingestion and training batches.

mod batch;
mod corpus;
mod toy;

pub use batch::{build_batch, crop_example, make_example, Batch, TrainingExample};
pub use corpus::{
    compute_speaker_stats, generate_corpus, ingest_directory, read_manifest, write_manifest,
    Corpus, Features, ManifestRow, ToyCorpusConfig, Utterance, CACHE_ENV,
};
pub use toy::{
    render_toy_utterance, SpeakerProfile, ToyUtteranceSpec, DEFAULT_VOCAB, MAX_TOKENS,
    MIN_TOKENS, PITCH_RANGE, RHYTHM_RANGE,
};
