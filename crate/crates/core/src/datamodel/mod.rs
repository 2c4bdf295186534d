//! Interaction logs, leave-one-out splits and the planted synthetic generator.

mod dataset;
mod synthetic;

pub use dataset::{
    ingest, ingest_str, load_item_features, truncate_history, write_item_features, BehaviorVocab,
    Event, IngestOptions, Interaction, InteractionDataset, Split, UserSequence, MIN_USER_EVENTS,
};
pub use synthetic::{
    generate_features, generate_synthetic, stationary_distribution, BayesReference, BehaviorKernel,
    FeatureSpec, SyntheticData, SyntheticSpec,
};
