//! Federated-learning core: recommender-driven collaborator selection over
//! historical metrics, non-negative matrix factorization, harmonic
//! similarity-weighted aggregation and a seeded federation simulator.
//!
//! The crate is `no_std` (with `alloc`). The `std` feature enables the std
//! backends of the dependencies and `parallel` runs local training of the
//! selected collaborators on a rayon pool.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod aggregation;
pub mod error;
pub mod nnmf;
pub mod params;
pub mod recommender;
pub mod rng;
pub mod simulator;

pub use crate::aggregation::{
    combine_weights, fedavg, harmonic_aggregate, hsimagg, sample_weights, simagg_arithmetic,
    similarity_weights, AggregationWeights, Aggregator, CollaboratorUpdate, HarmonicMode,
    WeightMap, DEFAULT_EPSILON,
};
pub use crate::error::{Error, Result};
pub use crate::nnmf::{
    factorize, factorize_observed, frobenius_error, rank_by_first_factor, FactorizationResult,
    Matrix, NnmfOptions,
};
pub use crate::params::{
    l1_distance, l2_distance, mean, CollaboratorId, Distance, ParameterVector,
};
pub use crate::recommender::{
    normalize_metrics, select_random, select_recommender, select_sliding_window, selection_count,
    window_permutation, CollaboratorRecord, MetricsMatrix, MetricsStore, Observation, Policy,
    SelectionDecision, SelectionMode, StoreEntry,
};
pub use crate::simulator::{
    local_gradient, local_train, make_federation, run_federation, simulate_duration, validate,
    Dataset, Federation, FederationConfig, RoundLog, SimCollaborator, TaskConfig,
};
