//! Zero-cost proxy evaluation for NB201-style cells, score tables, and the
//! analyses built on them.
//!
//! - [`archspace`]: cell encodings, network construction, structural features.
//! - [`proxies`]: the thirteen zero-cost proxies.
//! - [`scorestore`]: score tables on disk and in memory.
//! - [`analysis`]: correlations, ranking metrics, entropy and information gain.
//! - [`biaslab`]: bias measurement and mitigation.
//! - [`nasloop`]: surrogate models and predictor-guided search.

pub mod archspace;
pub mod proxies;
pub mod scorestore;
pub mod analysis;
pub mod biaslab;
pub mod nasloop;
