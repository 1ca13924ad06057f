//! Hybrid anime recommendation engine.
//!
//! A user-based autoencoder predicts ratings for unrated titles. Titles are
//! embedded by two further autoencoders (ratings from heavy raters, then
//! ratings code plus genres), clustered spectrally, and paired with a
//! "logically opposite" cluster. The hybrid filter combines predicted ratings
//! with cluster membership into two recommendation lists.

pub mod autonet;
pub mod dataset;
pub mod embedding;
pub mod engine;
pub mod evaluate;
pub mod hybridfilter;
pub mod knowledgebase;
pub mod pipeline;
pub mod spectral;
pub mod synth;
