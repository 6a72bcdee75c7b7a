//! Sleep apnea severity classification from polysomnography recordings:
//! EDF ingestion, cohort labeling, segmentation, a small 1D CNN with
//! hand-written backpropagation, training, and evaluation metrics.

pub mod cohort;
pub mod edf;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod training;
