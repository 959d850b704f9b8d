//! Unsupervised visual anomaly detection from the activation statistics of
//! a fixed convolutional network.
//!
//! Nominal images are pushed through the network, every conv filter's map is
//! reduced to a scalar, and the per-filter mean and standard deviation are
//! kept. A new image is scored by how many standard deviations its filters
//! stray from those means ([`model`]); guided backpropagation of that
//! deviation highlights the responsible pixels ([`localize`]).

pub mod engine;
pub mod error;
pub mod eval;
pub mod graph;
pub mod imaging;
pub mod localize;
pub mod model;
pub mod ops;
mod par;
pub mod persist;
pub mod refnet;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use engine::{backward, forward, ActivationRecord, TapPoint};
pub use error::{FadsError, Result};
pub use eval::{roc_auc, stratified_kfold, FoldPlan, Label, LabeledScores};
pub use graph::{load_graph, save_graph, LayerKind, LayerSpec, NetworkGraph};
pub use localize::{anomaly_loss, region_label, saliency, RegionMask, RegionParams, SaliencyMap};
pub use model::{
    aggregate, embed, ensemble_fit, score, AggregationKind, EnsembleModel, FadsModel, FitOptions, Network,
    ScoreMethod,
};
pub use ops::GradMode;
pub use refnet::make_reference_net;
pub use tensor::Tensor;
pub use weights::{load_weights, save_weights, WeightStore};
