//! Semi-Markov conditional random fields over labeled frame segments.

mod features;
mod model;
mod train;

pub use features::{
    count_local_minima, peak_curve, single_peak, thirds, thirds_summary, Feature, FeatureContext,
    Pool, Source, SparseVec,
};
pub use model::{
    group_by_labels, rescore, strip_boundaries, Aggregation, Decoded, SegmentalModel, Topology,
};
pub use train::{
    example_gradient, lattice_example, objective_and_gradient, train, Example, LatticeExample,
    MissingReference, TrainOptions, TrainReport,
};
