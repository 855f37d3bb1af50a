//! Sparse network reconstruction from samples of a graphical model.
//!
//! Greedy coordinate descent over the couplings of an Ising or Gaussian
//! pseudolikelihood with an L1 penalty. Each iteration updates only the
//! `round(kappa * N)` most promising pairs, located by a recursive closest-pairs
//! search over an approximate nearest-neighbor graph, so one iteration costs
//! subquadratic time in the number of nodes.

pub mod error;
pub mod experiments;
pub mod findbest;
pub mod gcd;
pub mod io;
pub mod models;
pub mod nndescent;
pub mod rng;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use findbest::{find_best, find_best_exhaustive, BestPairsResult, FindBestOptions};
pub use gcd::{reconstruct_cd, reconstruct_gcd, CdConfig, Reconstruction, ReconstructionConfig};
pub use models::{DistanceCache, DistanceMode, EdgeUpdate, Model, ModelKind, OptimWarning};
pub use nndescent::{find_knn, KnnGraph, KnnParams, KnnResult, PairDistance};
pub use types::{
    CandidateEdge, ConvergenceTrace, IterationRecord, RecursionLevel, RecursionTrace,
    SampleMatrix, SparseWeights,
};
