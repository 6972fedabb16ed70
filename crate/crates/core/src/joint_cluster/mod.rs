//! Visual atom discovery by single-cluster graph partitioning extended
//! jointly over a kNN graph of videos, plus description-based outlier
//! filtering.

pub mod atoms;
pub mod graph;
pub mod objective;
pub mod outliers;
pub mod scgp;
pub mod solve;
pub mod sparse;

pub use atoms::{
    extract_visual_atoms, AtomSet, ClusterConfig, ProposalRef, StopReason, VisualAtom,
};
pub use graph::{build_proposal_knn, build_video_knn, InterEdge, SimilarityGraph, VideoGraph};
pub use objective::{joint_gradient, joint_objective, ClusterIndicator};
pub use outliers::{filter_outliers, OutlierSplit};
pub use scgp::{scgp_single, ScgpSolution};
pub use solve::{solve_joint_cluster, solve_joint_cluster_observed, JointSolution, SolverConfig};
pub use sparse::SparseMatrix;
