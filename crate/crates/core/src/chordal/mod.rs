//! Chordal decomposition of the network stability LMI.

pub mod cliques;
pub mod decomposition;
pub mod graph;

pub use cliques::{check_clique_cover, maximal_cliques};
pub use decomposition::{
    build_decomposition, decompose_nsd, reconstruct, CliqueDecomposition, CliqueProblem, DecomposedStability,
    DecompositionSummary, EqualityProjector, OverlapEntry, YSlot,
};
pub use graph::{build_qbar_graph, chordal_completion, Completion, StructureGraph};
