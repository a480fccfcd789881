//! Scene and P&ID graph alignment.
//!
//! The crate turns segmented 3D pipe primitives and equipment into a scene
//! graph, normalizes a digitized P&ID into a functional graph of the same
//! shape, aligns the two with an attributed Gromov-Wasserstein matcher and
//! reports the inconsistencies a human has to resolve.

pub mod consistency;
pub mod functional;
pub mod graph;
pub mod matcher;
pub mod scene;
pub mod spatial;
pub mod synth;
pub mod vocab;

pub use consistency::{
    get_inconsistencies, infer_hidden_location, run_alignment_loop, AlignmentSession, EditProvider, Inconsistency,
    InconsistencyKind, InconsistencyReport, Resolution, Status,
};
pub use functional::{build_functional_graph, remove_equipment, RawPid};
pub use graph::{AlignmentGraph, Edge, GraphEdit, GraphError, NodeAttribute, NodeKind, Provenance};
pub use matcher::{extract_mapping, match_graphs, Coupling, Mapping, MatchConfig, MatchError};
pub use scene::{build_scene_graph, EquipmentInstance, PipeElement, PipeKind, SceneConfig, SceneInput};
pub use vocab::Vocabulary;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scene(#[from] scene::SceneError),
    #[error(transparent)]
    Functional(#[from] functional::FunctionalError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Consistency(#[from] consistency::ConsistencyError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
