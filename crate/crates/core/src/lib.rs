//! Open-vocabulary 3D instance detection from posed RGB-D-like multi-view
//! input: per-view category masks are lifted into 3D fragments, merged under
//! semantic compatibility gating, scored by multi-view evidence and evaluated
//! with 3D box and instance-segmentation AP.

pub mod evaluation;
pub mod evidence;
pub mod formats;
pub mod fragments;
pub mod geometry;
pub mod harness;
pub mod merging;
pub mod pipeline;
pub mod provider;
pub mod vocabulary;
pub mod voxelgrid;

pub use evaluation::{mean_ap, Detection, GroundTruthBox, GroundTruthVertexSet, MapReport};
pub use evidence::{Aabb, EvidenceParams, Instance};
pub use fragments::{Fragment, FragmentMemory, FragmentParams};
pub use geometry::{BinaryMask, CameraIntrinsics, CameraPose, DepthMap, Point, SimilarityTransform};
pub use harness::{generate_scene, NoiseSpec, SceneSpec};
pub use merging::{merge_fragments, Cluster, MergeParams};
pub use pipeline::{load_scene, run_pipeline, write_scene, GroupingMode, PipelineConfig, PoseMode, SceneBundle};
pub use vocabulary::{Category, CompatibilityGroups, SceneVocabulary};
pub use voxelgrid::VoxelSet;
