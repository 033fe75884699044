//! Trajectory containers, window planning, normalization and scene files.

mod io;
mod normalize;
mod trajectory;
mod window;

pub use io::{
    attach_truth, format_scenes, load_dataset, load_scenes, load_truth, parse_scenes, save_dataset,
    save_scenes, save_truth, truth_to_file, DatasetMeta, SceneRecord, SceneTruth, TruthFile,
    TruthSegment, TruthSegmentRecord, META_FILE, TRAJECTORY_FILE, TRAJECTORY_HEADER, TRUTH_FILE,
};
pub use normalize::{denormalize_scene, normalize_scene, NormalizationRecord};
pub use trajectory::{TrajectorySet, Unit};
pub use window::{make_window_plan, HorizonSpec, Window, WindowPlan};
