//! Synthetic scenes, Monte Carlo evaluation, metrics and derivative checks.

pub mod eval;
pub mod gradcheck;
pub mod scene;

pub use eval::{
    evaluate, pose_error, prepare_scene, prepare_scene_set, sample_initial_pose, sweep_translation,
    synth_scene_set, write_metrics_csv, write_sweep_csv, CameraSelection, Evaluation, MaskMode,
    MetricsTable, NoiseModel, PipelineConfig, PoseError, PreparedScene,
};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use scene::{
    four_camera_rig, front_camera, read_scene, synth_scene, write_scene, Distractor, DistractorSpec,
    Scene, SceneSpec, TextureKind,
};
