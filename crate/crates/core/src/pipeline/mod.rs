//! Trainable models, the three training stages and textured reconstruction.

mod config;
mod implicit;
mod recon;
mod run;
mod voxel;

pub use config::TrainConfig;
pub use implicit::{
    back_facing, decode_color, decode_grid, decode_occupancy, decode_points, new_decoder, train_color_stage,
    train_implicit_stage, ColorLossRecord, ColorStageOutput, FrameInputs, ImplicitStageOutput,
};
pub use recon::{
    color_flicker_per_frame, color_flicker_score, flicker_per_frame, flicker_score, mesh_chamfer_cm, reconstruct, tracked_flicker, voxel_surface, Decoders,
    Flicker, ReconMetrics, ReconResult, CHAMFER_SAMPLES, CHAMFER_SEED,
};
pub use run::{
    conditioning_grids, decoded_grids, evaluate_checkpoint, evaluate_ground_truth, flicker_points, run_color_stage, run_implicit_stage, run_voxel_stage, version_string,
    Checkpoint, Clip, Evaluation, FrameReport, FLICKER_POINTS, RUN_FORMAT_VERSION, RUN_MANIFEST,
};
pub use voxel::{fit_voxel_stage, occlusion_mask, VoxelLossRecord, VoxelPredictor, VoxelStageOutput};
