//! Training samples: displaced surface points with occupancy labels, surface
//! points with color labels, and their correspondences across frames.

mod samples;
mod track;

pub use samples::{
    default_sigma, sample_color_points, sample_occupancy_points, Labels, OccupancySampler, SampleSet,
    DEFAULT_SAMPLE_COUNT, DEFAULT_SIGMA_FRACTION, DEFAULT_UNIFORM_FRACTION, SAMPLES_FORMAT_VERSION,
};
pub use track::{
    all_pair_correspondences, track_samples, voxel_correspondence, Anchor, VoxelCorrespondence,
    IDENTITY_METHOD, TRANSPORT_METHOD,
};
