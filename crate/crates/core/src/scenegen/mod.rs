//! Procedural scenes, training pairs, scan emulation and noise perturbation.

mod dataset;
mod pair;
mod scene;

pub use dataset::{read_dataset, synthesize, write_dataset, DatasetManifest, MANIFEST_FILE};
pub use pair::{
    make_training_pair, perturb_gaussian, simulate_sweep, simulate_sweep_with_fov, PairRecord, TrainingPair,
    SWEEP_ELEVATION_DEG,
};
pub use scene::{box_exposed_area, generate_scene, sample_box_surface, SceneSpec};
