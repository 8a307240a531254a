//! Procedural bridge video: box-primitive scenes, a flying camera that
//! alternates distant views with face-filling close-ups, a ray-cast
//! renderer with exact labels and depth, and the on-disk dataset format.

mod camera;
mod generate;
pub mod netpbm;
mod render;
mod scene;
mod texture;

pub use camera::{cross, normalize, random_walk_camera, CameraPath, CameraPose, WalkConfig};
pub use generate::{
    build_split, depth_millimetres, generate_dataset, load_sequence, load_split, read_manifest,
    read_sequence_meta, regenerate_from_manifest, render_sequence, render_to_frame, rgb_bytes, sequence_dir_name,
    sequence_seeds, Manifest, SequenceEntry, SequenceMeta, SynthConfig, MANIFEST_FORMAT, SPLITS,
};
pub use render::{ray_box, render, shade_ray, trace, Hit, RenderOutput};
pub use scene::{build_scene, Aabb, Primitive, SceneSpec};
pub use texture::{albedo, fbm, value_noise, Material};

pub const NON_BRIDGE: u8 = 0;
pub const COLUMNS: u8 = 1;
pub const BEAMS_SLABS: u8 = 2;
pub const OTHER_NONSTRUCTURAL: u8 = 3;
pub const NUM_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["non_bridge", "columns", "beams_slabs", "other_nonstructural"];

/// Fraction of pixels labelled Columns or Beams & Slabs.
pub fn bridge_fraction(labels: &[u8]) -> f64 {
    let n = labels
        .iter()
        .filter(|&&l| l == COLUMNS || l == BEAMS_SLABS)
        .count();
    n as f64 / labels.len().max(1) as f64
}

/// A frame counts as a close-up when the bridge covers more than 80% of it.
pub fn is_close_up(labels: &[u8]) -> bool {
    bridge_fraction(labels) > 0.8
}

#[cfg(test)]
mod tests;
