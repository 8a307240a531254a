use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::{random_walk_camera, CameraPath, CameraPose, WalkConfig};
use super::netpbm;
use super::render::{render, RenderOutput};
use super::scene::{build_scene, SceneSpec};
use super::{CLASS_NAMES, NUM_CLASSES};
use crate::dataset::{Dataset, Frame, Sequence};
use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Dims, Tensor4};

pub const MANIFEST_FORMAT: &str = "seqseg-synth/1";
pub const SPLITS: [&str; 2] = ["train", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub frames_per_sequence: usize,
    pub height: usize,
    pub width: usize,
    pub walk: WalkConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            train_sequences: 20,
            test_sequences: 4,
            frames_per_sequence: 100,
            height: 48,
            width: 64,
            walk: WalkConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.frames_per_sequence == 0 {
            return bad("frames_per_sequence must be >= 1");
        }
        if self.train_sequences + self.test_sequences == 0 {
            return bad("no sequences requested");
        }
        if self.height == 0 || self.width == 0 {
            return bad("resolution must be non-empty");
        }
        let w = &self.walk;
        if !(w.fov > 0.0 && w.fov < std::f64::consts::PI) {
            return bad("field of view must lie in (0, pi)");
        }
        if !(0.0..=1.0).contains(&w.jump_probability) {
            return bad("jump_probability must lie in [0, 1]");
        }
        let ranges = [w.approach_frames, w.dwell_frames, w.retreat_frames, w.transit_frames];
        if ranges.iter().any(|&(a, b)| a == 0 || a > b) {
            return bad("frame ranges must satisfy 1 <= min <= max");
        }
        if !(w.near.0 > 0.0 && w.near.0 < w.near.1 && w.near.1 < w.far.0 && w.far.0 < w.far.1) {
            return bad("distance ranges must satisfy 0 < near < far");
        }
        Ok(())
    }

    pub fn sequences(&self, split: &str) -> usize {
        if split == "train" {
            self.train_sequences
        } else {
            self.test_sequences
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `(scene seed, walk seed)` of sequence `index` in `split`.
pub fn sequence_seeds(master: u64, split: &str, index: usize) -> (u64, u64) {
    let tag = if split == "train" { 0x7261_696E } else { 0x7465_7374 };
    let base = mix(master ^ mix(tag ^ ((index as u64) << 20)));
    (mix(base ^ 1), mix(base ^ 2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: usize,
    pub dir: String,
    pub scene_seed: u64,
    pub walk_seed: u64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: SynthConfig,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub splits: BTreeMap<String, Vec<SequenceEntry>>,
    /// Pixel counts per class for each split.
    pub class_histogram: BTreeMap<String, Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub id: usize,
    pub scene_seed: u64,
    pub walk_seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub jumps: Vec<usize>,
    pub poses: Vec<CameraPose>,
    pub scene: SceneSpec,
}

/// Scene, camera path and rendered frames of one sequence.
pub fn render_sequence(
    config: &SynthConfig,
    scene_seed: u64,
    walk_seed: u64,
) -> (SceneSpec, CameraPath, Vec<RenderOutput>) {
    let scene = build_scene(scene_seed);
    let path = random_walk_camera(&scene, &config.walk, walk_seed, config.frames_per_sequence);
    let frames = path
        .poses
        .iter()
        .map(|p| render(&scene, p, config.height, config.width))
        .collect();
    (scene, path, frames)
}

pub fn rgb_bytes(r: &RenderOutput) -> Vec<u8> {
    let plane = r.height * r.width;
    (0..plane)
        .flat_map(|i| (0..3).map(move |c| (c, i)))
        .map(|(c, i)| (r.rgb[c * plane + i] * 255.0).round() as u8)
        .collect()
}

/// Millimetres, saturating at 65535; 0 where nothing was hit.
pub fn depth_millimetres(r: &RenderOutput) -> Vec<u16> {
    r.depth
        .iter()
        .map(|&t| {
            if t.is_finite() {
                (t * 1000.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn sequence_dir_name(id: usize) -> String {
    format!("seq_{id:05}")
}

/// Renders every sequence and writes the on-disk layout under `root`. The
/// parent of `root` must exist.
pub fn generate_dataset(config: &SynthConfig, root: &Path) -> Result<Manifest> {
    config.validate()?;
    if let Some(parent) = root.parent() {
        if !parent.as_os_str().is_empty() && !parent.is_dir() {
            return Err(Error::io(
                parent,
                std::io::Error::new(std::io::ErrorKind::NotFound, "output parent does not exist"),
            ));
        }
    }
    create_dir(root)?;
    let mut splits = BTreeMap::new();
    let mut histograms = BTreeMap::new();
    for split in SPLITS {
        let count = config.sequences(split);
        let split_dir = root.join(split);
        create_dir(&split_dir)?;
        let results: Vec<Result<(SequenceEntry, Vec<u64>)>> = (0..count)
            .into_par_iter()
            .map(|id| write_sequence(config, split, id, &split_dir))
            .collect();
        let mut entries = Vec::with_capacity(count);
        let mut hist = vec![0u64; NUM_CLASSES];
        for r in results {
            let (entry, h) = r?;
            for (a, b) in hist.iter_mut().zip(h) {
                *a += b;
            }
            entries.push(entry);
        }
        splits.insert(split.to_string(), entries);
        histograms.insert(split.to_string(), hist);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        config: config.clone(),
        num_classes: NUM_CLASSES,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        splits,
        class_histogram: histograms,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_sequence(
    config: &SynthConfig,
    split: &str,
    id: usize,
    split_dir: &Path,
) -> Result<(SequenceEntry, Vec<u64>)> {
    let (scene_seed, walk_seed) = sequence_seeds(config.seed, split, id);
    let (scene, path, frames) = render_sequence(config, scene_seed, walk_seed);
    let dir_name = sequence_dir_name(id);
    let dir = split_dir.join(&dir_name);
    create_dir(&dir)?;
    let (h, w) = (config.height, config.width);
    let mut hist = vec![0u64; NUM_CLASSES];
    for (i, r) in frames.iter().enumerate() {
        netpbm::write_ppm(&dir.join(format!("frame_{i:04}.ppm")), w, h, &rgb_bytes(r))?;
        netpbm::write_pgm8(&dir.join(format!("label_{i:04}.pgm")), w, h, &r.labels)?;
        netpbm::write_pgm16(&dir.join(format!("depth_{i:04}.pgm")), w, h, &depth_millimetres(r))?;
        for &l in &r.labels {
            if (l as usize) < NUM_CLASSES {
                hist[l as usize] += 1;
            }
        }
    }
    let meta = SequenceMeta {
        id,
        scene_seed,
        walk_seed,
        height: h,
        width: w,
        frames: frames.len(),
        jumps: path.jumps,
        poses: path.poses,
        scene,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    Ok((
        SequenceEntry {
            id,
            dir: dir_name,
            scene_seed,
            walk_seed,
            frames: frames.len(),
        },
        hist,
    ))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let m: Manifest = read_json(&path)?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::format(path, format!("unknown dataset format {:?}", m.format)));
    }
    Ok(m)
}

/// Re-renders the dataset described by `manifest_root/manifest.json` into
/// `out`, checking that the recorded seeds are the ones the config derives.
pub fn regenerate_from_manifest(manifest_root: &Path, out: &Path) -> Result<Manifest> {
    let m = read_manifest(manifest_root)?;
    for (split, entries) in &m.splits {
        for e in entries {
            if sequence_seeds(m.config.seed, split, e.id) != (e.scene_seed, e.walk_seed) {
                return Err(Error::format(
                    manifest_root.join("manifest.json"),
                    format!("seeds of {split}/{} do not follow from the master seed", e.dir),
                ));
            }
        }
    }
    generate_dataset(&m.config, out)
}

pub fn read_sequence_meta(dir: &Path) -> Result<SequenceMeta> {
    read_json(&dir.join("meta.json"))
}

/// Loads frames (scaled to `[0, 1]`) and label maps of one sequence
/// directory.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "sequence directory not found"),
        ));
    }
    let meta = read_sequence_meta(dir)?;
    let (h, w) = (meta.height, meta.width);
    let mut frames = Vec::with_capacity(meta.frames);
    for i in 0..meta.frames {
        let ppm_path = dir.join(format!("frame_{i:04}.ppm"));
        let ppm = netpbm::read(&ppm_path, "P6")?;
        let pgm_path = dir.join(format!("label_{i:04}.pgm"));
        let pgm = netpbm::read(&pgm_path, "P5")?;
        for (img, p) in [(&ppm, &ppm_path), (&pgm, &pgm_path)] {
            if img.width != w || img.height != h || img.maxval != 255 {
                return Err(Error::format(p.clone(), "image size does not match meta.json"));
            }
        }
        let image = Tensor4::from_fn(Dims::new(1, 3, h, w), |_, c, y, x| {
            ppm.data[(y * w + x) * 3 + c] as f64 / 255.0
        });
        frames.push(Frame {
            image,
            labels: LabelMap::new(1, h, w, pgm.data)?,
        });
    }
    Ok(Sequence { id: meta.id, frames })
}

/// The frame as it reads back from disk: colours quantized to 8 bits.
pub fn render_to_frame(r: &RenderOutput) -> Result<Frame> {
    let (h, w) = (r.height, r.width);
    let plane = h * w;
    let image = Tensor4::from_fn(Dims::new(1, 3, h, w), |_, c, y, x| {
        (r.rgb[c * plane + y * w + x] * 255.0).round() / 255.0
    });
    Ok(Frame {
        image,
        labels: LabelMap::new(1, h, w, r.labels.clone())?,
    })
}

/// Renders one split straight into memory; identical to generating it and
/// loading it back with [`load_split`].
pub fn build_split(config: &SynthConfig, split: &str) -> Result<Dataset> {
    config.validate()?;
    let sequences = (0..config.sequences(split))
        .into_par_iter()
        .map(|id| {
            let (s, w) = sequence_seeds(config.seed, split, id);
            let (_, _, frames) = render_sequence(config, s, w);
            let frames = frames.iter().map(render_to_frame).collect::<Result<_>>()?;
            Ok(Sequence { id, frames })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(NUM_CLASSES, sequences)
}

pub fn split_dir(root: &Path, split: &str) -> PathBuf {
    root.join(split)
}

/// Loads one split of a generated dataset in manifest order.
pub fn load_split(root: &Path, split: &str) -> Result<Dataset> {
    let m = read_manifest(root)?;
    let entries = m.splits.get(split).ok_or_else(|| {
        Error::format(root.join("manifest.json"), format!("no split named {split:?}"))
    })?;
    if entries.is_empty() {
        return Err(Error::Data(format!("split {split:?} has no sequences")));
    }
    let sequences = entries
        .iter()
        .map(|e| load_sequence(&split_dir(root, split).join(&e.dir)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(m.num_classes, sequences)
}
