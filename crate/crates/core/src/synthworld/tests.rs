use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Independent intersection: every face of every box as a bounded plane,
/// plus the ground plane. Returns (distance, class).
fn oracle_hit(scene: &SceneSpec, o: [f64; 3], d: [f64; 3]) -> (f64, u8) {
    let mut best = (f64::INFINITY, NON_BRIDGE);
    if d[1] < 0.0 {
        best = (-o[1] / d[1], NON_BRIDGE);
    }
    for p in &scene.primitives {
        let b = p.bounds;
        for axis in 0..3 {
            if d[axis] == 0.0 {
                continue;
            }
            for plane in [b.min[axis], b.max[axis]] {
                let t = (plane - o[axis]) / d[axis];
                if t <= 0.0 || t > best.0 {
                    continue;
                }
                let inside = (0..3).filter(|&k| k != axis).all(|k| {
                    let x = o[k] + t * d[k];
                    x >= b.min[k] - 1e-12 && x <= b.max[k] + 1e-12
                });
                if inside && (t < best.0 || best.1 == NON_BRIDGE) {
                    best = (t, p.class);
                }
            }
        }
    }
    best
}

fn walk(scene_seed: u64, walk_seed: u64, length: usize) -> (SceneSpec, CameraPath) {
    let scene = build_scene(scene_seed);
    let path = random_walk_camera(&scene, &WalkConfig::default(), walk_seed, length);
    (scene, path)
}

#[test]
fn renderer_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, w) = (48, 64);
    let mut checked = 0;
    for frame in 0..50 {
        let (scene, path) = walk(frame, 1000 + frame, 60);
        let pose = path.poses[rng.random_range(0..60)];
        let out = render(&scene, &pose, h, w);
        for _ in 0..200 {
            let (row, col) = (rng.random_range(0..h), rng.random_range(0..w));
            let d = pose.ray_direction(row, col, h, w);
            let (t, class) = oracle_hit(&scene, pose.position, d);
            let i = row * w + col;
            assert_eq!(out.labels[i], class, "frame {frame} pixel ({row},{col})");
            if t.is_finite() {
                assert!(((out.depth[i] - t) / t).abs() <= 1e-6, "depth {} vs {t}", out.depth[i]);
            } else {
                assert!(out.depth[i].is_infinite());
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 10_000);
}

#[test]
fn close_column_fills_the_frame() {
    for seed in 0..10 {
        let scene = build_scene(seed);
        let c = scene.primitives[scene.columns[0]].bounds;
        let mid = c.center();
        let pose = CameraPose {
            position: [c.max[0] + 0.5, mid[1].min(4.0), mid[2]],
            heading: -FRAC_PI_2,
            pitch: 0.0,
            fov: 60f64.to_radians(),
        };
        let out = render(&scene, &pose, 48, 64);
        let cols = out.labels.iter().filter(|&&l| l == COLUMNS).count();
        assert!(cols as f64 >= 0.95 * out.labels.len() as f64, "seed {seed}: {cols}");
        for (i, &l) in out.labels.iter().enumerate() {
            let d = pose.ray_direction(i / 64, i % 64, 48, 64);
            assert_eq!(oracle_hit(&scene, pose.position, d).1, l);
        }
    }
}

#[test]
fn sky_is_non_bridge_with_no_depth() {
    let scene = build_scene(3);
    let pose = CameraPose {
        position: [0.0, 40.0, 0.0],
        heading: 0.3,
        pitch: 30f64.to_radians(),
        fov: 60f64.to_radians(),
    };
    let out = render(&scene, &pose, 48, 64);
    let top = 24 * 64;
    assert!(out.labels[..top].iter().all(|&l| l == NON_BRIDGE));
    assert!(out.depth[..top].iter().all(|d| d.is_infinite()));
    assert!(depth_millimetres(&out)[..top].iter().all(|&d| d == 0));
}

#[test]
fn scene_invariants_hold() {
    for seed in 0..200 {
        let s = build_scene(seed);
        let deck = s.deck_bounds();
        assert!(s.columns.len() >= 2);
        assert_eq!(s.primitives[s.deck].class, BEAMS_SLABS);
        for &c in &s.columns {
            let b = s.primitives[c].bounds;
            assert_eq!(s.primitives[c].class, COLUMNS);
            assert_eq!(b.max[1], deck.min[1], "column top touches the slab");
            assert_eq!(b.min[1], 0.0);
            assert!(b.min[0] >= deck.min[0] && b.max[0] <= deck.max[0]);
            assert!(b.min[2] >= deck.min[2] && b.max[2] <= deck.max[2]);
        }
        for p in &s.primitives {
            for a in [0, 2] {
                assert!(p.bounds.min[a] >= s.bounds.min[a] && p.bounds.max[a] <= s.bounds.max[a]);
            }
            assert!(p.bounds.min[1] >= 0.0 && p.bounds.max[1] <= s.bounds.max[1]);
            assert_ne!(p.class, NON_BRIDGE);
        }
    }
}

#[test]
fn column_count_spans_two_to_six() {
    let mut seen = [0usize; 7];
    for seed in 0..100 {
        let n = build_scene(seed).columns.len();
        assert!((2..=6).contains(&n));
        seen[n] += 1;
    }
    assert!(seen[2..].iter().all(|&k| k > 0), "{seen:?}");
}

#[test]
fn scenes_and_walks_are_deterministic() {
    assert_eq!(build_scene(42), build_scene(42));
    assert_ne!(build_scene(42), build_scene(43));
    let (_, a) = walk(1, 2, 300);
    let (_, b) = walk(1, 2, 300);
    assert_eq!(a, b);
    let (_, one) = walk(1, 2, 1);
    assert_eq!(one.poses.len(), 1);
    assert_eq!(one.poses[0], a.poses[0]);
}

#[test]
fn walk_stays_in_bounds() {
    for seed in 0..5 {
        let (scene, path) = walk(seed, seed + 50, 2000);
        assert_eq!(path.poses.len(), 2000);
        assert!(!path.jumps.is_empty());
        for p in &path.poses {
            assert!(p.pitch.abs() < FRAC_PI_2);
            assert!(p.position[1] > 0.0);
            for a in 0..3 {
                assert!(p.position[a] >= scene.bounds.min[a] && p.position[a] <= scene.bounds.max[a]);
            }
            assert!(scene.primitives.iter().all(|q| !q.bounds.contains(p.position, 0.0)));
        }
    }
}

#[test]
fn long_walk_mixes_close_ups_and_stays_coherent() {
    let (scene, path) = walk(5, 6, 2000);
    let frames: Vec<_> = path.poses.iter().map(|p| render(&scene, p, 48, 64)).collect();
    let close = frames.iter().filter(|f| is_close_up(&f.labels)).count() as f64 / 2000.0;
    assert!((0.2..=0.6).contains(&close), "close-up fraction {close}");

    let mut changes = Vec::new();
    for i in 1..frames.len() {
        if path.jumps.contains(&i) {
            continue;
        }
        let (a, b) = (&frames[i - 1].labels, &frames[i].labels);
        changes.push(a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64);
    }
    let mean = changes.iter().sum::<f64>() / changes.len() as f64;
    assert!(mean < 0.2, "mean label change {mean}");
}

/// Mean and variance of luminance over a 9x9 grid on a face.
fn patch_stats(p: &Primitive, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let b = p.bounds;
    let axis = rng.random_range(0..3);
    let (u, v) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let spacing = 0.02;
    let span = 8.0 * spacing;
    let mut origin = [0.0; 3];
    origin[axis] = if rng.random_bool(0.5) { b.min[axis] } else { b.max[axis] };
    origin[u] = rng.random_range(b.min[u]..b.max[u] - span);
    origin[v] = rng.random_range(b.min[v]..b.max[v] - span);
    let mut vals = Vec::with_capacity(81);
    for i in 0..9 {
        for j in 0..9 {
            let mut q = origin;
            q[u] += i as f64 * spacing;
            q[v] += j as f64 * spacing;
            let a = albedo(p.material, p.base_color, p.contrast, p.texture_seed, q);
            vals.push((a[0] + a[1] + a[2]) / 3.0);
        }
    }
    let mean = vals.iter().sum::<f64>() / 81.0;
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 80.0;
    (mean, var)
}

fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn column_and_slab_patches_are_indistinguishable() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut col = (Vec::new(), Vec::new());
    let mut slab = (Vec::new(), Vec::new());
    for k in 0..500u64 {
        let scene = build_scene(10_000 + k);
        let c = &scene.primitives[scene.columns[rng.random_range(0..scene.columns.len())]];
        let (m, v) = patch_stats(c, &mut rng);
        col.0.push(m);
        col.1.push(v);
        let (m, v) = patch_stats(&scene.primitives[scene.deck], &mut rng);
        slab.0.push(m);
        slab.1.push(v);
    }
    // two-sided critical value at alpha = 0.01 for n = m = 500
    let critical = 1.628 * (2.0f64 / 500.0).sqrt();
    let dm = ks_statistic(&mut col.0, &mut slab.0);
    let dv = ks_statistic(&mut col.1, &mut slab.1);
    assert!(dm < critical, "means differ: D = {dm}, critical {critical}");
    assert!(dv < critical, "variances differ: D = {dv}, critical {critical}");
}

#[test]
fn netpbm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rgb: Vec<u8> = (0..3 * 5 * 4).map(|i| (i * 7 % 256) as u8).collect();
    let p = dir.path().join("a.ppm");
    netpbm::write_ppm(&p, 5, 4, &rgb).unwrap();
    let img = netpbm::read(&p, "P6").unwrap();
    assert_eq!((img.width, img.height, img.maxval), (5, 4, 255));
    assert_eq!(img.data, rgb);
    let depth: Vec<u16> = (0..20).map(|i| i * 3000 + 1).collect();
    let p = dir.path().join("d.pgm");
    netpbm::write_pgm16(&p, 5, 4, &depth).unwrap();
    let img = netpbm::read(&p, "P5").unwrap();
    assert_eq!(img.maxval, 65535);
    assert_eq!(img.samples16(), depth);
    assert!(netpbm::read(&p, "P6").is_err());
    std::fs::write(&p, b"P5\n5 4\n255\n\x00").unwrap();
    assert!(netpbm::read(&p, "P5").is_err());
}

fn small_config() -> SynthConfig {
    SynthConfig {
        seed: 9,
        train_sequences: 2,
        test_sequences: 0,
        frames_per_sequence: 10,
        height: 24,
        width: 32,
        ..SynthConfig::default()
    }
}

fn count_files(root: &Path, prefix: &str) -> usize {
    let mut n = 0;
    for split in SPLITS {
        for seq in std::fs::read_dir(root.join(split)).unwrap() {
            for f in std::fs::read_dir(seq.unwrap().path()).unwrap() {
                if f.unwrap().file_name().to_string_lossy().starts_with(prefix) {
                    n += 1;
                }
            }
        }
    }
    n
}

#[test]
fn generation_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ds");
    let m = generate_dataset(&small_config(), &root).unwrap();
    assert_eq!(count_files(&root, "frame_"), 20);
    assert_eq!(count_files(&root, "label_"), 20);
    assert_eq!(count_files(&root, "depth_"), 20);
    assert!(root.join("manifest.json").is_file());
    assert_eq!(read_manifest(&root).unwrap(), m);
    let total: u64 = m.class_histogram["train"].iter().sum();
    assert_eq!(total, 20 * 24 * 32);

    let data = load_split(&root, "train").unwrap();
    assert_eq!(data.sequences.len(), 2);
    assert_eq!(data.frame_count(), 20);
    let hist = data.label_histogram();
    assert_eq!(&hist[..], &m.class_histogram["train"][..]);
    assert!(load_split(&root, "test").is_err());

    let meta = read_sequence_meta(&root.join("train").join(sequence_dir_name(1))).unwrap();
    assert_eq!((meta.scene_seed, meta.walk_seed), sequence_seeds(9, "train", 1));
    assert_eq!(meta.poses.len(), 10);
    assert_eq!(meta.scene, build_scene(meta.scene_seed));
}

#[test]
fn loaded_frames_match_render() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ds");
    let cfg = small_config();
    generate_dataset(&cfg, &root).unwrap();
    let seq = load_sequence(&root.join("train").join(sequence_dir_name(0))).unwrap();
    let (s, w) = sequence_seeds(cfg.seed, "train", 0);
    let (_, _, frames) = render_sequence(&cfg, s, w);
    for (loaded, r) in seq.frames.iter().zip(&frames) {
        assert_eq!(&loaded.labels.data[..], &r.labels[..]);
        let plane = 24 * 32;
        for (i, v) in loaded.image.data().iter().enumerate() {
            assert!((v - r.rgb[i % (3 * plane)]).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn in_memory_split_equals_loaded_split() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ds");
    let cfg = SynthConfig {
        test_sequences: 1,
        ..small_config()
    };
    generate_dataset(&cfg, &root).unwrap();
    for split in SPLITS {
        assert!(build_split(&cfg, split).unwrap() == load_split(&root, split).unwrap());
    }
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            for e in std::fs::read_dir(&p).unwrap() {
                stack.push(e.unwrap().path());
            }
        } else {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.push((rel, std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn regeneration_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = SynthConfig {
        test_sequences: 1,
        ..small_config()
    };
    generate_dataset(&cfg, &a).unwrap();
    regenerate_from_manifest(&a, &b).unwrap();
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    assert_eq!(ta.len(), 3 * 30 + 3 + 1);
    assert!(ta == tb);
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let mut m = generate_dataset(&small_config(), &a).unwrap();
    m.splits.get_mut("train").unwrap()[0].walk_seed ^= 1;
    std::fs::write(a.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    assert!(regenerate_from_manifest(&a, &dir.path().join("b")).is_err());
}

#[test]
fn missing_parent_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = generate_dataset(&small_config(), &dir.path().join("no/such/dir")).unwrap_err();
    assert!(err.to_string().contains("no/such"), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SynthConfig { frames_per_sequence: 0, ..small_config() },
        SynthConfig { train_sequences: 0, test_sequences: 0, ..small_config() },
        SynthConfig { height: 0, ..small_config() },
    ];
    for c in bad {
        assert!(c.validate().is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn walk_is_a_pure_function_of_seeds(scene_seed in any::<u64>(), walk_seed in any::<u64>()) {
        let (_, a) = walk(scene_seed, walk_seed, 40);
        let (_, b) = walk(scene_seed, walk_seed, 40);
        prop_assert_eq!(&a, &b);
        for p in &a.poses {
            prop_assert!(p.pitch.abs() < FRAC_PI_2 && p.position[1] > 0.0);
        }
    }

    #[test]
    fn depth_is_finite_off_sky(scene_seed in 0u64..1000, walk_seed in any::<u64>()) {
        let (scene, path) = walk(scene_seed, walk_seed, 30);
        let out = render(&scene, path.poses.last().unwrap(), 12, 16);
        for (l, d) in out.labels.iter().zip(&out.depth) {
            if *l != NON_BRIDGE {
                prop_assert!(d.is_finite() && *d > 0.0);
            }
        }
        prop_assert!(out.rgb.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
