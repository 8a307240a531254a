use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::SceneSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    /// Rotation about `+y`; 0 looks along `+z`.
    pub heading: f64,
    /// Elevation of the view direction, in `(-π/2, π/2)`.
    pub pitch: f64,
    /// Horizontal field of view.
    pub fov: f64,
}

impl CameraPose {
    pub fn forward(&self) -> [f64; 3] {
        let (sh, ch) = self.heading.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        [sh * cp, sp, ch * cp]
    }

    pub fn right(&self) -> [f64; 3] {
        let (sh, ch) = self.heading.sin_cos();
        [ch, 0.0, -sh]
    }

    pub fn up(&self) -> [f64; 3] {
        cross(self.forward(), self.right())
    }

    /// Unit direction of the primary ray through the centre of pixel
    /// `(row, col)` of a `height x width` image.
    pub fn ray_direction(&self, row: usize, col: usize, height: usize, width: usize) -> [f64; 3] {
        let tan = (self.fov / 2.0).tan();
        let sx = (2.0 * (col as f64 + 0.5) / width as f64 - 1.0) * tan;
        let sy = -(2.0 * (row as f64 + 0.5) / height as f64 - 1.0) * tan * height as f64 / width as f64;
        let (f, r, u) = (self.forward(), self.right(), self.up());
        normalize([0, 1, 2].map(|a| f[a] + sx * r[a] + sy * u[a]))
    }
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

fn add(a: [f64; 3], b: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2]]
}

/// Walk parameters. Distances in metres, angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub fov: f64,
    pub jump_probability: f64,
    pub near: (f64, f64),
    pub far: (f64, f64),
    pub approach_frames: (usize, usize),
    pub dwell_frames: (usize, usize),
    pub retreat_frames: (usize, usize),
    pub transit_frames: (usize, usize),
    /// Largest heading/pitch change per frame outside jumps.
    pub max_turn: f64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            fov: 60f64.to_radians(),
            jump_probability: 0.02,
            near: (0.6, 1.3),
            far: (18.0, 40.0),
            approach_frames: (18, 28),
            dwell_frames: (10, 30),
            retreat_frames: (12, 20),
            transit_frames: (8, 15),
            max_turn: 5f64.to_radians(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub poses: Vec<CameraPose>,
    /// Frames whose pose was redrawn abruptly.
    pub jumps: Vec<usize>,
}

/// A point on a bridge face the walk approaches, with the approach axis for
/// close range (`near_axis`, roughly the face normal) and long range
/// (`far_axis`, closer to horizontal).
#[derive(Clone, Copy, Debug)]
struct Target {
    point: [f64; 3],
    near_axis: [f64; 3],
    far_axis: [f64; 3],
}

impl Target {
    fn axis(&self, d: f64) -> [f64; 3] {
        let s = ((d - 2.0) / 10.0).clamp(0.0, 1.0);
        let s = s * s * (3.0 - 2.0 * s);
        normalize([0, 1, 2].map(|a| self.near_axis[a] * (1.0 - s) + self.far_axis[a] * s))
    }

    fn anchor(&self, d: f64) -> [f64; 3] {
        add(self.point, self.axis(d), d)
    }
}

fn tilt(n: [f64; 3], az: f64, el: f64) -> [f64; 3] {
    // rotate a horizontal normal by `az` about y and raise it by `el`
    let h = n[2].atan2(n[0]) + az;
    normalize([h.cos() * el.cos(), el.sin(), h.sin() * el.cos()])
}

fn choose_target(scene: &SceneSpec, rng: &mut ChaCha8Rng) -> Target {
    let deck = scene.deck_bounds();
    let far_el = rng.random_range(-5f64.to_radians()..25f64.to_radians());
    let far_az = rng.random_range(-35f64.to_radians()..35f64.to_radians());
    let near_az = rng.random_range(-12f64.to_radians()..12f64.to_radians());
    let near_el = rng.random_range(-10f64.to_radians()..10f64.to_radians());
    let u: f64 = rng.random();
    let inset = |lo: f64, hi: f64, margin: f64, rng: &mut ChaCha8Rng| {
        if hi - lo > 2.0 * margin {
            rng.random_range(lo + margin..hi - margin)
        } else {
            0.5 * (lo + hi)
        }
    };
    if u < 0.45 && !scene.columns.is_empty() {
        let c = scene.primitives[scene.columns[rng.random_range(0..scene.columns.len())]].bounds;
        // faces pointing away from the deck centre line, plus the x faces
        let mut normals = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let cz = c.center()[2];
        if cz >= -0.1 {
            normals.push([0.0, 0.0, 1.0]);
        }
        if cz <= 0.1 {
            normals.push([0.0, 0.0, -1.0]);
        }
        let n: [f64; 3] = normals[rng.random_range(0..normals.len())];
        let y = inset(c.min[1], c.max[1], 1.0, rng);
        let point = if n[0] != 0.0 {
            let x = if n[0] > 0.0 { c.max[0] } else { c.min[0] };
            [x, y, inset(c.min[2], c.max[2], 0.5, rng)]
        } else {
            let z = if n[2] > 0.0 { c.max[2] } else { c.min[2] };
            [inset(c.min[0], c.max[0], 0.5, rng), y, z]
        };
        Target {
            point,
            near_axis: tilt(n, near_az, near_el),
            far_axis: tilt(n, far_az, far_el),
        }
    } else if u < 0.75 {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let n = [0.0, 0.0, side];
        let z = if side > 0.0 { deck.max[2] } else { deck.min[2] };
        let y = 0.5 * (deck.min[1] + deck.max[1]);
        Target {
            point: [inset(deck.min[0], deck.max[0], 2.0, rng), y, z],
            near_axis: tilt(n, near_az, near_el * 0.3),
            far_axis: tilt(n, far_az, far_el),
        }
    } else {
        let point = [
            inset(deck.min[0], deck.max[0], 2.0, rng),
            deck.min[1],
            inset(deck.min[2], deck.max[2], 1.0, rng),
        ];
        let az = rng.random_range(0.0..2.0 * PI);
        let near = normalize([
            0.15 * az.cos() * rng.random::<f64>(),
            -1.0,
            0.15 * az.sin() * rng.random::<f64>(),
        ]);
        let el = rng.random_range(-15f64.to_radians()..8f64.to_radians());
        Target {
            point,
            near_axis: near,
            far_axis: [az.cos() * el.cos(), el.sin(), az.sin() * el.cos()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Transit { from: [f64; 3], len: usize },
    Approach { len: usize },
    Dwell { len: usize },
    Retreat { len: usize },
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let mut v = v;
    for _ in 0..4 {
        if v < lo {
            v = 2.0 * lo - v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            break;
        }
    }
    v.clamp(lo, hi)
}

fn look_angles(from: [f64; 3], to: [f64; 3]) -> (f64, f64) {
    let d = normalize([to[0] - from[0], to[1] - from[1], to[2] - from[2]]);
    (d[0].atan2(d[2]), d[1].clamp(-1.0, 1.0).asin())
}

/// Camera walk that cycles between distant views of the bridge and
/// close-ups of a face: transit to a far anchor, geometric approach to a
/// near distance, dwell, geometric retreat, then a new target. Small
/// Gaussian jitter is added to position and view angles; with probability
/// `jump_probability` per frame heading, pitch and altitude are redrawn and
/// the walk re-plans from wherever it landed.
pub fn random_walk_camera(scene: &SceneSpec, config: &WalkConfig, seed: u64, length: usize) -> CameraPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let b = scene.bounds;
    let keep_inside = |p: [f64; 3]| -> [f64; 3] {
        let p = [
            reflect(p[0], b.min[0], b.max[0]),
            reflect(p[1], b.min[1], b.max[1]),
            reflect(p[2], b.min[2], b.max[2]),
        ];
        let p = scene.push_out(p, 0.3);
        [p[0], p[1].max(b.min[1]), p[2]]
    };

    let mut target = choose_target(scene, &mut rng);
    let mut far = rng.random_range(config.far.0..config.far.1);
    let mut near = rng.random_range(config.near.0..config.near.1);
    let mut pos = keep_inside(target.anchor(far));
    let (mut heading, mut pitch) = look_angles(pos, target.point);
    let mut phase = Phase::Approach {
        len: rng.random_range(config.approach_frames.0..=config.approach_frames.1),
    };
    let mut step = 0usize;
    let mut lateral = [0.0; 3];
    let mut look_off = (0.0, 0.0);
    let mut path = CameraPath {
        poses: Vec::with_capacity(length),
        jumps: Vec::new(),
    };

    for frame in 0..length {
        if frame > 0 && rng.random_bool(config.jump_probability) {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            heading = wrap_angle(heading + sign * rng.random_range(30f64.to_radians()..90f64.to_radians()));
            pitch = rng.random_range(-25f64.to_radians()..35f64.to_radians());
            pos[1] = rng.random_range(1.0..scene.deck_bounds().max[1] + 15.0);
            pos = keep_inside(pos);
            path.jumps.push(frame);
            target = choose_target(scene, &mut rng);
            far = rng.random_range(config.far.0..config.far.1);
            near = rng.random_range(config.near.0..config.near.1);
            phase = Phase::Transit {
                from: pos,
                len: rng.random_range(config.transit_frames.0..=config.transit_frames.1),
            };
            step = 0;
            path.poses.push(CameraPose {
                position: pos,
                heading,
                pitch,
                fov: config.fov,
            });
            continue;
        }

        // advance the phase machine
        let dist: f64;
        let (anchor, next) = match phase {
            Phase::Transit { from, len } => {
                let s = (step + 1) as f64 / len as f64;
                let s = s * s * (3.0 - 2.0 * s);
                let to = target.anchor(far);
                dist = far;
                let a = [0, 1, 2].map(|k| from[k] * (1.0 - s) + to[k] * s);
                let next = (step + 1 >= len).then(|| Phase::Approach {
                    len: rng.random_range(config.approach_frames.0..=config.approach_frames.1),
                });
                (a, next)
            }
            Phase::Approach { len } => {
                dist = far * (near / far).powf((step + 1) as f64 / len as f64);
                let next = (step + 1 >= len).then(|| Phase::Dwell {
                    len: rng.random_range(config.dwell_frames.0..=config.dwell_frames.1),
                });
                (target.anchor(dist), next)
            }
            Phase::Dwell { len } => {
                dist = near * (1.0 + 0.08 * (step as f64 * 0.4).sin());
                let next = (step + 1 >= len).then(|| Phase::Retreat {
                    len: rng.random_range(config.retreat_frames.0..=config.retreat_frames.1),
                });
                (target.anchor(dist), next)
            }
            Phase::Retreat { len } => {
                let new_far = far;
                dist = near * (new_far / near).powf((step + 1) as f64 / len as f64);
                let next = (step + 1 >= len).then(|| Phase::Transit {
                    from: target.anchor(new_far),
                    len: rng.random_range(config.transit_frames.0..=config.transit_frames.1),
                });
                (target.anchor(dist), next)
            }
        };
        step += 1;
        if let Some(n) = next {
            if matches!(n, Phase::Transit { .. }) {
                target = choose_target(scene, &mut rng);
                near = rng.random_range(config.near.0..config.near.1);
                let from = pos;
                far = rng.random_range(config.far.0..config.far.1);
                phase = match n {
                    Phase::Transit { len, .. } => Phase::Transit { from, len },
                    other => other,
                };
            } else {
                phase = n;
            }
            step = 0;
        }

        // slow lateral drift, proportional to distance
        let amp = 0.08 * dist.min(8.0);
        for l in lateral.iter_mut() {
            *l = 0.9 * *l + 0.3 * amp * jitter.sample(&mut rng);
        }
        let mut p = [0, 1, 2].map(|k| anchor[k] + lateral[k]);
        if dist < 3.0 {
            // keep the close-up face-on: remove drift along the axis
            let ax = target.axis(dist);
            let along = (0..3).map(|k| lateral[k] * ax[k]).sum::<f64>();
            p = add(p, ax, -along);
        }
        pos = keep_inside(p);

        look_off.0 = 0.9 * look_off.0 + 0.01 * jitter.sample(&mut rng);
        look_off.1 = 0.9 * look_off.1 + 0.01 * jitter.sample(&mut rng);
        let (want_h, want_p) = look_angles(pos, target.point);
        let dh = wrap_angle(want_h + look_off.0 - heading).clamp(-config.max_turn, config.max_turn);
        let dp = (want_p + look_off.1 - pitch).clamp(-config.max_turn, config.max_turn);
        heading = wrap_angle(heading + dh);
        pitch = (pitch + dp).clamp(-85f64.to_radians(), 85f64.to_radians());

        path.poses.push(CameraPose {
            position: pos,
            heading,
            pitch,
            fov: config.fov,
        });
    }
    path
}
