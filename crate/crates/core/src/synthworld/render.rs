use super::camera::{normalize, CameraPose};
use super::scene::{Aabb, SceneSpec};
use super::texture::{albedo, Material};
use super::NON_BRIDGE;

/// Rendered frame. `rgb` is planar `3 x h x w` in `[0, 1]`; `depth` is the
/// Euclidean hit distance in metres, `+∞` where the ray escapes to the sky.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<f64>,
    pub labels: Vec<u8>,
    pub depth: Vec<f64>,
}

/// What a primary ray hits first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Hit {
    Sky,
    Ground { t: f64 },
    Primitive { index: usize, t: f64, axis: usize, sign: f64 },
}

const T_MIN: f64 = 1e-9;
const LIGHT: [f64; 3] = [0.3939, 0.7878, 0.4727];
const HORIZON: [f64; 3] = [0.78, 0.84, 0.90];
const ZENITH: [f64; 3] = [0.35, 0.55, 0.85];
const HAZE_DISTANCE: f64 = 180.0;

/// Slab test. Returns the entry distance and the entry face (axis, outward
/// sign) for rays starting outside the box.
pub fn ray_box(o: [f64; 3], d: [f64; 3], b: &Aabb) -> Option<(f64, usize, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (t0, t1) = {
            let t0 = (b.min[a] - o[a]) * inv;
            let t1 = (b.max[a] - o[a]) * inv;
            if t0 <= t1 {
                (t0, t1)
            } else {
                (t1, t0)
            }
        };
        if t0 > t_near {
            t_near = t0;
            axis = a;
        }
        t_far = t_far.min(t1);
    }
    if t_near > t_far || t_near <= T_MIN {
        return None;
    }
    Some((t_near, axis, if d[axis] > 0.0 { -1.0 } else { 1.0 }))
}

/// Nearest intersection along the ray; ties go to the lower primitive
/// index, and primitives win ties with the ground.
pub fn trace(scene: &SceneSpec, o: [f64; 3], d: [f64; 3]) -> Hit {
    let mut best = Hit::Sky;
    let mut best_t = f64::INFINITY;
    if d[1] < 0.0 {
        let t = -o[1] / d[1];
        if t > T_MIN {
            best = Hit::Ground { t };
            best_t = t;
        }
    }
    for (index, p) in scene.primitives.iter().enumerate() {
        if let Some((t, axis, sign)) = ray_box(o, d, &p.bounds) {
            if t < best_t || (t == best_t && matches!(best, Hit::Ground { .. })) {
                best_t = t;
                best = Hit::Primitive {
                    index,
                    t,
                    axis,
                    sign,
                };
            }
        }
    }
    best
}

fn sky(d: [f64; 3]) -> [f64; 3] {
    let k = d[1].max(0.0).sqrt();
    [0, 1, 2].map(|i| HORIZON[i] * (1.0 - k) + ZENITH[i] * k)
}

fn shade(normal: [f64; 3]) -> f64 {
    let ndl = normal[0] * LIGHT[0] + normal[1] * LIGHT[1] + normal[2] * LIGHT[2];
    0.6 + 0.4 * ndl.max(0.0)
}

/// Colour, label and depth of a single primary ray.
pub fn shade_ray(scene: &SceneSpec, o: [f64; 3], d: [f64; 3]) -> ([f64; 3], u8, f64) {
    let hit = trace(scene, o, d);
    let (colour, label, t) = match hit {
        Hit::Sky => return (sky(d), NON_BRIDGE, f64::INFINITY),
        Hit::Ground { t } => {
            let p = [o[0] + t * d[0], 0.0, o[2] + t * d[2]];
            let a = albedo(Material::Ground, [0.0; 3], 0.2, scene.ground_seed, p);
            (a.map(|c| c * shade([0.0, 1.0, 0.0])), NON_BRIDGE, t)
        }
        Hit::Primitive {
            index,
            t,
            axis,
            sign,
        } => {
            let prim = &scene.primitives[index];
            let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
            let a = albedo(prim.material, prim.base_color, prim.contrast, prim.texture_seed, p);
            let mut n = [0.0; 3];
            n[axis] = sign;
            let s = shade(n);
            (a.map(|c| c * s), prim.class, t)
        }
    };
    let haze = 1.0 - (-t / HAZE_DISTANCE).exp();
    let c = [0, 1, 2].map(|i| (colour[i] * (1.0 - haze) + HORIZON[i] * haze).clamp(0.0, 1.0));
    (c, label, t)
}

/// One ray per pixel centre, no anti-aliasing.
pub fn render(scene: &SceneSpec, pose: &CameraPose, height: usize, width: usize) -> RenderOutput {
    let plane = height * width;
    let mut out = RenderOutput {
        height,
        width,
        rgb: vec![0.0; 3 * plane],
        labels: vec![0; plane],
        depth: vec![0.0; plane],
    };
    for row in 0..height {
        for col in 0..width {
            let d = pose.ray_direction(row, col, height, width);
            let (c, label, t) = shade_ray(scene, pose.position, normalize(d));
            let i = row * width + col;
            for (k, v) in c.iter().enumerate() {
                out.rgb[k * plane + i] = *v;
            }
            out.labels[i] = label;
            out.depth[i] = t;
        }
    }
    out
}
