use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::texture::Material;
use super::{BEAMS_SLABS, COLUMNS, OTHER_NONSTRUCTURAL};

/// Axis-aligned box in world coordinates (metres, `y` up).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        (0..3).all(|a| p[a] > self.min[a] - margin && p[a] < self.max[a] + margin)
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 0.5 * (self.min[a] + self.max[a]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub bounds: Aabb,
    pub class: u8,
    pub material: Material,
    pub base_color: [f64; 3],
    pub contrast: f64,
    pub texture_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub ground_seed: u64,
    /// Index of the deck slab in `primitives`.
    pub deck: usize,
    /// Indices of the columns.
    pub columns: Vec<usize>,
    /// Camera positions are kept inside this box.
    pub bounds: Aabb,
}

pub const WORLD_HALF_EXTENT: f64 = 90.0;
pub const MAX_ALTITUDE: f64 = 45.0;
pub const MIN_ALTITUDE: f64 = 0.5;

fn concrete(rng: &mut ChaCha8Rng, bounds: Aabb, class: u8) -> Primitive {
    // identical draws for columns and slabs
    let g = rng.random_range(0.45..0.75);
    Primitive {
        bounds,
        class,
        material: Material::Concrete,
        base_color: [g, g * 0.97, g * 0.92],
        contrast: rng.random_range(0.25..0.45),
        texture_seed: rng.random(),
    }
}

fn painted(rng: &mut ChaCha8Rng, bounds: Aabb, material: Material, base: [f64; 3]) -> Primitive {
    Primitive {
        bounds,
        class: OTHER_NONSTRUCTURAL,
        material,
        base_color: base,
        contrast: rng.random_range(0.1..0.2),
        texture_seed: rng.random(),
    }
}

/// A single-span deck on 2..=6 columns, railings, and scattered trees and
/// signs. Every column runs from the ground to the deck underside.
pub fn build_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = rng.random_range(30.0..60.0);
    let width = rng.random_range(7.0..11.0);
    let deck_bottom = rng.random_range(6.0..10.0);
    let thickness = rng.random_range(1.2..2.0);
    let deck_top = deck_bottom + thickness;
    let (hx, hz) = (span / 2.0, width / 2.0);

    let mut prims = Vec::new();
    prims.push(concrete(
        &mut rng,
        Aabb::new([-hx, deck_bottom, -hz], [hx, deck_top, hz]),
        BEAMS_SLABS,
    ));
    let deck = 0;

    // an even column count may be laid out as paired piers
    let count = rng.random_range(2..=6usize);
    let paired = count % 2 == 0 && rng.random_bool(0.5);
    let piers = if paired { count / 2 } else { count };
    let mut columns = Vec::new();
    for k in 0..piers {
        let pitch = span / piers as f64;
        let x = -hx + pitch * (k as f64 + 0.5) + rng.random_range(-pitch / 8.0..pitch / 8.0);
        if !paired {
            let cw = rng.random_range(1.8..3.0);
            let cd = rng.random_range(2.0..width * 0.6);
            columns.push(prims.len());
            prims.push(concrete(
                &mut rng,
                Aabb::new([x - cw / 2.0, 0.0, -cd / 2.0], [x + cw / 2.0, deck_bottom, cd / 2.0]),
                COLUMNS,
            ));
        } else {
            let cw = rng.random_range(1.5..2.5);
            let cd = rng.random_range(1.5..2.5);
            for side in [-1.0, 1.0] {
                let z = side * width / 4.0;
                columns.push(prims.len());
                prims.push(concrete(
                    &mut rng,
                    Aabb::new(
                        [x - cw / 2.0, 0.0, z - cd / 2.0],
                        [x + cw / 2.0, deck_bottom, z + cd / 2.0],
                    ),
                    COLUMNS,
                ));
            }
        }
    }

    let rail = [
        rng.random_range(0.6..0.9),
        rng.random_range(0.6..0.9),
        rng.random_range(0.7..0.95),
    ];
    for side in [-1.0, 1.0] {
        let z0 = side * hz;
        let z1 = side * (hz - 0.25);
        prims.push(painted(
            &mut rng,
            Aabb::new(
                [-hx, deck_top, z0.min(z1)],
                [hx, deck_top + 1.0, z0.max(z1)],
            ),
            Material::Paint,
            rail,
        ));
    }

    let trees = rng.random_range(4..=10);
    for _ in 0..trees {
        let x = rng.random_range(-70.0..70.0);
        let z = rng.random_range(hz + 8.0..70.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let trunk_h = rng.random_range(2.0..4.0);
        let crown = rng.random_range(2.5..5.0);
        prims.push(painted(
            &mut rng,
            Aabb::new([x - 0.25, 0.0, z - 0.25], [x + 0.25, trunk_h, z + 0.25]),
            Material::Bark,
            [0.35, 0.25, 0.15],
        ));
        let green = [
            rng.random_range(0.15..0.3),
            rng.random_range(0.35..0.55),
            rng.random_range(0.1..0.25),
        ];
        prims.push(painted(
            &mut rng,
            Aabb::new(
                [x - crown / 2.0, trunk_h, z - crown / 2.0],
                [x + crown / 2.0, trunk_h + crown, z + crown / 2.0],
            ),
            Material::Foliage,
            green,
        ));
    }

    let signs = rng.random_range(0..=3);
    for _ in 0..signs {
        let x = rng.random_range(-hx - 15.0..hx + 15.0);
        let z = rng.random_range(hz + 3.0..hz + 12.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        prims.push(painted(
            &mut rng,
            Aabb::new([x - 0.08, 0.0, z - 0.08], [x + 0.08, 2.2, z + 0.08]),
            Material::Paint,
            [0.6, 0.6, 0.6],
        ));
        let colour = if rng.random_bool(0.5) {
            [0.9, 0.8, 0.1]
        } else {
            [0.1, 0.5, 0.25]
        };
        prims.push(painted(
            &mut rng,
            Aabb::new([x - 0.9, 2.2, z - 0.05], [x + 0.9, 3.2, z + 0.05]),
            Material::Paint,
            colour,
        ));
    }

    SceneSpec {
        seed,
        primitives: prims,
        ground_seed: rng.random(),
        deck,
        columns,
        bounds: Aabb::new(
            [-WORLD_HALF_EXTENT, MIN_ALTITUDE, -WORLD_HALF_EXTENT],
            [WORLD_HALF_EXTENT, MAX_ALTITUDE, WORLD_HALF_EXTENT],
        ),
    }
}

impl SceneSpec {
    pub fn deck_bounds(&self) -> Aabb {
        self.primitives[self.deck].bounds
    }

    /// Moves `p` out of any primitive it is within `margin` of, to the
    /// nearest face offset that lands in free space (never below ground).
    pub fn push_out(&self, mut p: [f64; 3], margin: f64) -> [f64; 3] {
        let free = |q: [f64; 3]| self.primitives.iter().all(|o| !o.bounds.contains(q, margin));
        for _ in 0..8 {
            let Some(prim) = self.primitives.iter().find(|o| o.bounds.contains(p, margin)) else {
                break;
            };
            let b = prim.bounds;
            let mut moves = Vec::with_capacity(6);
            for a in 0..3 {
                let lo = b.min[a] - margin;
                if !(a == 1 && lo < 0.0) {
                    moves.push((p[a] - lo, a, lo));
                }
                let hi = b.max[a] + margin;
                moves.push((hi - p[a], a, hi));
            }
            moves.sort_by(|x, y| x.0.total_cmp(&y.0));
            let moved = |&(_, a, v): &(f64, usize, f64)| {
                let mut q = p;
                q[a] = v;
                q
            };
            p = moves
                .iter()
                .map(moved)
                .find(|&q| free(q))
                .unwrap_or_else(|| moved(&moves[0]));
        }
        p
    }
}
