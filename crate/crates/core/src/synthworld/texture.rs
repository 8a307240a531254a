//! Procedural albedo: hashed value noise evaluated at world coordinates.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    /// Shared by columns and slabs.
    Concrete,
    Foliage,
    Bark,
    Paint,
    Ground,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = splitmix(
        seed ^ splitmix((ix as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7))
            ^ splitmix((iy as u64).wrapping_mul(0x52DC_E729) ^ (iz as u64).wrapping_mul(0x9E37_79B1)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinear value noise in `[0, 1)` with unit lattice spacing.
pub fn value_noise(p: [f64; 3], seed: u64) -> f64 {
    let f = [p[0].floor(), p[1].floor(), p[2].floor()];
    let i = [f[0] as i64, f[1] as i64, f[2] as i64];
    let t = [smooth(p[0] - f[0]), smooth(p[1] - f[1]), smooth(p[2] - f[2])];
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                    * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                    * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                acc += w * lattice(i[0] + dx, i[1] + dy, i[2] + dz, seed);
            }
        }
    }
    acc
}

/// Three octaves at 1.5, 5 and 15 cycles per metre; range `[0, 1)`.
pub fn fbm(p: [f64; 3], seed: u64) -> f64 {
    const OCTAVES: [(f64, f64); 3] = [(1.5, 0.5), (5.0, 0.3), (15.0, 0.2)];
    OCTAVES
        .iter()
        .enumerate()
        .map(|(k, &(freq, amp))| {
            amp * value_noise([p[0] * freq, p[1] * freq, p[2] * freq], seed.wrapping_add(k as u64))
        })
        .sum()
}

/// Surface colour at world point `p`. `base` is the primitive's base colour
/// and `contrast` its noise amplitude.
pub fn albedo(material: Material, base: [f64; 3], contrast: f64, seed: u64, p: [f64; 3]) -> [f64; 3] {
    let n = fbm(p, seed) - 0.5;
    match material {
        Material::Concrete => {
            // large stains plus fine grain
            let stain = value_noise([p[0] * 0.4, p[1] * 0.4, p[2] * 0.4], seed ^ 0xC0) - 0.5;
            let k = 1.0 + contrast * 2.0 * n + 0.15 * stain;
            base.map(|c| c * k)
        }
        Material::Ground => {
            let patch = value_noise([p[0] * 0.15, 0.0, p[2] * 0.15], seed ^ 0x6A) ;
            let grass = [0.30, 0.45, 0.20];
            let dirt = [0.45, 0.38, 0.28];
            let m = patch.clamp(0.0, 1.0);
            let k = 1.0 + contrast * 2.0 * n;
            [0, 1, 2].map(|i| (grass[i] * (1.0 - m) + dirt[i] * m) * k)
        }
        Material::Foliage | Material::Bark | Material::Paint => {
            let k = 1.0 + contrast * 2.0 * n;
            base.map(|c| c * k)
        }
    }
}
