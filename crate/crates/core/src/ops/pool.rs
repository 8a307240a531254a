//! 2x2 max pooling, stride 2.

use crate::error::Result;
use crate::tensor::{Dims, Tensor4};

/// Flat input index chosen by each output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_dims: Dims,
    pub argmax: Vec<usize>,
}

/// 2x2/2 max pooling. Odd heights or widths are padded bottom/right with
/// `-inf`, so the output is `ceil(h/2) x ceil(w/2)`. Ties resolve to the
/// first position in row-major window order.
pub fn maxpool2(input: &Tensor4) -> (Tensor4, PoolIndices) {
    let d = input.dims();
    let (oh, ow) = (d.h.div_ceil(2), d.w.div_ceil(2));
    let od = d.with_spatial(oh, ow);
    let mut out = Tensor4::zeros(od);
    let mut argmax = vec![0usize; od.len()];
    let mut o = 0;
    for n in 0..d.n {
        for c in 0..d.c {
            let base = input.index(n, c, 0, 0);
            let plane = input.plane(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for dy in 0..2 {
                        let y = 2 * oy + dy;
                        if y >= d.h {
                            continue;
                        }
                        for dx in 0..2 {
                            let x = 2 * ox + dx;
                            if x >= d.w {
                                continue;
                            }
                            let v = plane[y * d.w + x];
                            if best_i == usize::MAX || v > best {
                                best = v;
                                best_i = y * d.w + x;
                            }
                        }
                    }
                    out.data_mut()[o] = best;
                    argmax[o] = base + best_i;
                    o += 1;
                }
            }
        }
    }
    (
        out,
        PoolIndices {
            input_dims: d,
            argmax,
        },
    )
}

/// Routes each output gradient to the input position that won the max.
pub fn maxpool2_backward(grad_out: &Tensor4, indices: &PoolIndices) -> Result<Tensor4> {
    let d = indices.input_dims;
    grad_out.expect_dims(
        d.with_spatial(d.h.div_ceil(2), d.w.div_ceil(2)),
        "maxpool2_backward",
    )?;
    let mut grad_in = Tensor4::zeros(d);
    let gi = grad_in.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gi[i] += g;
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_window() {
        let x = Tensor4::new(Dims::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2(&x);
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
    }

    #[test]
    fn constant_map_stays_constant() {
        let x = Tensor4::filled(Dims::new(2, 3, 6, 4), 1.5);
        let (y, _) = maxpool2(&x);
        assert_eq!(y.dims(), Dims::new(2, 3, 3, 2));
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = Tensor4::random_normal(Dims::new(1, 1, 4, 4), 1.0, &mut rng);
            let (y, _) = maxpool2(&x);
            for oy in 0..2 {
                for ox in 0..2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(a, b)| x.at(0, 0, 2 * oy + a, 2 * ox + b))
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(y.at(0, 0, oy, ox), m);
                }
            }
        }
    }

    #[test]
    fn odd_dims_pad_with_neg_infinity() {
        let x = Tensor4::filled(Dims::new(1, 1, 3, 5), -7.0);
        let (y, _) = maxpool2(&x);
        assert_eq!(y.dims(), Dims::new(1, 1, 2, 3));
        assert!(y.data().iter().all(|&v| v == -7.0));
    }

    #[test]
    fn backward_conserves_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor4::random_normal(Dims::new(2, 2, 5, 6), 1.0, &mut rng);
        let (y, idx) = maxpool2(&x);
        let g = Tensor4::random_normal(y.dims(), 1.0, &mut rng);
        let gi = maxpool2_backward(&g, &idx).unwrap();
        assert!((gi.sum() - g.sum()).abs() < 1e-12);
    }
}
