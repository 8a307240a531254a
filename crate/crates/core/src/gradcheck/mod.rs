//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

mod suite;

pub use suite::{run_suite, SuiteEntry, SuiteOptions, SUITE_CHECKS, SUITE_THRESHOLD};

/// One evaluation of a scalar objective.
///
/// `branch` fingerprints the piecewise-linear decisions taken on the way
/// (ReLU masks, max-pool winners). Smooth objectives return 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub branch: u64,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Probe { value, branch: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates, sampled without replacement.
    /// `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-6,
            max_coords: Some(200),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    /// `(analytic, numeric)` at `worst_coord`.
    pub worst_pair: Option<(f64, f64)>,
    pub checked: usize,
    /// Coordinates where `x + eps` and `x - eps` land on different branches,
    /// so no derivative exists to compare against.
    pub skipped_nonsmooth: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, 1e-8)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor for a check at step `eps` around an objective of size
/// `value`. A central difference cannot resolve gradients much below
/// `8 ulp(value) / eps`; below `1e4` times that, disagreements are scored as
/// if the gradient were that large, so pure roundoff never exceeds 1e-4.
pub fn roundoff_floor(value: f64, eps: f64) -> f64 {
    let noise = 8.0 * f64::EPSILON * value.abs().max(1.0) / eps;
    (1e4 * noise).max(1e-8)
}

/// Compares `analytic` against central differences of `objective` at `point`.
///
/// Returns the max over checked coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)` with the floor
/// from [`roundoff_floor`].
pub fn finite_diff_check<F, P>(
    mut objective: F,
    point: &[f64],
    analytic: &[f64],
    opts: &CheckOptions,
) -> Result<CheckReport>
where
    F: FnMut(&[f64]) -> Result<P>,
    P: Into<Probe>,
{
    if !(1e-6..=1e-4).contains(&opts.eps) {
        return Err(Error::Config(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            opts.eps
        )));
    }
    if point.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "gradient length {} does not match point length {}",
            analytic.len(),
            point.len()
        )));
    }
    let coords: Vec<usize> = match opts.max_coords {
        Some(k) if k < point.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut v = sample(&mut rng, point.len(), k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..point.len()).collect(),
    };
    let centre: Probe = objective(point)?.into();
    let floor = roundoff_floor(centre.value, opts.eps);
    let mut x = point.to_vec();
    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst_coord: None,
        worst_pair: None,
        checked: 0,
        skipped_nonsmooth: 0,
    };
    for i in coords {
        let orig = x[i];
        x[i] = orig + opts.eps;
        let plus: Probe = objective(&x)?.into();
        x[i] = orig - opts.eps;
        let minus: Probe = objective(&x)?.into();
        x[i] = orig;
        if plus.branch != centre.branch || minus.branch != centre.branch {
            report.skipped_nonsmooth += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * opts.eps);
        if !numeric.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite numeric gradient at coordinate {i}"
            )));
        }
        let err = relative_error_with_floor(analytic[i], numeric, floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_coord.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst_coord = Some(i);
            report.worst_pair = Some((analytic[i], numeric));
        }
    }
    Ok(report)
}
