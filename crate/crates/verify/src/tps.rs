//! Thin-plate-spline properties over random warp specs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpseg_dgw::tps::interpolation_residual;
use warpseg_dgw::{tps_fit, ControlPoints, Point, WarpParams, WarpSpec};

use crate::Check;

/// Identity warps may move no pixel further than this.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
/// Largest radial weight allowed when the control data is affine.
pub const AFFINE_TOLERANCE: f64 = 1e-6;
/// Largest control-point residual of a fitted map.
pub const INTERPOLATION_TOLERANCE: f64 = 1e-8;

/// Image extent the identity displacement is measured on, in pixels.
const GRID_SIDE: usize = 64;

pub fn params() -> WarpParams {
    WarpParams {
        sigma_s: 0.1,
        sigma_d: 0.2,
        ..WarpParams::default()
    }
}

fn specs(count: usize, seed: u64) -> impl Iterator<Item = (WarpSpec, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(move |_| {
        let spec = WarpSpec::sample(params(), rng.random()).expect("warp spec");
        (spec, ChaCha8Rng::seed_from_u64(rng.random()))
    })
}

/// Destination offsets removed: every destination equals its source, so
/// the fitted map must be the identity.
pub fn check_identity(count: usize, seed: u64) -> Check {
    let mut check = Check::new("tps identity", IDENTITY_TOLERANCE);
    for (spec, _) in specs(count, seed) {
        let source = spec.points.source.clone();
        let points = ControlPoints {
            destination: source.clone(),
            source,
        };
        let err = match WarpSpec::from_points(spec.params, points) {
            Ok(identity) => identity.grid(GRID_SIDE, GRID_SIDE).max_displacement(),
            Err(_) => f64::INFINITY,
        };
        check.record(err);
    }
    check
}

/// Sources generated by a random affine map of the sampled destinations:
/// the radial weights must vanish.
pub fn check_affine(count: usize, seed: u64) -> Check {
    let mut check = Check::new("tps affine reproduction", AFFINE_TOLERANCE);
    for (spec, mut rng) in specs(count, seed) {
        let a = [
            [1.0 + rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
            [rng.random_range(-0.3..0.3), 1.0 + rng.random_range(-0.3..0.3)],
        ];
        let b = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
        let destination = spec.points.destination.clone();
        let source: Vec<Point> = destination
            .iter()
            .map(|d| {
                [
                    a[0][0] * d[0] + a[0][1] * d[1] + b[0],
                    a[1][0] * d[0] + a[1][1] * d[1] + b[1],
                ]
            })
            .collect();
        let err = match tps_fit(&destination, &source) {
            Ok(fit) => fit.max_weight(),
            Err(_) => f64::INFINITY,
        };
        check.record(err);
    }
    check
}

/// The fitted map sends every destination control point to its source.
pub fn check_interpolation(count: usize, seed: u64) -> Check {
    let mut check = Check::new("tps interpolation", INTERPOLATION_TOLERANCE);
    for (spec, _) in specs(count, seed) {
        let p = &spec.points;
        check.record(interpolation_residual(&spec.coeffs, &p.destination, &p.source));
    }
    check
}

pub fn check_all(count: usize, seed: u64) -> Vec<Check> {
    vec![
        check_identity(count, seed),
        check_affine(count, seed.wrapping_add(1)),
        check_interpolation(count, seed.wrapping_add(2)),
    ]
}
