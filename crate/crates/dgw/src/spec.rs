use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DgwError, Result};
use crate::grid::SampleGrid;
use crate::points::{sample_control_points, ControlPoints, Point, SamplingMode};
use crate::tps::{tps_fit, TpsCoeffs};

/// Resampling budget before giving up on a seed.
pub const MAX_ATTEMPTS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpParams {
    /// Blocks per side; `n·n + 4` control pairs in total.
    pub n: usize,
    /// Source offset standard deviation, as a fraction of the image extent.
    pub sigma_s: f64,
    /// Destination offset standard deviation, as a fraction of the image extent.
    pub sigma_d: f64,
    pub mode: SamplingMode,
}

impl Default for WarpParams {
    fn default() -> Self {
        WarpParams {
            n: 3,
            sigma_s: 0.1,
            sigma_d: 0.2,
            mode: SamplingMode::GridRandSourceRandDest,
        }
    }
}

/// One sampled warp: control pairs and the fitted destination→source map.
///
/// Immutable after construction; apply the same spec to an image and to its
/// prediction map by building one [`SampleGrid`] and reusing it.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpSpec {
    pub params: WarpParams,
    pub points: ControlPoints,
    pub coeffs: TpsCoeffs,
    pub seed: u64,
    /// Number of draws rejected before this one was accepted.
    pub rejected: u32,
}

impl WarpSpec {
    /// Draws control points from `seed`; ill-conditioned draws are discarded
    /// and redrawn from the same stream.
    pub fn sample(params: WarpParams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for rejected in 0..MAX_ATTEMPTS {
            let points = sample_control_points(params.n, params.sigma_s, params.sigma_d, params.mode, &mut rng)?;
            match tps_fit(&points.destination, &points.source) {
                Ok(coeffs) => {
                    return Ok(WarpSpec {
                        params,
                        points,
                        coeffs,
                        seed,
                        rejected,
                    })
                }
                Err(DgwError::IllConditioned { .. } | DgwError::SolverFailure { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(DgwError::Exhausted(MAX_ATTEMPTS))
    }

    /// Fits a spec to explicit control points.
    pub fn from_points(params: WarpParams, points: ControlPoints) -> Result<Self> {
        let coeffs = tps_fit(&points.destination, &points.source)?;
        Ok(WarpSpec {
            params,
            points,
            coeffs,
            seed: 0,
            rejected: 0,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let params = WarpParams {
            n,
            sigma_s: 0.0,
            sigma_d: 0.0,
            mode: SamplingMode::GridRandSourceRandDest,
        };
        Self::sample(params, 0)
    }

    /// Maps a normalized output location to its normalized source location.
    pub fn map(&self, q: Point) -> Point {
        self.coeffs.eval(q)
    }

    pub fn grid(&self, height: usize, width: usize) -> SampleGrid {
        SampleGrid::from_spec(self, height, width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spec_maps_points_to_themselves() {
        let spec = WarpSpec::identity(3).unwrap();
        for q in [[0.1, 0.9], [0.5, 0.5], [0.0, 1.0]] {
            let p = spec.map(q);
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_specs_interpolate_their_control_points() {
        for seed in 0..50 {
            let spec = WarpSpec::sample(WarpParams::default(), seed).unwrap();
            assert_eq!(spec.points.len(), 13);
            for (d, s) in spec.points.destination.iter().zip(&spec.points.source) {
                let p = spec.map(*d);
                assert!((p[0] - s[0]).abs() < 1e-8 && (p[1] - s[1]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = WarpSpec::sample(WarpParams::default(), 42).unwrap();
        let b = WarpSpec::sample(WarpParams::default(), 42).unwrap();
        assert_eq!(a, b);
    }
}
