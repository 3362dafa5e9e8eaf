//! Thin-plate-spline fitting with kernel `U(r) = r² log r²`.
//!
//! The fitted map sends destination coordinates to source coordinates:
//!
//! ```text
//! f(q) = a₀ + a₁·x + a₂·y + Σᵢ wᵢ · U(‖q − dᵢ‖)
//! ```
//!
//! solved from `[[K, P], [Pᵀ, 0]] · [w; a] = [S; 0]`.

use crate::error::{DgwError, Result};
use crate::points::Point;

/// Fits whose 1-norm condition estimate exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Maximum allowed residual at the control points of an accepted fit.
pub const INTERPOLATION_TOLERANCE: f64 = 1e-8;

#[inline]
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpsCoeffs {
    /// Rows: constant, x and y coefficients; columns: output x and y.
    pub affine: [[f64; 2]; 3],
    /// Radial weights, one row per control point.
    pub weights: Vec<[f64; 2]>,
    /// Control points the radial terms are centred on (the destinations).
    pub centers: Vec<Point>,
}

impl TpsCoeffs {
    pub fn eval(&self, q: Point) -> Point {
        let a = &self.affine;
        let mut out = [
            a[0][0] + a[1][0] * q[0] + a[2][0] * q[1],
            a[0][1] + a[1][1] * q[0] + a[2][1] * q[1],
        ];
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let dx = q[0] - c[0];
            let dy = q[1] - c[1];
            let u = tps_kernel(dx * dx + dy * dy);
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    pub fn max_weight(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Dense LU factorization with partial pivoting, row-major `n × n`.
pub(crate) struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub(crate) fn factor(mut a: Vec<f64>, n: usize) -> Option<Lu> {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, a[i * n + k].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Some(Lu { n, lu: a, perm })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }

    /// `‖A⁻¹‖₁`, by solving for every column of the inverse.
    fn inverse_norm1(&self) -> f64 {
        let n = self.n;
        let mut e = vec![0.0; n];
        let mut best = 0.0f64;
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            best = best.max(col.iter().map(|v| v.abs()).sum());
        }
        best
    }
}

fn norm1(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Fits the map `destination → source`.
pub fn tps_fit(destination: &[Point], source: &[Point]) -> Result<TpsCoeffs> {
    if destination.len() != source.len() {
        return Err(DgwError::InvalidParams(format!(
            "{} destination points but {} source points",
            destination.len(),
            source.len()
        )));
    }
    let np = destination.len();
    if np < 3 {
        return Err(DgwError::InvalidParams("need at least 3 control points".into()));
    }
    let n = np + 3;
    let mut a = vec![0.0; n * n];
    for i in 0..np {
        for j in 0..np {
            let dx = destination[i][0] - destination[j][0];
            let dy = destination[i][1] - destination[j][1];
            a[i * n + j] = tps_kernel(dx * dx + dy * dy);
        }
        let row = [1.0, destination[i][0], destination[i][1]];
        for (k, v) in row.into_iter().enumerate() {
            a[i * n + np + k] = v;
            a[(np + k) * n + i] = v;
        }
    }
    let anorm = norm1(&a, n);
    let lu = Lu::factor(a, n).ok_or(DgwError::IllConditioned {
        condition: f64::INFINITY,
    })?;
    let condition = anorm * lu.inverse_norm1();
    if !(condition <= MAX_CONDITION) {
        return Err(DgwError::IllConditioned { condition });
    }

    let mut coeffs = [vec![0.0; n], vec![0.0; n]];
    for (axis, out) in coeffs.iter_mut().enumerate() {
        let mut rhs = vec![0.0; n];
        for (r, s) in rhs.iter_mut().zip(source) {
            *r = s[axis];
        }
        *out = lu.solve(&rhs);
    }
    let weights = (0..np).map(|i| [coeffs[0][i], coeffs[1][i]]).collect();
    let affine = [
        [coeffs[0][np], coeffs[1][np]],
        [coeffs[0][np + 1], coeffs[1][np + 1]],
        [coeffs[0][np + 2], coeffs[1][np + 2]],
    ];
    let fit = TpsCoeffs {
        affine,
        weights,
        centers: destination.to_vec(),
    };

    let residual = interpolation_residual(&fit, destination, source);
    if !(residual < INTERPOLATION_TOLERANCE) {
        return Err(DgwError::SolverFailure { residual });
    }
    Ok(fit)
}

/// Largest distance between `f(dᵢ)` and `sᵢ` over all control pairs.
pub fn interpolation_residual(fit: &TpsCoeffs, destination: &[Point], source: &[Point]) -> f64 {
    destination
        .iter()
        .zip(source)
        .map(|(d, s)| {
            let p = fit.eval(*d);
            (p[0] - s[0]).abs().max((p[1] - s[1]).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::{block_centers, CORNERS};

    fn grid_with_corners() -> Vec<Point> {
        let mut p = block_centers(3);
        p.extend_from_slice(&CORNERS);
        p
    }

    #[test]
    fn kernel_at_zero_and_one() {
        assert_eq!(tps_kernel(0.0), 0.0);
        assert_eq!(tps_kernel(1.0), 0.0);
        assert!((tps_kernel(4.0) - 4.0 * 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_data_gives_identity_affine() {
        let p = grid_with_corners();
        let fit = tps_fit(&p, &p).unwrap();
        let expected = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for r in 0..3 {
            for c in 0..2 {
                assert!((fit.affine[r][c] - expected[r][c]).abs() < 1e-10);
            }
        }
        assert!(fit.max_weight() < 1e-8);
    }

    #[test]
    fn lu_solves_small_system() {
        // [[0, 2], [3, 1]] needs a pivot swap
        let lu = Lu::factor(vec![0.0, 2.0, 3.0, 1.0], 2).unwrap();
        let x = lu.solve(&[4.0, 5.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn coincident_destinations_are_rejected() {
        let mut d = grid_with_corners();
        d[1] = d[0];
        let s = grid_with_corners();
        assert!(matches!(tps_fit(&d, &s), Err(DgwError::IllConditioned { .. })));
    }

    #[test]
    fn collinear_points_are_rejected() {
        let d: Vec<Point> = (0..5).map(|i| [i as f64 * 0.2, 0.5]).collect();
        assert!(tps_fit(&d, &d).is_err());
    }
}
