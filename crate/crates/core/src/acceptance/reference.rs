//! Independent reference computations used to cross-check the main solvers.
//! Each one takes a different numerical route from the code it checks.

use nalgebra::{DMatrix, DVector};

use crate::lds::{self, LinearSystem, RandomStream};

/// Scalar Riccati fixed point `P = q + a²P - (abP)²/(r + b²P)` by iteration;
/// returns the optimal gain `-abP/(r + b²P)`.
pub fn scalar_riccati_gain(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let mut p = q;
    for _ in 0..100_000 {
        let next = q + a * a * p - (a * b * p).powi(2) / (r + b * b * p);
        if (next - p).abs() <= 1e-15 * p.abs().max(1.0) {
            p = next;
            break;
        }
        p = next;
    }
    -a * b * p / (r + b * b * p)
}

/// Steady-state covariance by summing `Σ M^i F M^{iT}` until the terms vanish.
pub fn steady_state_series(m: &DMatrix<f64>, forcing: &DMatrix<f64>) -> DMatrix<f64> {
    let mut total = DMatrix::zeros(m.nrows(), m.nrows());
    let mut term = forcing.clone();
    for _ in 0..200_000 {
        total += &term;
        term = m * &term * m.transpose();
        if term.norm() <= 1e-16 * total.norm() {
            break;
        }
    }
    total
}

/// Nearest point of the feasible set for `d = k = 1` with `|A| < 1`.
///
/// `Σ_xx` is pinned by the dynamics equality, leaving `(Σ_xu, Σ_uu)` free.
/// The objective is a strictly convex quadratic, so the answer is either its
/// unconstrained minimizer or lies on the rank-one boundary `Σ_xx Σ_uu = Σ_xu²`
/// or the trace line `Σ_xx + Σ_uu = ν`. Each boundary piece is a curve
/// parametrized by `Σ_xu` and searched on a dense grid, then refined by
/// ternary search.
pub fn scalar_projection_brute_force(a: f64, b: f64, w: f64, nu: f64, target: &DMatrix<f64>) -> DMatrix<f64> {
    let s = 1.0 - a * a;
    let xx = |xu: f64, uu: f64| (2.0 * a * b * xu + b * b * uu + w) / s;
    let tol = 1e-12;
    let feasible = |xu: f64, uu: f64| {
        let p = xx(xu, uu);
        uu >= -tol && p >= -tol && p * uu - xu * xu >= -tol && p + uu <= nu + tol
    };
    let m12 = 0.5 * (target[(0, 1)] + target[(1, 0)]);
    let dist = |xu: f64, uu: f64| (xx(xu, uu) - target[(0, 0)]).powi(2) + 2.0 * (xu - m12).powi(2) + (uu - target[(1, 1)]).powi(2);

    // Interior: zero gradient of the quadratic in (xu, uu).
    let (gx, gu) = (2.0 * a * b / s, b * b / s);
    let c0 = w / s - target[(0, 0)];
    let h = nalgebra::Matrix2::new(gx * gx + 2.0, gx * gu, gx * gu, gu * gu + 1.0);
    let rhs = nalgebra::Vector2::new(-gx * c0 + 2.0 * m12, -gu * c0 + target[(1, 1)]);
    if let Some(sol) = h.lu().solve(&rhs) {
        if feasible(sol[0], sol[1]) {
            return DMatrix::from_row_slice(2, 2, &[xx(sol[0], sol[1]), sol[0], sol[0], sol[1]]);
        }
    }

    // Rank-one boundary: b²uu² + (2ab·xu + w)uu - s·xu² = 0, larger root.
    let on_psd_boundary = |xu: f64| {
        let (qa, qb, qc) = (b * b, 2.0 * a * b * xu + w, -s * xu * xu);
        if qa == 0.0 {
            -qc / qb
        } else {
            (-qb + (qb * qb - 4.0 * qa * qc).max(0.0).sqrt()) / (2.0 * qa)
        }
    };
    // Trace line: xx(xu, uu) + uu = ν.
    let on_trace_line = |xu: f64| (nu - (2.0 * a * b * xu + w) / s) / (1.0 + b * b / s);

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for curve in [&on_psd_boundary as &dyn Fn(f64) -> f64, &on_trace_line] {
        let value = |xu: f64| {
            let uu = curve(xu);
            if feasible(xu, uu) {
                dist(xu, uu)
            } else {
                f64::INFINITY
            }
        };
        let n = 200_000;
        let spacing = 2.0 * nu / n as f64;
        let mut grid_best = (f64::INFINITY, 0.0);
        for i in 0..=n {
            let xu = -nu + spacing * i as f64;
            let f = value(xu);
            if f < grid_best.0 {
                grid_best = (f, xu);
            }
        }
        if !grid_best.0.is_finite() {
            continue;
        }
        let (mut lo, mut hi) = (grid_best.1 - spacing, grid_best.1 + spacing);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if value(m1) <= value(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let xu = 0.5 * (lo + hi);
        let (xu, f) = if value(xu) <= grid_best.0 { (xu, value(xu)) } else { (grid_best.1, grid_best.0) };
        if f < best.0 {
            best = (f, xu, curve(xu));
        }
    }
    let (_, xu, uu) = best;
    DMatrix::from_row_slice(2, 2, &[xx(xu, uu), xu, xu, uu])
}

/// Minimum of `‖u‖²` subject to `C u = c`, from the KKT system
/// `[[I, Cᵀ], [C, 0]] [u; λ] = [0; c]`. Requires `C` of full row rank.
pub fn min_energy_kkt(c_mat: &DMatrix<f64>, c: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let (rows, cols) = c_mat.shape();
    let n = rows + cols;
    let mut kkt = DMatrix::zeros(n, n);
    kkt.view_mut((0, 0), (cols, cols)).fill_with_identity();
    kkt.view_mut((0, cols), (cols, rows)).copy_from(&c_mat.transpose());
    kkt.view_mut((cols, 0), (rows, cols)).copy_from(c_mat);
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(cols, rows).copy_from(c);
    let sol = kkt.full_piv_lu().solve(&rhs)?;
    let u = sol.rows(0, cols).into_owned();
    let energy = u.norm_squared();
    Some((u, energy))
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut RandomStream) -> DMatrix<f64> {
    let v = lds::standard_normal(rows * cols, rng);
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// `G Gᵀ / n` for a Gaussian `G`.
pub fn random_psd(n: usize, rng: &mut RandomStream) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, rng);
    &g * g.transpose() / n as f64
}

/// A random gain with `ρ(A + BK) ≤ max_radius`, by rejection on scaled
/// Gaussian draws around the least-squares deadbeat gain.
pub fn random_stabilizing_gain(sys: &LinearSystem, max_radius: f64, rng: &mut RandomStream) -> DMatrix<f64> {
    let (d, k) = (sys.state_dim(), sys.control_dim());
    let b_pinv = sys.b().clone().pseudo_inverse(1e-12).expect("pseudo-inverse");
    let deadbeat = -(&b_pinv * sys.a());
    let mut scale = 1.0;
    loop {
        for _ in 0..50 {
            let k_mat = &deadbeat + gaussian_matrix(k, d, rng) * scale;
            let m = sys.a() + sys.b() * &k_mat;
            if crate::linalg::spectral_radius(&m).is_ok_and(|r| r <= max_radius) {
                return k_mat;
            }
        }
        scale *= 0.5;
        if scale < 1e-6 {
            return deadbeat;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riccati_scalar_known_value() {
        // a = b = q = r = 1: P = (1 + √5)/2, K = -P/(1+P)
        let p = 0.5 * (1.0 + 5f64.sqrt());
        assert!((scalar_riccati_gain(1.0, 1.0, 1.0, 1.0) + p / (1.0 + p)).abs() < 1e-12);
    }

    #[test]
    fn kkt_energy_of_identity() {
        let (u, e) = min_energy_kkt(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((e - 25.0).abs() < 1e-12);
        assert!((u - DVector::from_vec(vec![3.0, 4.0])).norm() < 1e-12);
    }

    #[test]
    fn series_matches_geometric_sum() {
        let x = steady_state_series(&DMatrix::from_element(1, 1, 0.5), &DMatrix::from_element(1, 1, 1.0));
        assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    }
}
