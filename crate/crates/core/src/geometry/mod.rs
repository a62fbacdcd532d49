//! Convex-geometry unmixing and its baselines.

mod hypercsi;
mod lsq;
mod nmf;
mod vca;

pub use hypercsi::{hypercsi, hypercsi_fit, HyperCsiConfig, HyperCsiFit, HyperplaneSet};
pub use lsq::{abundance_pinv, least_squares_abundances, nnls, nnls_pixel};
pub use nmf::{nmf_mu, nmf_multiplicative, NmfOutput};
pub use vca::vca;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue ratio below which a principal direction counts as missing.
const RANK_TOLERANCE: f64 = 1e-12;

/// Affine subspace `{C y + d}` holding a data cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    /// `M x (N-1)`, orthonormal columns sorted by decreasing variance.
    pub basis: DMatrix<f64>,
    pub centroid: DVector<f64>,
    /// Covariance eigenvalues matching the basis columns.
    pub variances: Vec<f64>,
}

impl AffineModel {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `C^T (x - d)` for every column.
    pub fn reduce(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.centroid;
        }
        self.basis.transpose() * centered
    }

    /// `C y + d` for every column.
    pub fn lift(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.basis * y;
        for mut col in out.column_iter_mut() {
            col += &self.centroid;
        }
        out
    }
}

/// Fits the `(n-1)`-dimensional affine hull of the columns of `x`: the mean
/// plus the top principal directions of the centered cloud.
pub fn affine_fit(x: &DMatrix<f64>, n: usize) -> Result<AffineModel> {
    let (m, l) = x.shape();
    if n == 0 {
        return Err(Error::InvalidArgument("model order must be at least 1".into()));
    }
    if n - 1 > m || n > l {
        return Err(Error::Conditioning(format!(
            "cannot fit a {}-dimensional hull to {l} points in {m} dimensions",
            n - 1
        )));
    }
    let centroid = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &centroid;
    }
    let cov = &centered * centered.transpose() / l as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let k = n - 1;
    let variances: Vec<f64> = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    if k > 0 {
        let top = eig.eigenvalues[order[0]];
        let last = variances[k - 1];
        if top <= 0.0 || last <= RANK_TOLERANCE * top {
            return Err(Error::Conditioning(format!(
                "data spans fewer than {k} affine dimensions (variance ratio {:.3e})",
                if top > 0.0 { last / top } else { 0.0 }
            )));
        }
    }
    let basis = DMatrix::from_fn(m, k, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(AffineModel {
        basis,
        centroid,
        variances,
    })
}

/// Successive projection: repeatedly picks the column of largest residual
/// norm and projects every column onto that column's orthogonal complement.
/// Ties go to the lowest index.
pub fn spa_purest(x: &DMatrix<f64>, n: usize) -> Result<Vec<usize>> {
    if n > x.ncols() {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {n} columns from {}",
            x.ncols()
        )));
    }
    let mut r = x.clone();
    let mut picks = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best = 0;
        let mut best_norm = f64::NEG_INFINITY;
        for (j, col) in r.column_iter().enumerate() {
            let v = col.norm_squared();
            if v > best_norm {
                best = j;
                best_norm = v;
            }
        }
        if best_norm <= 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "only {} independent columns available for {n} picks",
                picks.len()
            )));
        }
        let u = r.column(best) / best_norm.sqrt();
        let proj = u.transpose() * &r;
        r -= &u * proj;
        picks.push(best);
    }
    Ok(picks)
}

/// Appends a row of ones: `[y; 1]`.
pub fn lift_homogeneous(y: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, l) = y.shape();
    DMatrix::from_fn(k + 1, l, |i, j| if i < k { y[(i, j)] } else { 1.0 })
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Barycentric coordinates of every column of `y` with respect to the
/// simplex whose vertices are the columns of `vertices` (both in the same
/// `N-1` dimensional space).
pub fn barycentric(vertices: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let system = lift_homogeneous(vertices);
    let lu = system.clone().lu();
    let rhs = lift_homogeneous(y);
    let sol = lu.solve(&rhs).ok_or_else(|| {
        Error::DegenerateGeometry("simplex vertices are affinely dependent".into())
    })?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateGeometry("simplex vertices are affinely dependent".into()));
    }
    Ok(sol)
}

/// Volume of the simplex spanned by the columns of `a`, measured inside its
/// own affine hull: `sqrt(det(E^T E)) / (N-1)!` with `E = [a_i - a_N]`.
pub fn simplex_volume(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n < 2 {
        return 0.0;
    }
    let last = a.column(n - 1);
    let e = DMatrix::from_fn(a.nrows(), n - 1, |i, j| a[(i, j)] - last[i]);
    let gram = e.transpose() * &e;
    let det = gram.determinant().max(0.0);
    let fact: f64 = (1..n).map(|k| k as f64).product();
    det.sqrt() / fact
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collinear_cloud_gives_line_direction() {
        let x = DMatrix::from_fn(3, 5, |i, j| [1.0, 2.0, -1.0][i] * j as f64 + [0.5, 0.0, 3.0][i]);
        let model = affine_fit(&x, 2).unwrap();
        let dir = DVector::from_vec(vec![1.0, 2.0, -1.0]).normalize();
        assert!((model.basis.column(0).dot(&dir).abs() - 1.0).abs() < 1e-12);
        assert!((model.centroid[0] - 2.5).abs() < 1e-12);
        let back = model.lift(&model.reduce(&x));
        assert!((back - x).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let x = DMatrix::from_fn(3, 5, |i, j| [1.0, 2.0, -1.0][i] * j as f64);
        assert!(matches!(affine_fit(&x, 3), Err(Error::Conditioning(_))));
        assert!(matches!(affine_fit(&x, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn spa_picks_vertices_before_midpoint() {
        let x = DMatrix::from_row_slice(2, 3, &[0.5, 1.0, 0.0, 0.5, 0.0, 1.0]);
        let picks = spa_purest(&x, 2).unwrap();
        let mut sorted = picks.clone();
        sorted.sort();
        assert_eq!(sorted, vec![1, 2]);
        assert_eq!(picks[0], 1, "equal norms resolve to the lowest index");
    }

    #[test]
    fn spa_matches_exhaustive_volume_search() {
        // Columns in lifted 2-D coordinates: a triangle plus interior points.
        let pts = [
            (0.0, 0.0),
            (0.2, 0.1),
            (3.0, 0.0),
            (1.0, 0.5),
            (0.0, 2.0),
            (0.9, 0.9),
        ];
        let x = DMatrix::from_fn(3, pts.len(), |i, j| match i {
            0 => pts[j].0,
            1 => pts[j].1,
            _ => 1.0,
        });
        let mut picks = spa_purest(&x, 3).unwrap();
        picks.sort();
        let mut best = (0.0, vec![]);
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                for c in b + 1..pts.len() {
                    let m = DMatrix::from_columns(&[x.column(a), x.column(b), x.column(c)]);
                    let v = m.determinant().abs();
                    if v > best.0 {
                        best = (v, vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(picks, best.1);
    }

    #[test]
    fn simplex_projection_cases() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.0, 0.0, 0.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_triangle_volume() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((simplex_volume(&a) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn basis_is_orthonormal(data in prop::collection::vec(-5.0..5.0f64, 5 * 20), n in 1usize..=4) {
            let x = DMatrix::from_vec(5, 20, data);
            let model = affine_fit(&x, n).unwrap();
            let gram = model.basis.transpose() * &model.basis;
            prop_assert!((gram - DMatrix::identity(n - 1, n - 1)).abs().max() < 1e-10);
            for w in model.variances.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn simplex_projection_is_feasible_and_closest(v in prop::collection::vec(-3.0..3.0f64, 1..7)) {
            let p = project_simplex(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            // Optimality: <v - p, q - p> <= 0 for every vertex q.
            for k in 0..v.len() {
                let dot: f64 = (0..v.len())
                    .map(|i| (v[i] - p[i]) * ((if i == k { 1.0 } else { 0.0 }) - p[i]))
                    .sum();
                prop_assert!(dot <= 1e-10);
            }
        }
    }
}
