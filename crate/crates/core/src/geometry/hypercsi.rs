//! Hyperplane-based Craig simplex identification.
//!
//! Works in the `(N-1)`-dimensional affine hull of the data. Each facet
//! hyperplane of the simplex is estimated from purest-pixel seeds, pushed out
//! to the farthest pixel along its normal, and the endmembers are the
//! vertices where `N-1` facets meet. Abundances follow in closed form from
//! each pixel's distance to the facets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{affine_fit, lift_homogeneous, spa_purest, AffineModel};
use crate::error::{Error, Result};
use crate::mixmodel::{AbundanceMatrix, EndmemberMatrix, ImageCube};

/// Largest acceptable condition number of a vertex intersection system.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperCsiConfig {
    /// Offsets are divided by `eta`; values above 1 pull facets toward the
    /// centroid.
    pub eta: f64,
    /// Neighborhood radius around each purest pixel, in reduced coordinates.
    pub radius: f64,
}

impl Default for HyperCsiConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            radius: 1e-8,
        }
    }
}

/// Facet `i` is `{x : b_i^T x = h_i}` in reduced coordinates; the simplex is
/// `{x : b_i^T x <= h_i for all i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneSet {
    pub normals: Vec<DVector<f64>>,
    pub offsets: Vec<f64>,
}

/// Everything the identification computes, before any clamping.
#[derive(Debug, Clone)]
pub struct HyperCsiFit {
    pub model: AffineModel,
    pub seeds: Vec<usize>,
    pub hyperplanes: HyperplaneSet,
    /// `(N-1) x N` simplex vertices in reduced coordinates.
    pub vertices: DMatrix<f64>,
    /// `M x N` vertices lifted back to band space.
    pub endmembers: DMatrix<f64>,
    /// `N x L` closed-form abundances.
    pub abundances: DMatrix<f64>,
}

/// Unit normal of the hyperplane through `k` points in `R^k` (the columns of
/// `points`), as the generalized cross product of the edge vectors.
fn hyperplane_normal(points: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = points.nrows();
    debug_assert_eq!(points.ncols(), k);
    let edges = DMatrix::from_fn(k - 1, k, |r, c| points[(c, r + 1)] - points[(c, 0)]);
    let mut normal = DVector::zeros(k);
    for j in 0..k {
        let minor = edges.clone().remove_column(j);
        let det = if minor.nrows() == 0 { 1.0 } else { minor.determinant() };
        normal[j] = if j % 2 == 0 { det } else { -det };
    }
    let norm = normal.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateGeometry(
            "facet points are affinely dependent".into(),
        ));
    }
    Ok(normal / norm)
}

fn columns_except(m: &DMatrix<f64>, skip: usize) -> DMatrix<f64> {
    m.clone().remove_column(skip)
}

/// Runs the full identification on an `M x L` matrix of pixels.
pub fn hypercsi_fit(z: &DMatrix<f64>, n: usize, cfg: &HyperCsiConfig) -> Result<HyperCsiFit> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "hyperplane identification needs N >= 2, got {n}"
        )));
    }
    if z.nrows() < n {
        return Err(Error::InvalidArgument(format!(
            "{} bands cannot hold {n} endmembers",
            z.nrows()
        )));
    }
    if !(cfg.eta > 0.0) || !(cfg.radius >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eta must be positive and radius non-negative, got {} and {}",
            cfg.eta, cfg.radius
        )));
    }
    let model = affine_fit(z, n)?;
    let x = model.reduce(z);
    let l = x.ncols();
    let seeds = spa_purest(&lift_homogeneous(&x), n)?;
    let seed_pts = DMatrix::from_fn(n - 1, n, |r, c| x[(r, seeds[c])]);

    let neighborhoods: Vec<Vec<usize>> = seeds
        .iter()
        .map(|&s| {
            let centre = x.column(s);
            (0..l)
                .filter(|&p| p == s || (x.column(p) - centre).norm() <= cfg.radius)
                .collect()
        })
        .collect();

    let mut normals = Vec::with_capacity(n);
    let mut offsets = Vec::with_capacity(n);
    for i in 0..n {
        let mut seed_normal = hyperplane_normal(&columns_except(&seed_pts, i))?;
        let other = seed_pts.column(if i == 0 { 1 } else { 0 });
        if seed_normal.dot(&seed_pts.column(i)) > seed_normal.dot(&other) {
            seed_normal = -seed_normal;
        }
        // Within each neighborhood, the pixel farthest along the seed normal.
        let mut facet_pts = DMatrix::zeros(n - 1, n - 1);
        for (c, j) in (0..n).filter(|&j| j != i).enumerate() {
            let mut best = neighborhoods[j][0];
            let mut best_val = f64::NEG_INFINITY;
            for &p in &neighborhoods[j] {
                let v = seed_normal.dot(&x.column(p));
                if v > best_val || (v == best_val && p < best) {
                    best = p;
                    best_val = v;
                }
            }
            facet_pts.set_column(c, &x.column(best));
        }
        let mut b = hyperplane_normal(&facet_pts)?;
        if b.dot(&seed_normal) < 0.0 {
            b = -b;
        }
        let h = (b.transpose() * &x).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        normals.push(b);
        offsets.push(h / cfg.eta);
    }

    let mut vertices = DMatrix::zeros(n - 1, n);
    for i in 0..n {
        let idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let k = DMatrix::from_fn(n - 1, n - 1, |r, c| normals[idx[r]][c]);
        let sv = k.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 0.0) || smax / smin > MAX_CONDITION {
            return Err(Error::DegenerateGeometry(format!(
                "facets meeting at vertex {i} are near-parallel (condition {:.3e})",
                smax / smin
            )));
        }
        let rhs = DVector::from_iterator(n - 1, idx.iter().map(|&j| offsets[j]));
        let alpha = k.lu().solve(&rhs).ok_or_else(|| {
            Error::DegenerateGeometry(format!("singular intersection system at vertex {i}"))
        })?;
        vertices.set_column(i, &alpha);
    }

    let mut abundances = DMatrix::zeros(n, l);
    for i in 0..n {
        let b = &normals[i];
        let h = offsets[i];
        let denom = h - b.dot(&vertices.column(i));
        if !(denom.abs() > 0.0) {
            return Err(Error::DegenerateGeometry(format!("vertex {i} lies on its own facet")));
        }
        let proj = b.transpose() * &x;
        for p in 0..l {
            abundances[(i, p)] = (h - proj[p]) / denom;
        }
    }

    let endmembers = model.lift(&vertices);
    Ok(HyperCsiFit {
        model,
        seeds,
        hyperplanes: HyperplaneSet { normals, offsets },
        vertices,
        endmembers,
        abundances,
    })
}

/// Endmembers and abundances of a virtual hyperspectral cube. Both outputs
/// are projected onto the non-negative orthant.
pub fn hypercsi(
    zh: &ImageCube,
    n: usize,
    cfg: &HyperCsiConfig,
) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    let fit = hypercsi_fit(&zh.to_matrix(), n, cfg)?;
    let a = fit.endmembers.map(|v| v.max(0.0));
    let a = EndmemberMatrix::new(a).map_err(|e| {
        Error::DegenerateGeometry(format!("identified simplex leaves the non-negative orthant: {e}"))
    })?;
    let s = AbundanceMatrix::new(fit.abundances.map(|v| v.max(0.0)), zh.height(), zh.width())?;
    Ok((a, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_of_segment_in_plane() {
        let pts = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let b = hyperplane_normal(&pts).unwrap();
        assert!((b.dot(&DVector::from_vec(vec![1.0, 1.0]))).abs() < 1e-15);
        assert!((b.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_in_one_dimension_is_unit() {
        let b = hyperplane_normal(&DMatrix::from_element(1, 1, 3.0)).unwrap();
        assert_eq!(b[0].abs(), 1.0);
    }

    #[test]
    fn rejects_single_source() {
        let z = DMatrix::from_element(3, 4, 1.0);
        assert!(matches!(
            hypercsi_fit(&z, 1, &HyperCsiConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn two_sources_on_a_line_give_extremes() {
        // Pixels t * a1 + (1 - t) * a2 with t in [0.1, 0.8]: the identified
        // endmembers are the extreme pixels along the line.
        let a1 = DVector::from_vec(vec![1.0, 0.2, 0.5]);
        let a2 = DVector::from_vec(vec![0.1, 0.9, 0.4]);
        let ts = [0.3, 0.1, 0.8, 0.5, 0.65, 0.2];
        let z = DMatrix::from_fn(3, ts.len(), |r, c| ts[c] * a1[r] + (1.0 - ts[c]) * a2[r]);
        let fit = hypercsi_fit(&z, 2, &HyperCsiConfig::default()).unwrap();
        let mut ends: Vec<DVector<f64>> = fit.endmembers.column_iter().map(|c| c.into_owned()).collect();
        ends.sort_by(|p, q| q[0].total_cmp(&p[0]));
        let hi = z.column(2);
        let lo = z.column(1);
        assert!((&ends[0] - hi).norm() < 1e-12);
        assert!((&ends[1] - lo).norm() < 1e-12);
    }
}
