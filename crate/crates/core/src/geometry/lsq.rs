use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mixmodel::{AbundanceMatrix, EndmemberMatrix, ImageCube};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// `B^+ Z` without clamping. Uses the normal equations of whichever side is
/// smaller, so the underdetermined case yields the minimum-norm solution.
pub fn least_squares_abundances(b: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, n) = b.shape();
    if z.nrows() != p {
        return Err(Error::Dimension {
            context: "least_squares_abundances",
            detail: format!("{p} endmember bands vs {} image bands", z.nrows()),
        });
    }
    let sv = b.clone().singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > RANK_TOLERANCE * smax).count();
    if smax <= 0.0 || rank < p.min(n) {
        return Err(Error::RankDeficient(format!(
            "endmember matrix {p}x{n} has rank {rank}"
        )));
    }
    let bt = b.transpose();
    if p >= n {
        let chol = (&bt * b)
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("B^T B is not positive definite".into()))?;
        Ok(chol.solve(&(&bt * z)))
    } else {
        let chol = (b * &bt)
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("B B^T is not positive definite".into()))?;
        Ok(&bt * chol.solve(z))
    }
}

/// Pseudo-inverse abundances, projected onto the non-negative orthant.
pub fn abundance_pinv(b: &EndmemberMatrix, zm: &ImageCube) -> Result<AbundanceMatrix> {
    let s = least_squares_abundances(b.matrix(), &zm.to_matrix())?;
    AbundanceMatrix::new(s.map(|v| v.max(0.0)), zm.height(), zm.width())
}

/// Lawson-Hanson active-set solve of `min ||B s - z|| s.t. s >= 0`, given the
/// Gram matrix `G = B^T B` and `c = B^T z`. Stops when no inactive
/// coordinate has a gradient component above `tol * max(1, max|c|)`.
pub fn nnls_pixel(gram: &DMatrix<f64>, c: &DVector<f64>, tol: f64) -> DVector<f64> {
    let n = c.len();
    let scale = c.amax().max(1.0);
    let threshold = tol * scale;
    let mut s = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let g = DMatrix::from_fn(idx.len(), idx.len(), |r, k| gram[(idx[r], idx[k])]);
        let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&j| c[j]));
        let sol = match g.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => g
                .pseudo_inverse(1e-14)
                .map(|pinv| pinv * &rhs)
                .unwrap_or_else(|_| DVector::zeros(idx.len())),
        };
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        full
    };

    for _ in 0..max_outer {
        let w = c - gram * &s;
        let next = (0..n)
            .filter(|&j| !passive[j] && w[j] > threshold)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
        let Some(j) = next else { break };
        passive[j] = true;
        loop {
            let z = solve_passive(&passive);
            let infeasible: Vec<usize> = (0..n).filter(|&k| passive[k] && z[k] <= 0.0).collect();
            if infeasible.is_empty() {
                s = z;
                break;
            }
            let alpha = infeasible
                .iter()
                .map(|&k| s[k] / (s[k] - z[k]))
                .fold(f64::INFINITY, f64::min);
            s += (z - &s) * alpha;
            let mut removed = false;
            for k in 0..n {
                if passive[k] && s[k] <= 1e-15 * scale {
                    passive[k] = false;
                    s[k] = 0.0;
                    removed = true;
                }
            }
            if !removed {
                // Round-off kept every coordinate positive; drop the binding one.
                let k = infeasible[0];
                passive[k] = false;
                s[k] = 0.0;
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    s
}

/// Per-pixel non-negative least squares against fixed endmembers.
pub fn nnls(b: &EndmemberMatrix, z: &ImageCube) -> Result<AbundanceMatrix> {
    if b.bands() != z.bands() {
        return Err(Error::Dimension {
            context: "nnls",
            detail: format!("{} endmember bands vs {} image bands", b.bands(), z.bands()),
        });
    }
    let bm = b.matrix();
    let gram = bm.transpose() * bm;
    let c = bm.transpose() * z.to_matrix();
    let mut s = DMatrix::zeros(b.sources(), z.pixels());
    for p in 0..z.pixels() {
        let col = nnls_pixel(&gram, &c.column(p).into_owned(), 1e-10);
        s.set_column(p, &col);
    }
    AbundanceMatrix::new(s, z.height(), z.width())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng, lo: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..1.0))
    }

    /// Minimizes over every support pattern: unconstrained least squares on
    /// the support, kept only if feasible.
    fn exhaustive_nnls(b: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
        let n = b.ncols();
        let mut best = (f64::INFINITY, DVector::zeros(n));
        for mask in 0u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
            let mut s = DVector::zeros(n);
            if !idx.is_empty() {
                let sub = DMatrix::from_fn(b.nrows(), idx.len(), |r, k| b[(r, idx[k])]);
                let sol = sub.svd(true, true).solve(z, 1e-14).unwrap();
                if sol.iter().any(|&v| v < 0.0) {
                    continue;
                }
                for (k, &j) in idx.iter().enumerate() {
                    s[j] = sol[k];
                }
            }
            let r = (b * &s - z).norm_squared();
            if r < best.0 {
                best = (r, s);
            }
        }
        best.1
    }

    #[test]
    fn nnls_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let b = random_matrix(5, 3, &mut rng, -1.0);
            let z = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let got = nnls_pixel(&(b.transpose() * &b), &(b.transpose() * &z), 1e-10);
            let want = exhaustive_nnls(&b, &z);
            assert!((got - want).amax() < 1e-9);
        }
    }

    #[test]
    fn nnls_recovers_exact_mixture_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = random_matrix(6, 3, &mut rng, 0.0);
        let s0 = DVector::from_vec(vec![0.2, 0.0, 0.7]);
        let z = &b * &s0;
        let got = nnls_pixel(&(b.transpose() * &b), &(b.transpose() * &z), 1e-10);
        assert!((got - s0).amax() < 1e-8);

        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let z = DVector::from_vec(vec![-1.0, -2.0, 5.0]);
        let got = nnls_pixel(&(b.transpose() * &b), &(b.transpose() * &z), 1e-10);
        assert_eq!(got, DVector::zeros(2));
    }

    #[test]
    fn least_squares_matches_svd_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for (p, n) in [(4, 6), (6, 4), (4, 4)] {
            let b = random_matrix(p, n, &mut rng, 0.0);
            let z = random_matrix(p, 7, &mut rng, 0.0);
            let got = least_squares_abundances(&b, &z).unwrap();
            let want = b.clone().pseudo_inverse(1e-14).unwrap() * &z;
            assert!((got - want).amax() < 1e-9, "{p}x{n}");
        }
    }

    #[test]
    fn exact_recovery_and_orthonormal_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let b = random_matrix(6, 3, &mut rng, 0.0);
        let s0 = random_matrix(3, 5, &mut rng, 0.0);
        let got = least_squares_abundances(&b, &(&b * &s0)).unwrap();
        assert!((got - &s0).amax() < 1e-10);

        let q = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let z = random_matrix(3, 4, &mut rng, 0.0);
        let got = least_squares_abundances(&q, &z).unwrap();
        assert!((got - q.transpose() * &z).amax() < 1e-15);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let z = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(least_squares_abundances(&b, &z), Err(Error::RankDeficient(_))));
    }
}
