use nalgebra::DMatrix;

use super::nnls;
use crate::error::{Error, Result};
use crate::mixmodel::{AbundanceMatrix, EndmemberMatrix, ImageCube};

/// Added to both numerator and denominator of every multiplicative ratio.
const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct NmfOutput {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMatrix,
    /// `||Z - B S||_F^2` before the first and after every iteration.
    pub objective: Vec<f64>,
}

fn objective(z: &DMatrix<f64>, b: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    (z - b * s).norm_squared()
}

/// Lee-Seung multiplicative updates for `||Z - B S||_F^2`, abundances first.
///
/// The floor enters both sides of each ratio, so every factor moves between
/// its current value and the plain multiplicative update. That keeps exact
/// factorizations fixed and the objective non-increasing.
pub fn nmf_multiplicative(
    z: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    s0: &DMatrix<f64>,
    iters: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
    let (p, l) = z.shape();
    if b0.nrows() != p || s0.ncols() != l || b0.ncols() != s0.nrows() {
        return Err(Error::Dimension {
            context: "nmf_multiplicative",
            detail: format!(
                "Z {p}x{l}, B {}x{}, S {}x{}",
                b0.nrows(),
                b0.ncols(),
                s0.nrows(),
                s0.ncols()
            ),
        });
    }
    if z.iter().chain(b0.iter()).chain(s0.iter()).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "multiplicative updates need finite non-negative data and factors".into(),
        ));
    }
    let mut b = b0.clone();
    let mut s = s0.clone();
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(objective(z, &b, &s));
    for _ in 0..iters {
        let bt = b.transpose();
        let num = &bt * z;
        let den = &bt * (&b * &s);
        s.zip_zip_apply(&num, &den, |sv, nv, dv| *sv *= (nv + EPS) / (dv + EPS));

        let st = s.transpose();
        let num = z * &st;
        let den = (&b * &s) * &st;
        b.zip_zip_apply(&num, &den, |bv, nv, dv| *bv *= (nv + EPS) / (dv + EPS));
        trace.push(objective(z, &b, &s));
    }
    Ok((b, s, trace))
}

/// Multiplicative-update factorization warm-started at `init`, followed by
/// a non-negative least-squares refit of the abundances against the final
/// endmembers.
pub fn nmf_mu(
    z: &ImageCube,
    init: (&EndmemberMatrix, &AbundanceMatrix),
    iters: usize,
) -> Result<NmfOutput> {
    let zm = z.to_matrix();
    let (b, s, objective) = nmf_multiplicative(&zm, init.0.matrix(), init.1.matrix(), iters)?;
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("multiplicative update abundances".into()));
    }
    let endmembers = EndmemberMatrix::new(b)?;
    let abundances = nnls(&endmembers, z)?;
    Ok(NmfOutput {
        endmembers,
        abundances,
        objective,
    })
}
