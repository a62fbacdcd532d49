use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mixmodel::{EndmemberMatrix, ImageCube};

/// Vertex component analysis in the ambient band space (no dimension
/// reduction). Each step draws a Gaussian direction, removes its component
/// in the span of the endmembers picked so far, and takes the pixel with the
/// largest absolute projection. Returns the picked pixels as columns and
/// their indices.
///
/// Once the picks span the whole band space the deflated direction vanishes;
/// from then on the raw random direction is used and already-picked pixels
/// are skipped.
pub fn vca(z: &ImageCube, n: usize, seed: u64) -> Result<(EndmemberMatrix, Vec<usize>)> {
    let y = z.to_matrix();
    let (p, l) = y.shape();
    if n == 0 || n > l {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {n} endmembers from {l} pixels"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut picks: Vec<usize> = Vec::with_capacity(n);
    for _ in 0..n {
        let w = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let mut f = w.clone();
        for q in &basis {
            f -= q * q.dot(&f);
        }
        if f.norm() <= 1e-10 * w.norm() {
            f = w;
        }
        let proj = f.transpose() * &y;
        let mut best = None;
        let mut best_val = f64::NEG_INFINITY;
        for (j, v) in proj.iter().enumerate() {
            if !picks.contains(&j) && v.abs() > best_val {
                best = Some(j);
                best_val = v.abs();
            }
        }
        let j = best.expect("n <= pixel count leaves a candidate");
        picks.push(j);
        let mut u = y.column(j).into_owned();
        for q in &basis {
            u -= q * q.dot(&u);
        }
        let norm = u.norm();
        if norm > 1e-12 * y.column(j).norm() {
            basis.push(u / norm);
        }
    }
    let a = DMatrix::from_fn(p, n, |r, c| y[(r, picks[c])]);
    let a = EndmemberMatrix::new(a).map_err(|_| {
        Error::DegenerateGeometry("vertex search selected an all-zero pixel".into())
    })?;
    Ok((a, picks))
}
