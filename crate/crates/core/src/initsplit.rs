//! Heuristic initialization: split each observed band into two virtual
//! bands, perturb the result, and take an initial simplex from it.

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{affine_fit, barycentric, lift_homogeneous, project_simplex, spa_purest};
use crate::mixmodel::{AbundanceMatrix, EndmemberMatrix, ImageCube};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Noise energy as a fraction of the split cube's energy.
    pub p: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { p: 0.05, seed: 0 }
    }
}

/// Splits every band `i` into `0.5 (z_i - t_i)` and `0.5 (z_i + t_i)` where
/// `t_i` is a quarter of the forward difference to the next band (backward
/// difference for the last band). Pairs sum back to the input exactly.
pub fn light_split(zm: &ImageCube) -> Result<ImageCube> {
    let p = zm.bands();
    if p < 2 {
        return Err(Error::InvalidArgument(
            "light splitting needs at least 2 bands to form band differences".into(),
        ));
    }
    let l = zm.pixels();
    let mut data = Vec::with_capacity(2 * p * l);
    for i in 0..p {
        let (lo, hi) = if i + 1 < p { (i, i + 1) } else { (p - 2, p - 1) };
        let (a, b, z) = (zm.band(lo), zm.band(hi), zm.band(i));
        let theta: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.25 * (y - x)).collect();
        data.extend(z.iter().zip(&theta).map(|(v, t)| 0.5 * (v - t)));
        data.extend(z.iter().zip(&theta).map(|(v, t)| 0.5 * (v + t)));
    }
    ImageCube::new(2 * p, zm.height(), zm.width(), data)
}

/// Adds seeded Gaussian noise carrying a fraction `p` of the cube's energy,
/// then clamps at zero. Returns the clamped cube.
pub fn perturb(cube: &ImageCube, cfg: &SplitConfig) -> Result<ImageCube> {
    Ok(perturb_unclamped(cube, cfg)?.clamp_nonnegative())
}

/// [`perturb`] without the final projection.
pub fn perturb_unclamped(cube: &ImageCube, cfg: &SplitConfig) -> Result<ImageCube> {
    if !(0.0..1.0).contains(&cfg.p) {
        return Err(Error::InvalidArgument(format!(
            "noise fraction must lie in [0, 1), got {}",
            cfg.p
        )));
    }
    let energy = cube.frobenius_sq();
    if cfg.p == 0.0 {
        return Ok(cube.clone());
    }
    if energy == 0.0 {
        warn!("perturbation skipped: the split cube is identically zero");
        return Ok(cube.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise: Vec<f64> = (0..cube.data().len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let noise_energy: f64 = noise.iter().map(|v| v * v).sum();
    let c = (cfg.p * energy / noise_energy).sqrt();
    let data = cube.data().iter().zip(&noise).map(|(z, n)| z + c * n).collect();
    ImageCube::new(cube.bands(), cube.height(), cube.width(), data)
}

/// Initial endmembers and abundances from a virtual hyperspectral cube:
/// purest pixels by successive projection in the affine hull, abundances as
/// barycentric coordinates projected onto the probability simplex.
pub fn init_endmembers(zh: &ImageCube, n: usize) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    if n == 0 {
        return Err(Error::InvalidArgument("model order must be at least 1".into()));
    }
    if n > zh.bands() {
        return Err(Error::InvalidArgument(format!(
            "{} bands cannot hold {n} endmembers",
            zh.bands()
        )));
    }
    let x = zh.to_matrix();
    if n == 1 {
        return init_single(zh, &x);
    }
    let model = affine_fit(&x, n)?;
    let reduced = model.reduce(&x);
    let picks = spa_purest(&lift_homogeneous(&reduced), n)?;
    let a = DMatrix::from_fn(x.nrows(), n, |r, c| x[(r, picks[c])]);
    let vertices = DMatrix::from_fn(n - 1, n, |r, c| reduced[(r, picks[c])]);
    let coords = barycentric(&vertices, &reduced)?;
    let mut s = DMatrix::zeros(n, x.ncols());
    for (j, col) in coords.column_iter().enumerate() {
        let proj = project_simplex(col.as_slice());
        for (i, v) in proj.into_iter().enumerate() {
            s[(i, j)] = v;
        }
    }
    let a = EndmemberMatrix::new(a).map_err(|_| {
        Error::DegenerateGeometry("a selected purest pixel is identically zero".into())
    })?;
    Ok((a, AbundanceMatrix::new(s, zh.height(), zh.width())?))
}

fn init_single(zh: &ImageCube, x: &DMatrix<f64>) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    let (best, _) = x
        .column_iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bj, bv), (j, c)| {
            let v = c.norm_squared();
            if v > bv {
                (j, v)
            } else {
                (bj, bv)
            }
        });
    let a = x.column(best).into_owned();
    let aa = a.norm_squared();
    if aa == 0.0 {
        return Err(Error::Conditioning("every pixel is zero".into()));
    }
    let s = DMatrix::from_fn(1, x.ncols(), |_, j| (a.dot(&x.column(j)) / aa).max(0.0));
    Ok((
        EndmemberMatrix::new(DMatrix::from_column_slice(a.len(), 1, a.as_slice()))?,
        AbundanceMatrix::new(s, zh.height(), zh.width())?,
    ))
}
