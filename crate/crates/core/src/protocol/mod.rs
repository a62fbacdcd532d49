//! Ground-truth synthesis, the downsampling protocol, and scoring.

mod assign;
mod io;

pub use assign::min_cost_assignment;
pub use io::{
    cube_paths, read_cube, read_matrix_csv, write_cube, write_matrix_csv, write_pgm, SampleType,
};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixmodel::{
    downsample_endmembers, mix, AbundanceMatrix, EndmemberMatrix, ImageCube, SpectralResponse,
};

/// Abundance assigned to a source at its planted pure pixel.
pub const PURE: f64 = 1.0;

/// Shape of the synthetic abundance field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Box-blur radius in pixels, applied twice.
    pub blur_radius: usize,
    /// Exponent applied to the blurred maps before renormalizing; larger
    /// values give purer pixels.
    pub sharpness: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            blur_radius: 3,
            sharpness: 20.0,
        }
    }
}

/// Reference signatures, ground-truth abundances and the cube they mix to.
#[derive(Debug, Clone)]
pub struct Reference {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMatrix,
    pub cube: ImageCube,
    /// Pixel index of the pure pixel planted for each source.
    pub pure_pixels: Vec<usize>,
}

/// Smooth positive spectra: each column is a floor plus two or three
/// Gaussian bumps along the band axis.
fn bump_spectra(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, n);
    let span = m.max(2) as f64 - 1.0;
    for k in 0..n {
        let floor = rng.random_range(0.02..0.1);
        let bumps = rng.random_range(2..=3);
        let params: Vec<(f64, f64, f64)> = (0..bumps)
            .map(|_| {
                (
                    rng.random_range(-0.1 * span..1.1 * span),
                    rng.random_range(0.15 * span..0.5 * span).max(0.5),
                    rng.random_range(0.2..1.0),
                )
            })
            .collect();
        for b in 0..m {
            let x = b as f64;
            let bump: f64 = params
                .iter()
                .map(|&(c, w, h)| h * (-0.5 * ((x - c) / w).powi(2)).exp())
                .sum();
            a[(b, k)] = floor + bump;
        }
    }
    a
}

/// Running-sum box blur along rows then columns, clamped at the borders.
fn box_blur(plane: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let pass = |src: &[f64], n: usize, count: usize, at: &dyn Fn(usize, usize) -> usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            for i in 0..n {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(n - 1);
                let s: f64 = (lo..=hi).map(|j| src[at(line, j)]).sum();
                out[at(line, i)] = s / (hi - lo + 1) as f64;
            }
        }
        out
    };
    let rows = pass(plane, w, h, &|y, x| y * w + x);
    pass(&rows, h, w, &|x, y| y * w + x)
}

/// Per-pixel Dirichlet(1) draws, blurred spatially, sharpened and
/// renormalized, so every column sums to one.
fn dirichlet_field(
    n: usize,
    h: usize,
    w: usize,
    field: &FieldConfig,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let l = h * w;
    let mut s = DMatrix::zeros(n, l);
    for j in 0..l {
        let g: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        for (k, v) in g.into_iter().enumerate() {
            s[(k, j)] = v / total;
        }
    }
    let maps: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let row: Vec<f64> = s.row(k).iter().copied().collect();
            let once = box_blur(&row, h, w, field.blur_radius);
            box_blur(&once, h, w, field.blur_radius)
        })
        .collect();
    for j in 0..l {
        let v: Vec<f64> = maps.iter().map(|m| m[j].powf(field.sharpness)).collect();
        let total: f64 = v.iter().sum();
        for (k, x) in v.into_iter().enumerate() {
            s[(k, j)] = x / total;
        }
    }
    s
}

/// Synthetic reference scene: `m`-band smooth spectra for `n` sources, a
/// smooth abundance field with one pure pixel planted per source, and the
/// noiseless mixture.
pub fn synth_reference(
    seed: u64,
    h: usize,
    w: usize,
    m: usize,
    n: usize,
    field: &FieldConfig,
) -> Result<Reference> {
    if n == 0 || m < n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= N <= M, got M={m}, N={n}"
        )));
    }
    if h * w < n {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} image has too few pixels for {n} pure pixels"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = bump_spectra(m, n, &mut rng);
    let mut s = dirichlet_field(n, h, w, field, &mut rng);
    let mut pure = Vec::with_capacity(n);
    while pure.len() < n {
        let j = rng.random_range(0..h * w);
        if !pure.contains(&j) {
            pure.push(j);
        }
    }
    for (k, &j) in pure.iter().enumerate() {
        for i in 0..n {
            s[(i, j)] = if i == k { PURE } else { 0.0 };
        }
    }
    let endmembers = EndmemberMatrix::new(a)?;
    let abundances = AbundanceMatrix::new(s, h, w)?;
    let cube = mix(&endmembers, &abundances)?;
    Ok(Reference {
        endmembers,
        abundances,
        cube,
        pure_pixels: pure,
    })
}

/// Groups of reference bands summed into each observed band; 1-based
/// inclusive `(start, end)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandRangeSpec(pub Vec<(usize, usize)>);

impl BandRangeSpec {
    pub fn uniform(p: usize, gamma: usize) -> Self {
        Self((0..p).map(|i| (i * gamma + 1, (i + 1) * gamma)).collect())
    }

    pub fn validate(&self, bands: usize) -> Result<()> {
        let mut prev = 0;
        for &(s, e) in &self.0 {
            if s == 0 || e < s || s <= prev {
                return Err(Error::InvalidArgument(format!(
                    "band ranges must be 1-based, non-empty, ascending and disjoint: {:?}",
                    self.0
                )));
            }
            if e > bands {
                return Err(Error::InvalidArgument(format!(
                    "range ({s}, {e}) exceeds {bands} reference bands"
                )));
            }
            prev = e;
        }
        if self.0.is_empty() {
            return Err(Error::InvalidArgument("no band ranges given".into()));
        }
        Ok(())
    }

    /// Range sums of the rows of `a`.
    pub fn apply(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.validate(a.nrows())?;
        Ok(DMatrix::from_fn(self.0.len(), a.ncols(), |i, c| {
            let (s, e) = self.0[i];
            (s - 1..e).map(|r| a[(r, c)]).sum()
        }))
    }
}

/// Observed cube and ground truth under uniform downsampling by `gamma`.
pub fn lins_protocol(
    a_ref: &EndmemberMatrix,
    s_gt: &AbundanceMatrix,
    gamma: usize,
) -> Result<(ImageCube, EndmemberMatrix)> {
    if gamma == 0 || !a_ref.bands().is_multiple_of(gamma) {
        return Err(Error::InvalidArgument(format!(
            "{} reference bands are not divisible by gamma = {gamma}",
            a_ref.bands()
        )));
    }
    let d = SpectralResponse::new(a_ref.bands() / gamma, gamma)?;
    let b = downsample_endmembers(&d, a_ref)?;
    Ok((mix(&b, s_gt)?, b))
}

/// [`lins_protocol`] with arbitrary band ranges.
pub fn lins_protocol_ranges(
    a_ref: &EndmemberMatrix,
    s_gt: &AbundanceMatrix,
    ranges: &BandRangeSpec,
) -> Result<(ImageCube, EndmemberMatrix)> {
    let b = EndmemberMatrix::new(ranges.apply(a_ref.matrix())?)?;
    Ok((mix(&b, s_gt)?, b))
}

fn column_norms(m: &DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    m.column_iter()
        .enumerate()
        .map(|(k, c)| {
            let n = c.norm();
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::InvalidArgument(format!("{what} column {k} has norm {n}")))
            }
        })
        .collect()
}

/// Spectral angles in degrees between all column pairs, `[est, gt]`.
pub fn angle_matrix(est: &DMatrix<f64>, gt: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if est.shape() != gt.shape() {
        return Err(Error::Dimension {
            context: "spectral angle",
            detail: format!("{:?} vs {:?}", est.shape(), gt.shape()),
        });
    }
    let ne = column_norms(est, "estimated")?;
    let ng = column_norms(gt, "reference")?;
    // Half-angle form: exact for parallel columns, where arccos of the
    // cosine loses half the digits.
    Ok(DMatrix::from_fn(est.ncols(), gt.ncols(), |i, j| {
        let u = est.column(i) / ne[i];
        let v = gt.column(j) / ng[j];
        (2.0 * (&u - &v).norm().atan2((&u + &v).norm())).to_degrees()
    }))
}

/// Column order for `est` that minimizes the total spectral angle to `gt`:
/// column `k` of `est.permuted(&order)` pairs with column `k` of `gt`.
pub fn match_endmembers(est: &DMatrix<f64>, gt: &DMatrix<f64>) -> Result<Vec<usize>> {
    let cost = angle_matrix(est, gt)?;
    // Assignment rows are reference columns, so the result reads gt -> est.
    Ok(min_cost_assignment(&cost.transpose()))
}

/// Mean spectral angle in degrees between paired columns.
pub fn sam(est: &DMatrix<f64>, gt: &DMatrix<f64>) -> Result<f64> {
    let angles = angle_matrix(est, gt)?;
    let n = angles.nrows();
    Ok((0..n).map(|k| angles[(k, k)]).sum::<f64>() / n as f64)
}

/// `||S_est - S_gt||_F / sqrt(N L)`.
pub fn rmse(est: &DMatrix<f64>, gt: &DMatrix<f64>) -> Result<f64> {
    if est.shape() != gt.shape() {
        return Err(Error::Dimension {
            context: "rmse",
            detail: format!("{:?} vs {:?}", est.shape(), gt.shape()),
        });
    }
    Ok((est - gt).norm() / (est.len() as f64).sqrt())
}

/// Scores of one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub sam: f64,
    pub rmse: f64,
    pub seconds: f64,
}

/// Matches estimated endmembers to the ground truth, reorders abundance rows
/// the same way, and returns `(order, SAM, RMSE)`.
pub fn score(
    b_est: &EndmemberMatrix,
    s_est: &AbundanceMatrix,
    b_gt: &EndmemberMatrix,
    s_gt: &AbundanceMatrix,
) -> Result<(Vec<usize>, f64, f64)> {
    let order = match_endmembers(b_est.matrix(), b_gt.matrix())?;
    let b = b_est.permuted(&order);
    let s = s_est.permuted(&order);
    Ok((
        order,
        sam(b.matrix(), b_gt.matrix())?,
        rmse(s.matrix(), s_gt.matrix())?,
    ))
}
