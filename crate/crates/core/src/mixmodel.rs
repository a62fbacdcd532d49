//! Linear mixing data model: image cubes, endmember and abundance matrices,
//! and the block-sum spectral response.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Band-sequential `bands x height x width` radiance cube.
///
/// Cubes that enter the library from outside (files, the solver entry
/// point) are checked to be non-negative with [`ImageCube::ensure_nonnegative`].
/// Intermediate cubes, such as an unprojected light split, may carry
/// negative entries until they are projected.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCube {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageCube {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "cube dimensions must be positive, got {bands}x{height}x{width}"
            )));
        }
        if data.len() != bands * height * width {
            return Err(Error::Dimension {
                context: "ImageCube::new",
                detail: format!(
                    "{bands}x{height}x{width} needs {} values, got {}",
                    bands * height * width,
                    data.len()
                ),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cube value at flat index {i}")));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self {
            bands,
            height,
            width,
            data: vec![0.0; bands * height * width],
        }
    }

    /// Builds a cube from a `bands x pixels` matrix.
    pub fn from_matrix(m: &DMatrix<f64>, height: usize, width: usize) -> Result<Self> {
        if m.ncols() != height * width {
            return Err(Error::Dimension {
                context: "ImageCube::from_matrix",
                detail: format!("{} columns for a {height}x{width} image", m.ncols()),
            });
        }
        let mut data = Vec::with_capacity(m.len());
        for b in 0..m.nrows() {
            data.extend(m.row(b).iter());
        }
        Self::new(m.nrows(), height, width, data)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixel count `L = height * width`.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f64] {
        &self.data[b * self.pixels()..][..self.pixels()]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let l = self.pixels();
        &mut self.data[b * l..][..l]
    }

    pub fn pixel(&self, n: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.data[b * self.pixels() + n]).collect()
    }

    /// `bands x pixels` matrix view (copied).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.bands, self.pixels(), &self.data)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn ensure_nonnegative(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|&v| v < 0.0) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "{what} must be non-negative; found {} at flat index {i}",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    /// Projection onto the non-negative orthant.
    pub fn clamp_nonnegative(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self
    }
}

fn check_nonnegative_matrix(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some((i, v)) = m.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} entry {i} = {v}")));
    }
    if let Some(v) = m.iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!("{what} has a negative entry {v}")));
    }
    Ok(())
}

/// `bands x sources` matrix of per-material signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix(DMatrix<f64>);

impl EndmemberMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_nonnegative_matrix(&m, "endmember matrix")?;
        if let Some(j) = (0..m.ncols()).find(|&j| m.column(j).iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidArgument(format!("endmember column {j} is all zero")));
        }
        Ok(Self(m))
    }

    pub fn bands(&self) -> usize {
        self.0.nrows()
    }

    pub fn sources(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Same signatures in a new column order: column `k` of the result is
    /// column `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self(DMatrix::from_fn(self.bands(), order.len(), |i, k| self.0[(i, order[k])]))
    }
}

/// `sources x pixels` matrix of abundance maps, with the image shape the
/// pixels came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    data: DMatrix<f64>,
    height: usize,
    width: usize,
}

impl AbundanceMatrix {
    pub fn new(data: DMatrix<f64>, height: usize, width: usize) -> Result<Self> {
        if data.ncols() != height * width {
            return Err(Error::Dimension {
                context: "AbundanceMatrix::new",
                detail: format!("{} pixels for a {height}x{width} image", data.ncols()),
            });
        }
        check_nonnegative_matrix(&data, "abundance matrix")?;
        Ok(Self {
            data,
            height,
            width,
        })
    }

    pub fn sources(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Rows reordered: row `k` of the result is row `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            data: DMatrix::from_fn(order.len(), self.pixels(), |k, n| self.data[(order[k], n)]),
            height: self.height,
            width: self.width,
        }
    }

    /// Abundances as an `N`-band cube, one map per band.
    pub fn to_cube(&self) -> ImageCube {
        ImageCube::from_matrix(&self.data, self.height, self.width).expect("consistent shape")
    }

    pub fn from_cube(cube: &ImageCube) -> Result<Self> {
        Self::new(cube.to_matrix(), cube.height(), cube.width())
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }
}

/// `D = I_P (x) 1_gamma^T`: each multispectral band is the sum of `gamma`
/// consecutive virtual bands. Never materialized except by [`Self::dense`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralResponse {
    p: usize,
    gamma: usize,
}

impl SpectralResponse {
    pub fn new(p: usize, gamma: usize) -> Result<Self> {
        if p == 0 || gamma == 0 {
            return Err(Error::InvalidArgument(format!(
                "spectral response needs P >= 1 and gamma >= 1, got P={p}, gamma={gamma}"
            )));
        }
        Ok(Self { p, gamma })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    /// Virtual band count `M = gamma P`.
    pub fn m(&self) -> usize {
        self.p * self.gamma
    }

    /// Dense `P x M` matrix, for checks and small problems.
    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.p, self.m(), |i, j| if j / self.gamma == i { 1.0 } else { 0.0 })
    }

    /// `D X` for an `M x n` matrix.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.m() {
            return Err(Error::Dimension {
                context: "SpectralResponse::apply_matrix",
                detail: format!("expected {} rows, got {}", self.m(), x.nrows()),
            });
        }
        Ok(DMatrix::from_fn(self.p, x.ncols(), |i, n| {
            (0..self.gamma).map(|j| x[(i * self.gamma + j, n)]).sum()
        }))
    }

    /// `D^T Y` for a `P`-band cube: each band repeated `gamma` times.
    pub fn transpose_apply(&self, y: &ImageCube) -> Result<ImageCube> {
        if y.bands() != self.p {
            return Err(Error::Dimension {
                context: "SpectralResponse::transpose_apply",
                detail: format!("expected {} bands, got {}", self.p, y.bands()),
            });
        }
        let mut data = Vec::with_capacity(self.m() * y.pixels());
        for i in 0..self.p {
            for _ in 0..self.gamma {
                data.extend_from_slice(y.band(i));
            }
        }
        ImageCube::new(self.m(), y.height(), y.width(), data)
    }
}

/// `Z = A S` as a cube. Accumulation runs over sources in ascending order;
/// negative round-off smaller than `1e-12` is clamped to zero.
pub fn mix(a: &EndmemberMatrix, s: &AbundanceMatrix) -> Result<ImageCube> {
    if a.sources() != s.sources() {
        return Err(Error::Dimension {
            context: "mix",
            detail: format!("{} endmembers vs {} abundance rows", a.sources(), s.sources()),
        });
    }
    let (am, sm) = (a.matrix(), s.matrix());
    let l = s.pixels();
    let mut data = vec![0.0; a.bands() * l];
    for b in 0..a.bands() {
        let row = &mut data[b * l..][..l];
        for (n, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..a.sources() {
                acc += am[(b, k)] * sm[(k, n)];
            }
            *out = if acc < 0.0 && acc > -1e-12 { 0.0 } else { acc };
        }
    }
    ImageCube::new(a.bands(), s.height(), s.width(), data)
}

/// `Z_m = D Z_h` by block sums.
pub fn downsample_spectral(d: &SpectralResponse, zh: &ImageCube) -> Result<ImageCube> {
    if zh.bands() != d.m() {
        return Err(Error::Dimension {
            context: "downsample_spectral",
            detail: format!("expected {} bands, got {}", d.m(), zh.bands()),
        });
    }
    let l = zh.pixels();
    let mut data = vec![0.0; d.p() * l];
    for i in 0..d.p() {
        let out = &mut data[i * l..][..l];
        for j in 0..d.gamma() {
            for (o, v) in out.iter_mut().zip(zh.band(i * d.gamma() + j)) {
                *o += v;
            }
        }
    }
    ImageCube::new(d.p(), zh.height(), zh.width(), data)
}

/// `B = D A`.
pub fn downsample_endmembers(d: &SpectralResponse, a: &EndmemberMatrix) -> Result<EndmemberMatrix> {
    EndmemberMatrix::new(d.apply_matrix(a.matrix())?)
}
