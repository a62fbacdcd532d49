use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::LayoutMode;
use crate::error::{Error, Result};
use crate::tensorops::Tensor;

pub const DC_CONVS: usize = 9;
pub const DECODER_TCONVS: usize = 8;
pub const CHANNELS: usize = 8;
pub const KERNEL: usize = 3;
/// Channels handed from the circuit readout to the decoder.
pub const FE_CHANNELS: usize = 4;

const MAGIC: &str = "PRIME-PRISM";

/// All trainable weights of the prism, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrismParams {
    bands: usize,
    spectrum_shaping: bool,
    layout: LayoutMode,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    magic: String,
    dtype: String,
    bands: usize,
    spectrum_shaping: bool,
    layout: LayoutMode,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

fn layer_shapes(bands: usize, out_bands: usize) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    for i in 0..DC_CONVS {
        let ci = if i == 0 { bands } else { CHANNELS };
        shapes.push((format!("dc.conv{}.weight", i + 1), vec![CHANNELS, ci, KERNEL, KERNEL]));
        shapes.push((format!("dc.conv{}.bias", i + 1), vec![CHANNELS]));
    }
    for family in ["rho", "omega", "theta", "phi"] {
        shapes.push((format!("fe.{family}"), vec![4]));
    }
    for i in 0..DECODER_TCONVS {
        let ci = if i == 0 { FE_CHANNELS } else { CHANNELS };
        let co = if i + 1 == DECODER_TCONVS { out_bands } else { CHANNELS };
        shapes.push((format!("iqc.tconv{}.weight", i + 1), vec![ci, co, KERNEL, KERNEL]));
        shapes.push((format!("iqc.tconv{}.bias", i + 1), vec![co]));
    }
    shapes
}

impl PrismParams {
    /// Fresh weights: kernels and biases uniform in `+-1/sqrt(fan_in)` with
    /// `fan_in = input channels * k * k`; circuit angles uniform in `(-pi, pi)`.
    pub fn init(bands: usize, spectrum_shaping: bool, layout: LayoutMode, seed: u64) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidArgument("prism needs at least one band".into()));
        }
        let out_bands = if spectrum_shaping { bands } else { 2 * bands };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut bound = 0.0;
        for (name, shape) in layer_shapes(bands, out_bands) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.starts_with("fe.") {
                (0..n)
                    .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                    .collect()
            } else {
                // Biases reuse the bound of the weight just before them.
                if name.ends_with(".weight") {
                    // Convolution kernels are [co, ci, k, k], transposed ones [ci, co, k, k].
                    let ci = if name.starts_with("iqc.") { shape[0] } else { shape[1] };
                    bound = 1.0 / ((ci * KERNEL * KERNEL) as f64).sqrt();
                }
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            bands,
            spectrum_shaping,
            layout,
            names,
            tensors,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Channels of the last decoder layer: `P` with spectrum shaping, `2P`
    /// without.
    pub fn decoder_bands(&self) -> usize {
        if self.spectrum_shaping {
            self.bands
        } else {
            2 * self.bands
        }
    }

    pub fn spectrum_shaping(&self) -> bool {
        self.spectrum_shaping
    }

    pub fn layout(&self) -> LayoutMode {
        self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Writes `<base>.json` (names and shapes) and `<base>.bin` (all values,
    /// little-endian f64, in manifest order).
    pub fn save(&self, base: &Path) -> Result<()> {
        let manifest = Manifest {
            magic: MAGIC.into(),
            dtype: "f64le".into(),
            bands: self.bands,
            spectrum_shaping: self.spectrum_shaping,
            layout: self.layout,
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| ManifestEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json_path = base.with_extension("json");
        let bin_path = base.with_extension("bin");
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        let mut bytes = Vec::with_capacity(self.count() * 8);
        for t in &self.tensors {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(base: &Path) -> Result<Self> {
        let json_path = base.with_extension("json");
        let bin_path = base.with_extension("bin");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.magic != MAGIC || manifest.dtype != "f64le" {
            return Err(Error::format(
                &json_path,
                format!("expected {MAGIC} f64le, got {} {}", manifest.magic, manifest.dtype),
            ));
        }
        let out_bands = if manifest.spectrum_shaping {
            manifest.bands
        } else {
            2 * manifest.bands
        };
        let expected = layer_shapes(manifest.bands, out_bands);
        let matches = expected.len() == manifest.tensors.len()
            && expected
                .iter()
                .zip(&manifest.tensors)
                .all(|((n, s), e)| *n == e.name && *s == e.shape);
        if !matches {
            return Err(Error::format(&json_path, "tensor list does not match the prism layout"));
        }
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if bytes.len() != total * 8 {
            return Err(Error::format(
                &bin_path,
                format!("expected {} bytes, found {}", total * 8, bytes.len()),
            ));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in expected {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::format(&bin_path, e.to_string()))?;
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            bands: manifest.bands,
            spectrum_shaping: manifest.spectrum_shaping,
            layout: manifest.layout,
            names,
            tensors,
        })
    }
}
