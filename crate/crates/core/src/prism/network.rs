//! Forward pass: compression convolutions, the circuit on grouped features,
//! transposed-convolution decoding and spectrum shaping.

use super::circuit::{quantum_fe, AngleVars};
use super::layout::PrismLayout;
use super::params::{PrismParams, CHANNELS, DC_CONVS, DECODER_TCONVS, FE_CHANNELS};
use crate::error::{Error, Result};
use crate::mixmodel::ImageCube;
use crate::tensorops::{Tape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Layers (0-based) followed by 2x2 max pooling / 2x up-sampling.
const POOL_AFTER: [usize; 2] = [2, 5];
const UPSAMPLE_AFTER: [usize; 2] = [2, 5];
const FE_OFFSET: usize = 2 * DC_CONVS;
const DECODER_OFFSET: usize = FE_OFFSET + 4;

/// Variables of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct PrismGraph {
    /// Parameter leaves, in [`PrismParams`] order.
    pub params: Vec<Var>,
    pub input: Var,
    /// `[8, h', w']` compressed features.
    pub compressed: Var,
    /// `[2 h' w', 2]` circuit readout.
    pub readout: Var,
    /// Decoder output at input resolution.
    pub decoded: Var,
    /// Virtual cube before the non-negative projection.
    pub pre_clamp: Var,
    pub output: Var,
    pub layout: PrismLayout,
}

pub(crate) fn cube_tensor(cube: &ImageCube) -> Tensor {
    Tensor::new(
        vec![cube.bands(), cube.height(), cube.width()],
        cube.data().to_vec(),
    )
    .expect("cube shape is valid")
}

pub(crate) fn tensor_cube(t: &Tensor) -> Result<ImageCube> {
    match *t.shape() {
        [b, h, w] => ImageCube::new(b, h, w, t.data().to_vec()),
        _ => Err(Error::Shape {
            layer: "prism output",
            expected: "[bands, height, width]".into(),
            got: t.shape().to_vec(),
        }),
    }
}

/// Gather map splitting `[8, h, w]` into `2 h w` groups of 4 channels:
/// group `k * hw + loc` holds channels `4k .. 4k+3` at pixel `loc`.
fn grouping_map(hw: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(CHANNELS * hw);
    for k in 0..2 {
        for loc in 0..hw {
            for q in 0..4 {
                map.push((4 * k + q) * hw + loc);
            }
        }
    }
    map
}

/// Inverse arrangement of the `[2 h w, 2]` readout as `[4, h, w]`: channel
/// `2k + j` holds readout `j` of group `k * hw + loc`.
fn ungrouping_map(hw: usize) -> Vec<usize> {
    let mut map = Vec::with_capacity(FE_CHANNELS * hw);
    for k in 0..2 {
        for j in 0..2 {
            for loc in 0..hw {
                map.push((k * hw + loc) * 2 + j);
            }
        }
    }
    map
}

/// Records the prism on `tape` for the observed cube `zm`.
pub fn record_forward(tape: &mut Tape, params: &PrismParams, zm: &ImageCube) -> Result<PrismGraph> {
    if zm.bands() != params.bands() {
        return Err(Error::Shape {
            layer: "prism input",
            expected: format!("[{}, h, w]", params.bands()),
            got: vec![zm.bands(), zm.height(), zm.width()],
        });
    }
    let layout = PrismLayout::resolve(params.layout(), zm.height(), zm.width())?;
    let vars: Vec<Var> = params.tensors().iter().map(|t| tape.param(t.clone())).collect();
    let input = tape.constant(cube_tensor(zm));

    let mut x = input;
    for i in 0..DC_CONVS {
        x = tape.conv2d(x, vars[2 * i], vars[2 * i + 1], layout.conv_pads[i])?;
        x = tape.leaky_relu(x, LEAKY_SLOPE);
        if POOL_AFTER.contains(&i) {
            x = tape.maxpool2(x)?;
        }
    }
    let compressed = x;
    let (bh, bw) = match *tape.value(compressed).shape() {
        [_, h, w] => (h, w),
        _ => unreachable!("convolutions keep three axes"),
    };
    if (bh, bw) != layout.bottleneck {
        return Err(Error::Shape {
            layer: "compression",
            expected: format!("[8, {}, {}]", layout.bottleneck.0, layout.bottleneck.1),
            got: tape.value(compressed).shape().to_vec(),
        });
    }
    let hw = bh * bw;
    let features = tape.gather(compressed, grouping_map(hw), vec![2 * hw, 4])?;
    let angles = AngleVars {
        rho: vars[FE_OFFSET],
        omega: vars[FE_OFFSET + 1],
        theta: vars[FE_OFFSET + 2],
        phi: vars[FE_OFFSET + 3],
    };
    let readout = quantum_fe(tape, features, angles)?;
    let mut x = tape.gather(readout, ungrouping_map(hw), vec![FE_CHANNELS, bh, bw])?;

    for j in 0..DECODER_TCONVS {
        let (w, b) = (vars[DECODER_OFFSET + 2 * j], vars[DECODER_OFFSET + 2 * j + 1]);
        x = tape.conv_transpose2d(x, w, b, layout.tconv_crops[j])?;
        x = tape.leaky_relu(x, LEAKY_SLOPE);
        if UPSAMPLE_AFTER.contains(&j) {
            x = tape.upsample2(x)?;
        }
    }
    let decoded = x;
    if tape.value(decoded).shape() != [params.decoder_bands(), zm.height(), zm.width()] {
        return Err(Error::Shape {
            layer: "decoder",
            expected: format!("[{}, {}, {}]", params.decoder_bands(), zm.height(), zm.width()),
            got: tape.value(decoded).shape().to_vec(),
        });
    }

    let pre_clamp = if params.spectrum_shaping() {
        // Decoded channels are the even half-bands; odd ones complete each pair.
        let odd = tape.sub(input, decoded)?;
        tape.interleave(odd, decoded)?
    } else {
        decoded
    };
    let output = tape.relu(pre_clamp);
    Ok(PrismGraph {
        params: vars,
        input,
        compressed,
        readout,
        decoded,
        pre_clamp,
        output,
        layout,
    })
}

/// Evaluated forward pass.
#[derive(Debug, Clone)]
pub struct PrismOutput {
    pub output: ImageCube,
    pub pre_clamp: ImageCube,
    pub compressed_shape: Vec<usize>,
}

pub fn prism_forward(params: &PrismParams, zm: &ImageCube) -> Result<PrismOutput> {
    let mut tape = Tape::new();
    let g = record_forward(&mut tape, params, zm)?;
    Ok(PrismOutput {
        output: tensor_cube(tape.value(g.output))?,
        pre_clamp: tensor_cube(tape.value(g.pre_clamp))?,
        compressed_shape: tape.value(g.compressed).shape().to_vec(),
    })
}
