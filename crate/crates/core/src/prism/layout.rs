use serde::{Deserialize, Serialize};

use super::params::{DC_CONVS, DECODER_TCONVS};
use crate::error::{Error, Result};

/// How the convolution stack treats borders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutMode {
    /// `Valid` when that keeps a bottleneck of at least an eighth of the
    /// input side, `Same` otherwise.
    Auto,
    /// Only the first convolution is padded; every 3x3 layer shrinks or grows
    /// the image by 2 (256 -> 54 at the bottleneck).
    Valid,
    /// Every layer preserves spatial size; the bottleneck is a quarter of
    /// the input side.
    Same,
}

/// Resolved per-layer padding for one input size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrismLayout {
    pub mode: LayoutMode,
    pub conv_pads: [usize; DC_CONVS],
    pub tconv_crops: [usize; DECODER_TCONVS],
    pub input: (usize, usize),
    pub bottleneck: (usize, usize),
}

fn valid_bottleneck(side: usize) -> Option<usize> {
    // pad 1 then two shrinking layers, pool, three layers, pool, three layers.
    if !side.is_multiple_of(4) || side < 44 {
        return None;
    }
    Some((side - 4) / 4 - 9)
}

impl PrismLayout {
    pub fn resolve(mode: LayoutMode, height: usize, width: usize) -> Result<Self> {
        let valid = valid_bottleneck(height).zip(valid_bottleneck(width));
        let chosen = match mode {
            LayoutMode::Valid => LayoutMode::Valid,
            LayoutMode::Same => LayoutMode::Same,
            LayoutMode::Auto => match valid {
                Some((bh, bw)) if 8 * bh >= height && 8 * bw >= width => LayoutMode::Valid,
                _ => LayoutMode::Same,
            },
        };
        match chosen {
            LayoutMode::Valid => {
                let Some(bottleneck) = valid else {
                    return Err(Error::InvalidArgument(format!(
                        "unpadded prism layout needs sides >= 44 and divisible by 4, got {height}x{width}"
                    )));
                };
                let mut conv_pads = [0; DC_CONVS];
                conv_pads[0] = 1;
                Ok(Self {
                    mode: chosen,
                    conv_pads,
                    tconv_crops: [0; DECODER_TCONVS],
                    input: (height, width),
                    bottleneck,
                })
            }
            _ => {
                if height < 16 || width < 16 || !height.is_multiple_of(4) || !width.is_multiple_of(4) {
                    return Err(Error::InvalidArgument(format!(
                        "prism input sides must be >= 16 and divisible by 4, got {height}x{width}"
                    )));
                }
                Ok(Self {
                    mode: LayoutMode::Same,
                    conv_pads: [1; DC_CONVS],
                    tconv_crops: [1; DECODER_TCONVS],
                    input: (height, width),
                    bottleneck: (height / 4, width / 4),
                })
            }
        }
    }
}
