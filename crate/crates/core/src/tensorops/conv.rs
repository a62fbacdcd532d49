//! Stride-1 convolution, transposed convolution, pooling and up-sampling
//! kernels on `[channels, height, width]` planes.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Planes {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn pad_planes(x: &[f64], dims: Planes, pad: usize) -> (Vec<f64>, usize, usize) {
    if pad == 0 {
        return (x.to_vec(), dims.height, dims.width);
    }
    let hp = dims.height + 2 * pad;
    let wp = dims.width + 2 * pad;
    let mut out = vec![0.0; dims.channels * hp * wp];
    for c in 0..dims.channels {
        for y in 0..dims.height {
            let src = &x[(c * dims.height + y) * dims.width..][..dims.width];
            let dst = &mut out[(c * hp + y + pad) * wp + pad..][..dims.width];
            dst.copy_from_slice(src);
        }
    }
    (out, hp, wp)
}

/// Correlation of `x` with `w: [co, ci, k, k]`, zero padding `pad`.
pub(crate) fn conv2d_forward(
    x: &[f64],
    dims: Planes,
    w: &[f64],
    b: &[f64],
    co: usize,
    k: usize,
    pad: usize,
) -> (Vec<f64>, Planes) {
    let (xp, hp, wp) = pad_planes(x, dims, pad);
    let ho = hp + 1 - k;
    let wo = wp + 1 - k;
    let ci = dims.channels;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        let plane = &mut out[o * ho * wo..][..ho * wo];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((o * ci + i) * k + ky) * k + kx];
                    for y in 0..ho {
                        let src = &xp[(i * hp + y + ky) * wp + kx..][..wo];
                        let dst = &mut plane[y * wo..][..wo];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    (
        out,
        Planes {
            channels: co,
            height: ho,
            width: wo,
        },
    )
}

/// Returns `(grad_x, grad_w, grad_b)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    dims: Planes,
    w: &[f64],
    co: usize,
    k: usize,
    pad: usize,
    g: &[f64],
    out_dims: Planes,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (xp, hp, wp) = pad_planes(x, dims, pad);
    let ci = dims.channels;
    let (ho, wo) = (out_dims.height, out_dims.width);
    let mut gxp = vec![0.0; ci * hp * wp];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; co];
    for o in 0..co {
        let gplane = &g[o * ho * wo..][..ho * wo];
        gb[o] = gplane.iter().sum();
        for i in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * ci + i) * k + ky) * k + kx;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for y in 0..ho {
                        let row = (i * hp + y + ky) * wp + kx;
                        let grow = &gplane[y * wo..][..wo];
                        let xs = &xp[row..][..wo];
                        let gxs = &mut gxp[row..][..wo];
                        for ((gx, xv), gv) in gxs.iter_mut().zip(xs).zip(grow) {
                            *gx += wv * gv;
                            acc += xv * gv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    let gx = if pad == 0 {
        gxp
    } else {
        let mut gx = vec![0.0; dims.len()];
        for c in 0..ci {
            for y in 0..dims.height {
                let src = &gxp[(c * hp + y + pad) * wp + pad..][..dims.width];
                gx[(c * dims.height + y) * dims.width..][..dims.width].copy_from_slice(src);
            }
        }
        gx
    };
    (gx, gw, gb)
}

/// Stride-1 transposed convolution with `w: [ci, co, k, k]`. The full output
/// grows by `k - 1`; `crop` pixels are then removed from every border.
pub(crate) fn tconv2d_forward(
    x: &[f64],
    dims: Planes,
    w: &[f64],
    b: &[f64],
    co: usize,
    k: usize,
    crop: usize,
) -> (Vec<f64>, Planes) {
    let ci = dims.channels;
    let (h, wd) = (dims.height, dims.width);
    let hf = h + k - 1;
    let wf = wd + k - 1;
    let mut full = vec![0.0; co * hf * wf];
    for i in 0..ci {
        for o in 0..co {
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((i * co + o) * k + ky) * k + kx];
                    for y in 0..h {
                        let src = &x[(i * h + y) * wd..][..wd];
                        let dst = &mut full[(o * hf + y + ky) * wf + kx..][..wd];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    let ho = hf - 2 * crop;
    let wo = wf - 2 * crop;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for y in 0..ho {
            let src = &full[(o * hf + y + crop) * wf + crop..][..wo];
            for (d, s) in out[(o * ho + y) * wo..][..wo].iter_mut().zip(src) {
                *d = s + b[o];
            }
        }
    }
    (
        out,
        Planes {
            channels: co,
            height: ho,
            width: wo,
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn tconv2d_backward(
    x: &[f64],
    dims: Planes,
    w: &[f64],
    co: usize,
    k: usize,
    crop: usize,
    g: &[f64],
    out_dims: Planes,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ci = dims.channels;
    let (h, wd) = (dims.height, dims.width);
    let hf = h + k - 1;
    let wf = wd + k - 1;
    let (ho, wo) = (out_dims.height, out_dims.width);
    let mut gfull = vec![0.0; co * hf * wf];
    let mut gb = vec![0.0; co];
    for o in 0..co {
        for y in 0..ho {
            let src = &g[(o * ho + y) * wo..][..wo];
            gb[o] += src.iter().sum::<f64>();
            gfull[(o * hf + y + crop) * wf + crop..][..wo].copy_from_slice(src);
        }
    }
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for i in 0..ci {
        for o in 0..co {
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((i * co + o) * k + ky) * k + kx;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for y in 0..h {
                        let xs = &x[(i * h + y) * wd..][..wd];
                        let gxs = &mut gx[(i * h + y) * wd..][..wd];
                        let gs = &gfull[(o * hf + y + ky) * wf + kx..][..wd];
                        for ((gxv, xv), gv) in gxs.iter_mut().zip(xs).zip(gs) {
                            *gxv += wv * gv;
                            acc += xv * gv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

/// 2x2 max pooling (floor on odd sizes). Returns the output and, per output
/// element, the flat index of the winning input; ties go to the first.
pub(crate) fn maxpool2_forward(x: &[f64], dims: Planes) -> (Vec<f64>, Vec<usize>, Planes) {
    let ho = dims.height / 2;
    let wo = dims.width / 2;
    let mut out = Vec::with_capacity(dims.channels * ho * wo);
    let mut arg = Vec::with_capacity(dims.channels * ho * wo);
    for c in 0..dims.channels {
        for y in 0..ho {
            for xo in 0..wo {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (c * dims.height + 2 * y + dy) * dims.width + 2 * xo + dx;
                        if best == usize::MAX || x[idx] > best_v {
                            best = idx;
                            best_v = x[idx];
                        }
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    (
        out,
        arg,
        Planes {
            channels: dims.channels,
            height: ho,
            width: wo,
        },
    )
}

/// Source taps for half-pixel bilinear interpolation at scale 2.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = if i0 + 1 < in_len { i0 + 1 } else { i0 };
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample2_forward(x: &[f64], dims: Planes) -> (Vec<f64>, Planes) {
    let ho = dims.height * 2;
    let wo = dims.width * 2;
    let ty = bilinear_taps(ho, dims.height);
    let tx = bilinear_taps(wo, dims.width);
    let mut out = vec![0.0; dims.channels * ho * wo];
    for c in 0..dims.channels {
        let plane = &x[c * dims.height * dims.width..];
        for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (xo, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v00 = plane[y0 * dims.width + x0];
                let v01 = plane[y0 * dims.width + x1];
                let v10 = plane[y1 * dims.width + x0];
                let v11 = plane[y1 * dims.width + x1];
                out[(c * ho + y) * wo + xo] = (1.0 - ly) * ((1.0 - lx) * v00 + lx * v01)
                    + ly * ((1.0 - lx) * v10 + lx * v11);
            }
        }
    }
    (
        out,
        Planes {
            channels: dims.channels,
            height: ho,
            width: wo,
        },
    )
}

pub(crate) fn upsample2_backward(g: &[f64], dims: Planes) -> Vec<f64> {
    let ho = dims.height * 2;
    let wo = dims.width * 2;
    let ty = bilinear_taps(ho, dims.height);
    let tx = bilinear_taps(wo, dims.width);
    let mut gx = vec![0.0; dims.len()];
    for c in 0..dims.channels {
        let plane = &mut gx[c * dims.height * dims.width..][..dims.height * dims.width];
        for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (xo, &(x0, x1, lx)) in tx.iter().enumerate() {
                let gv = g[(c * ho + y) * wo + xo];
                plane[y0 * dims.width + x0] += gv * (1.0 - ly) * (1.0 - lx);
                plane[y0 * dims.width + x1] += gv * (1.0 - ly) * lx;
                plane[y1 * dims.width + x0] += gv * ly * (1.0 - lx);
                plane[y1 * dims.width + x1] += gv * ly * lx;
            }
        }
    }
    gx
}
