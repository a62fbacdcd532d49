use super::conv::{self, Planes};
use super::qubit::{self, RotationKind};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { pad: usize },
    ConvTranspose2d { crop: usize },
    LeakyRelu { slope: f64 },
    Relu,
    MaxPool2 { argmax: Vec<usize> },
    Upsample2,
    Add,
    Sub,
    Scale(f64),
    MatMul,
    Sum,
    SumSquares,
    TvSpatial,
    TvSpectral,
    Interleave,
    BandSum { gamma: usize },
    Gather { map: Vec<usize> },
    AngleEmbed,
    Rotation { kind: RotationKind, qubits: [usize; 2], angle: usize },
    Toffoli { closed: usize, open: usize, target: usize },
    ExpectZ,
    PairMax { argmax: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the root.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order of the (acyclic) graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn planes_of(layer: &'static str, t: &Tensor) -> Result<Planes> {
    match *t.shape() {
        [c, h, w] => Ok(Planes {
            channels: c,
            height: h,
            width: w,
        }),
        _ => Err(Error::Shape {
            layer,
            expected: "[channels, height, width]".into(),
            got: t.shape().to_vec(),
        }),
    }
}

fn shape_err(layer: &'static str, expected: String, got: &Tensor) -> Error {
    Error::Shape {
        layer,
        expected,
        got: got.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: vec![],
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: vec![],
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Stride-1 convolution. `w: [co, ci, k, k]`, `b: [co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let dims = planes_of("conv2d", self.value(x))?;
        let wt = self.value(w);
        let [co, ci, k, k2] = *wt.shape() else {
            return Err(shape_err("conv2d", "weights [co, ci, k, k]".into(), wt));
        };
        if ci != dims.channels || k != k2 {
            return Err(shape_err("conv2d", format!("weights [_, {}, k, k]", dims.channels), wt));
        }
        if dims.height + 2 * pad < k || dims.width + 2 * pad < k {
            return Err(shape_err(
                "conv2d",
                format!("spatial dims >= {} with padding {pad}", k),
                self.value(x),
            ));
        }
        if self.value(b).shape() != [co] {
            return Err(shape_err("conv2d", format!("bias [{co}]"), self.value(b)));
        }
        let (out, od) = conv::conv2d_forward(
            self.value(x).data(),
            dims,
            wt.data(),
            self.value(b).data(),
            co,
            k,
            pad,
        );
        let value = Tensor::new(vec![od.channels, od.height, od.width], out)?;
        Ok(self.push(value, Op::Conv2d { pad }, vec![x, w, b]))
    }

    /// Stride-1 transposed convolution. `w: [ci, co, k, k]`; the output grows
    /// by `k - 1 - 2 * crop` in each spatial dimension.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, crop: usize) -> Result<Var> {
        let dims = planes_of("conv_transpose2d", self.value(x))?;
        let wt = self.value(w);
        let [ci, co, k, k2] = *wt.shape() else {
            return Err(shape_err("conv_transpose2d", "weights [ci, co, k, k]".into(), wt));
        };
        if ci != dims.channels || k != k2 || 2 * crop >= k + dims.height.min(dims.width) - 1 {
            return Err(shape_err(
                "conv_transpose2d",
                format!("weights [{}, _, k, k] with crop < k", dims.channels),
                wt,
            ));
        }
        if self.value(b).shape() != [co] {
            return Err(shape_err("conv_transpose2d", format!("bias [{co}]"), self.value(b)));
        }
        let (out, od) = conv::tconv2d_forward(
            self.value(x).data(),
            dims,
            wt.data(),
            self.value(b).data(),
            co,
            k,
            crop,
        );
        let value = Tensor::new(vec![od.channels, od.height, od.width], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { crop }, vec![x, w, b]))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::LeakyRelu { slope }, vec![x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu, vec![x])
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let dims = planes_of("maxpool2", self.value(x))?;
        if dims.height < 2 || dims.width < 2 {
            return Err(shape_err("maxpool2", "spatial dims >= 2".into(), self.value(x)));
        }
        let (out, argmax, od) = conv::maxpool2_forward(self.value(x).data(), dims);
        let value = Tensor::new(vec![od.channels, od.height, od.width], out)?;
        Ok(self.push(value, Op::MaxPool2 { argmax }, vec![x]))
    }

    /// Bilinear 2x up-sampling with half-pixel centers.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let dims = planes_of("upsample2", self.value(x))?;
        let (out, od) = conv::upsample2_forward(self.value(x).data(), dims);
        let value = Tensor::new(vec![od.channels, od.height, od.width], out)?;
        Ok(self.push(value, Op::Upsample2, vec![x]))
    }

    fn same_shape(&self, layer: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(layer, format!("{:?}", self.value(a).shape()), self.value(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add, vec![a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub, vec![a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(factor), vec![x])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = *self.value(a).shape() else {
            return Err(shape_err("matmul", "[m, k]".into(), self.value(a)));
        };
        let [k2, n] = *self.value(b).shape() else {
            return Err(shape_err("matmul", format!("[{k}, n]"), self.value(b)));
        };
        if k != k2 {
            return Err(shape_err("matmul", format!("[{k}, n]"), self.value(b)));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ad[i * k + p];
                for j in 0..n {
                    out[i * n + j] += av * bd[p * n + j];
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul, vec![a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![x])
    }

    /// Squared Frobenius norm.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares, vec![x])
    }

    /// Anisotropic spatial total variation of a `[bands, h, w]` cube: sum of
    /// absolute horizontal and vertical forward differences, band by band.
    pub fn tv_spatial(&mut self, x: Var) -> Result<Var> {
        let dims = planes_of("tv_spatial", self.value(x))?;
        let s = tv_spatial_value(self.value(x).data(), dims);
        Ok(self.push(Tensor::scalar(s), Op::TvSpatial, vec![x]))
    }

    /// Spectral total variation: sum over pixels of absolute differences
    /// between adjacent bands.
    pub fn tv_spectral(&mut self, x: Var) -> Result<Var> {
        let dims = planes_of("tv_spectral", self.value(x))?;
        let s = tv_spectral_value(self.value(x).data(), dims);
        Ok(self.push(Tensor::scalar(s), Op::TvSpectral, vec![x]))
    }

    /// Band interleave: `a, b: [c, h, w] -> [2c, h, w]` as `(a0, b0, a1, b1, ...)`.
    pub fn interleave(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("interleave", a, b)?;
        let dims = planes_of("interleave", self.value(a))?;
        let plane = dims.height * dims.width;
        let mut out = Vec::with_capacity(2 * dims.len());
        for c in 0..dims.channels {
            out.extend_from_slice(&self.value(a).data()[c * plane..][..plane]);
            out.extend_from_slice(&self.value(b).data()[c * plane..][..plane]);
        }
        let value = Tensor::new(vec![2 * dims.channels, dims.height, dims.width], out)?;
        Ok(self.push(value, Op::Interleave, vec![a, b]))
    }

    /// Sums consecutive blocks of `gamma` bands: `[gamma p, h, w] -> [p, h, w]`.
    pub fn band_sum(&mut self, x: Var, gamma: usize) -> Result<Var> {
        let dims = planes_of("band_sum", self.value(x))?;
        if gamma == 0 || dims.channels % gamma != 0 {
            return Err(shape_err(
                "band_sum",
                format!("band count divisible by {gamma}"),
                self.value(x),
            ));
        }
        let plane = dims.height * dims.width;
        let p = dims.channels / gamma;
        let src = self.value(x).data();
        let mut out = vec![0.0; p * plane];
        for i in 0..p {
            for j in 0..gamma {
                let band = &src[(i * gamma + j) * plane..][..plane];
                for (o, v) in out[i * plane..][..plane].iter_mut().zip(band) {
                    *o += v;
                }
            }
        }
        let value = Tensor::new(vec![p, dims.height, dims.width], out)?;
        Ok(self.push(value, Op::BandSum { gamma }, vec![x]))
    }

    /// `out[i] = x[map[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, map: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let n = self.value(x).len();
        if let Some(&bad) = map.iter().find(|&&m| m >= n) {
            return Err(Error::InvalidArgument(format!(
                "gather index {bad} out of range for {n} values"
            )));
        }
        let data = map.iter().map(|&m| self.value(x).data()[m]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Gather { map }, vec![x]))
    }

    /// `[groups, 4]` features to `[groups, 2, 16]` product states.
    pub fn angle_embed(&mut self, features: Var) -> Result<Var> {
        let fv = self.value(features);
        let [groups, q] = *fv.shape() else {
            return Err(shape_err("angle_embed", "[groups, 4]".into(), fv));
        };
        if q != qubit::QUBITS {
            return Err(shape_err("angle_embed", "[groups, 4]".into(), fv));
        }
        let out = qubit::embed_forward(fv.data());
        let value = Tensor::new(vec![groups, 2, qubit::AMPLITUDES], out)?;
        Ok(self.push(value, Op::AngleEmbed, vec![features]))
    }

    fn check_state(&self, layer: &'static str, state: Var) -> Result<()> {
        match self.value(state).shape() {
            [_, 2, 16] => Ok(()),
            _ => Err(shape_err(layer, "[groups, 2, 16]".into(), self.value(state))),
        }
    }

    /// Applies a parameterized gate to every register, with its angle read
    /// from `angles[angle]`. `qubits[1]` is ignored for single-qubit kinds.
    pub fn rotation(
        &mut self,
        state: Var,
        angles: Var,
        angle: usize,
        kind: RotationKind,
        qubits: [usize; 2],
    ) -> Result<Var> {
        self.check_state("rotation", state)?;
        let two = kind == RotationKind::Xx;
        if qubits[0] >= qubit::QUBITS
            || (two && (qubits[1] >= qubit::QUBITS || qubits[0] == qubits[1]))
        {
            return Err(Error::InvalidArgument(format!("invalid qubit targets {qubits:?}")));
        }
        if angle >= self.value(angles).len() {
            return Err(Error::InvalidArgument(format!(
                "angle index {angle} out of range"
            )));
        }
        let theta = self.value(angles).data()[angle];
        let out = qubit::rotation_forward(kind, &qubits, theta, self.value(state).data());
        let value = Tensor::new(self.value(state).shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::Rotation {
                kind,
                qubits,
                angle,
            },
            vec![state, angles],
        ))
    }

    pub fn toffoli(&mut self, state: Var, closed: usize, open: usize, target: usize) -> Result<Var> {
        self.check_state("toffoli", state)?;
        let qs = [closed, open, target];
        if qs.iter().any(|&q| q >= qubit::QUBITS)
            || closed == open
            || closed == target
            || open == target
        {
            return Err(Error::InvalidArgument(format!("invalid Toffoli qubits {qs:?}")));
        }
        let out = qubit::toffoli_apply(closed, open, target, self.value(state).data());
        let value = Tensor::new(self.value(state).shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::Toffoli {
                closed,
                open,
                target,
            },
            vec![state],
        ))
    }

    /// `[groups, 2, 16] -> [groups, 4]` Pauli-Z expectations.
    pub fn expect_z(&mut self, state: Var) -> Result<Var> {
        self.check_state("expect_z", state)?;
        let groups = self.value(state).shape()[0];
        let out = qubit::expect_z_forward(self.value(state).data());
        let value = Tensor::new(vec![groups, qubit::QUBITS], out)?;
        Ok(self.push(value, Op::ExpectZ, vec![state]))
    }

    /// Max over adjacent column pairs: `[rows, 2k] -> [rows, k]`.
    pub fn pair_max(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [rows, cols] = *xv.shape() else {
            return Err(shape_err("pair_max", "[rows, even cols]".into(), xv));
        };
        if cols % 2 != 0 {
            return Err(shape_err("pair_max", "[rows, even cols]".into(), xv));
        }
        let mut out = Vec::with_capacity(rows * cols / 2);
        let mut argmax = Vec::with_capacity(rows * cols / 2);
        for (i, pair) in xv.data().chunks_exact(2).enumerate() {
            let pick = if pair[1] > pair[0] { 1 } else { 0 };
            out.push(pair[pick]);
            argmax.push(2 * i + pick);
        }
        let value = Tensor::new(vec![rows, cols / 2], out)?;
        Ok(self.push(value, Op::PairMax { argmax }, vec![x]))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                for (slot, contribution) in self.input_grads(node, &g) {
                    let input = node.inputs[slot];
                    if !self.nodes[input.0].requires_grad {
                        continue;
                    }
                    match &mut grads[input.0] {
                        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                        empty => *empty = Some(contribution),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d).expect("shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of one node: `(input slot, gradient)` pairs.
    fn input_grads(&self, node: &Node, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let input = |i: usize| &self.nodes[node.inputs[i].0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { pad } => {
                let dims = planes_of("conv2d", input(0)).expect("checked");
                let od = planes_of("conv2d", &node.value).expect("checked");
                let w = input(1);
                let (gx, gw, gb) = conv::conv2d_backward(
                    input(0).data(),
                    dims,
                    w.data(),
                    w.shape()[0],
                    w.shape()[2],
                    *pad,
                    g,
                    od,
                );
                vec![(0, gx), (1, gw), (2, gb)]
            }
            Op::ConvTranspose2d { crop } => {
                let dims = planes_of("conv_transpose2d", input(0)).expect("checked");
                let od = planes_of("conv_transpose2d", &node.value).expect("checked");
                let w = input(1);
                let (gx, gw, gb) = conv::tconv2d_backward(
                    input(0).data(),
                    dims,
                    w.data(),
                    w.shape()[1],
                    w.shape()[2],
                    *crop,
                    g,
                    od,
                );
                vec![(0, gx), (1, gw), (2, gb)]
            }
            Op::LeakyRelu { slope } => {
                let gx = input(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { slope * gv })
                    .collect();
                vec![(0, gx)]
            }
            Op::Relu => {
                let gx = input(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(0, gx)]
            }
            Op::MaxPool2 { argmax } => {
                let mut gx = vec![0.0; input(0).len()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    gx[a] += gv;
                }
                vec![(0, gx)]
            }
            Op::Upsample2 => {
                let dims = planes_of("upsample2", input(0)).expect("checked");
                vec![(0, conv::upsample2_backward(g, dims))]
            }
            Op::Add => vec![(0, g.to_vec()), (1, g.to_vec())],
            Op::Sub => vec![(0, g.to_vec()), (1, g.iter().map(|v| -v).collect())],
            Op::Scale(f) => vec![(0, g.iter().map(|v| v * f).collect())],
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        let av = a.data()[i * k + p];
                        for j in 0..n {
                            acc += g[i * n + j] * b.data()[p * n + j];
                            gb[p * n + j] += av * g[i * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                vec![(0, ga), (1, gb)]
            }
            Op::Sum => vec![(0, vec![g[0]; input(0).len()])],
            Op::SumSquares => vec![(0, input(0).data().iter().map(|v| 2.0 * v * g[0]).collect())],
            Op::TvSpatial => {
                let dims = planes_of("tv_spatial", input(0)).expect("checked");
                vec![(0, tv_spatial_grad(input(0).data(), dims, g[0]))]
            }
            Op::TvSpectral => {
                let dims = planes_of("tv_spectral", input(0)).expect("checked");
                vec![(0, tv_spectral_grad(input(0).data(), dims, g[0]))]
            }
            Op::Interleave => {
                let a = input(0);
                let plane = a.shape()[1] * a.shape()[2];
                let mut ga = Vec::with_capacity(a.len());
                let mut gb = Vec::with_capacity(a.len());
                for (c, chunk) in g.chunks_exact(plane).enumerate() {
                    if c % 2 == 0 {
                        ga.extend_from_slice(chunk);
                    } else {
                        gb.extend_from_slice(chunk);
                    }
                }
                vec![(0, ga), (1, gb)]
            }
            Op::BandSum { gamma } => {
                let x = input(0);
                let plane = x.shape()[1] * x.shape()[2];
                let mut gx = Vec::with_capacity(x.len());
                for c in 0..x.shape()[0] {
                    gx.extend_from_slice(&g[(c / gamma) * plane..][..plane]);
                }
                vec![(0, gx)]
            }
            Op::Gather { map } => {
                let mut gx = vec![0.0; input(0).len()];
                for (&m, &gv) in map.iter().zip(g) {
                    gx[m] += gv;
                }
                vec![(0, gx)]
            }
            Op::AngleEmbed => vec![(0, qubit::embed_backward(input(0).data(), g))],
            Op::Rotation {
                kind,
                qubits,
                angle,
            } => {
                let theta = input(1).data()[*angle];
                let (gs, ga) = qubit::rotation_backward(*kind, qubits, theta, input(0).data(), g);
                let mut gangles = vec![0.0; input(1).len()];
                gangles[*angle] = ga;
                vec![(0, gs), (1, gangles)]
            }
            Op::Toffoli {
                closed,
                open,
                target,
            } => vec![(0, qubit::toffoli_apply(*closed, *open, *target, g))],
            Op::ExpectZ => vec![(0, qubit::expect_z_backward(input(0).data(), g))],
            Op::PairMax { argmax } => {
                let mut gx = vec![0.0; input(0).len()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    gx[a] += gv;
                }
                vec![(0, gx)]
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn tv_spatial_value(x: &[f64], d: Planes) -> f64 {
    let mut s = 0.0;
    for c in 0..d.channels {
        let p = &x[c * d.height * d.width..][..d.height * d.width];
        for y in 0..d.height {
            for xx in 0..d.width {
                let v = p[y * d.width + xx];
                if xx + 1 < d.width {
                    s += (p[y * d.width + xx + 1] - v).abs();
                }
                if y + 1 < d.height {
                    s += (p[(y + 1) * d.width + xx] - v).abs();
                }
            }
        }
    }
    s
}

fn tv_spatial_grad(x: &[f64], d: Planes, g: f64) -> Vec<f64> {
    let mut gx = vec![0.0; x.len()];
    for c in 0..d.channels {
        let base = c * d.height * d.width;
        for y in 0..d.height {
            for xx in 0..d.width {
                let i = base + y * d.width + xx;
                if xx + 1 < d.width {
                    let sg = sign(x[i + 1] - x[i]) * g;
                    gx[i + 1] += sg;
                    gx[i] -= sg;
                }
                if y + 1 < d.height {
                    let j = i + d.width;
                    let sg = sign(x[j] - x[i]) * g;
                    gx[j] += sg;
                    gx[i] -= sg;
                }
            }
        }
    }
    gx
}

pub(crate) fn tv_spectral_value(x: &[f64], d: Planes) -> f64 {
    let plane = d.height * d.width;
    (0..d.channels.saturating_sub(1))
        .map(|c| {
            x[c * plane..][..plane]
                .iter()
                .zip(&x[(c + 1) * plane..][..plane])
                .map(|(a, b)| (b - a).abs())
                .sum::<f64>()
        })
        .sum()
}

fn tv_spectral_grad(x: &[f64], d: Planes, g: f64) -> Vec<f64> {
    let plane = d.height * d.width;
    let mut gx = vec![0.0; x.len()];
    for c in 0..d.channels.saturating_sub(1) {
        for i in 0..plane {
            let (a, b) = (c * plane + i, (c + 1) * plane + i);
            let sg = sign(x[b] - x[a]) * g;
            gx[b] += sg;
            gx[a] -= sg;
        }
    }
    gx
}
