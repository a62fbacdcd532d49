//! Loss of the prism subproblem and its Adam training loop.

use serde::{Deserialize, Serialize};

use super::network::{cube_tensor, record_forward, tensor_cube, PrismGraph};
use super::params::PrismParams;
use crate::error::{Error, Result};
use crate::mixmodel::ImageCube;
use crate::tensorops::{Adam, AdamConfig, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Weight of the total-variation terms.
    pub lambda: f64,
    /// Relative weight of spectral to spatial total variation.
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lambda: 0.1,
            alpha: 1e-4,
        }
    }
}

/// `total = cycle + anchor + lambda (tv_spatial + alpha tv_spectral)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrismLossTerms {
    /// `||Z_m - D f(Z_m)||^2`.
    pub cycle: f64,
    /// `||f(Z_m) - Z_h||^2`.
    pub anchor: f64,
    pub tv_spatial: f64,
    pub tv_spectral: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Anisotropic spatial total variation of a cube.
pub fn tv_spa(z: &ImageCube) -> f64 {
    let (h, w) = (z.height(), z.width());
    let mut acc = 0.0;
    for b in 0..z.bands() {
        let plane = z.band(b);
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                if x + 1 < w {
                    acc += (plane[y * w + x + 1] - v).abs();
                }
                if y + 1 < h {
                    acc += (plane[(y + 1) * w + x] - v).abs();
                }
            }
        }
    }
    acc
}

/// Spectral total variation: absolute differences of adjacent bands.
pub fn tv_spe(z: &ImageCube) -> f64 {
    (1..z.bands())
        .map(|b| z.band(b).iter().zip(z.band(b - 1)).map(|(u, v)| (u - v).abs()).sum::<f64>())
        .sum()
}

struct LossVars {
    total: Var,
    cycle: Var,
    anchor: Var,
    tv_spatial: Var,
    tv_spectral: Var,
}

fn record_loss(
    tape: &mut Tape,
    graph: &PrismGraph,
    anchor: &ImageCube,
    cfg: &TrainConfig,
) -> Result<LossVars> {
    let f = graph.output;
    let expected = tape.value(f).shape().to_vec();
    if [anchor.bands(), anchor.height(), anchor.width()] != expected[..] {
        return Err(Error::Shape {
            layer: "prism loss anchor",
            expected: format!("{expected:?}"),
            got: vec![anchor.bands(), anchor.height(), anchor.width()],
        });
    }
    let gamma = expected[0] / tape.value(graph.input).shape()[0];
    let anchor = tape.constant(cube_tensor(anchor));
    let down = tape.band_sum(f, gamma)?;
    let cycle_res = tape.sub(graph.input, down)?;
    let cycle = tape.sum_squares(cycle_res);
    let anchor_res = tape.sub(f, anchor)?;
    let anchor = tape.sum_squares(anchor_res);
    let tv_spatial = tape.tv_spatial(f)?;
    let tv_spectral = tape.tv_spectral(f)?;
    let fit = tape.add(cycle, anchor)?;
    let spe = tape.scale(tv_spectral, cfg.alpha);
    let tv = tape.add(tv_spatial, spe)?;
    let tv = tape.scale(tv, cfg.lambda);
    let total = tape.add(fit, tv)?;
    Ok(LossVars {
        total,
        cycle,
        anchor,
        tv_spatial,
        tv_spectral,
    })
}

fn terms(tape: &Tape, v: &LossVars, cfg: &TrainConfig) -> PrismLossTerms {
    PrismLossTerms {
        cycle: tape.value(v.cycle).item(),
        anchor: tape.value(v.anchor).item(),
        tv_spatial: tape.value(v.tv_spatial).item(),
        tv_spectral: tape.value(v.tv_spectral).item(),
        lambda: cfg.lambda,
        alpha: cfg.alpha,
        total: tape.value(v.total).item(),
    }
}

/// Loss of the current parameters, without gradients.
pub fn prism_loss(
    params: &PrismParams,
    zm: &ImageCube,
    anchor: &ImageCube,
    cfg: &TrainConfig,
) -> Result<PrismLossTerms> {
    let mut tape = Tape::new();
    let g = record_forward(&mut tape, params, zm)?;
    let v = record_loss(&mut tape, &g, anchor, cfg)?;
    Ok(terms(&tape, &v, cfg))
}

/// Loss and its gradient with respect to every parameter tensor.
pub fn prism_loss_gradient(
    params: &PrismParams,
    zm: &ImageCube,
    anchor: &ImageCube,
    cfg: &TrainConfig,
) -> Result<(PrismLossTerms, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let g = record_forward(&mut tape, params, zm)?;
    let v = record_loss(&mut tape, &g, anchor, cfg)?;
    let grads = tape.backward(v.total)?;
    let out = g
        .params
        .iter()
        .zip(params.tensors())
        .map(|(&var, t)| grads.get_or_zeros(var, t.shape()))
        .collect();
    Ok((terms(&tape, &v, cfg), out))
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Loss before every update, then once more at the final parameters.
    pub trace: Vec<PrismLossTerms>,
    /// Prism output at the final parameters.
    pub output: ImageCube,
}

/// Owns the parameters and optimizer state so training can resume across
/// calls with the moment estimates intact.
#[derive(Debug, Clone)]
pub struct PrismTrainer {
    params: PrismParams,
    adam: Adam,
    cfg: TrainConfig,
}

impl PrismTrainer {
    pub fn new(params: PrismParams, cfg: TrainConfig) -> Self {
        let shapes: Vec<&[usize]> = params.tensors().iter().map(Tensor::shape).collect();
        let adam = Adam::new(cfg.adam, &shapes);
        Self { params, adam, cfg }
    }

    pub fn params(&self) -> &PrismParams {
        &self.params
    }

    pub fn into_params(self) -> PrismParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Runs `epochs` full-batch Adam steps on the pair `(zm, anchor)`.
    pub fn train(&mut self, zm: &ImageCube, anchor: &ImageCube, epochs: usize) -> Result<TrainOutcome> {
        let mut trace = Vec::with_capacity(epochs + 1);
        for epoch in 0..=epochs {
            let mut tape = Tape::new();
            let g = record_forward(&mut tape, &self.params, zm)?;
            let v = record_loss(&mut tape, &g, anchor, &self.cfg)?;
            let t = terms(&tape, &v, &self.cfg);
            if !t.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: t.total,
                });
            }
            trace.push(t);
            if epoch == epochs {
                return Ok(TrainOutcome {
                    trace,
                    output: tensor_cube(tape.value(g.output))?,
                });
            }
            let grads = tape.backward(v.total)?;
            let grads: Vec<Tensor> = g
                .params
                .iter()
                .zip(self.params.tensors())
                .map(|(&var, t)| grads.get_or_zeros(var, t.shape()))
                .collect();
            let names: Vec<String> = self.params.names().to_vec();
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            let mut refs: Vec<&mut Tensor> = self.params.tensors_mut().iter_mut().collect();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            self.adam.step(&names, &mut refs, &grad_refs).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}")),
                other => other,
            })?;
        }
        unreachable!("the loop returns at the last epoch")
    }
}

/// Trains `params` in place with a fresh optimizer; returns the loss trace
/// (`epochs + 1` entries).
pub fn train_prism(
    params: &mut PrismParams,
    zm: &ImageCube,
    anchor: &ImageCube,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<Vec<PrismLossTerms>> {
    let mut trainer = PrismTrainer::new(params.clone(), *cfg);
    let outcome = trainer.train(zm, anchor, epochs)?;
    *params = trainer.into_params();
    Ok(outcome.trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_values() {
        let flat = ImageCube::new(2, 3, 3, vec![1.5; 18]).unwrap();
        assert_eq!(tv_spa(&flat), 0.0);
        assert_eq!(tv_spe(&flat), 0.0);
        // Vertical step edge of height 2 spanning 3 rows.
        let mut d = vec![0.0; 9];
        for y in 0..3 {
            d[y * 3 + 2] = 2.0;
        }
        let step = ImageCube::new(1, 3, 3, d).unwrap();
        assert_eq!(tv_spa(&step), 6.0);
        let mut d = vec![1.0; 8];
        d[4..].iter_mut().for_each(|v| *v = 4.0);
        let two = ImageCube::new(2, 2, 2, d).unwrap();
        assert_eq!(tv_spe(&two), 12.0);
    }
}
