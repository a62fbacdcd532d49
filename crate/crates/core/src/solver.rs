//! The alternating outer loop: prism training, the closed-form virtual-cube
//! update, and convex-geometry unmixing of the virtual cube.

use std::time::Instant;

use log::info;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{abundance_pinv, hypercsi, nmf_mu, simplex_volume, vca, HyperCsiConfig};
use crate::initsplit::{init_endmembers, light_split, perturb, SplitConfig};
use crate::mixmodel::{
    downsample_endmembers, downsample_spectral, AbundanceMatrix, EndmemberMatrix, ImageCube,
    SpectralResponse,
};
use crate::prism::{LayoutMode, PrismLossTerms, PrismParams, PrismTrainer, TrainConfig};
use crate::tensorops::AdamConfig;

// Offsets keeping the random streams of the different stages apart.
const PRISM_SEED: u64 = 0;
const NOISE_SEED: u64 = 1;
const UNIFORM_SEED: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default = "PrimeConfig::template", deny_unknown_fields)]
pub struct PrimeConfig {
    /// Number of sources. Has no default.
    pub n: usize,
    /// Virtual bands per observed band.
    pub gamma: usize,
    /// Energy fraction of the initial perturbation.
    pub p: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub outer: usize,
    pub epochs_first: usize,
    pub epochs_rest: usize,
    pub lr: f64,
    pub eta: f64,
    pub r: f64,
    pub seed: u64,
    /// Light-split initialization; uniform noise when off.
    pub hi: bool,
    /// Spectrum shaping in the prism.
    pub ss: bool,
    /// HyperCSI for the `(A, S)` step; multiplicative NMF when off.
    pub cg: bool,
    pub layout: LayoutMode,
    pub nmf_iters: usize,
    /// Stop once the relative change of the virtual cube falls below this.
    pub early_stop: Option<f64>,
}

impl PrimeConfig {
    fn template() -> Self {
        Self {
            n: 0,
            gamma: 2,
            p: 0.05,
            lambda: 0.1,
            alpha: 1e-4,
            outer: 10,
            epochs_first: 100,
            epochs_rest: 30,
            lr: 0.005,
            eta: 1.0,
            r: 1e-8,
            seed: 0,
            hi: true,
            ss: true,
            cg: true,
            layout: LayoutMode::Auto,
            nmf_iters: 1000,
            early_stop: None,
        }
    }

    /// Defaults for `n` sources.
    pub fn new(n: usize) -> Self {
        Self { n, ..Self::template() }
    }

    pub fn validate(&self, p_bands: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n == 0 {
            return bad("the number of sources n must be given and positive".into());
        }
        if self.gamma != 2 {
            return bad(format!(
                "the prism splits every band in two; gamma must be 2, got {}",
                self.gamma
            ));
        }
        if self.gamma * p_bands < self.n {
            return bad(format!(
                "{} virtual bands cannot hold {} sources",
                self.gamma * p_bands,
                self.n
            ));
        }
        if self.outer == 0 {
            return bad("at least one outer iteration is required".into());
        }
        if self.cg && self.n < 2 {
            return bad("convex-geometry unmixing needs at least 2 sources".into());
        }
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha), ("lr", self.lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        Ok(())
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            lambda: self.lambda,
            alpha: self.alpha,
        }
    }

    fn hypercsi_config(&self) -> HyperCsiConfig {
        HyperCsiConfig {
            eta: self.eta,
            radius: self.r,
        }
    }
}

/// Per-iteration monitoring values. Relative quantities are Frobenius-norm
/// ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub epochs: usize,
    /// Prism loss before the first and after the last epoch of this round.
    pub prism_loss_start: f64,
    pub prism_loss: PrismLossTerms,
    /// `||Z_h^{t+1} - Z_h^t|| / ||Z_h^t||`.
    pub zh_change: f64,
    /// `||D Z_h - Z_m|| / ||Z_m||`.
    pub observation_residual: f64,
    /// `||f(Z_m) - Z_h|| / ||Z_h||`.
    pub prism_residual: f64,
    /// `||Z_h - A S|| / ||Z_h||` after the unmixing step.
    pub unmixing_residual: f64,
    pub simplex_volume: f64,
    pub abundance_l1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PrimeResult {
    /// `B* = D A*`.
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMatrix,
    pub virtual_endmembers: EndmemberMatrix,
    pub virtual_cube: ImageCube,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// `(2 I + D^T D)^{-1} (A S + f + D^T Z_m)` without the projection, for
/// `M x L` matrices `as_` and `fzm` and the `P x L` observation `zm`.
///
/// `D^T D` is block diagonal with all-ones `gamma x gamma` blocks, and
/// `(2 I + 1 1^T)^{-1} = (I - 1 1^T / (2 + gamma)) / 2`.
pub fn zh_update_unprojected(
    d: &SpectralResponse,
    as_: &DMatrix<f64>,
    fzm: &DMatrix<f64>,
    zm: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (m, l) = as_.shape();
    if m != d.m() || fzm.shape() != (m, l) || zm.shape() != (d.p(), l) {
        return Err(Error::Dimension {
            context: "zh_update",
            detail: format!(
                "A S {m}x{l}, f(Z_m) {}x{}, Z_m {}x{} for P={} gamma={}",
                fzm.nrows(),
                fzm.ncols(),
                zm.nrows(),
                zm.ncols(),
                d.p(),
                d.gamma()
            ),
        });
    }
    let g = d.gamma();
    let shrink = 1.0 / (2.0 + g as f64);
    let mut out = DMatrix::zeros(m, l);
    let mut r = vec![0.0; g];
    for n in 0..l {
        for i in 0..d.p() {
            for (j, rj) in r.iter_mut().enumerate() {
                let row = i * g + j;
                *rj = as_[(row, n)] + fzm[(row, n)] + zm[(i, n)];
            }
            let total: f64 = r.iter().sum();
            for (j, rj) in r.iter().enumerate() {
                out[(i * g + j, n)] = 0.5 * (rj - shrink * total);
            }
        }
    }
    Ok(out)
}

/// Closed-form minimizer of
/// `||Z_h - A S||^2 + ||f(Z_m) - Z_h||^2 + ||D Z_h - Z_m||^2`
/// projected onto the non-negative orthant.
pub fn zh_update(
    a: &EndmemberMatrix,
    s: &AbundanceMatrix,
    fzm: &ImageCube,
    zm: &ImageCube,
    d: &SpectralResponse,
) -> Result<ImageCube> {
    let as_ = a.matrix() * s.matrix();
    let raw = zh_update_unprojected(d, &as_, &fzm.to_matrix(), &zm.to_matrix())?;
    Ok(ImageCube::from_matrix(&raw, zm.height(), zm.width())?.clamp_nonnegative())
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

fn distance(a: &ImageCube, b: &ImageCube) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Initial virtual cube: perturbed light split, or uniform noise on
/// `[0, max Z_m]` when `cfg.hi` is off.
pub fn initial_virtual_cube(zm: &ImageCube, cfg: &PrimeConfig) -> Result<ImageCube> {
    if cfg.hi {
        let split = light_split(zm)?;
        return perturb(
            &split,
            &SplitConfig {
                p: cfg.p,
                seed: cfg.seed.wrapping_add(NOISE_SEED),
            },
        );
    }
    let hi = zm.max_value();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(UNIFORM_SEED));
    let m = cfg.gamma * zm.bands();
    let data = (0..m * zm.pixels())
        .map(|_| if hi > 0.0 { rng.random_range(0.0..=hi) } else { 0.0 })
        .collect();
    ImageCube::new(m, zm.height(), zm.width(), data)
}

fn unmix_virtual(
    zh: &ImageCube,
    warm: (&EndmemberMatrix, &AbundanceMatrix),
    cfg: &PrimeConfig,
) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    if cfg.cg {
        hypercsi(zh, cfg.n, &cfg.hypercsi_config())
    } else {
        let out = nmf_mu(zh, warm, cfg.nmf_iters)?;
        Ok((out.endmembers, out.abundances))
    }
}

/// Runs the alternating scheme on an observed cube.
pub fn prime(zm: &ImageCube, cfg: &PrimeConfig) -> Result<PrimeResult> {
    prime_observed(zm, cfg, |_, _, _| {})
}

/// [`prime`], calling `observe(t, A, S)` with the initial estimate (`t = 0`)
/// and after every outer iteration `t = 1, 2, ...`.
pub fn prime_observed(
    zm: &ImageCube,
    cfg: &PrimeConfig,
    mut observe: impl FnMut(usize, &EndmemberMatrix, &AbundanceMatrix),
) -> Result<PrimeResult> {
    cfg.validate(zm.bands())?;
    zm.ensure_nonnegative("observed cube")?;
    let d = SpectralResponse::new(zm.bands(), cfg.gamma)?;
    let zm_norm = zm.frobenius_sq().sqrt();

    let mut zh = initial_virtual_cube(zm, cfg)?;
    let (mut a, mut s) = init_endmembers(&zh, cfg.n)?;
    observe(0, &a, &s);
    let params = PrismParams::init(
        zm.bands(),
        cfg.ss,
        cfg.layout,
        cfg.seed.wrapping_add(PRISM_SEED),
    )?;
    let mut trainer = PrismTrainer::new(params, cfg.train_config());
    let mut diagnostics = Vec::with_capacity(cfg.outer);

    for t in 0..cfg.outer {
        let clock = Instant::now();
        let epochs = if t == 0 { cfg.epochs_first } else { cfg.epochs_rest };
        let step = (|| -> Result<_> {
            let trained = trainer.train(zm, &zh, epochs)?;
            let fzm = trained.output;
            let next = zh_update(&a, &s, &fzm, zm, &d)?;
            let (a_next, s_next) = unmix_virtual(&next, (&a, &s), cfg)?;
            Ok((trained.trace, fzm, next, a_next, s_next))
        })()
        .map_err(|e| e.at_iteration(t))?;
        let (trace, fzm, next, a_next, s_next) = step;

        let zh_norm = next.frobenius_sq().sqrt();
        let fit = ImageCube::from_matrix(&(a_next.matrix() * s_next.matrix()), zm.height(), zm.width())
            .map_err(|e| e.at_iteration(t))?;
        let observed = downsample_spectral(&d, &next).map_err(|e| e.at_iteration(t))?;
        let diag = IterationDiagnostics {
            iteration: t,
            epochs,
            prism_loss_start: trace[0].total,
            prism_loss: *trace.last().expect("trace holds epochs + 1 entries"),
            zh_change: relative(distance(&next, &zh), zh.frobenius_sq().sqrt()),
            observation_residual: relative(distance(&observed, zm), zm_norm),
            prism_residual: relative(distance(&fzm, &next), zh_norm),
            unmixing_residual: relative(distance(&fit, &next), zh_norm),
            simplex_volume: simplex_volume(a_next.matrix()),
            abundance_l1: s_next.l1_norm(),
            seconds: clock.elapsed().as_secs_f64(),
        };
        info!(
            "iteration {t}: prism loss {:.4e} -> {:.4e}, Z_h change {:.3e}, unmixing residual {:.3e}",
            diag.prism_loss_start, diag.prism_loss.total, diag.zh_change, diag.unmixing_residual
        );
        let change = diag.zh_change;
        diagnostics.push(diag);
        zh = next;
        a = a_next;
        s = s_next;
        observe(t + 1, &a, &s);
        if cfg.early_stop.is_some_and(|tol| change < tol) {
            info!("stopping after iteration {t}: Z_h change {change:.3e} below threshold");
            break;
        }
    }

    Ok(PrimeResult {
        endmembers: downsample_endmembers(&d, &a)?,
        abundances: s,
        virtual_endmembers: a,
        virtual_cube: zh,
        diagnostics,
    })
}

/// Baseline: VCA endmembers in the observed space, abundances by
/// pseudo-inverse, clamped at zero.
pub fn vca_baseline(
    zm: &ImageCube,
    n: usize,
    seed: u64,
) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    let (b, _) = vca(zm, n, seed)?;
    let s = abundance_pinv(&b, zm)?;
    Ok((b, s))
}

/// Baseline: multiplicative NMF on the observed cube, warm-started from the
/// same initializer the alternating scheme uses (endmembers of the perturbed
/// light split, summed back to the observed bands), then an NNLS refit.
pub fn nmf_baseline(zm: &ImageCube, cfg: &PrimeConfig) -> Result<(EndmemberMatrix, AbundanceMatrix)> {
    cfg.validate(zm.bands())?;
    let d = SpectralResponse::new(zm.bands(), cfg.gamma)?;
    let zh = initial_virtual_cube(zm, &PrimeConfig { hi: true, ..cfg.clone() })?;
    let (a0, s0) = init_endmembers(&zh, cfg.n)?;
    let b0 = downsample_endmembers(&d, &a0)?;
    let out = nmf_mu(zm, (&b0, &s0), cfg.nmf_iters)?;
    Ok((out.endmembers, out.abundances))
}
