//! Runtime invariant checks, grouped into suites that can be run from the
//! command line.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{hypercsi, nmf_multiplicative, nnls_pixel, spa_purest};
use crate::initsplit::light_split;
use crate::mixmodel::{downsample_spectral, ImageCube, SpectralResponse};
use crate::prism::{
    prism_forward, prism_loss, prism_loss_gradient, quantum_fe, quantum_fe_reference, AngleVars,
    CircuitAngles, GateKind, GateUnitary, LayoutMode, PrismParams, TrainConfig,
};
use crate::protocol::{score, synth_reference, FieldConfig};
use crate::solver::zh_update_unprojected;
use crate::tensorops::gradcheck::{relative_error, tape_gradient_error};
use crate::tensorops::qubit::RotationKind;
use crate::tensorops::{Tape, Tensor, Var};

pub const SUITES: [&str; 5] = ["tensorops", "prism", "initsplit", "solver", "geometry"];

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    /// Measured quantity against its threshold, or the error message.
    pub detail: String,
    pub seconds: f64,
}

type Check = fn(&mut ChaCha8Rng) -> Result<(bool, String)>;

fn bound(value: f64, limit: f64) -> (bool, String) {
    (value < limit, format!("{value:.3e} < {limit:.0e}"))
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches count")
}

fn readout(t: &mut Tape, y: Var) -> Result<Var> {
    let sq = t.sum_squares(y);
    let s = t.sum(y);
    let s = t.scale(s, 0.7);
    t.add(sq, s)
}

fn op_gradients(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let x = random_tensor(&[2, 4, 6], rng);
    let y = random_tensor(&[2, 4, 6], rng);
    let w = random_tensor(&[3, 2, 3, 3], rng);
    let wt = random_tensor(&[2, 3, 3, 3], rng);
    let b = random_tensor(&[3], rng);
    let m = random_tensor(&[3, 5], rng);
    let n = random_tensor(&[5, 2], rng);
    let feats = random_tensor(&[3, 4], rng);
    let angles = random_tensor(&[4], rng);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut track = |e: f64| worst = worst.max(e);

    track(tape_gradient_error(&[x.clone(), w, b.clone()], h, |t, v| {
        let o = t.conv2d(v[0], v[1], v[2], 1)?;
        readout(t, o)
    })?);
    track(tape_gradient_error(&[x.clone(), wt, b], h, |t, v| {
        let o = t.conv_transpose2d(v[0], v[1], v[2], 1)?;
        readout(t, o)
    })?);
    track(tape_gradient_error(std::slice::from_ref(&x), h, |t, v| {
        let o = t.leaky_relu(v[0], 0.2);
        let o = t.relu(o);
        let o = t.scale(o, -1.5);
        readout(t, o)
    })?);
    track(tape_gradient_error(std::slice::from_ref(&x), h, |t, v| {
        let o = t.maxpool2(v[0])?;
        let o = t.upsample2(o)?;
        readout(t, o)
    })?);
    track(tape_gradient_error(&[x.clone(), y], h, |t, v| {
        let a = t.add(v[0], v[1])?;
        let s = t.sub(v[0], v[1])?;
        let o = t.interleave(a, s)?;
        let o = t.band_sum(o, 2)?;
        let o = t.gather(o, vec![5, 0, 0, 23, 7, 7, 7, 1], vec![2, 4])?;
        readout(t, o)
    })?);
    track(tape_gradient_error(&[x], h, |t, v| {
        let a = t.tv_spatial(v[0])?;
        let b = t.tv_spectral(v[0])?;
        t.add(a, b)
    })?);
    track(tape_gradient_error(&[m, n], h, |t, v| {
        let o = t.matmul(v[0], v[1])?;
        readout(t, o)
    })?);
    track(tape_gradient_error(&[feats, angles], h, |t, v| {
        let s = t.angle_embed(v[0])?;
        let s = t.rotation(s, v[1], 0, RotationKind::X, [0, 0])?;
        let s = t.rotation(s, v[1], 1, RotationKind::Y, [1, 0])?;
        let s = t.rotation(s, v[1], 2, RotationKind::Xx, [2, 3])?;
        let s = t.toffoli(s, 1, 2, 3)?;
        let z = t.expect_z(s)?;
        let o = t.pair_max(z)?;
        readout(t, o)
    })?);
    Ok(bound(worst, 1e-4))
}

fn random_angles(rng: &mut ChaCha8Rng) -> CircuitAngles {
    let mut four = || std::array::from_fn(|_| rng.random_range(-3.0..3.0));
    CircuitAngles {
        rho: four(),
        omega: four(),
        theta: four(),
        phi: four(),
    }
}

fn gate_unitarity(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let kinds = [
        (GateKind::Rx, vec![0]),
        (GateKind::Ry, vec![1]),
        (GateKind::Xx, vec![2, 3]),
        (GateKind::PauliZ, vec![0]),
        (GateKind::Not, vec![3]),
        (GateKind::Toffoli, vec![0, 1, 2]),
    ];
    let mut worst = 0.0f64;
    for (kind, targets) in kinds {
        for _ in 0..100 {
            let u = GateUnitary::new(kind, rng.random_range(-10.0..10.0), &targets)?.lifted();
            let err = (u.adjoint() * &u - DMatrix::identity(16, 16)).map(|c| c.norm()).max();
            worst = worst.max(err);
        }
    }
    Ok(bound(worst, 1e-12))
}

fn circuit_gradients(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let angles = random_angles(rng);
    let features: Vec<[f64; 4]> =
        (0..4).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
    let mut tape = Tape::new();
    let flat: Vec<f64> = features.iter().flatten().copied().collect();
    let x = tape.constant(Tensor::new(vec![features.len(), 4], flat)?);
    let fams = [angles.rho, angles.omega, angles.theta, angles.phi];
    let leaves: Vec<Var> =
        fams.iter().map(|a| tape.param(Tensor::new(vec![4], a.to_vec()).expect("4 angles"))).collect();
    let vars = AngleVars {
        rho: leaves[0],
        omega: leaves[1],
        theta: leaves[2],
        phi: leaves[3],
    };
    let out = quantum_fe(&mut tape, x, vars)?;
    let total = tape.sum(out);
    let grads = tape.backward(total)?;
    let eval = |a: &CircuitAngles| -> Result<f64> {
        Ok(quantum_fe_reference(&features, a)?.iter().flatten().sum())
    };
    let h = 1e-4;
    let mut worst = 0.0f64;
    for family in 0..4 {
        for k in 0..4 {
            let bump = |delta: f64| {
                let mut a = angles;
                let slot = match family {
                    0 => &mut a.rho,
                    1 => &mut a.omega,
                    2 => &mut a.theta,
                    _ => &mut a.phi,
                };
                slot[k] += delta;
                a
            };
            let numeric = (eval(&bump(h))? - eval(&bump(-h))?) / (2.0 * h);
            let analytic = grads.get_or_zeros(leaves[family], &[4]).data()[k];
            worst = worst.max(relative_error(analytic, numeric, 1e-3));
        }
    }
    Ok(bound(worst, 1e-4))
}

fn random_cube(bands: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<ImageCube> {
    ImageCube::new(bands, h, w, (0..bands * h * w).map(|_| rng.random_range(0.05..1.0)).collect())
}

fn loss_gradient(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let params = PrismParams::init(4, true, LayoutMode::Auto, rng.random())?;
    let zm = random_cube(4, 16, 16, rng)?;
    let anchor = random_cube(8, 16, 16, rng)?;
    let cfg = TrainConfig::default();
    let (_, grads) = prism_loss_gradient(&params, &zm, &anchor, &cfg)?;
    let scale = grads.iter().flat_map(|g| g.data().iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let t = rng.random_range(0..params.tensors().len());
        let off = rng.random_range(0..params.tensors()[t].len());
        let eval = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            p.tensors_mut()[t].data_mut()[off] += delta;
            Ok(prism_loss(&p, &zm, &anchor, &cfg)?.total)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max(relative_error(grads[t].data()[off], numeric, 1e-3 * scale));
    }
    Ok(bound(worst, 1e-3))
}

fn shaping_identity(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let params = PrismParams::init(4, true, LayoutMode::Auto, rng.random())?;
    let zm = random_cube(4, 16, 16, rng)?;
    let out = prism_forward(&params, &zm)?;
    let back = downsample_spectral(&SpectralResponse::new(4, 2)?, &out.pre_clamp)?;
    let err = back.data().iter().zip(zm.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(bound(err, 1e-12))
}

fn split_consistency(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let zm = random_cube(4, 12, 12, rng)?;
    let split = light_split(&zm)?;
    let back = downsample_spectral(&SpectralResponse::new(4, 2)?, &split)?;
    let err = back.data().iter().zip(zm.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sv = split.to_matrix().singular_values();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let ratio = sorted[4] / sorted[0];
    Ok((
        err < 1e-12 && ratio < 1e-9,
        format!("sum error {err:.3e} < 1e-12, rank ratio {ratio:.3e} < 1e-9"),
    ))
}

fn zh_optimality(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst_grad = 0.0f64;
    let mut worst_dense = 0.0f64;
    for _ in 0..20 {
        let p = rng.random_range(1..=8);
        let l = rng.random_range(1..=12);
        let d = SpectralResponse::new(p, 2)?;
        let mut rand = |r: usize| DMatrix::from_fn(r, l, |_, _| rng.random_range(-1.0..1.0));
        let (as_, f, zm) = (rand(2 * p), rand(2 * p), rand(p));
        let z = zh_update_unprojected(&d, &as_, &f, &zm)?;
        let dm = d.dense();
        let grad = 2.0 * (&z - &as_) + 2.0 * (&z - &f) + 2.0 * dm.transpose() * (&dm * &z - &zm);
        worst_grad = worst_grad.max(grad.norm());
        let lhs = 2.0 * DMatrix::<f64>::identity(2 * p, 2 * p) + dm.transpose() * &dm;
        let rhs = &as_ + &f + dm.transpose() * &zm;
        let dense = lhs.lu().solve(&rhs).expect("2I + D^T D is invertible");
        worst_dense = worst_dense.max((dense - z).amax());
    }
    Ok((
        worst_grad < 1e-8 && worst_dense < 1e-10,
        format!("gradient {worst_grad:.3e} < 1e-8, dense {worst_dense:.3e} < 1e-10"),
    ))
}

fn hypercsi_oracle(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst_sam = 0.0f64;
    let mut worst_rmse = 0.0f64;
    for n in [3, 6] {
        let r = synth_reference(rng.random(), 24, 24, 8, n, &FieldConfig::default())?;
        let (a, s) = hypercsi(&r.cube, n, &Default::default())?;
        let (_, sam, rmse) = score(&a, &s, &r.endmembers, &r.abundances)?;
        worst_sam = worst_sam.max(sam);
        worst_rmse = worst_rmse.max(rmse);
    }
    Ok((
        worst_sam < 1e-3 && worst_rmse < 1e-6,
        format!("SAM {worst_sam:.3e} < 1e-3 deg, RMSE {worst_rmse:.3e} < 1e-6"),
    ))
}

fn spa_planted(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let r = synth_reference(rng.random(), 16, 16, 8, 5, &FieldConfig::default())?;
    let mut got = spa_purest(&r.cube.to_matrix(), 5)?;
    let mut want = r.pure_pixels.clone();
    got.sort_unstable();
    want.sort_unstable();
    Ok((got == want, format!("picked {got:?}, planted {want:?}")))
}

/// Best feasible stationary point over all `2^n` passive sets.
fn nnls_exhaustive(b: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let n = b.ncols();
    let mut best = DVector::zeros(n);
    let mut best_obj = z.norm_squared();
    for mask in 1..(1usize << n) {
        let idx: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
        let sub = DMatrix::from_fn(b.nrows(), idx.len(), |r, k| b[(r, idx[k])]);
        let Some(sol) = (sub.transpose() * &sub).lu().solve(&(sub.transpose() * z)) else {
            continue;
        };
        if sol.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        let obj = (b * &full - z).norm_squared();
        if obj < best_obj {
            best_obj = obj;
            best = full;
        }
    }
    best
}

fn nnls_oracle(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let b = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let z = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let fast = nnls_pixel(&(b.transpose() * &b), &(b.transpose() * &z), 1e-10);
        worst = worst.max((fast - nnls_exhaustive(&b, &z)).amax());
    }
    Ok(bound(worst, 1e-8))
}

fn nmf_monotone(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let mut rand = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(0.0..1.0));
        let (z, b, s) = (rand(6, 40), rand(6, 3), rand(3, 40));
        let (_, _, trace) = nmf_multiplicative(&z, &b, &s, 200)?;
        for w in trace.windows(2) {
            worst = worst.max((w[1] - w[0]) / w[0].max(f64::MIN_POSITIVE));
        }
    }
    Ok((worst <= 1e-12, format!("largest relative increase {worst:.3e} <= 1e-12")))
}

fn checks() -> Vec<(&'static str, &'static str, Check)> {
    vec![
        ("tensorops", "operator gradients", op_gradients),
        ("prism", "gate unitarity", gate_unitarity),
        ("prism", "circuit angle gradients", circuit_gradients),
        ("prism", "loss gradient", loss_gradient),
        ("prism", "spectrum shaping identity", shaping_identity),
        ("initsplit", "light split consistency", split_consistency),
        ("solver", "virtual cube update optimality", zh_optimality),
        ("geometry", "hypercsi exact recovery", hypercsi_oracle),
        ("geometry", "successive projection", spa_planted),
        ("geometry", "nnls exhaustive oracle", nnls_oracle),
        ("geometry", "nmf monotonicity", nmf_monotone),
    ]
}

/// Runs every check whose suite name contains `filter`; each check gets its
/// own generator seeded from `seed` and its position.
pub fn run(filter: Option<&str>, seed: u64) -> Vec<CheckResult> {
    checks()
        .into_iter()
        .enumerate()
        .filter(|(_, (suite, _, _))| filter.is_none_or(|f| suite.contains(f)))
        .map(|(i, (suite, name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let clock = Instant::now();
            let (passed, detail) = match check(&mut rng) {
                Ok(v) => v,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                suite,
                name,
                passed,
                detail,
                seconds: clock.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_selects_suites() {
        let names: Vec<_> = checks().iter().map(|c| c.0).collect();
        assert!(SUITES.iter().all(|s| names.contains(s)));
        let r = run(Some("initsplit"), 0);
        assert_eq!(r.len(), 1);
        assert!(r[0].passed, "{}", r[0].detail);
        assert!(run(Some("nothing"), 0).is_empty());
    }
}
