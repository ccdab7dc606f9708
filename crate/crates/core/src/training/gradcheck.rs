use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::estimator::{default_lambda, init_params, CoarseNetParams, FineNetParams, Selector};
use crate::simgen::{gen_dataset, sample_seed, SupportLaw, SystemConfig};

use super::{backward_pass, coarse_forward_record, fine_forward_record, hcat};

/// Worst relative error between reverse-mode and central-difference gradients.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GradCheckReport {
    pub accepted: usize,
    /// Points discarded because a norm sat within the margin of a kink.
    pub rejected: usize,
    pub max_rel_err_weights: f64,
    pub max_rel_err_theta: f64,
    pub max_rel_err_omega: f64,
}

const MARGIN: f64 = 1e-3;
const STEP: f64 = 1e-5;

fn rel_err(a: f64, fd: f64, floor: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(floor)
}

fn central(f: &mut impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

fn check_config(seed: u64) -> SystemConfig {
    SystemConfig {
        m: 6,
        n: 2,
        t: 5,
        frames: 3,
        s_bar: 5,
        s_c: 2,
        snr_db: 20.0,
        layers_coarse: 2,
        layers_fine: 2,
        seed,
        support_law: SupportLaw::Standard,
        complex_pilot: false,
        normalize_pilot: false,
    }
}

fn perturb(weights: &mut [Array2<f64>], thetas: &mut [f64], rng: &mut ChaCha8Rng) {
    for w in weights.iter_mut() {
        let scale = w.iter().map(|x| x.abs()).sum::<f64>() / w.len() as f64;
        w.mapv_inplace(|x| x + 0.3 * scale * rng.sample::<f64, _>(StandardNormal));
    }
    for t in thetas.iter_mut() {
        *t *= rng.random_range(0.3..1.5);
    }
}

/// Which entries of a weight gradient to probe: the largest one per layer plus
/// two random ones.
fn probes(d: &[Array2<f64>], rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (l, g) in d.iter().enumerate() {
        let (mut best, mut arg) = (-1.0, (0, 0));
        for ((i, j), v) in g.indexed_iter() {
            if v.abs() > best {
                best = v.abs();
                arg = (i, j);
            }
        }
        out.push((l, arg.0, arg.1));
        for _ in 0..2 {
            out.push((l, rng.random_range(0..g.nrows()), rng.random_range(0..g.ncols())));
        }
    }
    out
}

/// Compares analytic gradients of the coarse and fine losses with central
/// differences at `points` random parameter settings of a small scenario.
pub fn gradient_check(points: usize, seed: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        accepted: 0,
        rejected: 0,
        max_rel_err_weights: 0.0,
        max_rel_err_theta: 0.0,
        max_rel_err_omega: 0.0,
    };
    let selectors = [Selector::None, Selector::Bss, Selector::Bfsj];
    let mut attempt = 0u64;
    while report.accepted < points && attempt < 50 * points as u64 + 50 {
        let point_seed = sample_seed(seed, attempt);
        let selector = selectors[attempt as usize % selectors.len()];
        attempt += 1;
        let cfg = check_config(point_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(point_seed);
        let ds = gen_dataset(&cfg, 3, point_seed)?;
        let phi = ds.phi_lifted.view();
        let lambda = default_lambda(phi, ds.samples.iter().map(|s| s.lifted_obs.mat.view()))?;
        let (mut coarse, mut fine) = init_params(&cfg, phi, lambda)?;
        coarse.selector = selector;
        fine.selector = selector;
        perturb(&mut coarse.weights, &mut coarse.thetas, &mut rng);
        perturb(&mut fine.weights, &mut fine.thetas, &mut rng);
        fine.omega = rng.random_range(0.2..0.8);

        let obs = hcat(&ds.samples.iter().map(|s| s.lifted_obs.mat.view()).collect::<Vec<_>>());
        let truth = hcat(&ds.samples.iter().map(|s| s.lifted_truth.mat.view()).collect::<Vec<_>>());
        let n = cfg.n;
        let frames = cfg.frames;
        let samples = ds.samples.len();
        let frame_cols = |a: &Array2<f64>, i: usize| -> Array2<f64> {
            let views: Vec<_> = (0..samples)
                .map(|b| a.slice(s![.., (b * frames + i) * n..(b * frames + i + 1) * n]))
                .collect();
            hcat(&views)
        };

        let coarse_loss = |p: &CoarseNetParams| -> Result<(f64, Array2<f64>, super::ComputationRecord)> {
            let (out, rec) = coarse_forward_record(p, phi, obs.view(), p.layers())?;
            let loss = (&out - &truth).mapv(|x| x * x).sum() / out.len() as f64;
            Ok((loss, out, rec))
        };
        let (_, c_out, c_rec) = coarse_loss(&coarse)?;
        let obs_frames: Vec<Array2<f64>> = (0..frames).map(|i| frame_cols(&obs, i)).collect();
        let truth_frames: Vec<Array2<f64>> = (0..frames).map(|i| frame_cols(&truth, i)).collect();
        let inits: Vec<Array2<f64>> = (0..frames).map(|i| frame_cols(&c_out, i)).collect();
        let entries = truth.len() as f64;
        let fine_loss = |p: &FineNetParams| -> Result<(f64, Vec<Array2<f64>>, super::ComputationRecord)> {
            let (outs, rec) = fine_forward_record(p, phi, &obs_frames, &inits, n, p.layers(), None)?;
            let loss = outs
                .iter()
                .zip(&truth_frames)
                .map(|(o, t)| (o - t).mapv(|x| x * x).sum())
                .sum::<f64>()
                / entries;
            Ok((loss, outs, rec))
        };
        let (_, f_outs, f_rec) = fine_loss(&fine)?;
        if c_rec.margin(selector) < MARGIN || f_rec.margin(selector) < MARGIN {
            report.rejected += 1;
            continue;
        }

        let c_grad = {
            let d = (&c_out - &truth).mapv(|x| 2.0 * x / entries);
            backward_pass(&c_rec, &coarse.weights, phi, &[d])?
        };
        let f_grad = {
            let d: Vec<Array2<f64>> = f_outs
                .iter()
                .zip(&truth_frames)
                .map(|(o, t)| (o - t).mapv(|x| 2.0 * x / entries))
                .collect();
            backward_pass(&f_rec, &fine.weights, phi, &d)?
        };

        let floor_of = |d: &[Array2<f64>]| {
            1e-3 * d.iter().flat_map(|g| g.iter()).fold(0.0f64, |a, x| a.max(x.abs())).max(1e-12)
        };
        let c_floor = floor_of(&c_grad.d_weights);
        for (l, i, j) in probes(&c_grad.d_weights, &mut rng) {
            let mut f = |x: f64| {
                let mut p = coarse.clone();
                p.weights[l][[i, j]] = x;
                coarse_loss(&p).map(|r| r.0)
            };
            let fd = central(&mut f, coarse.weights[l][[i, j]], STEP)?;
            report.max_rel_err_weights = report.max_rel_err_weights.max(rel_err(c_grad.d_weights[l][[i, j]], fd, c_floor));
        }
        for l in 0..coarse.layers() {
            let mut f = |x: f64| {
                let mut p = coarse.clone();
                p.thetas[l] = x;
                coarse_loss(&p).map(|r| r.0)
            };
            let fd = central(&mut f, coarse.thetas[l], STEP * coarse.thetas[l])?;
            report.max_rel_err_theta = report.max_rel_err_theta.max(rel_err(c_grad.d_thetas[l], fd, 1e-7));
        }

        let f_floor = floor_of(&f_grad.d_weights);
        for (l, i, j) in probes(&f_grad.d_weights, &mut rng) {
            let mut f = |x: f64| {
                let mut p = fine.clone();
                p.weights[l][[i, j]] = x;
                fine_loss(&p).map(|r| r.0)
            };
            let fd = central(&mut f, fine.weights[l][[i, j]], STEP)?;
            report.max_rel_err_weights = report.max_rel_err_weights.max(rel_err(f_grad.d_weights[l][[i, j]], fd, f_floor));
        }
        for l in 0..fine.layers() {
            let mut f = |x: f64| {
                let mut p = fine.clone();
                p.thetas[l] = x;
                fine_loss(&p).map(|r| r.0)
            };
            let fd = central(&mut f, fine.thetas[l], STEP * fine.thetas[l])?;
            report.max_rel_err_theta = report.max_rel_err_theta.max(rel_err(f_grad.d_thetas[l], fd, 1e-7));
        }
        let mut f = |x: f64| {
            let mut p = fine.clone();
            p.omega = x;
            fine_loss(&p).map(|r| r.0)
        };
        let fd = central(&mut f, fine.omega, STEP)?;
        let d_omega = f_grad.d_omega.unwrap_or(0.0);
        report.max_rel_err_omega = report.max_rel_err_omega.max(rel_err(d_omega, fd, 1e-7));
        report.accepted += 1;
    }
    Ok(report)
}
