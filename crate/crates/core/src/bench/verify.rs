use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{bcd_mmv_solve, coarse_forward, compute_s, init_params, BcdOptions, Selector};
use crate::linalg::{cmatmul, real_lift, CMatrix, LiftMode};
use crate::simgen::{gen_dataset, SupportLaw, SystemConfig};
use crate::threshold::{
    bss_threshold, select_support_fsj, soft_row_threshold, weighted_bss_threshold, RowMatrix, RowWeights,
    SupportSelection,
};
use crate::training::gradient_check;

use super::oracle::monte_carlo_union_rows;
use super::opcount::{analytic_op_count, instrumented_op_count, NetPart};

pub const SUITES: [&str; 6] = ["thresholds", "lifting", "bcd", "gradients", "union-size", "opcount"];

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail,
    }
}

pub fn run_suite(name: &str, seed: u64) -> Result<VerifyReport> {
    let checks = match name {
        "thresholds" => thresholds(seed)?,
        "lifting" => lifting(seed)?,
        "bcd" => bcd(seed)?,
        "gradients" => gradients(seed)?,
        "union-size" => union_size(seed)?,
        "opcount" => opcount()?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown suite {other:?}, expected one of {}",
                SUITES.join(", ")
            )))
        }
    };
    Ok(VerifyReport {
        suite: name.into(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
}

fn thresholds(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut soft_bad, mut weight_bad) = (0, 0);
    for _ in 0..1000 {
        let rows = rng.random_range(1..20);
        let cols = rng.random_range(1..5);
        let v = RowMatrix::new(random(&mut rng, rows, cols));
        let theta = rng.random_range(0.0..3.0);
        let bss = bss_threshold(&v, theta, &SupportSelection::empty())?;
        if bss != soft_row_threshold(&v, theta)? {
            soft_bad += 1;
        }
        let sel = SupportSelection {
            indices: (0..rows).filter(|_| rng.random_bool(0.3)).collect(),
            ..SupportSelection::empty()
        };
        let a = bss_threshold(&v, theta, &sel)?;
        let b = weighted_bss_threshold(&v, theta, &RowWeights::ones(rows), &sel)?;
        if a != b {
            weight_bad += 1;
        }
    }
    let norms = Array2::from_shape_vec((5, 1), vec![0.01, 0.02, 0.05, 1.0, 1.2]).expect("shape");
    let fsj = select_support_fsj(&RowMatrix::new(norms), 10)?;
    Ok(vec![
        check("bss_empty_equals_soft", soft_bad == 0, format!("{soft_bad} of 1000 differ")),
        check("weighted_ones_equals_bss", weight_bad == 0, format!("{weight_bad} of 1000 differ")),
        check("fsj_hand_case", fsj.indices == vec![3, 4], format!("selected {:?}", fsj.indices)),
    ])
}

fn crandom(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_shape_fn((rows, cols), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn lifting(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (t, m, n) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..6));
        let phi = crandom(&mut rng, t, m);
        let g = crandom(&mut rng, m, n);
        let lhs = real_lift(&phi, LiftMode::Block).mat.dot(&real_lift(&g, LiftMode::Stack).mat);
        let rhs = real_lift(&cmatmul(&phi, &g)?, LiftMode::Stack).mat;
        let err = (&lhs - &rhs).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        worst = worst.max(err);
    }
    Ok(vec![check("homomorphism", worst < 1e-12, format!("max abs error {worst:e}"))])
}

fn bcd(seed: u64) -> Result<Vec<CheckResult>> {
    let mut worst = 0.0f64;
    let mut ascents = 0;
    for k in 0..100u64 {
        let cfg = SystemConfig {
            m: 16,
            t: 10,
            frames: 2,
            s_bar: 5,
            s_c: 2,
            layers_coarse: 8,
            seed: seed.wrapping_add(k),
            ..SystemConfig::desk()
        };
        let ds = gen_dataset(&cfg, 1, seed ^ k)?;
        let phi = ds.phi_lifted.view();
        let obs = ds.samples[0].lifted_obs.mat.view();
        let lambda = 0.05;
        let (mut coarse, _) = init_params(&cfg, phi, lambda)?;
        coarse.selector = Selector::None;
        let net = coarse_forward(&coarse, phi, obs)?;
        let opts = BcdOptions {
            track_objective: true,
            ..BcdOptions::joint(cfg.concat_cols())
        };
        match bcd_mmv_solve(phi, obs, lambda, 8, opts) {
            Ok(out) => {
                let diff = (&net - &out.estimate).iter().fold(0.0f64, |a, x| a.max(x.abs()));
                worst = worst.max(diff);
            }
            Err(Error::Internal(_)) => ascents += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(vec![
        check("coarse_equals_bcd", worst < 1e-12, format!("max abs diff {worst:e}")),
        check("objective_monotone", ascents == 0, format!("{ascents} of 100 instances rose")),
    ])
}

fn gradients(seed: u64) -> Result<Vec<CheckResult>> {
    let r = gradient_check(100, seed)?;
    let detail = |x: f64| format!("max relative error {x:e} over {} points ({} rejected)", r.accepted, r.rejected);
    Ok(vec![
        check("weights", r.accepted == 100 && r.max_rel_err_weights < 1e-4, detail(r.max_rel_err_weights)),
        check("theta", r.accepted == 100 && r.max_rel_err_theta < 1e-4, detail(r.max_rel_err_theta)),
        check("omega", r.accepted == 100 && r.max_rel_err_omega < 1e-4, detail(r.max_rel_err_omega)),
    ])
}

/// Monte Carlo union size against the recursion, under a law whose mean
/// support size equals the recursion's assumption and under the default law.
pub fn union_size_comparison(trials: usize, seed: u64) -> Result<[(f64, f64); 2]> {
    let degenerate = SystemConfig {
        m: 64,
        frames: 5,
        s_bar: 10,
        s_c: 6,
        support_law: SupportLaw::Range {
            size_min: 8,
            size_max: 8,
            shared_min: 6,
            shared_max: 6,
        },
        ..SystemConfig::desk()
    };
    let standard = SystemConfig {
        m: 64,
        frames: 5,
        s_bar: 15,
        s_c: 10,
        support_law: SupportLaw::Standard,
        ..SystemConfig::desk()
    };
    let mut out = [(0.0, 0.0); 2];
    for (slot, cfg) in out.iter_mut().zip([degenerate, standard]) {
        let mc = monte_carlo_union_rows(&cfg, trials, seed)?;
        let model = compute_s(cfg.m, cfg.frames, cfg.s_bar, cfg.s_c)?;
        *slot = (mc, model.expected_rows);
    }
    Ok(out)
}

fn union_size(seed: u64) -> Result<Vec<CheckResult>> {
    let [(mc_d, e_d), (mc_s, e_s)] = union_size_comparison(100_000, seed)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    let full = compute_s(128, 7, 15, 10)?.expected_rows;
    Ok(vec![
        check(
            "degenerate_law",
            rel(mc_d, e_d) < 0.01,
            format!("monte carlo {mc_d:.4}, recursion {e_d:.4}"),
        ),
        check(
            "standard_law",
            rel(mc_s, e_s) < 0.05,
            format!("monte carlo {mc_s:.4}, recursion {e_s:.4}"),
        ),
        check("full_scale_value", (full - 26.7).abs() < 0.05, format!("expected rows {full:.4}")),
    ])
}

fn opcount() -> Result<Vec<CheckResult>> {
    let c = analytic_op_count(NetPart::Coarse, 128, 2, 33)?.total;
    let f = analytic_op_count(NetPart::Fine, 128, 2, 33)?.total;
    let mut mismatches = Vec::new();
    for (m, n, t) in [(1, 1, 1), (8, 2, 5), (32, 2, 12), (128, 2, 33)] {
        for part in [NetPart::Coarse, NetPart::Fine] {
            let a = analytic_op_count(part, m, n, t)?;
            let i = instrumented_op_count(part, m, n, t, 2, 1)?;
            if a != i {
                mismatches.push(format!("{part:?} ({m},{n},{t}): {a:?} vs {i:?}"));
            }
        }
    }
    Ok(vec![
        check("coarse_formula", c == 68608, format!("{c}")),
        check("fine_formula", f == 69120, format!("{f}")),
        check("instrumented_equals_analytic", mismatches.is_empty(), mismatches.join("; ")),
    ])
}
