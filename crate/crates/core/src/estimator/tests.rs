use super::unrolled::Stack;
use super::*;
use crate::linalg::{real_lift, LiftMode};
use crate::simgen::{gen_dataset, SupportLaw};
use crate::threshold::{bss_threshold, RowMatrix, SupportSelection};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn tiny_cfg() -> SystemConfig {
    SystemConfig {
        m: 16,
        n: 2,
        t: 10,
        frames: 3,
        s_bar: 6,
        s_c: 3,
        snr_db: 30.0,
        layers_coarse: 3,
        layers_fine: 4,
        seed: 5,
        ..SystemConfig::desk()
    }
}

#[test]
fn eigenvalue_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let a = random_mat(&mut rng, 30, 20);
        let gram = a.t().dot(&a);
        let q = largest_eigenvalue(gram.view()).unwrap();
        let dm = nalgebra::DMatrix::from_fn(20, 20, |i, j| gram[[i, j]]);
        let oracle = dm.symmetric_eigen().eigenvalues.max();
        assert!(((q - oracle) / oracle).abs() < 1e-8, "{q} vs {oracle}");
        assert!(q >= oracle * (1.0 - 1e-8));
    }
}

#[test]
fn bcd_zero_observation_is_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let phi = random_mat(&mut rng, 12, 20);
    let obs = Array2::zeros((12, 3));
    for iters in [1, 7] {
        let out = bcd_mmv_solve(phi.view(), obs.view(), 0.1, iters, BcdOptions::joint(3)).unwrap();
        assert!(out.estimate.iter().all(|&x| x == 0.0));
    }
    assert!(bcd_mmv_solve(phi.view(), obs.view(), 0.0, 1, BcdOptions::joint(3)).is_err());
    assert!(bcd_mmv_solve(phi.view(), obs.view(), 0.1, 0, BcdOptions::joint(3)).is_err());
}

#[test]
fn bcd_recovers_noiseless_row_sparse_signal() {
    let cfg = SystemConfig {
        m: 32,
        n: 2,
        t: 24,
        frames: 1,
        s_bar: 5,
        s_c: 1,
        snr_db: f64::INFINITY,
        support_law: SupportLaw::Range {
            size_min: 4,
            size_max: 4,
            shared_min: 0,
            shared_max: 0,
        },
        complex_pilot: true,
        ..SystemConfig::desk()
    };
    let ds = gen_dataset(&cfg, 3, 17).unwrap();
    for s in &ds.samples {
        let opts = BcdOptions {
            track_objective: true,
            ..BcdOptions::joint(2)
        };
        let out = bcd_mmv_solve(ds.phi_lifted.view(), s.lifted_obs.mat.view(), 1e-3, 3000, opts).unwrap();
        let truth = &s.lifted_truth.mat;
        let err = (&out.estimate - truth).mapv(|x| x * x).sum().sqrt() / truth.mapv(|x| x * x).sum().sqrt();
        // the residual error is the l21 bias, proportional to lambda
        assert!(err < 5e-3, "relative error {err}");
        assert_eq!(extract_support(out.estimate.view(), 0.0), extract_support(truth.view(), 0.0));
        for w in out.objectives.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
}

#[test]
fn unit_step_variant_runs_without_monotone_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let phi = random_mat(&mut rng, 10, 16);
    let obs = random_mat(&mut rng, 10, 2);
    let opts = BcdOptions {
        step: StepRule::Unit,
        group_width: 2,
        track_objective: true,
    };
    let out = bcd_mmv_solve(phi.view(), obs.view(), 0.05, 5, opts).unwrap();
    assert_eq!(out.objectives.len(), 6);
}

#[test]
fn huge_thresholds_shrink_everything() {
    let cfg = tiny_cfg();
    let ds = gen_dataset(&cfg, 1, 2).unwrap();
    let (mut coarse, _) = init_params(&cfg, ds.phi_lifted.view(), 0.1).unwrap();
    coarse.thetas.iter_mut().for_each(|t| *t = 1e9);
    let out = coarse_forward(&coarse, ds.phi_lifted.view(), ds.samples[0].lifted_obs.mat.view()).unwrap();
    assert!(out.iter().all(|&x| x == 0.0));
}

#[test]
fn untrained_coarse_net_reproduces_baseline_bitwise() {
    let cfg = SystemConfig {
        layers_coarse: 8,
        ..tiny_cfg()
    };
    let ds = gen_dataset(&cfg, 4, 8).unwrap();
    let phi = ds.phi_lifted.view();
    let lambda = default_lambda(phi, ds.samples.iter().map(|s| s.lifted_obs.mat.view())).unwrap();
    let (mut coarse, _) = init_params(&cfg, phi, lambda).unwrap();
    coarse.selector = Selector::None;
    for s in &ds.samples {
        let net = coarse_forward(&coarse, phi, s.lifted_obs.mat.view()).unwrap();
        let base = bcd_mmv_solve(phi, s.lifted_obs.mat.view(), lambda, 8, BcdOptions::joint(cfg.concat_cols())).unwrap();
        assert_eq!(net, base.estimate);
    }
}

#[test]
fn extract_support_cases() {
    assert!(extract_support(Array2::<f64>::zeros((5, 2)).view(), 0.0).is_empty());
    let mut m = Array2::<f64>::zeros((9, 2));
    m[[3, 0]] = 1.0;
    m[[7, 1]] = -2.0;
    assert_eq!(extract_support(m.view(), 0.0), vec![3, 7]);
    assert_eq!(extract_support(m.view(), 1.5), vec![7]);
}

#[test]
fn thresholded_support_is_inside_threshold_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let v = RowMatrix::new(random_mat(&mut rng, 20, 3));
        let theta = rng.random_range(0.0..1.5);
        let sel = SupportSelection {
            indices: (0..20).filter(|_| rng.random_bool(0.3)).collect(),
            ..SupportSelection::empty()
        };
        let out = bss_threshold(&v, theta, &sel).unwrap();
        for j in extract_support(out.mat.view(), 0.0) {
            assert!(v.row_norms[j] > theta);
        }
    }
}

#[test]
fn empty_prior_ignores_omega() {
    let cfg = tiny_cfg();
    let ds = gen_dataset(&cfg, 1, 3).unwrap();
    let phi = ds.phi_lifted.view();
    let (_, mut fine) = init_params(&cfg, phi, 0.2).unwrap();
    let z = ds.samples[0].per_frame_obs[0].mat.view();
    let init = Array2::zeros((2 * cfg.m, cfg.n));
    fine.omega = 0.1;
    let a = fine_forward(&fine, phi, z, init.view(), &[]).unwrap();
    fine.omega = 1.0;
    let b = fine_forward(&fine, phi, z, init.view(), &[]).unwrap();
    assert_eq!(a, b);
    // ω = 1 with a prior matches the unweighted stack
    let c = fine_forward(&fine, phi, z, init.view(), &[0, 3, 5]).unwrap();
    let (d, _) = fine
        .stack(cfg.n)
        .forward(phi, z, init.view(), None, fine.layers(), false, None)
        .unwrap();
    assert_eq!(c, d);
    fine.omega = 1.5;
    assert!(fine_forward(&fine, phi, z, init.view(), &[]).is_err());
}

#[test]
fn zero_layer_fine_net_passes_coarse_through() {
    let cfg = tiny_cfg();
    let ds = gen_dataset(&cfg, 1, 3).unwrap();
    let phi = ds.phi_lifted.view();
    let (coarse, mut fine) = init_params(&cfg, phi, 0.2).unwrap();
    fine.weights.clear();
    fine.thetas.clear();
    let r = two_stage_estimate(Some(&coarse), &fine, phi, ds.samples[0].lifted_obs.mat.view(), cfg.n).unwrap();
    assert_eq!(r.coarse, r.refined);
}

#[test]
fn single_frame_pipeline_is_coarse_then_fine() {
    let cfg = SystemConfig {
        frames: 1,
        ..tiny_cfg()
    };
    let ds = gen_dataset(&cfg, 1, 3).unwrap();
    let phi = ds.phi_lifted.view();
    let (coarse, fine) = init_params(&cfg, phi, 0.2).unwrap();
    let obs = ds.samples[0].lifted_obs.mat.view();
    let r = two_stage_estimate_with(Some(&coarse), &fine, phi, obs, cfg.n, true).unwrap();
    let g = coarse_forward(&coarse, phi, obs).unwrap();
    let mut one = fine.clone();
    one.omega = 1.0;
    let s = fine_forward(&one, phi, obs, g.view(), &[]).unwrap();
    assert_eq!(r.refined, s);
    assert_eq!(r.per_frame_supports[0], extract_support(s.view(), 0.0));
    assert_eq!(r.iterate_trace.unwrap().len(), cfg.layers_coarse + 1);
}

#[test]
fn later_frames_do_not_change_earlier_estimates() {
    let cfg = tiny_cfg();
    let ds = gen_dataset(&cfg, 2, 3).unwrap();
    let phi = ds.phi_lifted.view();
    let (coarse, fine) = init_params(&cfg, phi, 0.2).unwrap();
    let obs = ds.samples[0].lifted_obs.mat.clone();
    let base = two_stage_estimate(Some(&coarse), &fine, phi, obs.view(), cfg.n).unwrap();
    // perturb the last frame only, and hold the coarse init fixed
    let g = base.coarse.clone();
    let mut obs2 = obs.clone();
    obs2.slice_mut(s![.., 4..6]).mapv_inplace(|x| x + 0.3);
    let mut prior: Vec<usize> = Vec::new();
    for i in 0..2 {
        let cols = s![.., i * 2..(i + 1) * 2];
        let est = fine_forward(&fine, phi, obs2.slice(cols), g.slice(cols), &prior).unwrap();
        assert_eq!(est.view(), base.refined.slice(cols));
        prior = extract_support(est.view(), 0.0);
    }
}

#[test]
fn prior_weighting_helps_recall() {
    // paired Monte Carlo: the same noisy instances with ω = 0.3 and ω = 1
    let cfg = SystemConfig {
        m: 16,
        n: 2,
        t: 10,
        frames: 1,
        s_bar: 5,
        s_c: 1,
        snr_db: 15.0,
        layers_fine: 6,
        support_law: SupportLaw::Range {
            size_min: 3,
            size_max: 3,
            shared_min: 0,
            shared_max: 0,
        },
        ..SystemConfig::desk()
    };
    let ds = gen_dataset(&cfg, 200, 41).unwrap();
    let phi = ds.phi_lifted.view();
    let lambda = default_lambda(phi, ds.samples.iter().take(20).map(|s| s.lifted_obs.mat.view())).unwrap();
    let (_, mut fine) = init_params(&cfg, phi, lambda).unwrap();
    fine.selector = Selector::None;
    let init = Array2::zeros((32, 2));
    let (mut hit_w, mut hit_1, mut total) = (0usize, 0usize, 0usize);
    for s in &ds.samples {
        let truth = extract_support(s.lifted_truth.mat.view(), 0.0);
        let z = s.lifted_obs.mat.view();
        fine.omega = 0.3;
        let a = extract_support(fine_forward(&fine, phi, z, init.view(), &truth).unwrap().view(), 0.0);
        fine.omega = 1.0;
        let b = extract_support(fine_forward(&fine, phi, z, init.view(), &truth).unwrap().view(), 0.0);
        hit_w += truth.iter().filter(|j| a.contains(j)).count();
        hit_1 += truth.iter().filter(|j| b.contains(j)).count();
        total += truth.len();
    }
    assert!(hit_w >= hit_1, "recall {hit_w}/{total} vs {hit_1}/{total}");
}

#[test]
fn init_params_mirror_the_baseline() {
    let cfg = tiny_cfg();
    let ds = gen_dataset(&cfg, 1, 3).unwrap();
    let phi = ds.phi_lifted.view();
    let (coarse, fine) = init_params(&cfg, phi, 0.4).unwrap();
    let q = gram_eigenvalue(phi).unwrap();
    assert!(coarse.thetas.iter().chain(&fine.thetas).all(|&t| t == 0.4 / q));
    assert_eq!(fine.omega, 0.5);
    assert_eq!(coarse.weights[0], scaled_transpose(phi, q));
    assert_eq!(coarse.p_min, cfg.s_c as f64);
    let model = compute_s(cfg.m, cfg.frames, cfg.s_bar, cfg.s_c).unwrap();
    assert_eq!(coarse.s_param, model.s_param());
    assert!(init_params(&cfg, phi, 0.0).is_err());
    assert!(init_params(&cfg, phi.t(), 0.1).is_err());
}

#[test]
fn stack_rejects_bad_shapes() {
    let cfg = tiny_cfg();
    let ds = gen_dataset(&cfg, 1, 3).unwrap();
    let (coarse, _) = init_params(&cfg, ds.phi_lifted.view(), 0.4).unwrap();
    let bad = Array2::zeros((7, 6));
    assert!(matches!(
        coarse_forward(&coarse, ds.phi_lifted.view(), bad.view()),
        Err(Error::ShapeMismatch(_))
    ));
    let st: Stack<'_> = coarse.stack();
    let obs = ds.samples[0].lifted_obs.mat.view();
    let odd = Array2::zeros((32, 5));
    assert!(st.forward(ds.phi_lifted.view(), obs, odd.view(), None, 1, false, None).is_err());
}

#[test]
fn lifted_weight_shape_follows_config() {
    let cfg = tiny_cfg();
    let ds = gen_dataset(&cfg, 1, 3).unwrap();
    let (coarse, fine) = init_params(&cfg, ds.phi_lifted.view(), 0.4).unwrap();
    assert_eq!(coarse.weights.len(), cfg.layers_coarse);
    assert_eq!(fine.weights.len(), cfg.layers_fine);
    assert_eq!(coarse.weights[0].dim(), (2 * cfg.m, 2 * cfg.t));
    let lifted = real_lift(&ds.pilot.phi, LiftMode::Block).mat;
    assert_eq!(lifted, ds.phi_lifted);
}


