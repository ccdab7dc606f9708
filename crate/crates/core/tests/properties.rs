use cfnet::bench::{analytic_op_count, nmse, NetPart, NmseVariant};
use cfnet::linalg::{complex_unlift, real_lift, CMatrix, LiftMode};
use cfnet::simgen::{gen_dataset, SystemConfig};
use cfnet::threshold::{select_support_fsj, RowMatrix};
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;

fn cmatrix(max: usize) -> impl Strategy<Value = CMatrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), r * c).prop_map(move |v| {
            CMatrix::from_shape_vec((r, c), v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap()
        })
    })
}

fn norms_column() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..10.0, 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lifting_round_trips(a in cmatrix(9)) {
        for mode in [LiftMode::Stack, LiftMode::Block] {
            prop_assert_eq!(complex_unlift(&real_lift(&a, mode)).unwrap(), a.clone());
        }
    }

    #[test]
    fn block_lift_commutes_with_adjoint(a in cmatrix(6)) {
        let ah = a.t().mapv(|z| z.conj());
        let lifted_t = real_lift(&a, LiftMode::Block).mat.t().to_owned();
        prop_assert_eq!(real_lift(&ah, LiftMode::Block).mat, lifted_t);
    }

    #[test]
    fn fsj_selects_an_upper_set(norms in norms_column(), t in 1usize..40) {
        let col = Array2::from_shape_vec((norms.len(), 1), norms.clone()).unwrap();
        let sel = select_support_fsj(&RowMatrix::new(col), t).unwrap();
        let chosen = sel.mask(norms.len());
        let lowest_kept = norms.iter().zip(&chosen).filter(|(_, c)| **c).map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
        let highest_dropped = norms.iter().zip(&chosen).filter(|(_, c)| !**c).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lowest_kept > highest_dropped);
        if !sel.indices.is_empty() {
            let max = norms.iter().cloned().fold(0.0, f64::max);
            prop_assert!(lowest_kept - highest_dropped > max / t as f64);
        }
    }

    #[test]
    fn nmse_is_scale_invariant(
        vals in proptest::collection::vec(-3.0f64..3.0, 24),
        noise in proptest::collection::vec(-0.5f64..0.5, 24),
        c in 0.1f64..50.0,
    ) {
        prop_assume!(vals.iter().any(|x| x.abs() > 1e-3));
        let g = Array2::from_shape_vec((6, 4), vals).unwrap();
        let e = &g + &Array2::from_shape_vec((6, 4), noise).unwrap();
        for v in [NmseVariant::PaperUnsquared, NmseVariant::Squared] {
            let base = nmse(&[e.view()], &[g.view()], v).unwrap().nmse_db;
            let (es, gs) = (&e * c, &g * c);
            let scaled = nmse(&[es.view()], &[gs.view()], v).unwrap().nmse_db;
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }

    #[test]
    fn fine_costs_four_m_more(m in 1usize..300, n in 1usize..8, t in 1usize..80) {
        let c = analytic_op_count(NetPart::Coarse, m, n, t).unwrap().total;
        let f = analytic_op_count(NetPart::Fine, m, n, t).unwrap().total;
        prop_assert_eq!(f - c, 4 * m as u64);
        prop_assert_eq!(c, (8 * n * m * t + 4 * n * m) as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn samples_depend_only_on_their_index(base in 0u64..1000, a in 1usize..6, b in 1usize..6) {
        let cfg = SystemConfig { m: 16, t: 8, frames: 3, s_bar: 5, s_c: 2, ..SystemConfig::desk() };
        let x = gen_dataset(&cfg, a, base).unwrap();
        let y = gen_dataset(&cfg, b, base).unwrap();
        for i in 0..a.min(b) {
            prop_assert_eq!(&x.samples[i], &y.samples[i]);
        }
        prop_assert_eq!(x.phi_lifted, y.phi_lifted);
    }
}
