use std::sync::Arc;

use proptest::prelude::*;
use tree_shrink::measurement::{make_gaussian_operator, make_row_mask_operator};
use tree_shrink::model::{
    normalize_gamma, prior_draw_coefficients, prior_draw_shrinkage, Hyperparameters, ModelState, PriorStructure,
};
use tree_shrink::randmath::{
    bessel_k, gig_mean, gig_mean_reciprocal, gig_mode, sample_dirichlet, sample_gig, sample_normal, GigParams,
    RngHandle,
};
use tree_shrink::transform::{Basis, BasisKind, ImageGrid, BANDS};
use tree_shrink::variational::{avb_level, em_level};

fn basis_strategy() -> impl Strategy<Value = (BasisKind, usize, usize)> {
    prop_oneof![
        (1usize..4, 1usize..3, 1usize..3).prop_map(|(l, a, b)| (BasisKind::Daub4 { levels: l }, 8 * a << l, 8 * b << l)),
        (1usize..4, 1usize..4).prop_map(|(a, b)| (BasisKind::Bdct8, 8 * a, 8 * b)),
    ]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transforms_invert_and_preserve_energy((kind, h, w) in basis_strategy(), seed in any::<u64>()) {
        let basis = Basis::new(kind, h, w).unwrap();
        let mut rng = RngHandle::new(seed, 0);
        let img = ImageGrid::new(h, w, (0..h * w).map(|_| sample_normal(&mut rng)).collect()).unwrap();
        let p = basis.analyze(&img).unwrap();
        prop_assert!((p.energy() - img.energy()).abs() <= 1e-9 * img.energy());
        let back = basis.synthesize(&p).unwrap();
        for (a, b) in back.values.iter().zip(&img.values) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_is_a_scale_free_simplex(g in prop::collection::vec(1e-6f64..1e3, 1..40), c in 1e-3f64..1e3) {
        let t = normalize_gamma(&g).unwrap();
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let s: Vec<f64> = g.iter().map(|v| v * c).collect();
        for (a, b) in t.iter().zip(normalize_gamma(&s).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bessel_is_even_in_order(p in -8.0f64..8.0, x in 1e-3f64..50.0) {
        let a = bessel_k(p, x).unwrap();
        let b = bessel_k(-p, x).unwrap();
        prop_assert!((a / b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gig_moments_are_consistent(a in 1e-3f64..50.0, b in 1e-3f64..50.0, p in -3.0f64..3.0) {
        let g = GigParams::new(a, b, p).unwrap();
        let m = gig_mean(&g).unwrap();
        let r = gig_mean_reciprocal(&g).unwrap();
        prop_assert!(m > 0.0 && r > 0.0);
        // Jensen
        prop_assert!(m * r >= 1.0 - 1e-10);
        // x ~ GIG(a, b, p) iff 1/x ~ GIG(b, a, -p)
        let flipped = gig_mean(&GigParams::new(b, a, -p).unwrap()).unwrap();
        prop_assert!((flipped / r - 1.0).abs() < 1e-10);
        prop_assert!(gig_mode(&g).unwrap() > 0.0);
    }

    #[test]
    fn gig_draws_are_positive(a in 1e-4f64..20.0, b in 1e-4f64..20.0, p in -2.0f64..2.0, seed in any::<u64>()) {
        let g = GigParams::new(a, b, p).unwrap();
        let mut rng = RngHandle::new(seed, 0);
        for _ in 0..20 {
            let x = sample_gig(&g, &mut rng).unwrap();
            prop_assert!(x.is_finite() && x > 0.0);
        }
    }

    #[test]
    fn dirichlet_draws_lie_on_the_simplex(c in prop::collection::vec(1e-3f64..5.0, 2..20), seed in any::<u64>()) {
        let mut rng = RngHandle::new(seed, 0);
        let d = sample_dirichlet(&c, &mut rng).unwrap();
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(d.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn prior_draws_keep_unit_time_windows(levels in 1usize..4, tree in any::<bool>(), seed in any::<u64>()) {
        let basis = Basis::new(BasisKind::Daub4 { levels }, 8 << levels, 8 << levels).unwrap();
        let structure = if tree { PriorStructure::Tree } else { PriorStructure::Flat };
        let hyper = Hyperparameters::default();
        let mut rng = RngHandle::new(seed, 0);
        let mut st = prior_draw_shrinkage(Arc::clone(basis.layout()), structure, &hyper, &mut rng).unwrap();
        for band in BANDS {
            for depth in 0..levels {
                let s: f64 = st.increment_lengths(band, depth).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                let c: f64 = st.concentrations(band, depth, &hyper).iter().sum();
                prop_assert!((c - 1.0).abs() < 1e-9, "concentrations sum to {c}");
            }
        }
        let x = prior_draw_coefficients(&mut st, 1.0, &mut rng).unwrap();
        prop_assert!(x.as_slice().iter().all(|v| v.is_finite()));
        prop_assert!(st.check_invariants().is_ok());
    }

    #[test]
    fn model_state_text_roundtrip(seed in any::<u64>(), spiky in any::<bool>()) {
        let basis = Basis::new(BasisKind::Daub4 { levels: 2 }, 32, 32).unwrap();
        let hyper = Hyperparameters::default();
        let mut rng = RngHandle::new(seed, 0);
        let mut st = ModelState::new(Arc::clone(basis.layout()), PriorStructure::Tree, hyper, 100, spiky).unwrap();
        st.shrinkage = prior_draw_shrinkage(Arc::clone(basis.layout()), PriorStructure::Tree, &hyper, &mut rng).unwrap();
        st.pyramid = prior_draw_coefficients(&mut st.shrinkage, 2.5, &mut rng).unwrap();
        st.noise.alpha0 = 2.5;
        let back = ModelState::from_text(&st.to_text()).unwrap();
        prop_assert_eq!(back, st);
    }

    #[test]
    fn sensing_operators_are_adjoint(m in 1usize..256, seed in any::<u64>()) {
        let basis = Basis::new(BasisKind::Daub4 { levels: 1 }, 16, 16).unwrap();
        let mut rng = RngHandle::new(seed, 0);
        let rows: Vec<usize> = (0..256).filter(|i| i % 3 != 0).collect();
        for op in [
            make_gaussian_operator(m, basis.clone(), &mut rng).unwrap(),
            make_row_mask_operator(rows, basis).unwrap(),
        ] {
            let f: Vec<f64> = (0..256).map(|_| sample_normal(&mut rng)).collect();
            let r: Vec<f64> = (0..op.m()).map(|_| sample_normal(&mut rng)).collect();
            let lhs = dot(&op.apply_psi(&f).unwrap(), &r);
            let rhs = dot(&f, &op.apply_psi_adjoint(&r).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn deterministic_level_updates_stay_positive(
        t in prop::collection::vec(1e-6f64..1.0, 2..12),
        inv in 1e-4f64..1e3,
        conc in 1e-4f64..2.0,
    ) {
        let tilde = normalize_gamma(&t).unwrap();
        let inv = vec![inv; tilde.len()];
        let conc = vec![conc; tilde.len()];
        for g in [avb_level(&tilde, &inv, &conc, 1.0).unwrap(), em_level(&tilde, &inv, &conc, 1.0).unwrap()] {
            prop_assert!(g.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}
