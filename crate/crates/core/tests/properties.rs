use proptest::prelude::*;

use ulu_kit::activations::{
    aulu_eval, aulu_grad_beta, convert_parameterization, sigmoid, ulu_dx, ulu_eval, ActivationSpec,
    AdaptiveParams, Parameterization,
};
use ulu_kit::analysis::{smoothness_score, Matrix};
use ulu_kit::data::{subset_split, synthetic_blobs};
use ulu_kit::verify::derivative_gap;

fn alpha() -> impl Strategy<Value = f64> {
    0.01f64..20.0
}

proptest! {
    #[test]
    fn fixed_point_at_origin(a1 in alpha(), a2 in alpha()) {
        prop_assert_eq!(ulu_eval(0.0, a1, a2), 0.0);
        prop_assert_eq!(ulu_dx(0.0, a1, a2), 0.5);
    }

    #[test]
    fn sandwiched_between_zero_and_identity(x in -50.0f64..50.0, a1 in alpha(), a2 in alpha()) {
        let y = ulu_eval(x, a1, a2);
        prop_assert!(y <= x.max(0.0) + 1e-12);
        prop_assert!(y >= x.min(0.0) - 1e-12);
    }

    #[test]
    fn branches_are_independent(x in 0.0f64..30.0, a1 in alpha(), b1 in alpha(), a2 in alpha()) {
        prop_assert_eq!(ulu_eval(x, a1, a2), ulu_eval(x, b1, a2));
        prop_assert_eq!(ulu_eval(-x, a2, a1), ulu_eval(-x, a2, b1));
    }

    #[test]
    fn sigmoid_form_matches(x in -30.0f64..30.0, a in 0.05f64..5.0) {
        let s = convert_parameterization(a, Parameterization::TanhForm, Parameterization::SigmoidForm).unwrap();
        prop_assert!((ulu_eval(x, a, a) - x * sigmoid(s * x)).abs() <= 1e-12 * x.abs().max(1.0));
        let back = convert_parameterization(s, Parameterization::SigmoidForm, Parameterization::TanhForm).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn beta_signs_do_not_matter(x in -10.0f64..10.0, b1 in -3.0f64..3.0, b2 in -3.0f64..3.0) {
        let p = AdaptiveParams::new(b1, b2);
        let q = AdaptiveParams::new(-b1, b2);
        let r = AdaptiveParams::new(b1, -b2);
        prop_assert_eq!(aulu_eval(x, &p), aulu_eval(x, &q));
        prop_assert_eq!(aulu_eval(x, &p), aulu_eval(x, &r));
        prop_assert_eq!(p.lib(), q.lib());
        prop_assert_eq!(p.lib(), r.lib());
        prop_assert!(p.lib() >= 0.0);
    }

    #[test]
    fn beta_gradient_lives_on_one_branch(x in -10.0f64..10.0, b1 in -3.0f64..3.0, b2 in -3.0f64..3.0) {
        let (g1, g2) = aulu_grad_beta(x, &AdaptiveParams::new(b1, b2));
        if x < 0.0 {
            prop_assert_eq!(g2, 0.0);
        } else {
            prop_assert_eq!(g1, 0.0);
        }
    }

    #[test]
    fn gap_sign_follows_alpha_order(a in 0.01f64..0.8, a1 in 0.01f64..1.0, a2 in 0.01f64..1.0) {
        // psi(t) = tanh t + t sech^2 t is increasing on [0, 0.8].
        let gap = derivative_gap(a, a1, a2).gap;
        prop_assert_eq!(derivative_gap(0.0, a1, a2).gap, 0.0);
        if a2 > a1 {
            prop_assert!(gap > 0.0);
        } else if a2 < a1 {
            prop_assert!(gap < 0.0);
        }
    }

    #[test]
    fn text_form_round_trips(a1 in alpha(), a2 in alpha()) {
        let spec = ActivationSpec::ulu(a1, a2).unwrap();
        let back: ActivationSpec = spec.to_string().parse().unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn smoothness_is_scale_covariant(vals in prop::collection::vec(-5.0f64..5.0, 16), c in -4.0f64..4.0) {
        let m = Matrix { rows: 4, cols: 4, data: vals };
        let scaled = Matrix { data: m.data.iter().map(|v| c * v).collect(), ..m.clone() };
        let (s, sc) = (smoothness_score(&m).unwrap(), smoothness_score(&scaled).unwrap());
        prop_assert!((sc - c * c * s).abs() <= 1e-9 * (1.0 + sc.abs()));
    }

    #[test]
    fn affine_fields_are_smooth(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
        let m = Matrix::from_fn(6, 7, |i, j| a * i as f64 + b * j as f64 + c);
        prop_assert!(smoothness_score(&m).unwrap() < 1e-24);
    }

    #[test]
    fn splits_are_disjoint(seed in 0u64..1000, train in 0usize..6, test in 0usize..8) {
        let ds = synthetic_blobs(5, 4, 6, 1);
        let (tr, te) = subset_split(&ds, train * 2, test, seed).unwrap();
        prop_assert_eq!(tr.len(), (train * 2 / 5) * 5);
        prop_assert_eq!(te.len(), (test / 5) * 5);
        let rows = |d: &ulu_kit::data::Dataset| -> Vec<Vec<u64>> {
            d.images().data().chunks(36).map(|r| r.iter().map(|v| v.to_bits()).collect()).collect()
        };
        let (a, b, all) = (rows(&tr), rows(&te), rows(&ds));
        for r in &a {
            prop_assert!(!b.contains(r));
            prop_assert!(all.contains(r));
        }
    }
}
