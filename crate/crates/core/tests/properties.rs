use proptest::prelude::*;

use dncp::analysis::{
    cp_squared_correlation, dncp_squared_correlation, prefer_dncp, squared_correlation_from_hessian, LocalFactorSummary,
};
use dncp::data::{parse_idx, IDX_IMAGES_MAGIC};
use dncp::diagnostics::{autocorrelation, effective_sample_size};
use dncp::experiments::fmt_f64;
use dncp::learning::AdagradState;
use dncp::reparam::{NoiseDist, ScalarTransform};
use dncp::sampler::{leapfrog, GaussianTarget, LogDensity};

fn magnitude() -> impl Strategy<Value = f64> {
    (-2.0f64..2.0).prop_map(|e| 10f64.powf(e))
}

fn summary() -> impl Strategy<Value = LocalFactorSummary> {
    (magnitude(), magnitude(), -50.0f64..50.0, magnitude())
        .prop_map(|(a, b, w, s)| LocalFactorSummary::new(-a, -b, w, s))
}

fn transform() -> impl Strategy<Value = ScalarTransform> {
    prop_oneof![
        Just(ScalarTransform::Normal),
        Just(ScalarTransform::Uniform),
        Just(ScalarTransform::Exponential),
        Just(ScalarTransform::LogNormal),
    ]
}

fn series(min: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, min..min + 300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn squared_correlations_are_probabilities(s in summary()) {
        let rc = cp_squared_correlation(&s).unwrap();
        let rd = dncp_squared_correlation(&s).unwrap();
        prop_assert!((0.0..=1.0).contains(&rc));
        prop_assert!((0.0..=1.0).contains(&rd));
    }

    #[test]
    fn closed_forms_agree_with_their_hessians(s in summary()) {
        let rc = cp_squared_correlation(&s).unwrap();
        let oc = squared_correlation_from_hessian(&s.cp_hessian(), 0, 1).unwrap();
        prop_assert!((rc - oc).abs() <= 1e-12 * oc.max(1e-300));
        let rd = dncp_squared_correlation(&s).unwrap();
        let od = squared_correlation_from_hessian(&s.dncp_hessian(), 0, 1).unwrap();
        prop_assert!((rd - od).abs() <= 1e-12 * od.max(1e-300));
    }

    #[test]
    fn preference_depends_only_on_sigma_and_beta(s in summary(), a2 in magnitude(), w2 in 0.01f64..50.0) {
        let p = prefer_dncp(s.sigma, s.beta).unwrap();
        let t = LocalFactorSummary::new(-a2, s.beta, w2, s.sigma);
        let (rc, rd) = (cp_squared_correlation(&t).unwrap(), dncp_squared_correlation(&t).unwrap());
        // away from the boundary the strict inequality matches the rule
        let margin = (1.0 / (s.sigma * s.sigma) + s.beta).abs() / (-s.beta).max(1.0 / (s.sigma * s.sigma));
        if margin > 1e-9 && (rc - rd).abs() > 1e-14 {
            prop_assert_eq!(p, rc > rd);
        }
    }

    #[test]
    fn transform_round_trip_and_density_identity(
        kind in transform(),
        m in -2.0f64..2.0,
        s in 0.05f64..3.0,
        u in 0.001f64..0.999,
        n in -4.0f64..4.0,
    ) {
        let e = match kind.noise() {
            NoiseDist::StandardNormal => n,
            NoiseDist::UnitUniform => u,
        };
        let z = kind.g(m, s, e);
        let back = kind.g_inv(m, s, z).unwrap();
        prop_assert!((back - e).abs() <= 1e-9 * (1.0 + e.abs()));
        let lhs = kind.noise_log_pdf(e);
        let rhs = kind.cp_log_pdf(m, s, z) + kind.log_abs_det(m, s, e);
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn ess_is_affine_invariant(x in series(120), a in 0.1f64..100.0, neg in any::<bool>(), b in -1e3f64..1e3) {
        let e = match effective_sample_size(&x) {
            Ok(e) => e,
            Err(_) => return Ok(()),
        };
        let a = if neg { -a } else { a };
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let f = effective_sample_size(&y).unwrap();
        prop_assert!((e - f).abs() <= 1e-6 * e);
        prop_assert!(e > 0.0);
    }

    #[test]
    fn autocorrelation_starts_at_one_and_is_bounded(x in series(120)) {
        if let Ok(r) = autocorrelation(&x, 20) {
            prop_assert!((r[0] - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn adagrad_accumulators_grow_and_steps_are_bounded(
        lr in 1e-3f64..1.0,
        grads in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..20),
    ) {
        let mut opt = AdagradState::new(lr, 3);
        let mut theta = vec![0.0; 3];
        for g in &grads {
            let before = opt.accumulators.clone();
            let old = theta.clone();
            opt.step(&mut theta, g).unwrap();
            for k in 0..3 {
                prop_assert!(opt.accumulators[k] >= before[k]);
                // |Δθ| = lr |g| / (√G + ε) ≤ lr since G ≥ g²
                prop_assert!((theta[k] - old[k]).abs() <= lr * (1.0 + 1e-12));
                // ascent: the step has the sign of the gradient
                prop_assert!((theta[k] - old[k]) * g[k] >= 0.0);
            }
        }
    }

    #[test]
    fn leapfrog_is_reversible_on_gaussians(
        q0 in prop::collection::vec(-3.0f64..3.0, 2),
        p0 in prop::collection::vec(-3.0f64..3.0, 2),
        c in -0.9f64..0.9,
        step in 0.01f64..0.3,
        n in 1usize..30,
    ) {
        let mut t = GaussianTarget { mean: vec![0.2, -0.1], precision: vec![vec![1.0, c], vec![c, 1.0]] };
        let (mut q, mut p) = (q0.clone(), p0.clone());
        let mut g = vec![0.0; 2];
        t.value_and_grad(&q, &mut g).unwrap();
        leapfrog(&mut q, &mut p, &mut g, step, n, &mut t).unwrap();
        p.iter_mut().for_each(|v| *v = -*v);
        leapfrog(&mut q, &mut p, &mut g, step, n, &mut t).unwrap();
        for k in 0..2 {
            prop_assert!((q[k] - q0[k]).abs() <= 1e-9 * (1.0 + q0[k].abs()));
            prop_assert!((p[k] + p0[k]).abs() <= 1e-9 * (1.0 + p0[k].abs()));
        }
    }

    #[test]
    fn float_formatting_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let s = fmt_f64(v);
        prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn idx_images_round_trip(n in 1u32..4, rows in 1u32..5, cols in 1u32..5, seed in any::<u8>()) {
        let mut bytes = vec![0u8, 0, 8, 3];
        for d in [n, rows, cols] {
            bytes.extend(d.to_be_bytes());
        }
        let len = (n * rows * cols) as usize;
        let data: Vec<u8> = (0..len).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        bytes.extend(&data);
        let t = parse_idx(&bytes).unwrap();
        prop_assert_eq!(t.magic, IDX_IMAGES_MAGIC);
        prop_assert_eq!(t.dims, vec![n as usize, rows as usize, cols as usize]);
        prop_assert_eq!(&t.data, &data);
        prop_assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
    }
}
