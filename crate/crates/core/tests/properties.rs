mod common;

use std::sync::Arc;

use common::*;
use kiw_core::advect::{advect, AdvectedKind, Characteristics, InverseRoute};
use kiw_core::circulation::{circulation, Loop};
use kiw_core::exterior::*;
use kiw_core::fields::{catalog_field, FieldJet};
use kiw_core::flow::{make_driver, ChannelSpec, FlowModel, Scheme};
use kiw_core::stats::fit_log2_slope;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    max_abs_diff(a, b) <= tol * max_abs(a).max(max_abs(b)).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn d_squared_vanishes(seed in any::<u64>(), n in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(0..=n - 2);
        let f = random_form(&mut rng, n, k);
        let x = random_point(&mut rng, n);
        let dd = ExteriorDerivativeField::new(ExteriorDerivativeField::new(f).unwrap()).unwrap();
        prop_assert!(max_abs(&dd.eval(0.0, &x).unwrap()) <= 1e-10);
    }

    #[test]
    fn wedge_graded_commutative(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.gen_range(0..=n);
        let q = rng.gen_range(0..=n - p);
        let a = KFormValue::new(n, p, (0..kiw_core::fields::binomial(n, p)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = KFormValue::new(n, q, (0..kiw_core::fields::binomial(n, q)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let ab = wedge(&a, &b).unwrap();
        let ba = wedge(&b, &a).unwrap();
        let sign = if (p * q) % 2 == 0 { 1.0 } else { -1.0 };
        let ba: Vec<f64> = ba.comps.iter().map(|c| sign * c).collect();
        prop_assert!(close(&ab.comps, &ba, 1e-14));
    }

    #[test]
    fn cartan_formula(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=n);
        let kf = random_form(&mut rng, n, k);
        let u = random_vector(&mut rng, n);
        let x = random_point(&mut rng, n);
        let lie = LieField::new(u.clone(), kf.clone()).unwrap().eval(0.0, &x).unwrap();
        let a = ExteriorDerivativeField::new(InteriorField::new(u.clone(), kf.clone()).unwrap()).unwrap().eval(0.0, &x).unwrap();
        let b = if k < n {
            InteriorField::new(u, ExteriorDerivativeField::new(kf).unwrap()).unwrap().eval(0.0, &x).unwrap()
        } else {
            vec![0.0; a.len()]
        };
        let sum: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a + b).collect();
        prop_assert!(close(&lie, &sum, 1e-10));
    }

    #[test]
    fn pullback_composes(seed in any::<u64>(), n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(0..=n);
        let v = KFormValue::new(n, k, (0..kiw_core::fields::binomial(n, k)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let a = kiw_core::linalg::Mat::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let b = kiw_core::linalg::Mat::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let once = pullback_linear(&a.mul(&b), &v).unwrap();
        let twice = pullback_linear(&b, &pullback_linear(&a, &v).unwrap()).unwrap();
        prop_assert!(close(&once.comps, &twice.comps, 1e-12));
    }

    #[test]
    fn refinement_preserves_coarse_increments(seed in any::<u64>(), channels in 1usize..=3) {
        let d = make_driver(seed, 1.0, 0.125, 3, ChannelSpec::independent(0, channels)).unwrap();
        let f = d.refine();
        for p in 0..3 {
            for c in 0..channels {
                for k in 0..d.n_steps {
                    let sum = f.increment(p, c, 2 * k) + f.increment(p, c, 2 * k + 1);
                    prop_assert!((sum - d.increment(p, c, k)).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn driver_is_deterministic(seed in any::<u64>()) {
        let a = make_driver(seed, 1.0, 0.0625, 4, ChannelSpec::shared(2)).unwrap().refined(2);
        let b = make_driver(seed, 1.0, 0.0625, 4, ChannelSpec::shared(2)).unwrap().refined(2);
        for p in 0..4 {
            prop_assert_eq!(a.path_values(p, 1), b.path_values(p, 1));
        }
    }

    #[test]
    fn slope_fit_recovers_power(c in 0.01f64..100.0, p in 0.2f64..3.0) {
        let dts: Vec<f64> = (4..9).map(|l| 2f64.powi(-l)).collect();
        let errs: Vec<f64> = dts.iter().map(|dt| c * dt.powf(p)).collect();
        let fit = fit_log2_slope(&dts, &errs).unwrap();
        prop_assert!((fit.slope - p).abs() <= 1e-9);
    }

    #[test]
    fn circulation_ignores_loop_start(seed in any::<u64>(), shift in 0usize..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_form(&mut rng, 2, 1);
        let lp = Loop::circle(&random_point(&mut rng, 2), rng.gen_range(0.2..1.5), 64).unwrap();
        let a = circulation(&v, &lp).unwrap();
        let b = circulation(&v, &lp.rotated(shift)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn advected_scalar_stays_in_initial_range(seed in any::<u64>(), amp in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = FlowModel::new(
            catalog_field("taylor_green", &[0.5], 2).unwrap(),
            vec![catalog_field("sine_shear", &[0.4], 2).unwrap()],
            Scheme::StratonovichHeun,
        )
        .unwrap();
        let d = make_driver(seed, 0.5, 1.0 / 32.0, 2, ChannelSpec::independent(0, 1)).unwrap();
        let chars = Arc::new(Characteristics::new(model, Arc::new(d), InverseRoute::Backward));
        let s0: FieldJet = catalog_field("fourier_scalar", &[amp, 1.0, 2.0, 0.4], 2).unwrap();
        let s = advect(AdvectedKind::Scalar, s0, chars).unwrap();
        for _ in 0..8 {
            let x = random_point(&mut rng, 2);
            let v = s.evaluate(16, rng.gen_range(0..2), &x).unwrap()[0];
            prop_assert!(v.abs() <= amp * (1.0 + 1e-12));
        }
    }
}
