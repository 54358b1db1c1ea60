//! Standalone property suites: extrapolator special cases, network/linear
//! equivalences, piecewise-linear regions, training monotonicity, gradient
//! checks, conjugate symmetry, and repeat-run determinism.
//! Run with `cargo test -p cosim-core --test properties`.

use cosim_core::compensator::{
    build_training_set, cost_gradient, extrapolate_ar, init_from_linear, mse_cost, train,
    Activation, Compensator, CompensatorNet, ExtrapolatorParams, TrainerConfig, TrainingSample,
};
use cosim_core::coupling::{
    delayed_read, run_cosim, CompensatorKind, CompensatorSet, CosimOptions, CouplingScenario,
    Reconstruction, SignalHistory,
};
use cosim_core::freq::{eval_gc, eval_gf, eval_gp, winding_number};
use cosim_core::plants::{HalfState, MassOnePlant, MassTwoPlant, OscillatorParams};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn window_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-100.0..100.0f64, len)
}

proptest! {
    #[test]
    fn zoh_returns_newest(window in window_strategy(4)) {
        let zoh = ExtrapolatorParams::zoh(4);
        prop_assert_eq!(extrapolate_ar(&zoh, &window), window[0]);
    }

    #[test]
    fn foh_exact_on_ramps(
        slope in -10.0..10.0f64,
        intercept in -10.0..10.0f64,
        k in 0usize..6,
        now in 20i64..40,
    ) {
        let p = 4;
        let params = ExtrapolatorParams::foh_for_delay(k, p).unwrap();
        let dt = 0.05;
        let sample = |i: i64| intercept + slope * i as f64 * dt;
        let window: Vec<f64> = (0..p as i64).map(|i| sample(now - k as i64 - i)).collect();
        let predicted = extrapolate_ar(&params, &window);
        let truth = sample(now);
        prop_assert!((predicted - truth).abs() <= 1e-9 * truth.abs().max(1.0));
    }

    #[test]
    fn constant_exactness_with_unit_dc_gain(
        raw in proptest::collection::vec(-3.0..3.0f64, 4),
        c in -1000.0..1000.0f64,
    ) {
        let sum: f64 = raw.iter().sum();
        prop_assume!(sum.abs() > 0.3);
        let coeffs: Vec<f64> = raw.iter().map(|a| a / sum).collect();
        let params = ExtrapolatorParams::new(coeffs, 0.0).unwrap();
        let out = extrapolate_ar(&params, &[c; 4]);
        prop_assert!((out - c).abs() <= 1e-9 * c.abs().max(1.0));
    }

    #[test]
    fn network_equals_linear_at_init(
        coeffs in proptest::collection::vec(-10.0..10.0f64, 4),
        bias in -2.0..2.0f64,
        slope in 0.001..0.5f64,
        window in window_strategy(4),
    ) {
        let params = ExtrapolatorParams::new(coeffs, bias).unwrap();
        let net = init_from_linear(&params, slope);
        let linear = extrapolate_ar(&params, &window);
        let scale = linear.abs().max(window.iter().fold(1.0f64, |m, v| m.max(v.abs())));
        prop_assert!((net.forward(&window) - linear).abs() <= 1e-11 * scale);
    }

    #[test]
    fn linear_activation_network_is_an_ar_model(
        w1 in proptest::collection::vec(-2.0..2.0f64, 8),
        b1 in proptest::collection::vec(-1.0..1.0f64, 2),
        w2 in proptest::collection::vec(-2.0..2.0f64, 2),
        b2 in -1.0..1.0f64,
        window in window_strategy(4),
    ) {
        let net = CompensatorNet {
            inputs: 4,
            hidden: 2,
            w1,
            b1,
            w2,
            b2,
            leaky_slope: 0.01,
            activation: Activation::Linear,
        };
        let linear = net.as_linear().expect("linear nets collapse to AR form");
        let expected = linear.extrapolate(&window);
        let scale = expected.abs().max(100.0);
        prop_assert!((net.forward(&window) - expected).abs() <= 1e-11 * scale);
    }

    #[test]
    fn leaky_relu_regions_are_affine(
        w1 in proptest::collection::vec(-2.0..2.0f64, 8),
        b1 in proptest::collection::vec(-1.0..1.0f64, 2),
        w2 in proptest::collection::vec(-2.0..2.0f64, 2),
        b2 in -1.0..1.0f64,
        window in window_strategy(4),
    ) {
        let net = CompensatorNet {
            inputs: 4,
            hidden: 2,
            w1,
            b1,
            w2,
            b2,
            leaky_slope: 0.01,
            activation: Activation::LeakyRelu,
        };
        // at most 2^h activation patterns; within one the map is affine
        let pattern = net.activation_pattern(&window);
        prop_assert!(pattern < 1 << net.hidden);
        let region = net.region_params(pattern);
        let expected = region.extrapolate(&window);
        let scale = expected.abs().max(100.0);
        prop_assert!((net.forward(&window) - expected).abs() <= 1e-10 * scale);
    }

    #[test]
    fn training_never_worsens_training_cost(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<TrainingSample> = (0..24)
            .map(|_| TrainingSample {
                input: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                target: rng.gen_range(-1.0..1.0),
            })
            .collect();
        let mut net = CompensatorNet::zeros(4, 2, 0.01, Activation::LeakyRelu);
        for w in net.w1.iter_mut().chain(net.w2.iter_mut()) {
            *w = rng.gen_range(-2.0..2.0);
        }
        let cfg = TrainerConfig { epochs: 4, batch_size: 8, ..TrainerConfig::default() };
        let outcome = train(&net, &samples, &cfg, seed);
        let before = mse_cost(&net, &samples);
        let after = mse_cost(&outcome.net, &samples);
        prop_assert!(after <= before + 1e-15);
        prop_assert!((outcome.cost_before - before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn conjugate_symmetry(
        coeffs in proptest::collection::vec(-10.0..10.0f64, 4),
        bias in -1.0..1.0f64,
        omega in 0.01..3000.0f64,
    ) {
        let params = ExtrapolatorParams::new(coeffs, bias).unwrap();
        let dt = 1e-3;
        let tau = 3e-3;
        for (pos, neg) in [
            (eval_gf(omega, dt, tau), eval_gf(-omega, dt, tau)),
            (eval_gc(omega, &params, dt), eval_gc(-omega, &params, dt)),
            (eval_gp(omega, &params, dt, tau), eval_gp(-omega, &params, dt, tau)),
        ] {
            prop_assert!((neg - pos.conj()).norm() <= 1e-10 * pos.norm().max(1e-12));
        }
    }

    #[test]
    fn dc_normalization_of_constrained_params(
        raw in proptest::collection::vec(-3.0..3.0f64, 4),
    ) {
        let sum: f64 = raw.iter().sum();
        prop_assume!(sum.abs() > 0.3);
        let coeffs: Vec<f64> = raw.iter().map(|a| a / sum).collect();
        let params = ExtrapolatorParams::new(coeffs, 0.0).unwrap();
        let dc = eval_gp(1e-6, &params, 1e-3, 3e-3).norm();
        prop_assert!((dc - 1.0).abs() < 1e-4);
    }

    #[test]
    fn winding_of_shifted_circle(
        cx in -3.0..3.0f64,
        cy in -3.0..3.0f64,
        r in 0.5..2.0f64,
    ) {
        let critical = Complex64::new(-1.0, 0.0);
        let center = Complex64::new(cx, cy);
        prop_assume!(((center - critical).norm() - r).abs() > 0.05);
        let circle: Vec<Complex64> = (0..512)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / 512.0;
                center + Complex64::new(r * th.cos(), r * th.sin())
            })
            .collect();
        let (w, _) = winding_number(&circle, critical);
        let expected = if (center - critical).norm() < r { 1 } else { 0 };
        prop_assert_eq!(w, expected);
    }

    #[test]
    fn delayed_read_matches_index_arithmetic(
        values in proptest::collection::vec(-10.0..10.0f64, 12..30),
        k in 0usize..4,
        p in 1usize..5,
    ) {
        let mut history = SignalHistory::new(64, 0.5).unwrap();
        for v in &values {
            history.push(*v);
        }
        let now = values.len() - 1;
        let window = delayed_read(&history, now, k, p).unwrap();
        for (i, w) in window.iter().enumerate() {
            let idx = now as i64 - k as i64 - i as i64;
            let expected = if idx < 0 { 0.5 } else { values[idx as usize] };
            prop_assert_eq!(*w, expected);
        }
    }

    #[test]
    fn training_set_targets_are_k_ahead(
        signal in proptest::collection::vec(-5.0..5.0f64, 10..40),
        k in 1usize..4,
    ) {
        let p = 4;
        let samples = build_training_set(&signal, p, k, usize::MAX);
        for (s_idx, sample) in samples.iter().enumerate() {
            let newest = s_idx + p - 1;
            prop_assert_eq!(sample.target, signal[newest + k]);
            for (i, v) in sample.input.iter().enumerate() {
                prop_assert_eq!(*v, signal[newest - i]);
            }
        }
    }
}

#[test]
fn gradient_matches_finite_differences_on_random_nets() {
    // central differences against the analytic gradient, 1e-6 relative
    for seed in [3u64, 17, 99] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = CompensatorNet::zeros(4, 2, 0.01, Activation::LeakyRelu);
        for w in net
            .w1
            .iter_mut()
            .chain(net.b1.iter_mut())
            .chain(net.w2.iter_mut())
        {
            *w = rng.gen_range(-1.0..1.0);
        }
        net.b2 = rng.gen_range(-1.0..1.0);
        let samples: Vec<TrainingSample> = (0..16)
            .map(|_| TrainingSample {
                input: (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                target: rng.gen_range(-2.0..2.0),
            })
            .collect();

        let analytic = cost_gradient(&net, &samples);
        let flat = net.parameters();
        let mut probe = net.clone();
        for i in 0..flat.len() {
            let h = 1e-6 * flat[i].abs().max(1.0);
            let mut plus = flat.clone();
            plus[i] += h;
            probe.set_parameters(&plus);
            let cost_plus = mse_cost(&probe, &samples);
            let mut minus = flat.clone();
            minus[i] -= h;
            probe.set_parameters(&minus);
            let cost_minus = mse_cost(&probe, &samples);
            let numeric = (cost_plus - cost_minus) / (2.0 * h);
            let scale = numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(
                (numeric - analytic[i]).abs() / scale < 1e-6,
                "seed {seed} param {i}: numeric {numeric} vs analytic {}",
                analytic[i]
            );
        }

        // and training with a realistic rate actually descends
        let base_cost = mse_cost(&net, &samples);
        let cfg = TrainerConfig {
            learning_rate: 1e-2,
            epochs: 50,
            batch_size: 0,
            ..TrainerConfig::default()
        };
        let outcome = train(&net, &samples, &cfg, seed);
        assert!(
            outcome.cost_after < base_cost,
            "no descent from seed {seed}"
        );
    }
}

#[test]
fn deterministic_repeat_run_bit_equality_without_training() {
    let params = OscillatorParams::two_mass_reference();
    let scenario = CouplingScenario {
        macro_step: 1e-3,
        delay_steps: 3,
        history_len: 4,
        reconstruction: Reconstruction::Foh,
        compensator: CompensatorKind::Foh,
        duration: 3.0,
        online_training: false,
    };
    let run = || {
        let mut a = MassOnePlant::new(params, HalfState { pos: 1.0, vel: 0.0 }, None, 10).unwrap();
        let mut b =
            MassTwoPlant::new(params, HalfState { pos: 1.0, vel: 0.0 }, [1.0, 0.0], 10).unwrap();
        let c = Compensator::foh_for_delay(3, 4).unwrap();
        run_cosim(
            &scenario,
            &mut a,
            &mut b,
            CompensatorSet {
                a_to_b: vec![c.clone(), c.clone()],
                b_to_a: vec![c],
            },
            CosimOptions::default(),
        )
        .unwrap()
    };
    let t1 = run();
    let t2 = run();
    for (c1, c2) in t1.channels.iter().zip(&t2.channels) {
        for (v1, v2) in c1.compensated.iter().zip(&c2.compensated) {
            assert_eq!(v1.to_bits(), v2.to_bits());
        }
    }
}
