use cacc_realize::model::PlatoonParams;
use cacc_realize::reach::{AttackBounds, GridSelection};
use cacc_realize::realize::{PlatoonModel, Realization, CHANNELS};
use cacc_realize::sim::{self, AttackSignal, InitialOffsets, LeadProfile, PlatoonScenario};
use cacc_realize::synth::{self, SearchOptions};
use proptest::prelude::*;

fn small_grid() -> SearchOptions {
    SearchOptions {
        a_grid: vec![0.995, 0.9975, 0.999],
        selection: GridSelection::default(),
        tol: 1e-9,
    }
}

fn realization() -> impl Strategy<Value = Realization> {
    (
        prop_oneof![-5.0..-0.2f64, 0.2..5.0f64],
        prop::array::uniform5(-3.0..3.0f64),
    )
        .prop_map(|(alpha, beta)| Realization::new(alpha, beta).unwrap())
}

fn signal() -> impl Strategy<Value = AttackSignal> {
    prop_oneof![
        (-10.0..10.0f64).prop_map(|amplitude| AttackSignal::Constant { amplitude }),
        (0.0..10.0f64, 0.0..5.0f64).prop_map(|(amplitude, frequency)| AttackSignal::Sine {
            amplitude,
            frequency,
            phase: 0.3
        }),
        (0.0..10.0f64).prop_map(|amplitude| AttackSignal::Uniform { amplitude }),
        (0.0..10.0f64, 0.0..1.0f64).prop_map(|(amplitude, switch_prob)| AttackSignal::Bangbang {
            amplitude,
            switch_prob
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attack_matrix_depends_on_normalized_row(real in realization()) {
        let model = PlatoonModel::new(&PlatoonParams::default()).unwrap();
        let lhs = model.attack_matrix(&real).unwrap();
        let rhs = model.attack_matrix(&real.normalized()).unwrap();
        prop_assert!((&lhs - &rhs).amax() <= 1e-12 * lhs.amax().max(1.0));
        let dec = model.decoupled(&real).unwrap();
        let base = model.decoupled(&Realization::base()).unwrap();
        prop_assert!((&dec.ai - &base.ai).amax() <= 1e-12);
    }

    #[test]
    fn realization_json_round_trip(real in realization()) {
        let text = serde_json::to_string(&real).unwrap();
        let back: Realization = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, real);
    }

    #[test]
    fn attack_samples_respect_bound(sig in signal(), w in 0.0..3.0f64, seed in any::<u64>()) {
        let samples = sim::sample_attack(&sig, w, 200, 0.01, seed, 3);
        prop_assert_eq!(samples.len(), 200);
        prop_assert!(samples.iter().all(|x| x.abs() <= w));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spacing_identity(
        real in realization(),
        offsets in prop::array::uniform3(-2.0..2.0f64),
        amp in -3.0..3.0f64,
        sig in signal(),
    ) {
        let params = PlatoonParams::default();
        let horizon = 800;
        let lead = LeadProfile::maneuver(15.0, params.ts, horizon, 1.0, 2.0, amp);
        let mut sc = PlatoonScenario::nominal(params, real, lead, horizon).unwrap();
        sc.initial = InitialOffsets { followers: vec![offsets] };
        sc.attacks[1][2] = sig;
        let tr = sim::run(&sc).unwrap();
        for f in &tr.followers {
            for k in 0..tr.len() {
                let want = f.e[k] + params.r + params.h * f.v[k];
                prop_assert!((f.d[k] - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
        }
    }
}

#[test]
fn halving_the_sample_time_preserves_samples() {
    let coarse = PlatoonParams::default();
    let fine = PlatoonParams { ts: coarse.ts / 2.0, ..coarse };
    let horizon = 2000;
    let run = |p: PlatoonParams, n: usize| {
        let lead = LeadProfile::piecewise(20.0, p.ts, n, &[(2.0, 1.5), (4.0, 0.0), (8.0, -2.0), (10.0, 0.0)]);
        let mut sc = PlatoonScenario::nominal(p, Realization::chat(&p).unwrap(), lead, n).unwrap();
        sc.initial = InitialOffsets { followers: vec![[0.7, -0.2, 0.1]] };
        sc.attacks[0][1] = AttackSignal::Constant { amplitude: 0.4 };
        sim::run(&sc).unwrap()
    };
    let a = run(coarse, horizon);
    let b = run(fine, 2 * horizon);
    let mut worst = 0.0f64;
    for (fa, fb) in a.followers.iter().zip(&b.followers) {
        for k in 0..a.len() {
            worst = worst
                .max((fa.e[k] - fb.e[2 * k]).abs())
                .max((fa.v[k] - fb.v[2 * k]).abs())
                .max((fa.u[k] - fb.u[2 * k]).abs());
        }
    }
    assert!(worst <= 1e-8, "{worst:e}");
}

/// The simulated follower state stays inside the certified ellipsoid.
#[test]
fn simulated_state_stays_in_ellipsoid() {
    let params = PlatoonParams { m: 2, ..PlatoonParams::default() };
    let w = AttackBounds::new(vec![0.5, 1.0, 0.2, 0.8, 1.0, 0.3]).unwrap();
    let opts = small_grid();
    let synthesis = synth::optimize_realization(&params, &w, &opts).unwrap();
    let cases = [
        (Realization::base(), synthesis.comparisons["C"].ellipsoid.clone()),
        (synthesis.realization(), synthesis.ellipsoid.clone()),
    ];
    for (real, ell) in cases {
        for seed in 0..4 {
            let horizon = 1000;
            let mut sc = PlatoonScenario::nominal(params, real, LeadProfile::constant_speed(20.0, horizon), horizon).unwrap();
            sc.bounds = w.clone();
            sc.seed = seed;
            sc.attacks[0] = std::array::from_fn(|j| match (seed + j as u64) % 2 {
                0 => AttackSignal::Bangbang { amplitude: 10.0, switch_prob: 0.05 },
                _ => AttackSignal::Uniform { amplitude: 10.0 },
            });
            let tr = sim::run(&sc).unwrap();
            let f = &tr.followers[0];
            for k in 0..tr.len() {
                let x = f.decoupled_state(k);
                let level = x.dot(&(&ell.p * &x)) / ell.bound_lyap;
                assert!(level <= 1.0 + 1e-8, "seed {seed}, k {k}: {level}");
            }
        }
    }
}

#[test]
fn uniform_bound_scaling() {
    let params = PlatoonParams::default();
    let opts = small_grid();
    let w1 = AttackBounds::uniform(CHANNELS, 1.0).unwrap();
    let w3 = w1.scaled(3.0).unwrap();
    let r1 = synth::optimize_realization(&params, &w1, &opts).unwrap();
    let r3 = synth::optimize_realization(&params, &w3, &opts).unwrap();
    assert_eq!(r1.a_opt, r3.a_opt);
    assert!((r3.trace_opt - 9.0 * r1.trace_opt).abs() <= 1e-6 * r3.trace_opt);
    // The minimizer is not unique; its quality at unit bounds is.
    let cross = synth::evaluate_realization(&r3.realization(), &params, &w1, &opts).unwrap();
    let at_a = cross.feasible.iter().find(|e| e.a == r1.a_opt).unwrap();
    assert!((at_a.trace - r1.trace_opt).abs() <= 1e-6 * r1.trace_opt);
}

#[test]
fn larger_bounds_never_shrink_the_set() {
    let params = PlatoonParams::default();
    let opts = small_grid();
    let base = AttackBounds::uniform(CHANNELS, 1.0).unwrap();
    let r0 = synth::optimize_realization(&params, &base, &opts).unwrap();
    for j in 0..CHANNELS {
        let mut w = base.values().to_vec();
        w[j] = 2.0;
        let r = synth::optimize_realization(&params, &AttackBounds::new(w).unwrap(), &opts).unwrap();
        for (p, q) in r0.curve.iter().zip(&r.curve) {
            if let (Some(small), Some(big)) = (p.trace, q.trace) {
                assert!(big >= small - 1e-6 * small, "channel {j}, a = {}: {big} < {small}", p.a);
            }
        }
    }
}

#[test]
fn grid_order_is_irrelevant() {
    let params = PlatoonParams::default();
    let w = AttackBounds::uniform(CHANNELS, 1.0).unwrap();
    let opts = small_grid();
    let shuffled = SearchOptions {
        a_grid: vec![0.999, 0.995, 0.9975, 0.995],
        ..opts.clone()
    };
    let a = synth::optimize_realization(&params, &w, &opts).unwrap();
    let b = synth::optimize_realization(&params, &w, &shuffled).unwrap();
    assert_eq!(a, b);
}
