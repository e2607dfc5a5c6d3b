use roundsafe::iteration::{bellman, initialize};
use roundsafe::model::RandomShape;
use roundsafe::rounding::Real;
use roundsafe::{
    parse_model, solve, solve_observed, Direction, Mdp, Opt, Precision, QualitativeSets,
    RoundingControl, SolveConfig, Strategy, Termination, Variant,
};

mod common;
use common::{exact, goal, q, suite};

const SLOW_CYCLE: &str = "\
mdp 3 0
label goal 1
state 0:
  99/100 -> 0, 1/300 -> 1, 2/300 -> 2
state 1:
  1/1 -> 1
state 2:
  1/1 -> 2
";

fn configs() -> Vec<SolveConfig> {
    let mut out = Vec::new();
    for variant in [Variant::SrIii, Variant::SrSii] {
        for precision in [Precision::Double, Precision::Single] {
            for strategy in [Strategy::HardwareMode, Strategy::Nudge] {
                out.push(SolveConfig {
                    variant,
                    precision,
                    strategy,
                    check_all_states: true,
                    ..SolveConfig::default()
                });
            }
        }
    }
    out
}

#[test]
fn safe_intervals_contain_the_exact_value_and_shrink_monotonically() {
    for (i, m) in suite(40, 201, RandomShape::default()).iter().enumerate() {
        let g = goal(m);
        for opt in [Opt::Max, Opt::Min] {
            let value = roundsafe::exact_reachability(m, &g, opt, 1 << 20).unwrap().value;
            for cfg in configs() {
                let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
                let mut violations = 0;
                let mut obs = |_: u64, l: &[f64], u: &[f64]| {
                    if let Some((pl, pu)) = &prev {
                        violations += l.iter().zip(pl).filter(|(a, b)| a < b).count();
                        violations += u.iter().zip(pu).filter(|(a, b)| a > b).count();
                    }
                    prev = Some((l.to_vec(), u.to_vec()));
                };
                let r = solve_observed(m, &g, opt, &cfg, None, Some(&mut obs)).unwrap();
                assert_eq!(violations, 0, "model {i}");
                assert!(exact(r.lower) <= value && value <= exact(r.upper), "model {i} {opt} {:?}", cfg.variant);
                assert!(r.lower <= r.upper);
            }
        }
    }
}

#[test]
fn interleaved_and_sequential_agree_bitwise() {
    for m in suite(40, 202, RandomShape::default()) {
        let g = goal(&m);
        for opt in [Opt::Max, Opt::Min] {
            for (a, b) in [(Variant::Iii, Variant::Sii), (Variant::SrIii, Variant::SrSii)] {
                for precision in [Precision::Double, Precision::Single] {
                    let cfg = |v| SolveConfig {
                        variant: v,
                        precision,
                        ..SolveConfig::default()
                    };
                    let ra = solve(&m, &g, opt, &cfg(a)).unwrap();
                    let rb = solve(&m, &g, opt, &cfg(b)).unwrap();
                    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                    assert_eq!(bits(&ra.full_vectors.lower), bits(&rb.full_vectors.lower));
                    assert_eq!(bits(&ra.full_vectors.upper), bits(&rb.full_vectors.upper));
                    assert_eq!(ra.sweeps, rb.sweeps);
                }
            }
        }
    }
}

#[test]
fn stalled_vectors_are_a_fixpoint() {
    let m = parse_model(SLOW_CYCLE).unwrap();
    let g = m.label("goal").unwrap().clone();
    for strategy in [Strategy::HardwareMode, Strategy::Nudge] {
        for precision in [Precision::Double, Precision::Single] {
            let cfg = SolveConfig {
                epsilon: q(1, 1_000_000_000_000_000),
                precision,
                strategy,
                ..SolveConfig::default()
            };
            let r = solve(&m, &g, Opt::Max, &cfg).unwrap();
            assert_eq!(r.termination, Termination::Stalled);
            assert!(exact(r.lower) <= q(1, 3) && q(1, 3) <= exact(r.upper));
            let again = SolveConfig {
                max_sweeps: 1,
                ..cfg.clone()
            };
            let r2 = solve_observed(&m, &g, Opt::Max, &again, Some(&r.full_vectors), None).unwrap();
            assert_eq!(r2.termination, Termination::Stalled);
            assert_eq!(r2.sweeps, 1);
            assert!(!r2.full_vectors.changed);
            assert_eq!(r2.full_vectors, r.full_vectors);
        }
    }
}

#[test]
fn sweep_limit_and_timeout_keep_bounds_sound() {
    let m = parse_model(SLOW_CYCLE).unwrap();
    let g = m.label("goal").unwrap().clone();
    let cfg = SolveConfig {
        max_sweeps: 5,
        ..SolveConfig::default()
    };
    let r = solve(&m, &g, Opt::Max, &cfg).unwrap();
    assert_eq!((r.sweeps, r.termination), (5, Termination::SweepLimit));
    assert!(exact(r.lower) <= q(1, 3) && q(1, 3) <= exact(r.upper));
    let cfg = SolveConfig {
        deadline: Some(std::time::Instant::now()),
        ..SolveConfig::default()
    };
    let r = solve(&m, &g, Opt::Max, &cfg).unwrap();
    assert_eq!((r.sweeps, r.termination), (0, Termination::Timeout));
    assert_eq!((r.lower, r.upper), (0.0, 1.0));
}

/// One sequential sweep computed through the public per-state update.
fn reference_sweep<F: Real>(m: &Mdp, q: &QualitativeSets, opt: Opt, strategy: Strategy) -> (Vec<f64>, Vec<f64>) {
    let ctl = RoundingControl::new(strategy);
    let init = initialize(m, q);
    let mut l: Vec<F> = init.lower.iter().map(|&x| F::from_f64_exact(x)).collect();
    let mut u: Vec<F> = init.upper.iter().map(|&x| F::from_f64_exact(x)).collect();
    let unknown: Vec<usize> = (0..m.state_count()).filter(|&s| q.is_unknown(s)).collect();
    for &s in &unknown {
        let x = bellman(m, s, &l, opt, Direction::Down, &ctl);
        l[s] = if x > F::ONE { F::ONE } else { x };
    }
    for &s in &unknown {
        let x = bellman(m, s, &u, opt, Direction::Up, &ctl);
        u[s] = if x > F::ONE { F::ONE } else { x };
    }
    (
        l.iter().map(|x| x.to_f64()).collect(),
        u.iter().map(|x| x.to_f64()).collect(),
    )
}

#[test]
fn compiled_sweep_matches_reference_update() {
    for m in suite(40, 203, RandomShape::default()) {
        let g = goal(&m);
        let m = m.with_absorbing(&g);
        // min queries are iterated on the model as given
        let qual = QualitativeSets::compute(&m, &g, Opt::Min);
        if (0..m.state_count()).all(|s| !qual.is_unknown(s)) {
            continue;
        }
        for strategy in [Strategy::HardwareMode, Strategy::Nudge] {
            for precision in [Precision::Double, Precision::Single] {
                let cfg = SolveConfig {
                    max_sweeps: 1,
                    check_all_states: true,
                    precision,
                    strategy,
                    ..SolveConfig::default()
                };
                let r = solve(&m, &g, Opt::Min, &cfg).unwrap();
                let (l, u) = match precision {
                    Precision::Double => reference_sweep::<f64>(&m, &qual, Opt::Min, strategy),
                    Precision::Single => reference_sweep::<f32>(&m, &qual, Opt::Min, strategy),
                };
                assert_eq!(r.full_vectors.lower, l);
                assert_eq!(r.full_vectors.upper, u);
            }
        }
    }
}

#[test]
fn mode_switch_counts_follow_the_variant() {
    let m = parse_model(SLOW_CYCLE).unwrap();
    let g = m.label("goal").unwrap().clone();
    for variant in [Variant::SrIii, Variant::SrSii] {
        let r = solve(&m, &g, Opt::Max, &SolveConfig::new(variant)).unwrap();
        if r.strategy_fallback {
            assert_eq!(r.mode_switches, 0);
            continue;
        }
        let k = r.iterated_states as u64;
        let per_sweep = if variant == Variant::SrIii { 2 * k } else { 2 };
        assert_eq!(r.mode_switches, per_sweep * r.sweeps + 2);
    }
    let nudge = SolveConfig {
        strategy: Strategy::Nudge,
        ..SolveConfig::default()
    };
    assert_eq!(solve(&m, &g, Opt::Max, &nudge).unwrap().mode_switches, 0);
}
