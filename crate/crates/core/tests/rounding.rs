use num_traits::Zero;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roundsafe::rounding::{float_to_rational, hardware_rounding_available, Real};
use roundsafe::{rational_to_float, Direction, Rational, RoundingControl, Strategy};

mod common;
use common::q;

#[derive(Clone, Copy, Debug)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

const OPS: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Div];

fn apply<F: Real>(ctl: &RoundingControl, op: Op, a: F, b: F, dir: Direction) -> F {
    match op {
        Op::Add => ctl.add(a, b, dir),
        Op::Sub => ctl.sub(a, b, dir),
        Op::Mul => ctl.mul(a, b, dir),
        Op::Div => ctl.div(a, b, dir),
    }
}

fn exact_op(op: Op, a: &Rational, b: &Rational) -> Rational {
    match op {
        Op::Add => a + b,
        Op::Sub => a - b,
        Op::Mul => a * b,
        Op::Div => a / b,
    }
}

fn ulps_apart(lo: f64, hi: f64) -> u64 {
    let mut x = lo;
    let mut n = 0;
    while x < hi {
        x = x.next_up();
        n += 1;
    }
    n
}

fn random_f64<R: Rng>(rng: &mut R) -> f64 {
    let m: f64 = rng.gen_range(1.0..2.0);
    let e = rng.gen_range(-40..40);
    let s = if rng.gen_bool(0.3) { -1.0 } else { 1.0 };
    s * m * 2f64.powi(e)
}

#[test]
fn directed_results_bracket_the_exact_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for strategy in [Strategy::HardwareMode, Strategy::Nudge] {
        let ctl = RoundingControl::new(strategy);
        for _ in 0..5_000 {
            let (a, b) = (random_f64(&mut rng), random_f64(&mut rng));
            for op in OPS {
                let exact = exact_op(op, &float_to_rational(a).unwrap(), &float_to_rational(b).unwrap());
                let lo = apply(&ctl, op, a, b, Direction::Down);
                let hi = apply(&ctl, op, a, b, Direction::Up);
                assert!(float_to_rational(lo).unwrap() <= exact, "{op:?} {a} {b}");
                assert!(float_to_rational(hi).unwrap() >= exact, "{op:?} {a} {b}");
                let gap = ulps_apart(lo, hi);
                let allowed = match ctl.strategy() {
                    Strategy::HardwareMode => 1,
                    Strategy::Nudge => 3,
                };
                assert!(gap <= allowed, "{op:?} {a} {b}: {gap} ulps under {strategy}");
                // the exact value is representable iff both bounds agree
                let near = apply(&ctl, op, a, b, Direction::Nearest);
                if float_to_rational(near).unwrap() == exact && ctl.strategy() == Strategy::HardwareMode {
                    assert_eq!(lo, hi);
                }
            }
        }
    }
}

#[test]
fn underflow_and_exact_zero() {
    for strategy in [Strategy::HardwareMode, Strategy::Nudge] {
        let ctl = RoundingControl::new(strategy);
        let tiny = f64::from_bits(1);
        assert_eq!(ctl.mul(tiny, 0.5, Direction::Down), 0.0);
        assert_eq!(ctl.mul(tiny, 0.5, Direction::Up), tiny);
        assert_eq!(ctl.mul(-tiny, 0.5, Direction::Down), -tiny);
        // an exact zero sum must not be nudged
        assert_eq!(ctl.add(0.25, -0.25, Direction::Up), 0.0);
        assert_eq!(ctl.add(0.0, 0.0, Direction::Down), 0.0);
        assert_eq!(ctl.div(1.0, 0.0, Direction::Down), f64::INFINITY);
    }
}

#[test]
fn single_precision_tenth() {
    let tenth: f32 = rational_to_float(&q(1, 10), Direction::Nearest);
    let expected = Rational::new(13421773.into(), num_bigint::BigInt::from(2).pow(27u32));
    assert_eq!(float_to_rational(tenth).unwrap(), expected);
    let down: f32 = rational_to_float(&q(1, 10), Direction::Down);
    let up: f32 = rational_to_float(&q(1, 10), Direction::Up);
    assert_eq!(up, tenth);
    assert_eq!(down, tenth.next_down());
}

#[test]
fn conversion_edge_cases() {
    let zero: f64 = rational_to_float(&Rational::zero(), Direction::Up);
    assert_eq!(zero, 0.0);
    let one: f64 = rational_to_float(&q(1, 1), Direction::Down);
    assert_eq!(one, 1.0);
    let third_down: f64 = rational_to_float(&q(1, 3), Direction::Down);
    let third_up: f64 = rational_to_float(&q(1, 3), Direction::Up);
    assert_eq!(third_down.next_up(), third_up);
    // below the smallest subnormal
    let huge_den = Rational::new(1.into(), num_bigint::BigInt::from(2).pow(1100u32));
    let d: f64 = rational_to_float(&huge_den, Direction::Down);
    let u: f64 = rational_to_float(&huge_den, Direction::Up);
    assert_eq!((d, u), (0.0, f64::from_bits(1)));
}

// Repeated directed operations on the same operands, interleaved with
// nearest-mode ones, must not be merged or reordered across mode changes.
#[test]
fn mode_changes_are_not_optimised_away() {
    if !hardware_rounding_available() {
        return;
    }
    let ctl = RoundingControl::new(Strategy::HardwareMode);
    let a = std::hint::black_box(1.0f64);
    let b = std::hint::black_box(3.0f64);
    let mut seen = Vec::new();
    for i in 0..1000 {
        let dir = match i % 3 {
            0 => Direction::Down,
            1 => Direction::Up,
            _ => Direction::Nearest,
        };
        seen.push((dir, ctl.div(a, b, dir)));
    }
    let third = 1.0f64 / 3.0;
    for (dir, x) in seen {
        let expected = match dir {
            Direction::Down => third,
            Direction::Up => third.next_up(),
            Direction::Nearest => third,
        };
        assert_eq!(x, expected, "{dir:?}");
    }
    // single precision through the same path
    let af = std::hint::black_box(1.0f32);
    let bf = std::hint::black_box(3.0f32);
    let down = ctl.div(af, bf, Direction::Down);
    let up = ctl.div(af, bf, Direction::Up);
    assert_eq!(down.next_up(), up);
}

proptest! {
    #[test]
    fn conversion_is_monotone(a in 0u64..1_000_000, b in 1u64..1_000_000, c in 0u64..1_000_000, d in 1u64..1_000_000) {
        let x = Rational::new(a.into(), b.into());
        let y = Rational::new(c.into(), d.into());
        for dir in [Direction::Down, Direction::Up, Direction::Nearest] {
            let fx: f64 = rational_to_float(&x, dir);
            let fy: f64 = rational_to_float(&y, dir);
            if x <= y {
                prop_assert!(fx <= fy);
            }
            let sx: f32 = rational_to_float(&x, dir);
            let sy: f32 = rational_to_float(&y, dir);
            if x <= y {
                prop_assert!(sx <= sy);
            }
        }
    }

    #[test]
    fn conversion_brackets(a in 0u64..1_000_000_000, b in 1u64..1_000_000_000) {
        let x = Rational::new(a.into(), b.into());
        let lo: f64 = rational_to_float(&x, Direction::Down);
        let hi: f64 = rational_to_float(&x, Direction::Up);
        prop_assert!(float_to_rational(lo).unwrap() <= x);
        prop_assert!(float_to_rational(hi).unwrap() >= x);
        prop_assert!(hi == lo || lo.next_up() == hi);
    }

    #[test]
    fn nudge_never_tighter_than_hardware(a in -1.0e6f64..1.0e6, b in 1.0e-3f64..1.0e6) {
        let hw = RoundingControl::new(Strategy::HardwareMode);
        let nd = RoundingControl::new(Strategy::Nudge);
        for op in OPS {
            prop_assert!(apply(&nd, op, a, b, Direction::Down) <= apply(&hw, op, a, b, Direction::Down));
            prop_assert!(apply(&nd, op, a, b, Direction::Up) >= apply(&hw, op, a, b, Direction::Up));
        }
    }
}
