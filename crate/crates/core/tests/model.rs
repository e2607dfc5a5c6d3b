use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roundsafe::model::{random_mdp, RandomShape};
use roundsafe::{build_counterexample, parse_model, serialize_model, validate, ModelError};

mod common;
use common::q;

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_mdp(&mut rng, &RandomShape::default());
        let text = serialize_model(&m);
        let back = parse_model(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serialize_model(&back), text);
        prop_assert!(validate(&back).is_empty());
    }
}

#[test]
fn counterexample_round_trips() {
    for n in 0..6 {
        let m = build_counterexample(n, &q(1, 4)).unwrap();
        assert_eq!(m.state_count(), 4 + n);
        assert_eq!(m.branch_count(), 7 + 2 * n);
        assert_eq!(parse_model(&serialize_model(&m)).unwrap(), m);
    }
}

#[test]
fn diagnostics_name_the_line() {
    let text = "mdp 2 0\nstate 0:\n  1/3 -> 0, 1/2 -> 1\nstate 1:\n  1/1 -> 1\n";
    let err = parse_model(text).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, ModelError::Syntax { line: 3, .. }), "{msg}");
    assert!(msg.contains("5/6"), "{msg}");

    let err = parse_model("mdp 2 0\nstate 0:\n  0.5 -> 0, 0.5 -> 1\n").unwrap_err();
    assert!(matches!(err, ModelError::Syntax { line: 3, .. }));
    let err = parse_model("mdp 2 0\nstate 0:\n  1/1 -> 0\n").unwrap_err();
    assert!(err.to_string().contains("state 1"), "{err}");
    let err = parse_model("mdp 1 0\nstate 0:\n  1/1 -> 4\n").unwrap_err();
    assert!(err.to_string().contains('4'), "{err}");
}
