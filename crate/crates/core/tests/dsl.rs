mod common;

use common::{feature_values, random_cond, random_features, Cond};
use icms::safety::{eval_rule, parse_rule, RuleErrorKind};
use icms::Severity;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rule_text(c: &Cond, danger: bool) -> String {
    format!("{} -> {}", c.render(), if danger { "danger" } else { "warning" })
}

proptest! {
    #[test]
    fn pretty_print_round_trips(seed in any::<u64>(), depth in 1usize..7, danger in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cond = random_cond(&mut rng, depth);
        let parsed = parse_rule(&rule_text(&cond, danger)).unwrap();
        let again = parse_rule(&parsed.to_string()).unwrap();
        prop_assert_eq!(&parsed, &again);
        let tight = parse_rule(&format!("{} -> warning", cond.render_tight())).unwrap();
        prop_assert_eq!(&parsed.expr, &tight.expr);
    }

    #[test]
    fn evaluation_matches_oracle(seed in any::<u64>(), depth in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cond = random_cond(&mut rng, depth);
        let rule = parse_rule(&rule_text(&cond, true)).unwrap();
        for _ in 0..20 {
            let w = random_features(&mut rng);
            let expected = cond.eval(&feature_values(&w)).then_some(Severity::Danger);
            prop_assert_eq!(eval_rule(&rule, &w), expected, "rule {} on {:?}", cond.render(), w);
        }
    }
}

#[test]
fn keywords_are_upper_case() {
    let err = parse_rule("avg_speed > 50 and pedestrian_count > 1 -> danger").unwrap_err();
    assert_eq!(err.kind, RuleErrorKind::Syntax);
    assert_eq!((err.line, err.column), (1, 16));
}

#[test]
fn unknown_identifier_is_located() {
    let err = parse_rule("avg_speed > 50 AND\n  speeed > 1 -> warning").unwrap_err();
    assert_eq!(err.kind, RuleErrorKind::UnknownIdentifier);
    assert_eq!((err.line, err.column), (2, 3));
}

#[test]
fn depth_limit() {
    let nested = |n: usize| format!("{}vehicle_count > 1 -> warning", "NOT ".repeat(n));
    assert!(parse_rule(&nested(31)).is_ok());
    assert_eq!(parse_rule(&nested(32)).unwrap_err().kind, RuleErrorKind::DepthExceeded);
}

#[test]
fn absent_speed_never_compares_true() {
    let mut w = random_features(&mut ChaCha8Rng::seed_from_u64(1));
    w.avg_speed = None;
    for text in ["avg_speed < 1000 -> warning", "avg_speed != 3 -> warning"] {
        assert_eq!(eval_rule(&parse_rule(text).unwrap(), &w), None);
    }
    assert_eq!(eval_rule(&parse_rule("NOT avg_speed > 3 -> warning").unwrap(), &w), Some(Severity::Warning));
}
