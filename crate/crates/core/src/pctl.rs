//! Top-level probabilistic reachability properties and their three-valued
//! evaluation against a verified interval.

use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed};
use thiserror::Error;

use crate::model::{parse_rational, Opt, Rational};
use crate::rounding::float_to_rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    True,
    False,
    Unknown,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::True => "true",
            Verdict::False => "false",
            Verdict::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    pub fn holds(self, x: &Rational, c: &Rational) -> bool {
        match self {
            Comparator::Lt => x < c,
            Comparator::Le => x <= c,
            Comparator::Gt => x > c,
            Comparator::Ge => x >= c,
        }
    }
}

/// Scheduler optimum that decides `P~c`: upper-bound comparisons must hold
/// for the maximising scheduler, lower-bound ones for the minimising one.
pub fn opt_for(cmp: Comparator) -> Opt {
    match cmp {
        Comparator::Lt | Comparator::Le => Opt::Max,
        Comparator::Gt | Comparator::Ge => Opt::Min,
    }
}

/// Decides `x ~ c` for every `x` in `[lower, upper]`.
///
/// The bounds are compared with `c` as exact rationals, never by converting
/// `c` to a float. Non-finite bounds yield `Unknown`.
pub fn evaluate(lower: f64, upper: f64, cmp: Comparator, c: &Rational) -> Verdict {
    let (Some(lo), Some(hi)) = (float_to_rational(lower), float_to_rational(upper)) else {
        return Verdict::Unknown;
    };
    // the comparison is monotone in x, so the endpoints decide
    let (all, none) = match cmp {
        Comparator::Lt | Comparator::Le => (cmp.holds(&hi, c), !cmp.holds(&lo, c)),
        Comparator::Gt | Comparator::Ge => (cmp.holds(&lo, c), !cmp.holds(&hi, c)),
    };
    if all {
        Verdict::True
    } else if none {
        Verdict::False
    } else {
        Verdict::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    /// `Pmax=?` / `Pmin=?`: report the interval.
    Value,
    /// `P~c`: decide the comparison.
    Threshold(Comparator, Rational),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Property {
    pub opt: Opt,
    pub goal_label: String,
    pub query: Query,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.query {
            Query::Value => write!(f, "P{}=? [ F \"{}\" ]", self.opt, self.goal_label),
            Query::Threshold(cmp, c) => {
                write!(f, "P{}{} [ F \"{}\" ]", cmp.symbol(), c, self.goal_label)
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PropertyError {
    #[error("property must start with `P`")]
    MissingOperator,
    #[error("expected `max=?`, `min=?` or a comparator after `P`")]
    BadQuery,
    #[error("invalid bound: {0}")]
    BadBound(String),
    #[error("bound {0} lies outside [0, 1]")]
    BoundRange(Rational),
    #[error("nested probabilistic operators are not supported")]
    Nested,
    #[error("only `F \"label\"` path formulas are supported, found {0:?}")]
    PathFormula(String),
    #[error("unexpected trailing input {0:?}")]
    Trailing(String),
}

fn parse_bound(tok: &str) -> Result<Rational, PropertyError> {
    let value = if tok.contains('/') {
        parse_rational(tok).map_err(PropertyError::BadBound)?
    } else if !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_digit()) {
        Rational::from_integer(tok.parse::<BigInt>().expect("digits"))
    } else {
        return Err(PropertyError::BadBound(format!(
            "expected a rational num/den, found {tok:?}"
        )));
    };
    if value.is_negative() || value > Rational::one() {
        return Err(PropertyError::BoundRange(value));
    }
    Ok(value)
}

/// Parses `P<=1/2 [ F "label" ]`, `Pmax=? [ F "label" ]` or
/// `Pmin=? [ F "label" ]`.
pub fn parse_property(text: &str) -> Result<Property, PropertyError> {
    let text = text.trim();
    let rest = text.strip_prefix('P').ok_or(PropertyError::MissingOperator)?;
    let open = rest.find('[').ok_or(PropertyError::PathFormula(String::new()))?;
    let (head, body) = rest.split_at(open);
    let head = head.trim();

    let (opt, query) = if let Some(q) = head.strip_prefix("max") {
        if q.trim() != "=?" {
            return Err(PropertyError::BadQuery);
        }
        (Opt::Max, Query::Value)
    } else if let Some(q) = head.strip_prefix("min") {
        if q.trim() != "=?" {
            return Err(PropertyError::BadQuery);
        }
        (Opt::Min, Query::Value)
    } else {
        let (cmp, bound) = if let Some(b) = head.strip_prefix("<=") {
            (Comparator::Le, b)
        } else if let Some(b) = head.strip_prefix(">=") {
            (Comparator::Ge, b)
        } else if let Some(b) = head.strip_prefix('<') {
            (Comparator::Lt, b)
        } else if let Some(b) = head.strip_prefix('>') {
            (Comparator::Gt, b)
        } else {
            return Err(PropertyError::BadQuery);
        };
        let c = parse_bound(bound.trim())?;
        (opt_for(cmp), Query::Threshold(cmp, c))
    };

    let body = &body[1..];
    let close = body
        .rfind(']')
        .ok_or_else(|| PropertyError::PathFormula(body.to_string()))?;
    let trailing = body[close + 1..].trim();
    if !trailing.is_empty() {
        return Err(PropertyError::Trailing(trailing.to_string()));
    }
    let path = body[..close].trim();
    if path.contains('P') && path.contains('[') {
        return Err(PropertyError::Nested);
    }
    let label = path
        .strip_prefix('F')
        .map(str::trim)
        .and_then(|l| l.strip_prefix('"'))
        .and_then(|l| l.strip_suffix('"'))
        .filter(|l| !l.is_empty() && !l.contains('"'))
        .ok_or_else(|| PropertyError::PathFormula(path.to_string()))?;

    Ok(Property {
        opt,
        goal_label: label.to_string(),
        query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    #[test]
    fn point_and_disjoint_intervals() {
        assert_eq!(evaluate(0.25, 0.25, Comparator::Le, &q(1, 2)), Verdict::True);
        assert_eq!(evaluate(0.6, 0.7, Comparator::Le, &q(1, 2)), Verdict::False);
        assert_eq!(
            evaluate(0.5, 0.5f64.next_up(), Comparator::Le, &q(1, 2)),
            Verdict::Unknown
        );
        assert_eq!(evaluate(0.5, 0.5, Comparator::Le, &q(1, 2)), Verdict::True);
        assert_eq!(evaluate(0.5, 0.5, Comparator::Lt, &q(1, 2)), Verdict::False);
        assert_eq!(evaluate(0.0, 1.0, Comparator::Ge, &q(0, 1)), Verdict::True);
    }

    #[test]
    fn threshold_compared_exactly() {
        // 0.1 as a double lies above 1/10
        assert_eq!(evaluate(0.1, 0.1, Comparator::Le, &q(1, 10)), Verdict::False);
        assert_eq!(evaluate(0.1, 0.1, Comparator::Gt, &q(1, 10)), Verdict::True);
    }

    #[test]
    fn opt_selection() {
        assert_eq!(opt_for(Comparator::Le), Opt::Max);
        assert_eq!(opt_for(Comparator::Lt), Opt::Max);
        assert_eq!(opt_for(Comparator::Gt), Opt::Min);
        assert_eq!(opt_for(Comparator::Ge), Opt::Min);
    }

    #[test]
    fn parses_supported_forms() {
        let p = parse_property(r#"P<=1/2 [ F "plus" ]"#).unwrap();
        assert_eq!(p.opt, Opt::Max);
        assert_eq!(p.goal_label, "plus");
        assert_eq!(p.query, Query::Threshold(Comparator::Le, q(1, 2)));
        let p = parse_property(r#"Pmin=? [F "goal"]"#).unwrap();
        assert_eq!((p.opt, p.query), (Opt::Min, Query::Value));
        let p = parse_property(r#"P>=0 [F "plus"]"#).unwrap();
        assert_eq!(p.query, Query::Threshold(Comparator::Ge, q(0, 1)));
        let p = parse_property(r#"P>3/4[F "a"]"#).unwrap();
        assert_eq!(p.to_string(), r#"P>3/4 [ F "a" ]"#);
    }

    #[test]
    fn rejects_unsupported_forms() {
        assert_eq!(
            parse_property(r#"P<=1/2 [ F P>1/2 [ F "a" ] ]"#),
            Err(PropertyError::Nested)
        );
        assert!(matches!(
            parse_property(r#"P<=0.5 [ F "a" ]"#),
            Err(PropertyError::BadBound(_))
        ));
        assert!(matches!(
            parse_property(r#"P<=3/2 [ F "a" ]"#),
            Err(PropertyError::BoundRange(_))
        ));
        assert!(matches!(
            parse_property(r#"P<=1/2 [ G "a" ]"#),
            Err(PropertyError::PathFormula(_))
        ));
        assert_eq!(parse_property(r#"Pmax=! [ F "a" ]"#), Err(PropertyError::BadQuery));
        assert_eq!(parse_property(r#"Q<=1 [ F "a" ]"#), Err(PropertyError::MissingOperator));
    }
}
