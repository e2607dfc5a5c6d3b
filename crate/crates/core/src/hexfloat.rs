//! Hexadecimal float literals (`0x1.8p-1`), which print a double exactly.

use num_bigint::BigInt;
use num_traits::Zero;

use crate::model::Rational;
use crate::rounding::{rational_to_float, Direction};

/// Formats `x` in the C99 `%a` style.
pub fn to_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp_field == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_field == 0 {
        (0, -1022)
    } else {
        (1, exp_field - 1023)
    };
    let digits = format!("{frac:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Parses a literal produced by [`to_hex`] (or any exact hex literal).
pub fn from_hex(s: &str) -> Option<f64> {
    let s = s.trim();
    match s {
        "nan" => return Some(f64::NAN),
        "inf" | "+inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let body = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X"))?;
    let (mantissa, exp) = body.split_once(['p', 'P'])?;
    let exp: i64 = exp.parse().ok()?;
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let m = BigInt::parse_bytes(digits.as_bytes(), 16)?;
    let shift = exp - 4 * frac_part.len() as i64;
    let two = BigInt::from(2);
    let mut q = Rational::from_integer(m);
    if shift >= 0 {
        q *= Rational::from_integer(num_traits::pow(two, shift as usize));
    } else {
        q /= Rational::from_integer(num_traits::pow(two, (-shift) as usize));
    }
    let value: f64 = if q.is_zero() {
        0.0
    } else {
        rational_to_float(&q, Direction::Nearest)
    };
    // the literal must denote a double exactly
    let back = crate::rounding::float_to_rational(value)?;
    if back != q && !(q.is_zero() && back.is_zero()) {
        return None;
    }
    Some(if negative { -value } else { value })
}
