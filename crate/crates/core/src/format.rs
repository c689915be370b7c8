//! Stable text rendering of reals for JSON and CSV output.
//!
//! Every finite real is written with 17 significant digits, in positional
//! notation for decimal exponents in `[-5, 17)` and scientific notation
//! otherwise. Non-finite values become JSON `null` (empty in CSV).

use serde::Serializer;
use serde_json::value::RawValue;

const SIG_DIGITS: usize = 17;

/// 17-significant-digit rendering; `"null"` for non-finite values.
pub fn real(x: f64) -> String {
    if !x.is_finite() {
        return "null".to_string();
    }
    if x == 0.0 {
        return "0.0".to_string();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if !(-5..17).contains(&exp) {
        return format!("{mantissa}e{exp}");
    }
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::with_capacity(SIG_DIGITS + 8);
    if negative {
        out.push('-');
    }
    if exp < 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    } else {
        let split = exp as usize + 1;
        out.push_str(&digits[..split]);
        out.push('.');
        if split < digits.len() {
            out.push_str(&digits[split..]);
        } else {
            out.push('0');
        }
    }
    out
}

/// Same as [`real`] but empty for non-finite values, for CSV cells.
pub fn real_csv(x: f64) -> String {
    if x.is_finite() {
        real(x)
    } else {
        String::new()
    }
}

/// `serialize_with` helper writing a real through [`real`].
pub fn ser_real<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(real(*x)).map_err(serde::ser::Error::custom)?;
    serde::Serialize::serialize(&raw, s)
}

/// `serialize_with` helper for optional reals.
pub fn ser_opt_real<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_real(v, s),
        None => s.serialize_none(),
    }
}

/// `serialize_with` helper for lists of reals.
pub fn ser_real_vec<S: Serializer>(xs: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        let raw = RawValue::from_string(real(*x)).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> crate::Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| crate::Error::Internal(format!("json serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}
