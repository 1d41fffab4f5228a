//! Small helpers around `BigInt` / `BigRational`.
//!
//! Rationals cross the I/O boundary as `"p/q"` strings (plain `"p"` when the
//! denominator is one); binary floating point never appears.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::EngineError;

/// Shorthand for an exact rational built from machine integers.
pub fn qq(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Integer as a rational.
pub fn qi(num: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(num))
}

/// Parses `"p"` or `"p/q"` with optional sign. Rejects zero denominators.
pub fn parse_rational(text: &str) -> Result<BigRational, EngineError> {
    let bad = || EngineError::Parse(format!("malformed rational `{text}`"));
    let mut parts = text.trim().splitn(2, '/');
    let num: BigInt = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let den: BigInt = match parts.next() {
        Some(d) => d.trim().parse().map_err(|_| bad())?,
        None => BigInt::one(),
    };
    if den.is_zero() {
        return Err(EngineError::Parse(format!("zero denominator in `{text}`")));
    }
    Ok(BigRational::new(num, den))
}

/// Renders a rational as `"p"` or `"p/q"` in lowest terms.
pub fn render_rational(x: &BigRational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Floor of a rational as an integer.
pub fn floor_int(x: &BigRational) -> BigInt {
    x.floor().to_integer()
}

/// Ceiling of a rational as an integer.
pub fn ceil_int(x: &BigRational) -> BigInt {
    x.ceil().to_integer()
}

/// Fractional part `x - floor(x)`, always in `[0, 1)`.
pub fn frac_part(x: &BigRational) -> BigRational {
    x - BigRational::from_integer(floor_int(x))
}

/// True when `x` is an integer.
pub fn is_integer(x: &BigRational) -> bool {
    x.denom().is_one()
}

/// `n!` as a rational; `n` must be small enough to enumerate.
pub fn factorial(n: u32) -> BigRational {
    let mut acc = BigInt::one();
    for k in 2..=n {
        acc *= BigInt::from(k);
    }
    BigRational::from_integer(acc)
}

/// Least common multiple of the denominators of a slice.
pub fn denominator_lcm(xs: &[BigRational]) -> BigInt {
    let mut l = BigInt::one();
    for x in xs {
        l = num_integer::lcm(l, x.denom().clone());
    }
    l
}

/// Greatest common divisor of numerators after clearing denominators; the
/// content of a rational vector. Zero vectors report zero.
pub fn content(xs: &[BigRational]) -> BigRational {
    let lcm = denominator_lcm(xs);
    let mut g = BigInt::zero();
    for x in xs {
        let scaled = (x * BigRational::from_integer(lcm.clone())).to_integer();
        g = num_integer::gcd(g, scaled.abs());
    }
    BigRational::new(g, lcm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render_round_trip() {
        for text in ["3", "-3", "1/2", "-7/3", "0"] {
            let r = parse_rational(text).unwrap();
            assert_eq!(render_rational(&r), text);
        }
        assert_eq!(render_rational(&parse_rational("2/4").unwrap()), "1/2");
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn frac_and_ceil_match_on_negatives() {
        assert_eq!(frac_part(&qq(-4, 3)), qq(2, 3));
        assert_eq!(ceil_int(&qq(-4, 3)), BigInt::from(-1));
        assert_eq!(frac_part(&qq(5, 1)), qi(0));
    }

    #[test]
    fn content_of_vector() {
        assert_eq!(content(&[qq(1, 2), qq(3, 2)]), qq(1, 2));
        assert_eq!(content(&[qi(4), qi(6)]), qi(2));
    }
}
