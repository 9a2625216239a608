//! Exact integer and rational number theory: Kronecker symbols, Bernoulli
//! numbers and polynomials, generalized Bernoulli numbers, Dirichlet
//! L-values at non-positive integers and Cohen's numbers `H(r, N)`.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

/// Exact rational number, always in lowest terms with positive denominator.
pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArithError {
    #[error("{0} is not a discriminant (must be nonzero and congruent to 0 or 1 mod 4)")]
    NotDiscriminant(i64),
    #[error("{0} is not a fundamental discriminant")]
    NonFundamental(i64),
    #[error("order r must be positive, got {0}")]
    BadOrder(i64),
}

/// Shorthand for an integer-valued [`Rational`].
pub fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Shorthand for `p/q`.
pub fn ratio(p: i64, q: i64) -> Rational {
    Rational::new(BigInt::from(p), BigInt::from(q))
}

/// A quadratic discriminant `D = D0 * f^2` with `D0` fundamental (or `D0 = 1`
/// when `D` is a perfect square).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Discriminant {
    value: i64,
    fundamental: i64,
    conductor: i64,
}

impl Discriminant {
    pub fn new(value: i64) -> Result<Self, ArithError> {
        if value == 0 || !matches!(value.rem_euclid(4), 0 | 1) {
            return Err(ArithError::NotDiscriminant(value));
        }
        // Largest f with value/f^2 still a discriminant gives the fundamental part.
        let abs = value.unsigned_abs();
        let mut conductor = 1i64;
        for (p, e) in factorize(abs) {
            let p = p as i64;
            let mut k = e / 2;
            while k > 0 {
                let f = p.pow(k);
                let cand = value / (conductor * f).pow(2);
                if matches!(cand.rem_euclid(4), 0 | 1) {
                    conductor *= f;
                    break;
                }
                k -= 1;
            }
        }
        let fundamental = value / (conductor * conductor);
        Ok(Self { value, fundamental, conductor })
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    /// Fundamental part `D0`.
    pub fn fundamental(&self) -> i64 {
        self.fundamental
    }

    pub fn conductor(&self) -> i64 {
        self.conductor
    }

    pub fn is_fundamental(&self) -> bool {
        self.conductor == 1 && self.fundamental != 1 || self.value == 1
    }

    pub fn is_square(&self) -> bool {
        self.value > 0 && is_square(self.value as u64)
    }
}

impl std::fmt::Display for Discriminant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value)
    }
}

pub fn is_square(n: u64) -> bool {
    let r = n.isqrt();
    r * r == n
}

/// Prime factorization by trial division.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        if n % p == 0 {
            let mut e = 0;
            while n % p == 0 {
                n /= p;
                e += 1;
            }
            out.push((p, e));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1u64;
    while d * d <= n {
        if n % d == 0 {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

pub fn moebius(n: u64) -> i64 {
    let mut mu = 1;
    for (_, e) in factorize(n) {
        if e > 1 {
            return 0;
        }
        mu = -mu;
    }
    mu
}

/// `sigma_k(n)`, the sum of `k`-th powers of the divisors of `n`.
pub fn sigma(k: u32, n: u64) -> BigInt {
    divisors(n).into_iter().map(|d| BigInt::from(d).pow(k)).sum()
}

/// Full Kronecker symbol `(a/n)`.
pub fn kronecker(a: i64, n: i64) -> i32 {
    if n == 0 {
        return if a == 1 || a == -1 { 1 } else { 0 };
    }
    let mut result = 1;
    let mut n = n;
    if n < 0 {
        n = -n;
        if a < 0 {
            result = -result;
        }
    }
    let twos = n.trailing_zeros();
    if twos > 0 {
        if a % 2 == 0 {
            return 0;
        }
        // (a/2) = 1 for a = ±1 mod 8, -1 for a = ±3 mod 8
        if twos % 2 == 1 && matches!(a.rem_euclid(8), 3 | 5) {
            result = -result;
        }
        n >>= twos;
    }
    // n is now odd and positive: Jacobi symbol.
    let mut a = a.rem_euclid(n);
    let mut n = n;
    while a != 0 {
        while a % 2 == 0 {
            a /= 2;
            if matches!(n % 8, 3 | 5) {
                result = -result;
            }
        }
        std::mem::swap(&mut a, &mut n);
        if a % 4 == 3 && n % 4 == 3 {
            result = -result;
        }
        a %= n;
    }
    if n == 1 {
        result
    } else {
        0
    }
}

fn binomial(n: u64, k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Bernoulli numbers `B_0..=B_max` with `B_1 = -1/2`.
pub fn bernoulli_numbers(max: usize) -> Vec<Rational> {
    let mut b: Vec<Rational> = Vec::with_capacity(max + 1);
    b.push(Rational::one());
    for m in 1..=max {
        // sum_{j=0}^{m} binom(m+1, j) B_j = 0
        let mut acc = Rational::zero();
        for (j, bj) in b.iter().enumerate() {
            acc += Rational::from_integer(binomial(m as u64 + 1, j as u64)) * bj;
        }
        b.push(-acc / Rational::from_integer(BigInt::from(m as u64 + 1)));
    }
    b
}

pub fn bernoulli_number(r: usize) -> Rational {
    bernoulli_numbers(r).pop().unwrap()
}

/// Bernoulli polynomial `B_r(x) = sum_j binom(r, j) B_j x^(r-j)`.
pub fn bernoulli_poly(r: usize, x: &Rational) -> Rational {
    let b = bernoulli_numbers(r);
    bernoulli_poly_with(&b, r, x)
}

fn bernoulli_poly_with(b: &[Rational], r: usize, x: &Rational) -> Rational {
    let mut acc = Rational::zero();
    let mut xpow = Rational::one();
    // accumulate from j = r down to 0 so x^(r-j) grows
    for j in (0..=r).rev() {
        acc += Rational::from_integer(binomial(r as u64, j as u64)) * &b[j] * &xpow;
        xpow *= x;
    }
    acc
}

/// Generalized Bernoulli number `B_{r, chi_D}` for a fundamental
/// discriminant `D` (or `D = 1`, the trivial character).
pub fn gen_bernoulli(r: i64, d: &Discriminant) -> Result<Rational, ArithError> {
    if r < 1 {
        return Err(ArithError::BadOrder(r));
    }
    if !d.is_fundamental() {
        return Err(ArithError::NonFundamental(d.value()));
    }
    let r = r as usize;
    let f = d.value().unsigned_abs();
    let b = bernoulli_numbers(r);
    let fr = Rational::from_integer(BigInt::from(f));
    let mut acc = Rational::zero();
    for a in 1..=f {
        let chi = kronecker(d.value(), a as i64);
        if chi == 0 {
            continue;
        }
        let x = Rational::new(BigInt::from(a), BigInt::from(f));
        let term = bernoulli_poly_with(&b, r, &x);
        if chi > 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    Ok(acc * num_traits::pow(fr, r - 1))
}

/// `L_{D0}(1 - r) * sum_{e | f} mu(e) chi_{D0}(e) e^(r-1) sigma_{2r-1}(f / e)`,
/// the shared convolution behind both [`cohen_h`] and
/// [`dirichlet_l_value`] for non-fundamental discriminants.
fn convolved_l_value(fundamental: i64, conductor: i64, r: i64) -> Result<Rational, ArithError> {
    let d0 = Discriminant::new(fundamental)?;
    let base = -gen_bernoulli(r, &d0)? / rat(r);
    if conductor == 1 {
        return Ok(base);
    }
    let f = conductor as u64;
    let mut s = BigInt::zero();
    for e in divisors(f) {
        let mu = moebius(e);
        if mu == 0 {
            continue;
        }
        let chi = kronecker(fundamental, e as i64);
        if chi == 0 {
            continue;
        }
        let term = BigInt::from(e).pow((r - 1) as u32) * sigma((2 * r - 1) as u32, f / e);
        if mu * chi as i64 > 0 {
            s += term;
        } else {
            s -= term;
        }
    }
    Ok(base * Rational::from_integer(s))
}

/// `L_D(s)` at `s = one_minus_r = 1 - r` (so `one_minus_r <= 0`).
///
/// Fundamental `D` uses `L_D(1 - r) = -B_{r, chi_D} / r`; other discriminants
/// go through the same divisor convolution as [`cohen_h`].
pub fn dirichlet_l_value(d: &Discriminant, one_minus_r: i64) -> Result<Rational, ArithError> {
    let r = 1 - one_minus_r;
    if r < 1 {
        return Err(ArithError::BadOrder(r));
    }
    convolved_l_value(d.fundamental(), d.conductor(), r)
}

/// Cohen's number `H(r, N)`, the `N`-th coefficient of the Cohen-Eisenstein
/// series of weight `r + 1/2`.
pub fn cohen_h(r: i64, n: i64) -> Result<Rational, ArithError> {
    if r < 1 {
        return Err(ArithError::BadOrder(r));
    }
    if n == 0 {
        // zeta(1 - 2r) = -B_{2r} / (2r)
        return Ok(-bernoulli_number(2 * r as usize) / rat(2 * r));
    }
    let signed = if r % 2 == 0 { n } else { -n };
    if !matches!(signed.rem_euclid(4), 0 | 1) || n < 0 {
        return Ok(Rational::zero());
    }
    let d = Discriminant::new(signed)?;
    convolved_l_value(d.fundamental(), d.conductor(), r)
}

/// Parses `p/q` or `p`.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((p, q)) => {
            let q: BigInt = q.trim().parse().ok()?;
            if q.is_zero() {
                return None;
            }
            Some(Rational::new(p.trim().parse().ok()?, q))
        }
        None => Some(Rational::from_integer(s.parse().ok()?)),
    }
}

/// Renders a rational as `p/q`, or `p` when integral.
pub fn format_rational(x: &Rational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Floor of a rational.
pub fn floor_rat(x: &Rational) -> BigInt {
    x.numer().div_floor(x.denom())
}

/// `x mod 1` in `[0, 1)`.
pub fn frac(x: &Rational) -> Rational {
    x - Rational::from_integer(floor_rat(x))
}

pub fn rational_to_f64(x: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap_or_else(|| {
        let n = x.numer().to_f64().unwrap_or(f64::NAN);
        let d = x.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

pub fn abs_rat(x: &Rational) -> Rational {
    x.abs()
}
