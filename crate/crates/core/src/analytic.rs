//! Floating-point side: the Gauss hypergeometric function, the Poincare-type
//! class sum `f_{k,A}`, geodesic cycle integrals and the hypergeometric
//! lattice sum.

use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::arith::{format_rational, is_square, rational_to_f64, Discriminant, Rational};
use crate::bqf::{
    self, class_translates, form_stabilizer_order, indefinite_class_reps, indefinite_equivalent,
    pairing2, pell_automorph, poles_on_geodesics, principal_form, Bqf, BqfError, GeodesicArc, Sl2z,
};
use crate::special_forms::{self, SpecialFormsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("2F1({a}, {b}; {c}; {w}) is outside the supported parameter range")]
    DivergentParameters { a: f64, b: f64, c: f64, w: f64 },
    #[error("f_(k,A) has a pole at {0}")]
    PoleAtZ(Complex64),
    #[error("the geodesic of {0} passes through a pole of f_(k,A)")]
    PoleOnGeodesic(Bqf),
    #[error("the CM point of discriminant {d} lies on a geodesic of discriminant {big_d}")]
    HypothesisViolated { big_d: i64, d: i64 },
    #[error("{what} did not converge within cutoff {cutoff}")]
    NoConvergence { what: &'static str, cutoff: u64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Bqf(#[from] BqfError),
    #[error(transparent)]
    SpecialForms(#[from] SpecialFormsError),
}

type Result<T> = std::result::Result<T, AnalyticError>;

// ---------------------------------------------------------------------------
// 2F1

fn recip_gamma(x: f64) -> f64 {
    if x <= 0.0 && x.fract() == 0.0 {
        0.0
    } else {
        1.0 / libm::tgamma(x)
    }
}

fn hyp_series(a: f64, b: f64, c: f64, w: f64) -> Option<f64> {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..5000 {
        let n = n as f64;
        term *= (a + n) * (b + n) / ((c + n) * (n + 1.0)) * w;
        sum += term;
        if term == 0.0 || term.abs() <= 1e-17 * sum.abs() {
            return Some(sum);
        }
    }
    None
}

/// Gauss hypergeometric function for `0 <= w < 1`, `c > 0`. The series is
/// summed directly for `w <= 1/2`; above that the `1 - w` connection formula
/// is used, which needs `c - a - b` not to be an integer. When its two terms
/// cancel badly and all parameters are positive the direct series (all terms
/// positive) is summed instead.
pub fn hyp2f1(a: f64, b: f64, c: f64, w: f64) -> Result<f64> {
    let bad = || AnalyticError::DivergentParameters { a, b, c, w };
    if !(c > 0.0) || !(0.0..1.0).contains(&w) {
        return Err(bad());
    }
    if w <= 0.5 {
        return hyp_series(a, b, c, w).ok_or_else(bad);
    }
    let s = c - a - b;
    if s.fract() == 0.0 {
        return Err(bad());
    }
    let x = 1.0 - w;
    let gc = libm::tgamma(c);
    let t1 = gc * libm::tgamma(s) * recip_gamma(c - a) * recip_gamma(c - b)
        * hyp_series(a, b, 1.0 - s, x).ok_or_else(bad)?;
    let t2 = x.powf(s) * gc * libm::tgamma(-s) * recip_gamma(a) * recip_gamma(b)
        * hyp_series(c - a, c - b, 1.0 + s, x).ok_or_else(bad)?;
    let v = t1 + t2;
    if (t1.abs() + t2.abs()) > 20.0 * v.abs() && a > 0.0 && b > 0.0 {
        if let Some(direct) = hyp_series(a, b, c, w) {
            return Ok(direct);
        }
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Periodic sums Z_j(x) = sum_n (x + n)^-j

const TWO_PI: f64 = 2.0 * PI;

/// `(-2 pi i)^j / (j - 1)!`
fn lipschitz_prefactor(j: u32) -> Complex64 {
    static TABLE: std::sync::OnceLock<Vec<Complex64>> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut out = vec![Complex64::new(0.0, 0.0); 1024];
        let mut p = Complex64::new(0.0, -TWO_PI);
        for (j, slot) in out.iter_mut().enumerate().skip(1) {
            *slot = p;
            p *= Complex64::new(0.0, -TWO_PI) / j as f64;
        }
        out
    });
    table.get(j as usize).copied().unwrap_or_default()
}

/// `sum_{m >= 1} m^(j-1) q^m` for `|q| < 1`.
fn lipschitz_q(j: u32, q: Complex64) -> Complex64 {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut qm = q;
    let mut m = 1u32;
    loop {
        let t = qm * (m as f64).powi(j as i32 - 1);
        sum += t;
        if m > j && t.norm() <= 1e-17 * sum.norm() || qm.norm() < 1e-300 || m > 100_000 {
            return sum;
        }
        qm *= q;
        m += 1;
    }
}

fn e(x: Complex64) -> Complex64 {
    (Complex64::new(0.0, TWO_PI) * x).exp()
}

fn pi_cot(x: Complex64) -> Complex64 {
    let y = x * PI;
    y.cos() / y.sin() * PI
}

/// `Z_j` near the real axis from derivatives of `pi cot(pi x)`, written as
/// polynomials in `C = pi cot(pi x)` via `C' = -(pi^2 + C^2)`.
fn z_cot(j: u32, x: Complex64) -> Complex64 {
    let c = pi_cot(x);
    let mut poly = vec![0.0, 1.0];
    let mut fact = 1.0;
    for m in 1..j {
        let deriv: Vec<f64> = (1..poly.len()).map(|i| poly[i] * i as f64).collect();
        let mut next = vec![0.0; deriv.len() + 2];
        for (i, &p) in deriv.iter().enumerate() {
            next[i] -= PI * PI * p;
            next[i + 2] -= p;
        }
        poly = next;
        fact *= m as f64;
    }
    let val = poly.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &p| acc * c + p);
    let sign = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
    val * (sign / fact)
}

fn zeta_periodic(j: u32, x: Complex64) -> Complex64 {
    debug_assert!(j >= 2);
    if x.im >= 0.25 {
        lipschitz_prefactor(j) * lipschitz_q(j, e(x))
    } else if x.im <= -0.25 {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        lipschitz_prefactor(j) * lipschitz_q(j, e(-x)) * sign
    } else {
        z_cot(j, x)
    }
}

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn near_integer(x: Complex64) -> bool {
    x.im.abs() < 1e-10 && (x.re - x.re.round()).abs() < 1e-10
}

/// `sum_n ((w + n)^2 + r^2)^-k` for `Im w > 0`, `r > 0`.
fn periodic_pk(k: u32, w: Complex64, q: Complex64, r: f64) -> Option<Complex64> {
    if r <= 0.5 * w.im {
        // binomial expansion in r^2 / (w + n)^2
        let mut sum = Complex64::new(0.0, 0.0);
        let r2 = r * r;
        let mut coef = 1.0;
        for l in 0..400u32 {
            let j = 2 * k + 2 * l;
            let t = lipschitz_prefactor(j) * lipschitz_q(j, q) * coef;
            sum += t;
            if l > 0 && t.norm() <= 1e-17 * sum.norm() {
                break;
            }
            coef *= -((k + l) as f64) / ((l + 1) as f64) * r2;
        }
        return Some(sum);
    }
    let ir = Complex64::new(0.0, r);
    let (xm, xp) = (w - ir, w + ir);
    if near_integer(xm) || near_integer(xp) {
        return None;
    }
    let kk = k as u64;
    let coef = |j: u64, pole: Complex64| {
        let sign = if (kk - j) % 2 == 0 { 1.0 } else { -1.0 };
        pole.powi(-((2 * kk - j) as i32)) * (sign * binom(2 * kk - j - 1, kk - j))
    };
    let mut sum = coef(1, 2.0 * ir) * (pi_cot(xm) - pi_cot(xp));
    for j in 2..=kk {
        sum += coef(j, 2.0 * ir) * zeta_periodic(j as u32, xm)
            + coef(j, -2.0 * ir) * zeta_periodic(j as u32, xp);
    }
    Some(sum)
}

// ---------------------------------------------------------------------------
// f_{k,A}

/// Moves `z` into the standard fundamental domain. Returns `(w, g)` with
/// `g.apply(z) == w`.
pub fn reduce_point(z: Complex64) -> (Complex64, Sl2z) {
    let mut w = z;
    let mut g = Sl2z::IDENTITY;
    for _ in 0..10_000 {
        let n = w.re.round();
        w.re -= n;
        g = Sl2z::t(-(n as i64)) * g;
        if w.norm_sqr() < 1.0 - 1e-14 {
            w = -w.inv();
            g = Sl2z::S * g;
        } else {
            break;
        }
    }
    (w, g)
}

#[derive(Debug, Clone, Copy)]
struct ClassTerm {
    a: i64,
    a_pow: f64,
    shift: f64,
    phase: Complex64,
    r: f64,
}

/// Evaluates `f_{k,A}(z) = |d|^((k+1)/2) / pi * sum_{Q in A} Q(z, 1)^-k` by
/// summing translation orbits of the class in blocks of doubling `a`.
#[derive(Debug, Clone)]
pub struct FkaEvaluator {
    k: u32,
    class_rep: Bqf,
    scale: f64,
    terms: Vec<ClassTerm>,
    a_cap: i64,
}

impl FkaEvaluator {
    pub const DEFAULT_A_CAP: i64 = 1 << 20;

    pub fn new(k: u32, class_rep: &Bqf) -> Result<Self> {
        Self::with_cap(k, class_rep, Self::DEFAULT_A_CAP)
    }

    pub fn with_cap(k: u32, class_rep: &Bqf, a_cap: i64) -> Result<Self> {
        if k < 2 {
            return Err(AnalyticError::InvalidInput(format!("k = {k} must be at least 2")));
        }
        let abs_d = -class_rep.disc();
        let sd = (abs_d as f64).sqrt();
        let terms = class_translates(class_rep, a_cap)?
            .into_iter()
            .map(|q| {
                let shift = q.b as f64 / (2 * q.a) as f64;
                ClassTerm {
                    a: q.a,
                    a_pow: (q.a as f64).powi(-(k as i32)),
                    shift,
                    phase: e(Complex64::new(shift, 0.0)),
                    r: sd / (2 * q.a) as f64,
                }
            })
            .collect();
        Ok(FkaEvaluator {
            k,
            class_rep: *class_rep,
            scale: (abs_d as f64).powf((k + 1) as f64 / 2.0) / PI,
            terms,
            a_cap,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn class_rep(&self) -> &Bqf {
        &self.class_rep
    }

    pub fn eval(&self, z: Complex64, tol: f64) -> Result<Complex64> {
        self.eval_with_cutoff(z, tol).map(|(v, _)| v)
    }

    /// Value and the largest `a` that was summed. Stops once two consecutive
    /// blocks `(A, 2A]` each contribute less than `tol * max(1, |f|)`.
    pub fn eval_with_cutoff(&self, z: Complex64, tol: f64) -> Result<(Complex64, i64)> {
        if !(z.im > 0.0) {
            return Err(AnalyticError::InvalidInput(format!("{z} is not in the upper half-plane")));
        }
        let (w, g) = reduce_point(z);
        let qw = e(w);
        let mut sum = Complex64::new(0.0, 0.0);
        let mut quiet = 0;
        let mut idx = 0;
        let mut edge = 16;
        while edge <= self.a_cap {
            let mut block = Complex64::new(0.0, 0.0);
            while idx < self.terms.len() && self.terms[idx].a <= edge {
                let t = &self.terms[idx];
                let p = periodic_pk(self.k, w + t.shift, qw * t.phase, t.r)
                    .ok_or(AnalyticError::PoleAtZ(z))?;
                block += p * t.a_pow;
                idx += 1;
            }
            sum += block;
            if edge > 16 && block.norm() < tol * sum.norm().max(1.0) {
                quiet += 1;
                if quiet == 2 {
                    let j = g.j(z).powi(-2 * self.k as i32);
                    return Ok((sum * j * self.scale, edge));
                }
            } else {
                quiet = 0;
            }
            edge *= 2;
        }
        Err(AnalyticError::NoConvergence { what: "class sum of f_(k,A)", cutoff: self.a_cap as u64 })
    }
}

/// `f_{k,A}(z)` for the class of `class_rep`.
pub fn eval_fka(z: Complex64, k: u32, class_rep: &Bqf, tol: f64) -> Result<Complex64> {
    FkaEvaluator::new(k, class_rep)?.eval(z, tol)
}

// ---------------------------------------------------------------------------
// Eisenstein series

/// `(E4, E6, Delta)` at `z` from their q-expansions, truncated once the
/// terms drop below `prec`.
pub fn eisenstein_oracle(z: Complex64, prec: f64) -> (Complex64, Complex64, Complex64) {
    let q = e(z);
    let one = Complex64::new(1.0, 0.0);
    let (mut e4, mut e6, mut prod) = (one, one, one);
    let mut qn = q;
    let mut n = 1u64;
    while qn.norm() * (n as f64).powi(6) > prec * 1e-3 || n < 3 {
        let (s3, s5) = (1..=n).filter(|d| n % d == 0).fold((0.0, 0.0), |(a, b), d| {
            let d = d as f64;
            (a + d.powi(3), b + d.powi(5))
        });
        e4 += qn * (240.0 * s3);
        e6 -= qn * (504.0 * s5);
        prod *= (one - qn).powi(24);
        qn *= q;
        n += 1;
    }
    (e4, e6, q * prod)
}

// ---------------------------------------------------------------------------
// Cycle integrals

/// Gauss-Legendre rule in hyperbolic arclength along the geodesic of a form,
/// covering one period of its automorph.
///
/// Points are `z(s) = center + R (sigma tanh s + i sech s)`; `sigma` is the
/// direction in which the automorph moves points, so the interval
/// `[s0 - l/2, s0 + l/2]` has `z(s0 + l/2) = gamma_Q z(s0 - l/2)`.
#[derive(Debug, Clone)]
pub struct ArcQuadrature {
    pub arc: GeodesicArc,
    pub nodes: usize,
    pub sigma: f64,
    pub start: f64,
    pub length: f64,
    rule: Vec<(f64, f64)>,
}

impl ArcQuadrature {
    pub fn new(q: &Bqf, nodes: usize, offset: f64) -> Result<Self> {
        let arc = pell_automorph(q)?;
        let length = 2.0 * arc.log_unit();
        let start = offset - length / 2.0;
        let rule = GaussLegendre::new(nodes.max(2))
            .map_err(|_| AnalyticError::InvalidInput(format!("{nodes} quadrature nodes")))?
            .as_node_weight_pairs()
            .into_iter()
            .map(|(x, w)| (start + (x + 1.0) * length / 2.0, w * length / 2.0))
            .collect();
        let mut quad = ArcQuadrature { arc, nodes, sigma: 1.0, start, length, rule };
        let target = |qd: &ArcQuadrature| qd.point(start + length).0;
        let image = |qd: &ArcQuadrature| qd.arc.automorph.apply(qd.point(start).0);
        let scale = 1.0 + quad.arc.radius_f64();
        if (image(&quad) - target(&quad)).norm() > 1e-8 * scale {
            quad.sigma = -1.0;
        }
        assert!(
            (image(&quad) - target(&quad)).norm() <= 1e-8 * scale,
            "automorph of {q} does not translate its geodesic"
        );
        Ok(quad)
    }

    /// `(z(s), z'(s))`.
    pub fn point(&self, s: f64) -> (Complex64, Complex64) {
        let (c, r) = (self.arc.center_f64(), self.arc.radius_f64());
        let (th, sech) = (s.tanh(), 1.0 / s.cosh());
        let z = Complex64::new(c + r * self.sigma * th, r * sech);
        let dz = Complex64::new(r * self.sigma * sech * sech, -r * th * sech);
        (z, dz)
    }

    /// Integral of `g(z) dz` over the arc. Nodes are evaluated in parallel
    /// and summed in order.
    pub fn integrate<F>(&self, g: F) -> Result<Complex64>
    where
        F: Fn(Complex64) -> Result<Complex64> + Sync,
    {
        let vals: Vec<Complex64> = self
            .rule
            .par_iter()
            .map(|&(s, w)| {
                let (z, dz) = self.point(s);
                Ok(g(z)? * dz * w)
            })
            .collect::<Result<_>>()?;
        Ok(vals.into_iter().sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleIntegral {
    pub value: Complex64,
    pub error_estimate: f64,
    pub nodes: usize,
    pub a_max: i64,
}

const MIN_NODES: usize = 16;
const MAX_NODES: usize = 2048;

/// `int_{c_Q} f_{k,A}(z) Q(z, 1)^(k-1) dz` for the class of the principal
/// form of discriminant `d`.
pub fn cycle_integral(q: &Bqf, k: u32, d: i64, tol: f64) -> Result<CycleIntegral> {
    let ev = FkaEvaluator::new(k, &principal_form(d)?)?;
    cycle_integral_with(&ev, q, tol, 0.0)
}

/// As [`cycle_integral`] with a prepared evaluator and the period interval
/// centred at arclength `offset`.
pub fn cycle_integral_with(ev: &FkaEvaluator, q: &Bqf, tol: f64, offset: f64) -> Result<CycleIntegral> {
    check_arc(ev, q)?;
    let eval_tol = (tol * 0.1).max(1e-13);
    let mut nodes = MIN_NODES;
    let mut prev = cycle_integral_fixed(ev, q, nodes, eval_tol, offset)?;
    let mut a_max = prev.a_max;
    while nodes < MAX_NODES {
        nodes *= 2;
        let cur = cycle_integral_fixed(ev, q, nodes, eval_tol, offset)?;
        a_max = a_max.max(cur.a_max);
        let delta = (cur.value - prev.value).norm();
        if delta < tol * cur.value.norm().max(1.0) {
            return Ok(CycleIntegral {
                value: cur.value,
                error_estimate: delta + cur.error_estimate,
                nodes,
                a_max,
            });
        }
        prev = cur;
    }
    Err(AnalyticError::NoConvergence { what: "geodesic quadrature", cutoff: MAX_NODES as u64 })
}

fn check_arc(ev: &FkaEvaluator, q: &Bqf) -> Result<()> {
    for p in poles_on_geodesics(q.disc(), ev.class_rep()) {
        if indefinite_equivalent(&p, q)? {
            return Err(AnalyticError::PoleOnGeodesic(*q));
        }
    }
    Ok(())
}

/// One Gauss-Legendre evaluation with a fixed node count. The error
/// estimate covers only the truncation of the class sum at the nodes,
/// bounded by `10 eval_tol` relative to `max(1, |f|)` at each node.
pub fn cycle_integral_fixed(
    ev: &FkaEvaluator,
    q: &Bqf,
    nodes: usize,
    eval_tol: f64,
    offset: f64,
) -> Result<CycleIntegral> {
    check_arc(ev, q)?;
    let k = ev.k() as i32;
    let quad = ArcQuadrature::new(q, nodes, offset)?;
    let parts: Vec<(Complex64, f64, i64)> = quad
        .rule
        .par_iter()
        .map(|&(s, w)| {
            let (z, dz) = quad.point(s);
            let (f, a) = ev.eval_with_cutoff(z, eval_tol)?;
            let g = q.eval(z).powi(k - 1) * dz * w;
            Ok((f * g, 10.0 * eval_tol * f.norm().max(1.0) * g.norm(), a))
        })
        .collect::<Result<_>>()?;
    let mut out = CycleIntegral { value: Complex64::new(0.0, 0.0), error_estimate: 0.0, nodes, a_max: 0 };
    for (v, err, a) in parts {
        out.value += v;
        out.error_estimate += err;
        out.a_max = out.a_max.max(a);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trace reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Exact,
    Geodesic,
    LatticeSum,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Geodesic => "geodesic",
            Method::LatticeSum => "latticesum",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact" => Ok(Method::Exact),
            "geodesic" => Ok(Method::Geodesic),
            "latticesum" => Ok(Method::LatticeSum),
            _ => Err(format!("unknown method {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceValue {
    Exact(Rational),
    Float(f64),
}

impl TraceValue {
    pub fn to_f64(&self) -> f64 {
        match self {
            TraceValue::Exact(r) => rational_to_f64(r),
            TraceValue::Float(x) => *x,
        }
    }
}

/// `%.12e`-style scientific notation with a signed two-digit exponent.
pub fn format_float(x: f64) -> String {
    let s = format!("{x:.12e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let n: i32 = exp.parse().unwrap_or(0);
            let sign = if n < 0 { '-' } else { '+' };
            format!("{mant}e{sign}{:02}", n.abs())
        }
        None => s,
    }
}

impl fmt::Display for TraceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceValue::Exact(r) => f.write_str(&format_rational(r)),
            TraceValue::Float(x) => f.write_str(&format_float(*x)),
        }
    }
}

/// Truncation parameters a report was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cutoff {
    None,
    Geodesic { nodes: usize, a_max: i64 },
    LatticeSum { s_max: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceReport {
    pub k: u32,
    pub big_d: i64,
    pub d: i64,
    pub method: Method,
    pub value: TraceValue,
    pub error_estimate: f64,
    pub hypothesis_ok: bool,
    pub seconds: f64,
    pub cutoff: Cutoff,
}

fn check_inputs(k: u32, big_d: i64, d: i64) -> Result<Bqf> {
    if k < 2 {
        return Err(AnalyticError::InvalidInput(format!("k = {k} must be at least 2")));
    }
    if big_d <= 0 || is_square(big_d as u64) || Discriminant::new(big_d).is_err() {
        return Err(AnalyticError::InvalidInput(format!(
            "D = {big_d} is not a positive non-square discriminant"
        )));
    }
    let qa = principal_form(d).map_err(|_| {
        AnalyticError::InvalidInput(format!("d = {d} is not a negative discriminant"))
    })?;
    if !bqf::hypothesis_check_form(big_d, &qa)? {
        return Err(AnalyticError::HypothesisViolated { big_d, d });
    }
    Ok(qa)
}

/// Exact trace from the theta-lift formula; needs even `k` and `d = -4`.
pub fn exact_trace(k: u32, big_d: i64, d: i64) -> Result<TraceReport> {
    let start = Instant::now();
    check_inputs(k, big_d, d)?;
    if d != -4 || k % 2 != 0 {
        return Err(AnalyticError::InvalidInput(format!(
            "the exact method needs even k and d = -4 (got k = {k}, d = {d})"
        )));
    }
    let v = special_forms::rhs_trace(k as i64, big_d)?;
    Ok(TraceReport {
        k,
        big_d,
        d,
        method: Method::Exact,
        value: TraceValue::Exact(v),
        error_estimate: 0.0,
        hypothesis_ok: true,
        seconds: start.elapsed().as_secs_f64(),
        cutoff: Cutoff::None,
    })
}

/// Trace by quadrature over the closed geodesics of all classes of
/// discriminant `D`, aiming at `tol * max(1, |value|)`.
pub fn lhs_geodesic(k: u32, big_d: i64, d: i64, tol: f64) -> Result<TraceReport> {
    let start = Instant::now();
    let qa = check_inputs(k, big_d, d)?;
    let ev = FkaEvaluator::new(k, &qa)?;
    let reps = indefinite_class_reps(big_d)?;
    let per_class = tol / reps.len() as f64;
    let mut total = Complex64::new(0.0, 0.0);
    let mut quad_err = 0.0;
    let (mut nodes, mut a_max) = (0, 0);
    for q in &reps {
        let c = cycle_integral_with(&ev, q, per_class, 0.0)?;
        total += c.value;
        quad_err += c.error_estimate;
        nodes = nodes.max(c.nodes);
        a_max = a_max.max(c.a_max);
    }
    Ok(TraceReport {
        k,
        big_d,
        d,
        method: Method::Geodesic,
        value: TraceValue::Float(total.re),
        error_estimate: quad_err.max(total.im.abs()),
        hypothesis_ok: true,
        seconds: start.elapsed().as_secs_f64(),
        cutoff: Cutoff::Geodesic { nodes, a_max },
    })
}

// ---------------------------------------------------------------------------
// Lattice sum

/// `#{(b, e) : b^2 + e^2 = D + s^2, b = D mod 2, e = s mod 2}`, the number
/// of forms `[a, b, c]` of discriminant `D` with `a + c = s`.
pub fn lattice_count_gaussian(big_d: i64, s: i64) -> u64 {
    let n = big_d + s * s;
    let mut count = 0;
    let mut b = big_d.rem_euclid(2);
    while b * b <= n {
        let e2 = (n - b * b) as u64;
        if is_square(e2) {
            let e = (e2 as f64).sqrt().round() as i64;
            if (e - s).rem_euclid(2) == 0 {
                let mult = if e == 0 { 1 } else { 2 };
                count += if b == 0 { mult } else { 2 * mult };
            }
        }
        b += 2;
    }
    count
}

/// For each `t` in `[-t_max, t_max]`, the number of forms `X` of
/// discriminant `D` with doubled pairing `(X, A)` equal to `t`.
pub fn lattice_counts(big_d: i64, qa: &Bqf, t_max: i64) -> Vec<u64> {
    let abs_d = -qa.disc() as f64;
    let z = bqf::cm_point(qa).expect("positive definite").to_complex();
    let (x, y) = (z.re, z.im);
    let p_max = t_max as f64 / abs_d.sqrt();
    let tm = big_d as f64 + p_max * p_max;
    let a_max = ((p_max + tm.sqrt()) / (2.0 * y)).ceil() as i64 + 1;
    let rows: Vec<Vec<u64>> = (-a_max..=a_max)
        .into_par_iter()
        .map(|a| {
            let mut row = vec![0u64; (2 * t_max + 1) as usize];
            if a == 0 {
                return row;
            }
            let mid = -2.0 * a as f64 * x;
            let lo = (mid - tm.sqrt()).floor() as i64 - 1;
            let hi = (mid + tm.sqrt()).ceil() as i64 + 1;
            for b in lo..=hi {
                let num = b * b - big_d;
                if num % (4 * a) != 0 {
                    continue;
                }
                let t = pairing2(&Bqf::new(a, b, num / (4 * a)), qa);
                if t.abs() <= t_max {
                    row[(t + t_max) as usize] += 1;
                }
            }
            row
        })
        .collect();
    let mut out = vec![0u64; (2 * t_max + 1) as usize];
    for row in rows {
        for (o, r) in out.iter_mut().zip(row) {
            *o += r;
        }
    }
    out
}

struct LatticeSetup {
    k: u32,
    big_d: f64,
    /// `p` per unit of the summation index
    p_step: f64,
    prefactor: f64,
}

impl LatticeSetup {
    /// `(D + p^2)^(-k/2) 2F1(k/2, k/2; k + 1/2; D / (D + p^2))` at `p = t * p_step`.
    fn weight(&self, t: f64) -> Result<f64> {
        let p = t * self.p_step;
        let tt = self.big_d + p * p;
        let h = self.k as f64 / 2.0;
        Ok(tt.powf(-h) * hyp2f1(h, h, self.k as f64 + 0.5, self.big_d / tt)?)
    }

    /// `int_{t0}^inf weight(t) dt` after `t = t0 / u`.
    fn tail_integral(&self, t0: f64) -> Result<f64> {
        let rule = GaussLegendre::new(40).expect("40 nodes");
        let mut acc = 0.0;
        for (x, w) in rule.as_node_weight_pairs() {
            let u = (x + 1.0) / 2.0;
            acc += w / 2.0 * self.weight(t0 / u)? * t0 / (u * u);
        }
        Ok(acc)
    }
}

/// Trace from the hypergeometric lattice sum over all forms of discriminant
/// `D`, grouped by their pairing with the CM form. The cutoff on the pairing
/// doubles until two successive doublings each move the tail-corrected sum by
/// less than `tol * max(1, |value|)`.
pub fn lhs_latticesum(k: u32, big_d: i64, d: i64, tol: f64) -> Result<TraceReport> {
    lhs_latticesum_capped(k, big_d, d, tol, 1 << 15)
}

pub fn lhs_latticesum_capped(k: u32, big_d: i64, d: i64, tol: f64, t_cap: i64) -> Result<TraceReport> {
    let start = Instant::now();
    let sum = LatticeSum::new(k, big_d, d)?;
    let mut prev = sum.value_at(32)?;
    let mut prev_delta = f64::INFINITY;
    let mut t_max = 64;
    while t_max <= t_cap {
        let value = sum.value_at(t_max)?;
        let delta = (value - prev).abs();
        // the tail-corrected values oscillate, so ask for two quiet doublings
        let worst = delta.max(prev_delta);
        if worst < tol * value.abs().max(1.0) {
            return Ok(TraceReport {
                k,
                big_d,
                d,
                method: Method::LatticeSum,
                value: TraceValue::Float(value),
                error_estimate: 2.0 * worst,
                hypothesis_ok: true,
                seconds: start.elapsed().as_secs_f64(),
                cutoff: Cutoff::LatticeSum { s_max: t_max },
            });
        }
        prev = value;
        prev_delta = delta;
        t_max *= 2;
    }
    Err(AnalyticError::NoConvergence { what: "lattice sum", cutoff: t_cap as u64 })
}

/// The lattice sum for one `(k, D, d)` at adjustable cutoff.
pub struct LatticeSum {
    setup: LatticeSetup,
    qa: Bqf,
    big_d: i64,
    gaussian: bool,
}

impl LatticeSum {
    pub fn new(k: u32, big_d: i64, d: i64) -> Result<Self> {
        let qa = check_inputs(k, big_d, d)?;
        let abs_d = -d as f64;
        let stab = form_stabilizer_order(&qa)? as f64;
        let kf = k as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let prefactor = sign * 2f64.powi(k as i32) * abs_d.sqrt() * (big_d as f64).powf(kf - 0.5)
            / (stab * binom(2 * k as u64 - 2, k as u64 - 1) * PI * (2.0 * kf - 1.0));
        // for [1, 0, 1] the index is s = a + c = p, otherwise the doubled pairing
        let gaussian = qa == Bqf::new(1, 0, 1);
        let p_step = if gaussian { 1.0 } else { 1.0 / abs_d.sqrt() };
        Ok(LatticeSum { setup: LatticeSetup { k, big_d: big_d as f64, p_step, prefactor }, qa, big_d, gaussian })
    }

    /// Sum over `|t| <= t_max` plus the tail `|t| > t_max` estimated from
    /// the mean count over `t_max/2 < |t| <= t_max`.
    pub fn value_at(&self, t_max: i64) -> Result<f64> {
        let (k, big_d) = (self.setup.k, self.big_d);
        let counts: Vec<u64> = if self.gaussian {
            (-t_max..=t_max).into_par_iter().map(|s| lattice_count_gaussian(big_d, s)).collect()
        } else {
            lattice_counts(big_d, &self.qa, t_max)
        };
        let terms: Vec<f64> = (-t_max..=t_max)
            .into_par_iter()
            .map(|t| {
                let n = counts[(t + t_max) as usize];
                if t == 0 || n == 0 {
                    return Ok(0.0);
                }
                let sg = if t < 0 && k % 2 == 1 { -1.0 } else { 1.0 };
                Ok(sg * n as f64 * self.setup.weight(t as f64)?)
            })
            .collect::<Result<_>>()?;
        let body: f64 = terms.iter().sum();
        let window = |sgn: i64| -> f64 {
            let lo = t_max / 2 + 1;
            let total: u64 = (lo..=t_max).map(|t| counts[(sgn * t + t_max) as usize]).sum();
            total as f64 / (t_max - lo + 1) as f64
        };
        let odd = if k % 2 == 1 { -1.0 } else { 1.0 };
        let tail = (window(1) + odd * window(-1)) * self.setup.tail_integral(t_max as f64 + 0.5)?;
        Ok(self.setup.prefactor * (body + tail))
    }
}
