//! Even lattices, their discriminant forms, and vector-valued q-series over
//! discriminant forms with exact rational coefficients.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::arith::{format_rational, frac, parse_rational, rat, rational_to_f64, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FqmError {
    #[error("gram matrix is singular")]
    SingularGram,
    #[error("gram matrix is not symmetric with even diagonal")]
    NotEven,
    #[error("lattice is not positive definite")]
    NotPositiveDefinite,
    #[error("incompatible embedding: {0}")]
    IncompatibleEmbedding(String),
    #[error("series live on different discriminant forms")]
    IncompatibleModules,
    #[error("exponent {exponent} is not congruent to sigma*q on component {component}")]
    ExponentMismatch { component: usize, exponent: Rational },
    #[error("insufficient precision: need terms up to {required}, have {available}")]
    InsufficientPrecision { required: Rational, available: Rational },
    #[error("parse error: {0}")]
    Parse(String),
}

type Mat = Vec<Vec<i64>>;

fn identity(n: usize) -> Mat {
    (0..n).map(|i| (0..n).map(|j| i64::from(i == j)).collect()).collect()
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    (0..n)
        .map(|i| (0..p).map(|j| (0..m).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

fn transpose(a: &Mat) -> Mat {
    let m = a.first().map_or(0, Vec::len);
    (0..m).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Bareiss determinant.
fn det(a: &Mat) -> i128 {
    let n = a.len();
    if n == 0 {
        return 1;
    }
    let mut m: Vec<Vec<i128>> = a.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let mut sign = 1;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k][k] == 0 {
            match (k + 1..n).find(|&i| m[i][k] != 0) {
                Some(i) => {
                    m.swap(i, k);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}

/// `(r, s)` by congruence diagonalization over the rationals.
fn signature(g: &Mat) -> (usize, usize) {
    let n = g.len();
    let mut a: Vec<Vec<Rational>> = g.iter().map(|r| r.iter().map(|&x| rat(x)).collect()).collect();
    let (mut pos, mut neg) = (0, 0);
    for k in 0..n {
        if a[k][k].is_zero() {
            if let Some(i) = (k + 1..n).find(|&i| !a[i][i].is_zero()) {
                a.swap(k, i);
                for row in a.iter_mut() {
                    row.swap(k, i);
                }
            } else if let Some(j) = (k + 1..n).find(|&j| !a[k][j].is_zero()) {
                for c in 0..n {
                    let v = a[j][c].clone();
                    a[k][c] += v;
                }
                for r in 0..n {
                    let v = a[r][j].clone();
                    a[r][k] += v;
                }
            } else {
                continue;
            }
        }
        let p = a[k][k].clone();
        if p.is_positive() {
            pos += 1;
        } else {
            neg += 1;
        }
        for i in k + 1..n {
            let f = &a[i][k] / &p;
            if f.is_zero() {
                continue;
            }
            for c in 0..n {
                let v = &f * &a[k][c];
                a[i][c] -= v;
            }
            for r in 0..n {
                let v = &f * &a[r][k];
                a[r][i] -= v;
            }
        }
    }
    (pos, neg)
}

/// Unimodular `U`, `V` and diagonal `d` with `U G V = diag(d)`; also
/// returns `V^-1`.
fn diagonalize(g: &Mat) -> (Vec<i64>, Mat, Mat) {
    let n = g.len();
    let mut a = g.clone();
    let mut v = identity(n);
    let mut vinv = identity(n);
    for t in 0..n {
        loop {
            // smallest nonzero entry of the remaining block becomes the pivot
            let mut best: Option<(usize, usize)> = None;
            for i in t..n {
                for j in t..n {
                    if a[i][j] != 0 && best.is_none_or(|(bi, bj)| a[i][j].abs() < a[bi][bj].abs()) {
                        best = Some((i, j));
                    }
                }
            }
            let Some((bi, bj)) = best else { break };
            a.swap(t, bi);
            for row in a.iter_mut() {
                row.swap(t, bj);
            }
            for row in v.iter_mut() {
                row.swap(t, bj);
            }
            vinv.swap(t, bj);
            let p = a[t][t];
            let mut clean = true;
            for i in t + 1..n {
                let q = Integer::div_floor(&a[i][t], &p);
                if q != 0 {
                    for c in 0..n {
                        a[i][c] -= q * a[t][c];
                    }
                }
                clean &= a[i][t] == 0;
            }
            for j in t + 1..n {
                let q = Integer::div_floor(&a[t][j], &p);
                if q != 0 {
                    for r in 0..n {
                        a[r][j] -= q * a[r][t];
                        v[r][j] -= q * v[r][t];
                    }
                    for c in 0..n {
                        vinv[t][c] += q * vinv[j][c];
                    }
                }
                clean &= a[t][j] == 0;
            }
            if clean {
                break;
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v, vinv)
}

fn dot(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An even lattice `Z^n` with quadratic form `q(x) = x^T G x / 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntLattice {
    gram: Mat,
}

impl IntLattice {
    pub fn new(gram: Vec<Vec<i64>>) -> Result<Self, FqmError> {
        let n = gram.len();
        for (i, row) in gram.iter().enumerate() {
            if row.len() != n || row[i] % 2 != 0 || (0..n).any(|j| gram[j][i] != row[j]) {
                return Err(FqmError::NotEven);
            }
        }
        if det(&gram) == 0 {
            return Err(FqmError::SingularGram);
        }
        Ok(IntLattice { gram })
    }

    pub fn diagonal(entries: &[i64]) -> Result<Self, FqmError> {
        let n = entries.len();
        Self::new((0..n).map(|i| (0..n).map(|j| if i == j { entries[i] } else { 0 }).collect()).collect())
    }

    pub fn gram(&self) -> &[Vec<i64>] {
        &self.gram
    }

    pub fn rank(&self) -> usize {
        self.gram.len()
    }

    pub fn det(&self) -> i128 {
        det(&self.gram)
    }

    pub fn signature(&self) -> (usize, usize) {
        signature(&self.gram)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.signature() == (self.rank(), 0)
    }

    pub fn negated(&self) -> Self {
        IntLattice { gram: self.gram.iter().map(|r| r.iter().map(|x| -x).collect()).collect() }
    }

    pub fn direct_sum(&self, other: &Self) -> Self {
        let (n, m) = (self.rank(), other.rank());
        let mut g = vec![vec![0; n + m]; n + m];
        for i in 0..n {
            g[i][..n].copy_from_slice(&self.gram[i]);
        }
        for i in 0..m {
            g[n + i][n..].copy_from_slice(&other.gram[i]);
        }
        IntLattice { gram: g }
    }

    pub fn q(&self, x: &[Rational]) -> Rational {
        self.bilinear(x, x) / rat(2)
    }

    pub fn bilinear(&self, x: &[Rational], y: &[Rational]) -> Rational {
        let mut acc = Rational::zero();
        for (i, row) in self.gram.iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                if *g != 0 {
                    acc += &x[i] * &y[j] * rat(*g);
                }
            }
        }
        acc
    }
}

/// The discriminant form `L'/L` of an even lattice, with elements indexed in
/// mixed radix over the generator orders (last coordinate fastest).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FQModule {
    lattice: IntLattice,
    signature: (usize, usize),
    orders: Vec<u64>,
    /// Generators of `L'/L` as vectors in lattice coordinates.
    gens: Vec<Vec<Rational>>,
    /// `d_j (V^-1)_j` for every diagonal entry; `x` lies in `L'` iff all are
    /// integral on `x`.
    rows: Vec<Vec<Rational>>,
    /// Indices into `rows` carrying the coordinates of the generators.
    kept: Vec<usize>,
    q: Vec<Rational>,
}

impl FQModule {
    pub fn from_lattice(lattice: &IntLattice) -> Self {
        let (d, v, vinv) = diagonalize(&lattice.gram);
        let n = d.len();
        let mut gens = Vec::new();
        let mut orders = Vec::new();
        let mut kept = Vec::new();
        let mut rows = Vec::new();
        for j in 0..n {
            rows.push(vinv[j].iter().map(|&x| rat(d[j] * x)).collect());
            if d[j].abs() > 1 {
                kept.push(j);
                orders.push(d[j].unsigned_abs());
                gens.push((0..n).map(|i| Rational::new(v[i][j].into(), d[j].into())).collect());
            }
        }
        let mut m = FQModule {
            lattice: lattice.clone(),
            signature: lattice.signature(),
            orders,
            gens,
            rows,
            kept,
            q: Vec::new(),
        };
        m.q = (0..m.len()).map(|i| frac(&m.lattice.q(&m.vector(i)))).collect();
        m
    }

    pub fn lattice(&self) -> &IntLattice {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.orders.iter().product::<u64>() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn orders(&self) -> &[u64] {
        &self.orders
    }

    pub fn signature(&self) -> (usize, usize) {
        self.signature
    }

    /// `r - s` modulo 8.
    pub fn signature_mod8(&self) -> i64 {
        (self.signature.0 as i64 - self.signature.1 as i64).rem_euclid(8)
    }

    pub fn coords(&self, mut i: usize) -> Vec<u64> {
        let mut c = vec![0; self.orders.len()];
        for j in (0..self.orders.len()).rev() {
            c[j] = i as u64 % self.orders[j];
            i /= self.orders[j] as usize;
        }
        c
    }

    pub fn index(&self, coords: &[i64]) -> usize {
        let mut i = 0usize;
        for (c, &o) in coords.iter().zip(&self.orders) {
            i = i * o as usize + c.rem_euclid(o as i64) as usize;
        }
        i
    }

    /// A representative of element `i` in `L'`, in lattice coordinates.
    pub fn vector(&self, i: usize) -> Vec<Rational> {
        let n = self.lattice.rank();
        let mut x = vec![Rational::zero(); n];
        for (c, g) in self.coords(i).iter().zip(&self.gens) {
            for k in 0..n {
                x[k] += &g[k] * rat(*c as i64);
            }
        }
        x
    }

    /// Class of `x` in `L'/L`, or `None` if `x` is not in `L'`.
    pub fn class_of(&self, x: &[Rational]) -> Option<usize> {
        let mut vals = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let v = dot(row, x);
            if !v.is_integer() {
                return None;
            }
            vals.push(v.to_integer());
        }
        let coords: Vec<i64> = self
            .kept
            .iter()
            .zip(&self.orders)
            .map(|(&j, &o)| vals[j].mod_floor(&BigInt::from(o)).to_i64().unwrap())
            .collect();
        Some(self.index(&coords))
    }

    pub fn zero(&self) -> usize {
        0
    }

    pub fn add(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.coords(i), self.coords(j));
        let c: Vec<i64> = a.iter().zip(&b).map(|(x, y)| (x + y) as i64).collect();
        self.index(&c)
    }

    pub fn neg(&self, i: usize) -> usize {
        let c: Vec<i64> = self.coords(i).iter().map(|&x| -(x as i64)).collect();
        self.index(&c)
    }

    /// `q(mu)` in `[0, 1)`.
    pub fn q(&self, i: usize) -> &Rational {
        &self.q[i]
    }

    /// `(mu, nu)` in `[0, 1)`.
    pub fn bilinear(&self, i: usize, j: usize) -> Rational {
        frac(&self.lattice.bilinear(&self.vector(i), &self.vector(j)))
    }

    /// Least common denominator of all `q(mu)`.
    pub fn level(&self) -> i64 {
        self.q.iter().fold(BigInt::one(), |acc, q| acc.lcm(q.denom())).to_i64().unwrap()
    }

    /// The same group with `q` replaced by `-q`.
    pub fn negated(&self) -> Self {
        FQModule {
            lattice: self.lattice.negated(),
            signature: (self.signature.1, self.signature.0),
            q: self.q.iter().map(|q| frac(&-q)).collect(),
            ..self.clone()
        }
    }

    /// Orthogonal direct sum; element `(a, b)` has index `a * |B| + b`.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let (n, m) = (self.lattice.rank(), other.lattice.rank());
        let pad = |v: &Vec<Rational>, before: usize, after: usize| {
            let mut out = vec![Rational::zero(); before];
            out.extend(v.iter().cloned());
            out.extend(std::iter::repeat_n(Rational::zero(), after));
            out
        };
        let mut gens: Vec<_> = self.gens.iter().map(|g| pad(g, 0, m)).collect();
        gens.extend(other.gens.iter().map(|g| pad(g, n, 0)));
        let mut rows: Vec<_> = self.rows.iter().map(|r| pad(r, 0, m)).collect();
        rows.extend(other.rows.iter().map(|r| pad(r, n, 0)));
        let mut kept = self.kept.clone();
        kept.extend(other.kept.iter().map(|k| k + n));
        let mut orders = self.orders.clone();
        orders.extend(&other.orders);
        let q = (0..self.len())
            .flat_map(|i| (0..other.len()).map(move |j| (i, j)))
            .map(|(i, j)| frac(&(self.q(i) + other.q(j))))
            .collect();
        FQModule {
            lattice: self.lattice.direct_sum(&other.lattice),
            signature: (self.signature.0 + other.signature.0, self.signature.1 + other.signature.1),
            orders,
            gens,
            rows,
            kept,
            q,
        }
    }

    /// `|sum_mu e(q(mu)) - sqrt(|M|) e(sig/8)|`.
    pub fn milgram_defect(&self) -> f64 {
        let s: Complex64 = self.q.iter().map(|q| e(rational_to_f64(q))).sum();
        let expect = e(self.signature_mod8() as f64 / 8.0) * (self.len() as f64).sqrt();
        (s - expect).norm()
    }
}

/// `exp(2 pi i x)`.
pub fn e(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * x)
}

/// Dense complex matrix in row-major order.
pub type CMatrix = Vec<Vec<Complex64>>;

pub fn cmat_mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let n = a.len();
    let p = b[0].len();
    (0..n)
        .map(|i| (0..p).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn cmat_vec(a: &CMatrix, v: &[Complex64]) -> Vec<Complex64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// `rho(T)` and `rho(S)` in the basis `e_mu`, with `rho(S)[nu][mu]` the
/// coefficient of `e_nu` in the image of `e_mu`.
pub fn weil_matrices(m: &FQModule) -> (CMatrix, CMatrix) {
    let n = m.len();
    let mut t = vec![vec![Complex64::zero(); n]; n];
    for (i, row) in t.iter_mut().enumerate() {
        row[i] = e(rational_to_f64(m.q(i)));
    }
    let phase = e(-(m.signature_mod8() as f64) / 8.0) / (n as f64).sqrt();
    let s = (0..n)
        .map(|nu| (0..n).map(|mu| phase * e(-rational_to_f64(&m.bilinear(nu, mu)))).collect())
        .collect();
    (t, s)
}

/// A finite-index sublattice `K` of `L`. The matrix maps `K`-coordinates to
/// `L`-coordinates.
#[derive(Debug, Clone)]
pub struct LatticeEmbedding {
    pub source: Arc<FQModule>,
    pub target: Arc<FQModule>,
    pub matrix: Vec<Vec<i64>>,
    pub index: u64,
    /// Image in `L'/L` of each element of `K'/K` lying in `L'/K`.
    image: Vec<Option<usize>>,
}

impl LatticeEmbedding {
    pub fn new(source: Arc<FQModule>, target: Arc<FQModule>, matrix: Vec<Vec<i64>>) -> Result<Self, FqmError> {
        let bad = |s: &str| FqmError::IncompatibleEmbedding(s.to_string());
        let (gk, gl) = (&source.lattice.gram, &target.lattice.gram);
        if matrix.len() != gl.len() || matrix.iter().any(|r| r.len() != gk.len()) || gk.len() != gl.len() {
            return Err(bad("shape"));
        }
        if mat_mul(&mat_mul(&transpose(&matrix), gl), &matrix) != *gk {
            return Err(bad("gram matrices do not match"));
        }
        let index = det(&matrix).unsigned_abs() as u64;
        if index == 0 {
            return Err(bad("singular inclusion"));
        }
        if (index * index) as usize * target.len() != source.len() {
            return Err(bad("index does not match discriminant sizes"));
        }
        let image = (0..source.len())
            .map(|i| {
                let v = source.vector(i);
                let w: Vec<Rational> = matrix.iter().map(|r| r.iter().zip(&v).map(|(m, x)| rat(*m) * x).sum()).collect();
                target.class_of(&w)
            })
            .collect();
        Ok(LatticeEmbedding { source, target, matrix, index, image })
    }

    /// Image in `L'/L` of `mu` in `K'/K`, if `mu` lies in `L'/K`.
    pub fn image(&self, mu: usize) -> Option<usize> {
        self.image[mu]
    }

    /// `(f_K)_mu = f_{mu bar}` on `L'/K`, zero elsewhere.
    pub fn restrict(&self, f: &VVSeries) -> Result<VVSeries, FqmError> {
        if *f.module != *self.target {
            return Err(FqmError::IncompatibleModules);
        }
        let mut out = VVSeries { module: self.source.clone(), terms: BTreeMap::new(), ..f.clone() };
        for (mu, img) in self.image.iter().enumerate() {
            let Some(img) = img else { continue };
            for ((_, n), c) in f.terms.range((*img, i64::MIN)..=(*img, i64::MAX)) {
                out.terms.insert((mu, *n), c.clone());
            }
        }
        Ok(out.normalized(self.source.level()))
    }

    /// `(g^L)_{mu bar} = sum over mu in L'/K above mu bar of g_mu`.
    pub fn trace_up(&self, g: &VVSeries) -> Result<VVSeries, FqmError> {
        if *g.module != *self.source {
            return Err(FqmError::IncompatibleModules);
        }
        let mut out = VVSeries { module: self.target.clone(), terms: BTreeMap::new(), ..g.clone() };
        for ((mu, n), c) in &g.terms {
            if let Some(img) = self.image[*mu] {
                *out.terms.entry((img, *n)).or_insert_with(Rational::zero) += c;
            }
        }
        out.terms.retain(|_, c| !c.is_zero());
        Ok(out.normalized(self.target.level()))
    }

    /// [`trace_up`](Self::trace_up) on a numeric vector over `K'/K`.
    pub fn trace_up_values(&self, g: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::zero(); self.target.len()];
        for (mu, img) in self.image.iter().enumerate() {
            if let Some(img) = img {
                out[*img] += g[mu];
            }
        }
        out
    }
}

/// Sparse vector-valued q-series `pi^pi_power * sum c(mu, n) q^n e_mu` with
/// `n = scaled / denom`. Every term with exponent `<= precision / denom` is
/// present (absent terms are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct VVSeries {
    pub module: Arc<FQModule>,
    /// Twice the weight.
    pub weight2: i64,
    pub pi_power: i32,
    /// Exponents satisfy `n = sigma * q(mu) mod 1`.
    pub sigma: i8,
    pub denom: i64,
    pub precision: i64,
    pub terms: BTreeMap<(usize, i64), Rational>,
}

impl VVSeries {
    pub fn new(module: Arc<FQModule>, weight2: i64, pi_power: i32, sigma: i8, precision: &Rational) -> Self {
        let denom = module.level();
        let precision = floor_scaled(precision, denom);
        VVSeries { module, weight2, pi_power, sigma, denom, precision, terms: BTreeMap::new() }
    }

    pub fn weight(&self) -> Rational {
        Rational::new(self.weight2.into(), 2.into())
    }

    pub fn precision(&self) -> Rational {
        Rational::new(self.precision.into(), self.denom.into())
    }

    pub fn exponent(&self, scaled: i64) -> Rational {
        Rational::new(scaled.into(), self.denom.into())
    }

    fn check_exponent(&self, mu: usize, n: &Rational) -> Result<(), FqmError> {
        let s = rat(self.sigma as i64);
        if !(n - s * self.module.q(mu)).is_integer() {
            return Err(FqmError::ExponentMismatch { component: mu, exponent: n.clone() });
        }
        Ok(())
    }

    /// Adds `c q^n e_mu`.
    pub fn add_term(&mut self, mu: usize, n: &Rational, c: Rational) -> Result<(), FqmError> {
        self.check_exponent(mu, n)?;
        let scaled = n * rat(self.denom);
        if !scaled.is_integer() {
            return Err(FqmError::ExponentMismatch { component: mu, exponent: n.clone() });
        }
        let key = (mu, scaled.to_integer().to_i64().unwrap());
        let slot = self.terms.entry(key).or_insert_with(Rational::zero);
        *slot += c;
        if slot.is_zero() {
            self.terms.remove(&key);
        }
        Ok(())
    }

    pub fn coeff(&self, mu: usize, n: &Rational) -> Rational {
        let scaled = n * rat(self.denom);
        if !scaled.is_integer() {
            return Rational::zero();
        }
        let key = (mu, scaled.to_integer().to_i64().unwrap());
        self.terms.get(&key).cloned().unwrap_or_else(Rational::zero)
    }

    /// Smallest scaled exponent present, or `0` for the zero series.
    fn valuation(&self) -> i64 {
        self.terms.keys().map(|k| k.1).min().unwrap_or(0).min(0)
    }

    /// Same series with exponents over the denominator `denom`.
    pub fn with_denom(&self, denom: i64) -> Self {
        assert_eq!(denom % self.denom, 0);
        let f = denom / self.denom;
        VVSeries {
            denom,
            precision: self.precision.saturating_mul(f),
            terms: self.terms.iter().map(|(&(mu, n), c)| ((mu, n * f), c.clone())).collect(),
            ..self.clone()
        }
    }

    /// Rewrites exponents over the smallest multiple of `target` that keeps
    /// them integral.
    pub fn normalized(&self, target: i64) -> Self {
        let mut d = target;
        while self.terms.keys().any(|&(_, n)| (n * d) % self.denom != 0) {
            d += target;
        }
        VVSeries {
            denom: d,
            precision: Integer::div_floor(&(self.precision as i128 * d as i128), &(self.denom as i128)) as i64,
            terms: self.terms.iter().map(|(&(mu, n), c)| ((mu, n * d / self.denom), c.clone())).collect(),
            ..self.clone()
        }
    }

    pub fn scale(&self, c: &Rational) -> Self {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out.terms.retain(|_, v| !v.is_zero());
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self, FqmError> {
        if self.module != other.module || self.sigma != other.sigma {
            return Err(FqmError::IncompatibleModules);
        }
        let d = self.denom.lcm(&other.denom);
        let (a, b) = (self.with_denom(d), other.with_denom(d));
        let mut out = a.clone();
        out.precision = a.precision.min(b.precision);
        for (k, c) in b.terms {
            *out.terms.entry(k).or_insert_with(Rational::zero) += c;
        }
        out.terms.retain(|_, v| !v.is_zero());
        Ok(out)
    }

    /// Numeric value at `tau` in the upper half-plane, one entry per component.
    pub fn eval(&self, tau: Complex64) -> Vec<Complex64> {
        let mut out = vec![Complex64::zero(); self.module.len()];
        let two_pi_i = Complex64::new(0.0, 2.0 * std::f64::consts::PI);
        for (&(mu, n), c) in &self.terms {
            let x = n as f64 / self.denom as f64;
            out[mu] += (two_pi_i * tau * x).exp() * rational_to_f64(c);
        }
        let p = std::f64::consts::PI.powi(self.pi_power);
        out.iter().map(|v| v * p).collect()
    }

    /// Line-based text form: a header followed by
    /// `component TAB scaled-exponent TAB p/q` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "vvseries weight2={} pi_power={} sigma={} denom={} precision={} components={}\n",
            self.weight2,
            self.pi_power,
            self.sigma,
            self.denom,
            self.precision,
            self.module.len()
        );
        for ((mu, n), c) in &self.terms {
            let _ = writeln!(s, "{mu}\t{n}\t{}", format_rational(c));
        }
        s
    }

    pub fn from_text(text: &str, module: Arc<FQModule>) -> Result<Self, FqmError> {
        let err = |m: &str| FqmError::Parse(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty input"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("vvseries") {
            return Err(err("missing header"));
        }
        let mut kv = BTreeMap::new();
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| err(f))?;
            kv.insert(k, v.parse::<i64>().map_err(|_| err(f))?);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| err(k));
        if get("components")? as usize != module.len() {
            return Err(err("component count does not match module"));
        }
        let mut out = VVSeries {
            module,
            weight2: get("weight2")?,
            pi_power: get("pi_power")? as i32,
            sigma: get("sigma")? as i8,
            denom: get("denom")?,
            precision: get("precision")?,
            terms: BTreeMap::new(),
        };
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split('\t').collect();
            let [mu, n, c] = parts[..] else { return Err(err(line)) };
            let mu: usize = mu.parse().map_err(|_| err(line))?;
            let n: i64 = n.parse().map_err(|_| err(line))?;
            let c = parse_rational(c).ok_or_else(|| err(line))?;
            if mu >= out.module.len() {
                return Err(err(line));
            }
            out.check_exponent(mu, &out.exponent(n))?;
            out.terms.insert((mu, n), c);
        }
        Ok(out)
    }
}

fn floor_scaled(x: &Rational, denom: i64) -> i64 {
    (x * rat(denom)).floor().to_integer().to_i64().unwrap()
}

/// Theta series of a positive definite lattice, complete up to `prec`.
pub fn theta_series(k: &IntLattice, prec: &Rational) -> Result<VVSeries, FqmError> {
    if !k.is_positive_definite() {
        return Err(FqmError::NotPositiveDefinite);
    }
    let m = Arc::new(FQModule::from_lattice(k));
    let mut out = VVSeries::new(m.clone(), k.rank() as i64, 0, 1, prec);
    let n = k.rank();
    // |x_i|^2 <= (G^-1)_ii * 2q(x)
    let ginv_diag = inverse_diag_f64(&k.gram);
    let pf = rational_to_f64(prec);
    for mu in 0..m.len() {
        let base = m.vector(mu);
        let base_f: Vec<f64> = base.iter().map(rational_to_f64).collect();
        let ranges: Vec<(i64, i64)> = (0..n)
            .map(|i| {
                let r = (ginv_diag[i] * 2.0 * pf).sqrt() + 1e-9;
                ((-r - base_f[i]).ceil() as i64, (r - base_f[i]).floor() as i64)
            })
            .collect();
        let mut err = None;
        for_each_in_box(&ranges, |v| {
            let x: Vec<Rational> = base.iter().zip(v).map(|(b, vi)| b + rat(*vi)).collect();
            let qx = k.q(&x);
            if qx <= *prec && err.is_none() {
                err = out.add_term(mu, &qx, Rational::one()).err();
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(out)
}

fn for_each_in_box(ranges: &[(i64, i64)], mut f: impl FnMut(&[i64])) {
    if ranges.iter().any(|r| r.0 > r.1) {
        return;
    }
    let mut v: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        f(&v);
        let mut i = v.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if v[i] < ranges[i].1 {
                v[i] += 1;
                break;
            }
            v[i] = ranges[i].0;
        }
    }
}

fn inverse_diag_f64(g: &Mat) -> Vec<f64> {
    let n = g.len();
    let mut a: Vec<Vec<f64>> = g.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        inv.swap(k, p);
        let piv = a[k][k];
        for j in 0..n {
            a[k][j] /= piv;
            inv[k][j] /= piv;
        }
        for i in 0..n {
            if i != k {
                let f = a[i][k];
                for j in 0..n {
                    a[i][j] -= f * a[k][j];
                    inv[i][j] -= f * inv[k][j];
                }
            }
        }
    }
    (0..n).map(|i| inv[i][i]).collect()
}

fn product_module(f: &VVSeries, g: &VVSeries) -> FQModule {
    if f.sigma == g.sigma {
        f.module.direct_sum(&g.module)
    } else {
        f.module.direct_sum(&g.module.negated())
    }
}

fn product_precision(f: &VVSeries, g: &VVSeries) -> i64 {
    (f.precision + g.valuation()).min(g.precision + f.valuation())
}

/// `sum f_mu g_nu e_(mu, nu)`. When the sign tags differ the second factor's
/// form is negated so the result carries `f`'s tag.
pub fn tensor(f: &VVSeries, g: &VVSeries) -> VVSeries {
    rankin_cohen(f, g, 0)
}

fn rising(x: &Rational, n: u32) -> Rational {
    (0..n).fold(Rational::one(), |acc, i| acc * (x + rat(i as i64)))
}

fn factorial(n: u32) -> Rational {
    (1..=n).fold(Rational::one(), |acc, i| acc * rat(i as i64))
}

/// Rankin-Cohen bracket with derivatives `q d/dq`:
/// `sum_{r+s=n} (-1)^r (k+n-s)_s (l+n-r)_r / (s! r!) f^(r) g^(s)`.
pub fn rankin_cohen(f: &VVSeries, g: &VVSeries, n: u32) -> VVSeries {
    let d = f.denom.lcm(&g.denom);
    let (f, g) = (f.with_denom(d), g.with_denom(d));
    let (kappa, ell) = (f.weight(), g.weight());
    let module = Arc::new(product_module(&f, &g));
    let nb = g.module.len();
    let nn = rat(n as i64);
    let coeffs: Vec<(u32, Rational)> = (0..=n)
        .map(|r| {
            let s = n - r;
            let sign = if r % 2 == 0 { rat(1) } else { rat(-1) };
            let c = sign * rising(&(&kappa + &nn - rat(s as i64)), s) * rising(&(&ell + &nn - rat(r as i64)), r)
                / (factorial(s) * factorial(r));
            (r, c)
        })
        .collect();
    let mut terms: BTreeMap<(usize, i64), Rational> = BTreeMap::new();
    let dr = rat(d);
    for (&(mu, a), cf) in &f.terms {
        let ea = rat(a) / &dr;
        for (&(nu, b), cg) in &g.terms {
            let eb = rat(b) / &dr;
            let mut w = Rational::zero();
            for (r, c) in &coeffs {
                w += c * num_traits::pow(ea.clone(), *r as usize) * num_traits::pow(eb.clone(), (n - r) as usize);
            }
            if w.is_zero() {
                continue;
            }
            *terms.entry((mu * nb + nu, a + b)).or_insert_with(Rational::zero) += w * cf * cg;
        }
    }
    terms.retain(|_, v| !v.is_zero());
    VVSeries {
        module,
        weight2: f.weight2 + g.weight2 + 4 * n as i64,
        pi_power: f.pi_power + g.pi_power,
        sigma: f.sigma,
        denom: d,
        precision: product_precision(&f, &g),
        terms,
    }
}

/// `sum_mu sum_n f(mu, n) g(mu, -n)` with the combined power of `pi`.
pub fn ct_pairing(f: &VVSeries, g: &VVSeries) -> Result<(Rational, i32), FqmError> {
    if f.module != g.module {
        return Err(FqmError::IncompatibleModules);
    }
    let d = f.denom.lcm(&g.denom);
    let (f, g) = (f.with_denom(d), g.with_denom(d));
    for (a, b) in [(&f, &g), (&g, &f)] {
        let need = -a.valuation();
        if need > b.precision {
            return Err(FqmError::InsufficientPrecision {
                required: Rational::new(need.into(), d.into()),
                available: b.precision(),
            });
        }
    }
    let mut acc = Rational::zero();
    for (&(mu, n), c) in &f.terms {
        if let Some(c2) = g.terms.get(&(mu, -n)) {
            acc += c * c2;
        }
    }
    Ok((acc, f.pi_power + g.pi_power))
}

/// The lattice of forms `[a, 2 beta, c]` with `q = ac - beta^2`, in
/// coordinates `(a, beta, c)`.
pub fn form_lattice() -> IntLattice {
    IntLattice::new(vec![vec![0, 0, 1], vec![0, -2, 0], vec![1, 0, 0]]).unwrap()
}

/// Siegel theta function of the form lattice at `(tau, z)`, truncated to
/// `|a|, |b|, |c| <= cutoff` for the forms `[a, b, c]` in `L'`.
pub fn siegel_theta_eval(module: &FQModule, tau: Complex64, z: Complex64, cutoff: i64) -> Vec<Complex64> {
    let mut out = vec![Complex64::zero(); module.len()];
    let (v, y) = (tau.im, z.im);
    let two_pi_i = Complex64::new(0.0, 2.0 * std::f64::consts::PI);
    for a in -cutoff..=cutoff {
        for b in -cutoff..=cutoff {
            for c in -cutoff..=cutoff {
                let qz = (z * a as f64 + b as f64) * z + c as f64;
                let qq = qz.norm_sqr() / (y * y);
                let disc = (b * b - 4 * a * c) as f64;
                let p2 = qq - disc;
                let arg = tau * (p2 / 4.0) - tau.conj() * (qq / 4.0);
                let x = [rat(a), Rational::new(b.into(), 2.into()), rat(c)];
                let mu = module.class_of(&x).expect("half-integral middle coordinate lies in the dual");
                out[mu] += (two_pi_i * arg).exp();
            }
        }
    }
    out.iter().map(|w| w * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::ratio;
    use proptest::prelude::*;

    fn module(g: Vec<Vec<i64>>) -> Arc<FQModule> {
        Arc::new(FQModule::from_lattice(&IntLattice::new(g).unwrap()))
    }

    fn p_lattice() -> IntLattice {
        IntLattice::diagonal(&[2]).unwrap()
    }

    fn nminus_lattice() -> IntLattice {
        IntLattice::diagonal(&[2, 2]).unwrap()
    }

    #[test]
    fn disc_group_examples() {
        let p = FQModule::from_lattice(&p_lattice());
        assert_eq!(p.len(), 2);
        assert_eq!(p.q(1), &ratio(1, 4));
        let n = FQModule::from_lattice(&nminus_lattice());
        assert_eq!(n.len(), 4);
        let half = n.class_of(&[ratio(1, 2), rat(0)]).unwrap();
        assert_eq!(n.q(half), &ratio(1, 4));
        let u = FQModule::from_lattice(&IntLattice::new(vec![vec![0, 1], vec![1, 0]]).unwrap());
        assert_eq!(u.len(), 1);
        assert_eq!(IntLattice::new(vec![vec![2, 2], vec![2, 2]]), Err(FqmError::SingularGram));
        assert_eq!(IntLattice::new(vec![vec![1]]), Err(FqmError::NotEven));
    }

    #[test]
    fn form_lattice_discriminant() {
        let l = FQModule::from_lattice(&form_lattice());
        assert_eq!(l.len(), 2);
        assert_eq!(l.signature(), (1, 2));
        assert_eq!(l.q(1), &ratio(3, 4));
    }

    fn sample_lattices() -> Vec<IntLattice> {
        vec![
            p_lattice(),
            nminus_lattice(),
            form_lattice(),
            IntLattice::diagonal(&[2, -2, -2]).unwrap(),
            IntLattice::new(vec![vec![2, -1], vec![-1, 2]]).unwrap(),
            IntLattice::new(vec![vec![4, 2, 0], vec![2, 6, 1], vec![0, 1, 2]]).unwrap(),
            IntLattice::new(vec![vec![2, 1, 0], vec![1, -4, 3], vec![0, 3, 6]]).unwrap(),
            IntLattice::diagonal(&[6, 10]).unwrap(),
        ]
    }

    #[test]
    fn module_size_and_milgram() {
        for l in sample_lattices() {
            let m = FQModule::from_lattice(&l);
            assert_eq!(m.len() as i128, l.det().abs());
            assert!(m.milgram_defect() < 1e-10, "{l:?}");
            assert!(m.negated().milgram_defect() < 1e-10);
            // every element representative lies in L' and maps back to itself
            for i in 0..m.len() {
                assert_eq!(m.class_of(&m.vector(i)), Some(i));
            }
        }
        let a = FQModule::from_lattice(&p_lattice());
        let b = FQModule::from_lattice(&nminus_lattice());
        assert!(a.direct_sum(&b.negated()).milgram_defect() < 1e-10);
    }

    #[test]
    fn group_law() {
        for l in sample_lattices() {
            let m = FQModule::from_lattice(&l);
            for i in 0..m.len() {
                assert_eq!(m.add(i, m.neg(i)), 0);
                assert_eq!(m.q(m.neg(i)), m.q(i));
                for j in 0..m.len() {
                    // q(x + y) = q(x) + q(y) + (x, y)
                    let lhs = m.q(m.add(i, j)).clone();
                    let rhs = frac(&(m.q(i) + m.q(j) + m.bilinear(i, j)));
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn direct_sum_indexing() {
        let a = FQModule::from_lattice(&p_lattice());
        let b = FQModule::from_lattice(&nminus_lattice());
        let s = a.direct_sum(&b);
        for i in 0..a.len() {
            for j in 0..b.len() {
                assert_eq!(s.q(i * b.len() + j), &frac(&(a.q(i) + b.q(j))));
            }
        }
    }

    fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn weil_matrix_checks() {
        let triv = FQModule::from_lattice(&IntLattice::new(vec![vec![0, 1], vec![1, 0]]).unwrap());
        let (t, s) = weil_matrices(&triv);
        assert_eq!(t.len(), 1);
        assert!((t[0][0] - 1.0).norm() < 1e-15);
        assert!((s[0][0] - 1.0).norm() < 1e-15);

        let p = FQModule::from_lattice(&p_lattice());
        let (t, _) = weil_matrices(&p);
        assert!((t[0][0] - 1.0).norm() < 1e-15);
        assert!((t[1][1] - Complex64::i()).norm() < 1e-15);

        for l in sample_lattices() {
            let m = FQModule::from_lattice(&l);
            let (t, s) = weil_matrices(&m);
            let n = m.len();
            // unitary
            for mat in [&t, &s] {
                for i in 0..n {
                    for j in 0..n {
                        let v: Complex64 = (0..n).map(|k| mat[i][k] * mat[j][k].conj()).sum();
                        assert!((v - f64::from(i == j)).norm() < 1e-12);
                    }
                }
            }
            // S^2 = e(-sig/4) times mu -> -mu
            let s2 = cmat_mul(&s, &s);
            let phase = e(-(m.signature_mod8() as f64) / 4.0);
            for nu in 0..n {
                for mu in 0..n {
                    let expect = if nu == m.neg(mu) { phase } else { Complex64::zero() };
                    assert!((s2[nu][mu] - expect).norm() < 1e-12);
                }
            }
            // (ST)^3 = S^2
            let st = cmat_mul(&s, &t);
            let st3 = cmat_mul(&cmat_mul(&st, &st), &st);
            for i in 0..n {
                assert!(close(&st3[i], &s2[i], 1e-10));
            }
        }
    }

    #[test]
    fn theta_examples() {
        let th = theta_series(&nminus_lattice(), &rat(2)).unwrap();
        assert_eq!(th.coeff(0, &rat(0)), rat(1));
        assert_eq!(th.coeff(0, &rat(1)), rat(4));
        assert_eq!(th.coeff(0, &rat(2)), rat(4));
        let m = &th.module;
        let hh = m.class_of(&[ratio(1, 2), ratio(1, 2)]).unwrap();
        assert_eq!(th.coeff(hh, &ratio(1, 2)), rat(4));
        let tp = theta_series(&p_lattice(), &rat(3)).unwrap();
        assert_eq!(tp.coeff(1, &ratio(1, 4)), rat(2));
        assert_eq!(tp.weight(), ratio(1, 2));
        assert_eq!(theta_series(&form_lattice(), &rat(2)), Err(FqmError::NotPositiveDefinite));
    }

    #[test]
    fn theta_counts_by_brute_force() {
        let g = vec![vec![2, 1, 0], vec![1, 4, 1], vec![0, 1, 2]];
        let l = IntLattice::new(g).unwrap();
        let th = theta_series(&l, &rat(6)).unwrap();
        let m = &th.module;
        assert!((2.0f64 * 4.0 * 6.0).sqrt() < 7.0 && (2.0f64 * 2.0 * 6.0).sqrt() < 5.0);
        let mut brute: BTreeMap<(usize, Rational), i64> = BTreeMap::new();
        // dual vectors are x = G^-1 y for integral y, and |y_i|^2 <= 2 G_ii q(x)
        let gf = [[2i64, 1, 0], [1, 4, 1], [0, 1, 2]];
        let adj = |i: usize, j: usize| {
            let (r1, r2) = ((j + 1) % 3, (j + 2) % 3);
            let (c1, c2) = ((i + 1) % 3, (i + 2) % 3);
            gf[r1][c1] * gf[r2][c2] - gf[r1][c2] * gf[r2][c1]
        };
        let detg: i64 = (0..3).map(|j| gf[0][j] * adj(j, 0)).sum();
        for y0 in -5i64..=5 {
            for y1 in -7i64..=7 {
                for y2 in -5i64..=5 {
                    let y = [y0, y1, y2];
                    let v: Vec<Rational> =
                        (0..3).map(|i| ratio((0..3).map(|j| adj(i, j) * y[j]).sum(), detg)).collect();
                    let Some(mu) = m.class_of(&v) else { panic!("G^-1 y must be dual") };
                    let qv = l.q(&v);
                    if qv <= rat(6) {
                        *brute.entry((mu, qv)).or_default() += 1;
                    }
                }
            }
        }
        let mut total = 0;
        for ((mu, n), cnt) in &brute {
            assert_eq!(th.coeff(*mu, n), rat(*cnt));
            total += 1;
        }
        assert_eq!(total, th.terms.len());
    }

    #[test]
    fn theta_transformation() {
        let tau = Complex64::new(0.3, 1.0);
        for l in [p_lattice(), nminus_lattice(), IntLattice::new(vec![vec![2, -1], vec![-1, 2]]).unwrap(),
                  IntLattice::new(vec![vec![2, 1, 0], vec![1, 4, 1], vec![0, 1, 2]]).unwrap()] {
            let th = theta_series(&l, &rat(40)).unwrap();
            let (t, s) = weil_matrices(&th.module);
            let v = th.eval(tau);
            // T
            let lhs = th.eval(tau + 1.0);
            assert!(close(&lhs, &cmat_vec(&t, &v), 1e-10));
            // S: theta(-1/tau) = tau^(n/2) rho(S) theta(tau)
            let lhs = th.eval(-tau.inv());
            let w = tau.powf(l.rank() as f64 / 2.0);
            let rhs: Vec<Complex64> = cmat_vec(&s, &v).iter().map(|x| x * w).collect();
            assert!(close(&lhs, &rhs, 1e-6), "{lhs:?} vs {rhs:?}");
        }
    }

    fn cm_embedding() -> LatticeEmbedding {
        let p = FQModule::from_lattice(&p_lattice());
        let nm = FQModule::from_lattice(&nminus_lattice());
        let k = Arc::new(p.direct_sum(&nm.negated()));
        let l = Arc::new(FQModule::from_lattice(&form_lattice()));
        LatticeEmbedding::new(k, l, vec![vec![-1, 1, 0], vec![0, 0, 1], vec![-1, -1, 0]]).unwrap()
    }

    #[test]
    fn cm_embedding_cosets() {
        let e = cm_embedding();
        assert_eq!(e.index, 2);
        let hit = (0..e.source.len()).filter(|&mu| e.image(mu).is_some()).count();
        assert_eq!(hit, 4);
        for mu in 0..e.source.len() {
            if let Some(img) = e.image(mu) {
                assert_eq!(e.source.q(mu), e.target.q(img));
            }
        }
        let id = LatticeEmbedding::new(e.target.clone(), e.target.clone(), identity(3)).unwrap();
        assert_eq!(id.index, 1);
        let bad = LatticeEmbedding::new(e.source.clone(), e.target.clone(), identity(3));
        assert!(matches!(bad, Err(FqmError::IncompatibleEmbedding(_))));
    }

    fn random_series(module: &Arc<FQModule>, sigma: i8, seed: &[(usize, i64, i64)]) -> VVSeries {
        let mut s = VVSeries::new(module.clone(), 1, 0, sigma, &rat(10));
        for &(mu, n, c) in seed {
            let mu = mu % module.len();
            let base = rat(sigma as i64) * module.q(mu);
            let n = frac(&base) + rat(n);
            s.add_term(mu, &n, rat(c)).unwrap();
        }
        s
    }

    proptest! {
        #[test]
        fn restrict_trace_adjoint(
            fs in proptest::collection::vec((0usize..64, -3i64..4, -9i64..10), 0..12),
            gs in proptest::collection::vec((0usize..64, -3i64..4, -9i64..10), 0..12),
        ) {
            let e = cm_embedding();
            let f = random_series(&e.target, 1, &fs);
            let g = random_series(&e.source, 1, &gs);
            let lhs = ct_pairing(&f, &e.trace_up(&g).unwrap()).unwrap();
            let rhs = ct_pairing(&e.restrict(&f).unwrap(), &g).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn ct_pairing_symmetric(
            fs in proptest::collection::vec((0usize..8, -3i64..4, -9i64..10), 0..12),
            gs in proptest::collection::vec((0usize..8, -3i64..4, -9i64..10), 0..12),
        ) {
            let m = Arc::new(FQModule::from_lattice(&nminus_lattice()));
            let f = random_series(&m, 1, &fs);
            let g = random_series(&m, 1, &gs);
            prop_assert_eq!(ct_pairing(&f, &g).unwrap(), ct_pairing(&g, &f).unwrap());
        }

        #[test]
        fn bracket_bilinear(
            fs in proptest::collection::vec((0usize..2, 0i64..4, -9i64..10), 0..6),
            f2 in proptest::collection::vec((0usize..2, 0i64..4, -9i64..10), 0..6),
            gs in proptest::collection::vec((0usize..4, 0i64..4, -9i64..10), 0..6),
            n in 0u32..4,
            c in -5i64..6,
        ) {
            let p = Arc::new(FQModule::from_lattice(&p_lattice()));
            let nm = Arc::new(FQModule::from_lattice(&nminus_lattice()));
            let mut f = random_series(&p, -1, &fs);
            f.weight2 = 3;
            let mut h = random_series(&p, -1, &f2);
            h.weight2 = 3;
            let g = random_series(&nm, 1, &gs);
            let lhs = rankin_cohen(&f.add(&h.scale(&rat(c))).unwrap(), &g, n);
            let rhs = rankin_cohen(&f, &g, n).add(&rankin_cohen(&h, &g, n).scale(&rat(c))).unwrap();
            prop_assert_eq!(&lhs.terms, &rhs.terms);
            prop_assert_eq!(lhs.weight2, 3 + 1 + 4 * n as i64);
            // second slot
            let g2 = random_series(&nm, 1, &fs.iter().map(|&(a, b, c)| (a + 1, b, c)).collect::<Vec<_>>());
            let lhs = rankin_cohen(&f, &g.add(&g2).unwrap(), n);
            let rhs = rankin_cohen(&f, &g, n).add(&rankin_cohen(&f, &g2, n)).unwrap();
            prop_assert_eq!(lhs.terms, rhs.terms);
        }
    }

    #[test]
    fn tensor_examples() {
        let p = Arc::new(FQModule::from_lattice(&p_lattice()));
        let nm = Arc::new(FQModule::from_lattice(&nminus_lattice()));
        let mut f = VVSeries::new(p.clone(), 1, 0, 1, &rat(5));
        f.add_term(1, &ratio(5, 4), rat(3)).unwrap();
        let mut g = VVSeries::new(nm.clone(), 2, 0, 1, &rat(5));
        g.add_term(0, &rat(2), rat(7)).unwrap();
        let t = tensor(&f, &g);
        assert_eq!(t.coeff(nm.len(), &ratio(13, 4)), rat(21));
        assert_eq!(t.weight2, 3);
        // identity for the constant series on the trivial module
        let triv = module(vec![vec![0, 1], vec![1, 0]]);
        let mut one = VVSeries::new(triv, 0, 0, 1, &rat(5));
        one.add_term(0, &rat(0), rat(1)).unwrap();
        let t = tensor(&f, &one);
        assert_eq!(t.terms, f.terms);
        // brute-force convolution for theta_P x theta_N-
        let tp = theta_series(&p_lattice(), &rat(4)).unwrap();
        let tn = theta_series(&nminus_lattice(), &rat(4)).unwrap();
        let t = tensor(&tp, &tn);
        let mut expect = Rational::zero();
        for a in 0..=8 {
            let x = ratio(a, 4);
            expect += tp.coeff(0, &x) * tn.coeff(0, &(rat(2) - &x));
        }
        assert_eq!(t.coeff(0, &rat(2)), expect);
        assert_eq!(t.precision(), rat(4));
    }

    #[test]
    fn bracket_examples() {
        let p = Arc::new(FQModule::from_lattice(&p_lattice()));
        let nm = Arc::new(FQModule::from_lattice(&nminus_lattice()));
        let mut f = VVSeries::new(p.clone(), 3, 1, -1, &rat(5));
        f.add_term(1, &ratio(3, 4), rat(1)).unwrap();
        let mut g = VVSeries::new(nm.clone(), 2, 0, 1, &rat(5));
        g.add_term(3, &ratio(1, 2), rat(1)).unwrap();
        let b = rankin_cohen(&f, &g, 1);
        // (kappa b - l a) with kappa = 3/2, l = 1, a = 3/4, b = 1/2
        let expect = ratio(3, 2) * ratio(1, 2) - ratio(3, 4);
        assert_eq!(b.coeff(nm.len() + 3, &ratio(5, 4)), expect);
        assert_eq!(b.pi_power, 1);
        assert_eq!(b.sigma, -1);
        assert_eq!(rankin_cohen(&f, &g, 0).terms, tensor(&f, &g).terms);
        // constant terms vanish for n >= 1
        let tp = theta_series(&p_lattice(), &rat(4)).unwrap();
        let tn = theta_series(&nminus_lattice(), &rat(4)).unwrap();
        for n in 1..4 {
            let b = rankin_cohen(&tp, &tn, n);
            assert_eq!(b.coeff(0, &rat(0)), rat(0));
        }
    }

    #[test]
    fn ct_pairing_examples() {
        let nm = Arc::new(FQModule::from_lattice(&nminus_lattice()));
        let mut f = VVSeries::new(nm.clone(), 0, 0, 1, &rat(5));
        f.add_term(0, &rat(-1), rat(1)).unwrap();
        let mut g = VVSeries::new(nm.clone(), 2, 0, 1, &rat(5));
        g.add_term(0, &rat(1), rat(1)).unwrap();
        assert_eq!(ct_pairing(&f, &g).unwrap(), (rat(1), 0));
        let i = nm.class_of(&[rat(0), ratio(1, 2)]).unwrap();
        let mut h = VVSeries::new(nm.clone(), 2, 0, 1, &rat(5));
        h.add_term(i, &ratio(5, 4), rat(1)).unwrap();
        assert_eq!(ct_pairing(&f, &h).unwrap().0, rat(0));
        let mut short = VVSeries::new(nm.clone(), 2, 0, 1, &ratio(1, 2));
        short.add_term(0, &rat(0), rat(1)).unwrap();
        assert!(matches!(ct_pairing(&f, &short), Err(FqmError::InsufficientPrecision { .. })));
    }

    #[test]
    fn exponent_congruence_enforced() {
        let p = Arc::new(FQModule::from_lattice(&p_lattice()));
        let mut s = VVSeries::new(p, 3, 0, -1, &rat(5));
        assert!(s.add_term(1, &ratio(3, 4), rat(1)).is_ok());
        assert!(matches!(s.add_term(1, &ratio(1, 4), rat(1)), Err(FqmError::ExponentMismatch { .. })));
    }

    #[test]
    fn text_round_trip() {
        let th = theta_series(&nminus_lattice(), &rat(5)).unwrap();
        let text = th.to_text();
        let back = VVSeries::from_text(&text, th.module.clone()).unwrap();
        assert_eq!(back, th);
        assert!(VVSeries::from_text("bogus", th.module.clone()).is_err());
        let bad = text.replace("\t", " ");
        assert!(VVSeries::from_text(&bad, th.module.clone()).is_err());
    }

    #[test]
    fn index_one_maps_are_identity() {
        let m = Arc::new(FQModule::from_lattice(&nminus_lattice()));
        let e = LatticeEmbedding::new(m.clone(), m.clone(), identity(2)).unwrap();
        let th = theta_series(&nminus_lattice(), &rat(5)).unwrap();
        assert_eq!(e.restrict(&th).unwrap(), th);
        assert_eq!(e.trace_up(&th).unwrap(), th);
    }

    #[test]
    fn theta_trace_compatibility() {
        // K = span{(1,1), (1,-1)} inside Z^2 with x^2 + y^2
        let l = nminus_lattice();
        let k = IntLattice::diagonal(&[4, 4]).unwrap();
        let e = LatticeEmbedding::new(
            Arc::new(FQModule::from_lattice(&k)),
            Arc::new(FQModule::from_lattice(&l)),
            vec![vec![1, 1], vec![1, -1]],
        )
        .unwrap();
        let tk = theta_series(&k, &rat(20)).unwrap();
        let tl = theta_series(&l, &rat(20)).unwrap();
        assert_eq!(e.trace_up(&tk).unwrap().terms, tl.terms);
    }

    #[test]
    fn siegel_theta_splitting() {
        let e = cm_embedding();
        let tau = Complex64::new(0.0, 2.0);
        let z = Complex64::i();
        let lm = &e.target;
        let a = siegel_theta_eval(lm, tau, z, 12);
        let b = siegel_theta_eval(lm, tau, z, 24);
        assert!(close(&a, &b, 1e-10));
        let tp = theta_series(&p_lattice(), &rat(12)).unwrap().eval(tau);
        let tn = theta_series(&nminus_lattice(), &rat(12)).unwrap().eval(tau);
        let mut prod = vec![Complex64::zero(); e.source.len()];
        for (i, x) in tp.iter().enumerate() {
            for (j, y) in tn.iter().enumerate() {
                prod[i * tn.len() + j] = x * y.conj() * tau.im;
            }
        }
        let split = e.trace_up_values(&prod);
        assert!(close(&a, &split, 1e-8), "{a:?} vs {split:?}");
    }

    #[test]
    fn siegel_theta_t_transformation() {
        let lm = FQModule::from_lattice(&form_lattice());
        let (t, _) = weil_matrices(&lm);
        let tau = Complex64::new(0.2, 1.3);
        let z = Complex64::new(0.1, 0.9);
        let a = siegel_theta_eval(&lm, tau + 1.0, z, 14);
        let b = cmat_vec(&t, &siegel_theta_eval(&lm, tau, z, 14));
        assert!(close(&a, &b, 1e-8));
    }
}
