//! Modular objects attached to the CM point `i`: Hurwitz class numbers,
//! their vector-valued generating series, the theta series of `N^-`,
//! the principal part of `f_D`, and the exact trace formula.

use std::sync::{Arc, OnceLock};

use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::arith::{cohen_h, dirichlet_l_value, rat, ratio, ArithError, Discriminant, Rational};
use crate::bqf::{self, definite_class_reps, BqfError};
use crate::fqm::{
    ct_pairing, form_lattice, rankin_cohen, theta_series, FQModule, FqmError, IntLattice, LatticeEmbedding,
    VVSeries,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecialFormsError {
    #[error("the CM point of discriminant {d} lies on a geodesic of discriminant {big_d}")]
    HypothesisViolated { big_d: i64, d: i64 },
    #[error("discriminant {0} is a perfect square")]
    SquareDiscriminant(i64),
    #[error("weight parameter k = {0} is not supported here")]
    UnsupportedK(i64),
    #[error(transparent)]
    Fqm(#[from] FqmError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Bqf(#[from] BqfError),
}

/// Hurwitz class number by counting reduced forms of discriminant `-n`.
pub fn hurwitz(n: i64) -> Rational {
    assert!(n >= 0);
    if n == 0 {
        return ratio(-1, 12);
    }
    if matches!(n % 4, 1 | 2) {
        return Rational::zero();
    }
    definite_class_reps(-n)
        .into_iter()
        .map(|f| {
            if f.b == 0 && f.a == f.c {
                ratio(1, 2)
            } else if f.a == f.b && f.b == f.c {
                ratio(1, 3)
            } else {
                Rational::one()
            }
        })
        .sum()
}

/// `H(0..=max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HurwitzTable {
    values: Vec<Rational>,
}

impl HurwitzTable {
    pub fn new(max: usize) -> Self {
        let values = (0..=max as i64).into_par_iter().map(hurwitz).collect();
        HurwitzTable { values }
    }

    pub fn max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn get(&self, n: i64) -> &Rational {
        &self.values[n as usize]
    }
}

/// The Hurwitz lattice `P = (Z, x^2)`.
pub fn p_lattice() -> IntLattice {
    IntLattice::diagonal(&[2]).unwrap()
}

/// `N^- = (Z^2, x^2 + y^2)`.
pub fn n_minus_lattice() -> IntLattice {
    IntLattice::diagonal(&[2, 2]).unwrap()
}

pub fn p_module() -> Arc<FQModule> {
    static M: OnceLock<Arc<FQModule>> = OnceLock::new();
    M.get_or_init(|| Arc::new(FQModule::from_lattice(&p_lattice()))).clone()
}

pub fn n_minus_module() -> Arc<FQModule> {
    static M: OnceLock<Arc<FQModule>> = OnceLock::new();
    M.get_or_init(|| Arc::new(FQModule::from_lattice(&n_minus_lattice()))).clone()
}

/// `L'/L` for the lattice of forms `[a, 2 beta, c]`.
pub fn l_module() -> Arc<FQModule> {
    static M: OnceLock<Arc<FQModule>> = OnceLock::new();
    M.get_or_init(|| Arc::new(FQModule::from_lattice(&form_lattice()))).clone()
}

/// `K = P + N` inside the form lattice, with `P` spanned by `[-1, 0, -1]`
/// and `N` by `[1, 0, -1]`, `[0, 2, 0]`.
pub fn cm_embedding() -> &'static LatticeEmbedding {
    static E: OnceLock<LatticeEmbedding> = OnceLock::new();
    E.get_or_init(|| {
        let k = Arc::new(p_module().direct_sum(&n_minus_module().negated()));
        LatticeEmbedding::new(k, l_module(), vec![vec![-1, 1, 0], vec![0, 0, 1], vec![-1, -1, 0]])
            .expect("CM splitting is a valid embedding")
    })
}

/// `-16 pi sum H(4n) q^n e_mu` over `P'/P`, complete up to `prec`.
pub fn hurwitz_gen(prec: &Rational) -> VVSeries {
    let m = p_module();
    let mut s = VVSeries::new(m.clone(), 3, 1, -1, prec);
    let top = (prec * rat(4)).floor().to_integer();
    let top: i64 = top.try_into().unwrap();
    let table = HurwitzTable::new(top.max(0) as usize);
    for n4 in 0..=top {
        let h = table.get(n4);
        if h.is_zero() {
            continue;
        }
        let mu = if n4 % 4 == 0 { 0 } else { 1 };
        s.add_term(mu, &ratio(n4, 4), rat(-16) * h).expect("exponent matches -q(mu)");
    }
    s
}

pub fn theta_n_minus(prec: &Rational) -> VVSeries {
    theta_series(&n_minus_lattice(), prec).expect("N^- is positive definite")
}

fn check_trace_disc(big_d: i64) -> Result<Discriminant, SpecialFormsError> {
    let d = Discriminant::new(big_d)?;
    if big_d <= 0 {
        return Err(ArithError::NotDiscriminant(big_d).into());
    }
    if d.is_square() {
        return Err(SpecialFormsError::SquareDiscriminant(big_d));
    }
    Ok(d)
}

/// Constant term of `f_D` in weight `3/2 - k`, from the duality with the
/// Cohen-Eisenstein series.
pub fn fd_const_term(k: i64, big_d: i64) -> Result<Rational, SpecialFormsError> {
    if k < 2 || k % 2 != 0 {
        return Err(SpecialFormsError::UnsupportedK(k));
    }
    check_trace_disc(big_d)?;
    Ok(-cohen_h(k, big_d)? / cohen_h(k, 0)?)
}

/// Normalization of the principal part at 2-torsion components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrincipalConvention {
    /// `q^(-D/4) e_mu` with coefficient one.
    #[default]
    Single,
    /// `q^(-D/4) (e_mu + e_-mu)`, which doubles at 2-torsion.
    Doubled,
}

/// Principal part and constant term of `f_D` as a series over `L'/L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlusForm {
    pub k: i64,
    pub big_d: i64,
    pub constant_term: Rational,
    pub series: VVSeries,
}

impl PlusForm {
    /// Nonzero scalar exponents `4n` are `0` or `3` mod 4.
    pub fn satisfies_kohnen(&self) -> bool {
        self.series.terms.keys().all(|&(_, n)| {
            let scalar = rat(4 * n) / rat(self.series.denom);
            scalar.is_integer() && matches!(scalar.to_integer().try_into().map(|x: i64| x.rem_euclid(4)), Ok(0 | 3))
        })
    }
}

pub fn build_fd(k: i64, big_d: i64, convention: PrincipalConvention) -> Result<PlusForm, SpecialFormsError> {
    let c0 = fd_const_term(k, big_d)?;
    let m = l_module();
    let mut s = VVSeries::new(m.clone(), 3 - 2 * k, 0, 1, &Rational::zero());
    let mu = m.class_of(&[rat(0), ratio(big_d.rem_euclid(2), 2), rat(0)]).unwrap();
    let lead = match convention {
        PrincipalConvention::Single => Rational::one(),
        PrincipalConvention::Doubled if m.neg(mu) == mu => rat(2),
        PrincipalConvention::Doubled => Rational::one(),
    };
    s.add_term(mu, &ratio(-big_d, 4), lead)?;
    s.add_term(0, &Rational::zero(), c0.clone())?;
    Ok(PlusForm { k, big_d, constant_term: c0, series: s })
}

/// Factor relating the vector-valued Hurwitz series to the image of the
/// scalar one under the Eichler-Zagier dictionary.
pub const XI_SCALING: (i64, i64) = (1, 2);

/// Exact trace `tr_{f_{k,[1,0,1]}}(D)` for even `k`.
pub fn rhs_trace(k: i64, big_d: i64) -> Result<Rational, SpecialFormsError> {
    rhs_trace_with(k, big_d, PrincipalConvention::Single)
}

pub fn rhs_trace_with(k: i64, big_d: i64, convention: PrincipalConvention) -> Result<Rational, SpecialFormsError> {
    if k < 2 || k % 2 != 0 {
        return Err(SpecialFormsError::UnsupportedK(k));
    }
    check_trace_disc(big_d)?;
    if !bqf::hypothesis_check(big_d, -4)? {
        return Err(SpecialFormsError::HypothesisViolated { big_d, d: -4 });
    }
    let f = build_fd(k, big_d, convention)?;
    let emb = cm_embedding();
    let fk = emb.restrict(&f.series)?;
    let prec = ratio(big_d, 4);
    let bracket = rankin_cohen(&hurwitz_gen(&prec), &theta_n_minus(&prec), (k / 2 - 1) as u32);
    let (ct, pi_power) = ct_pairing(&fk, &bracket)?;
    debug_assert_eq!(pi_power, 1);
    // 2^(k-3) |d|^(1/2) / (pi |Gamma_z|) with |d| = 4, |Gamma_z| = 2; the pi cancels
    let pre = num_traits::pow(rat(2), (k - 3).max(0) as usize) / num_traits::pow(rat(2), (3 - k).max(0) as usize);
    Ok(pre * ratio(XI_SCALING.0, XI_SCALING.1) * ct)
}

/// Closed forms for `k = 2` and `k = 4`.
pub fn closed_formula(k: i64, big_d: i64) -> Result<Rational, SpecialFormsError> {
    let d = check_trace_disc(big_d)?;
    let weight = |n2: i64, m2: i64| match k {
        2 => rat(-4),
        4 => rat(4 * big_d - 10 * n2 - 10 * m2),
        _ => unreachable!(),
    };
    if k != 2 && k != 4 {
        return Err(SpecialFormsError::UnsupportedK(k));
    }
    let mut acc = if k == 2 { rat(-40) * dirichlet_l_value(&d, -1)? } else { Rational::zero() };
    let r = (big_d as f64).sqrt() as i64 + 1;
    for n in -r..=r {
        if (n - big_d).rem_euclid(2) != 0 {
            continue;
        }
        for m in -r..=r {
            let rest = big_d - n * n - m * m;
            if rest < 0 {
                continue;
            }
            acc += weight(n * n, m * m) * hurwitz(rest);
        }
    }
    Ok(acc)
}
