//! Fast invariant suite behind `cyclotrace selftest`.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_traits::Zero;

use crate::analytic::{
    cycle_integral_with, eisenstein_oracle, exact_trace, hyp2f1, lhs_geodesic, lhs_latticesum, AnalyticError,
    FkaEvaluator,
};
use crate::arith::{divisors, dirichlet_l_value, is_square, rat, Discriminant, Rational};
use crate::bqf::{hypothesis_check, indefinite_class_reps, Bqf, Sl2z};
use crate::fqm::{cmat_vec, siegel_theta_eval, theta_series, weil_matrices};
use crate::special_forms::{
    closed_formula, cm_embedding, fd_const_term, hurwitz, l_module, n_minus_lattice, n_minus_module, p_lattice,
    p_module, rhs_trace,
};

pub struct Check {
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err_string(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn hypergeometric() -> Result<(), String> {
    let v = hyp2f1(1.0, 1.0, 2.0, 0.5).map_err(err_string)?;
    ensure((v - 2.0 * 2f64.ln()).abs() < 1e-12, || format!("2F1(1,1;2;1/2) = {v}"))?;
    let v = hyp2f1(0.5, 0.5, 1.5, 0.25).map_err(err_string)?;
    ensure((v - PI / 3.0).abs() < 1e-12, || format!("2F1(1/2,1/2;3/2;1/4) = {v}"))?;
    for k in 2..=6 {
        let h = k as f64 / 2.0;
        let l = hyp2f1(h, h, k as f64 + 0.5, 0.5).map_err(err_string)?;
        let r = hyp2f1(h, h, k as f64 + 0.5, 0.5 + 1e-15).map_err(err_string)?;
        ensure((l - r).abs() < 1e-11 * l, || format!("switchover jump at k = {k}"))?;
    }
    Ok(())
}

fn hypothesis() -> Result<(), String> {
    for d in 2..=300i64 {
        if Discriminant::new(d).is_err() || is_square(d as u64) {
            continue;
        }
        let brute = (1..).take_while(|a| 4 * a * a <= d).any(|a| is_square((d - 4 * a * a) as u64));
        let h = hypothesis_check(d, -4).map_err(err_string)?;
        ensure(h != brute, || format!("hypothesis_check({d}, -4) = {h}"))?;
        if !h {
            let r = lhs_geodesic(2, d, -4, 1e-6);
            ensure(matches!(r, Err(AnalyticError::HypothesisViolated { .. })), || {
                format!("geodesic trace for D = {d} returned {r:?}")
            })?;
        }
    }
    Ok(())
}

fn class_number_relation() -> Result<(), String> {
    for n in 1..=100i64 {
        let mut lhs = Rational::zero();
        let mut t = -((4.0 * n as f64).sqrt() as i64);
        while t * t <= 4 * n {
            lhs += hurwitz(4 * n - t * t);
            t += 1;
        }
        let rhs: i64 = divisors(n as u64).into_iter().map(|d| (d as i64).max(n / d as i64)).sum();
        ensure(lhs == rat(rhs), || format!("class number relation fails at n = {n}"))?;
    }
    Ok(())
}

fn exact_formula() -> Result<(), String> {
    for d in 2..=100 {
        if Discriminant::new(d).is_err() || is_square(d as u64) || !hypothesis_check(d, -4).map_err(err_string)? {
            continue;
        }
        for k in [2, 4] {
            let a = rhs_trace(k, d).map_err(err_string)?;
            let b = closed_formula(k, d).map_err(err_string)?;
            ensure(a == b, || format!("k = {k}, D = {d}: {a} vs {b}"))?;
        }
    }
    Ok(())
}

fn constant_terms() -> Result<(), String> {
    for d in 2..=200 {
        let Ok(disc) = Discriminant::new(d) else { continue };
        if disc.is_square() {
            continue;
        }
        let c = fd_const_term(2, d).map_err(err_string)?;
        let l = dirichlet_l_value(&disc, -1).map_err(err_string)?;
        ensure(c == rat(-120) * l, || format!("constant term of f_{d}"))?;
    }
    Ok(())
}

fn weil_representation() -> Result<(), String> {
    let emb = cm_embedding();
    for m in [p_module(), n_minus_module(), l_module(), emb.source.clone()] {
        ensure(m.milgram_defect() < 1e-10, || "Milgram formula".into())?;
    }
    let tau = Complex64::new(0.3, 1.0);
    for l in [p_lattice(), n_minus_lattice()] {
        let th = theta_series(&l, &rat(40)).map_err(err_string)?;
        let (t, s) = weil_matrices(&th.module);
        let v = th.eval(tau);
        let w = tau.powf(l.rank() as f64 / 2.0);
        for (lhs, rhs) in th.eval(tau + 1.0).iter().zip(cmat_vec(&t, &v)) {
            ensure((lhs - rhs).norm() < 1e-8, || "theta under T".into())?;
        }
        for (lhs, rhs) in th.eval(-tau.inv()).iter().zip(cmat_vec(&s, &v)) {
            ensure((lhs - rhs * w).norm() < 1e-6, || "theta under S".into())?;
        }
    }
    let tau = Complex64::new(0.0, 2.0);
    let siegel = siegel_theta_eval(&emb.target, tau, Complex64::i(), 24);
    let tp = theta_series(&p_lattice(), &rat(12)).map_err(err_string)?.eval(tau);
    let tn = theta_series(&n_minus_lattice(), &rat(12)).map_err(err_string)?.eval(tau);
    let mut prod = vec![Complex64::zero(); emb.source.len()];
    for (i, x) in tp.iter().enumerate() {
        for (j, y) in tn.iter().enumerate() {
            prod[i * tn.len() + j] = x * y.conj() * tau.im;
        }
    }
    for (a, b) in siegel.iter().zip(emb.trace_up_values(&prod)) {
        ensure((a - b).norm() < 1e-8, || "Siegel theta splitting".into())?;
    }
    Ok(())
}

fn eisenstein_quotient() -> Result<(), String> {
    let ev = FkaEvaluator::new(2, &Bqf::new(1, 0, 1)).map_err(err_string)?;
    let mut ratios = Vec::new();
    for (x, y) in [(0.0, 1.3), (0.2, 0.9), (-0.4, 1.1), (0.1, 2.2), (0.45, 0.95)] {
        let z = Complex64::new(x, y);
        let (e4, e6, delta) = eisenstein_oracle(z, 1e-16);
        ratios.push(ev.eval(z, 1e-8).map_err(err_string)? / (e4 * delta / (e6 * e6)));
    }
    let first = ratios[0];
    ensure(ratios.iter().all(|r| (r - first).norm() < 1e-6 * first.norm()), || {
        format!("ratios {ratios:?}")
    })
}

fn cycle_integral_invariance() -> Result<(), String> {
    let ev = FkaEvaluator::new(4, &Bqf::new(1, 0, 1)).map_err(err_string)?;
    for q in indefinite_class_reps(21).map_err(err_string)? {
        let base = cycle_integral_with(&ev, &q, 1e-8, 0.0).map_err(err_string)?;
        let g = Sl2z::new(2, 1, 1, 1);
        let moved = cycle_integral_with(&ev, &q.act(&g), 1e-8, 0.5).map_err(err_string)?;
        ensure((base.value - moved.value).norm() < 1e-6 * base.value.norm().max(1.0), || {
            format!("{q}: {} vs {}", base.value, moved.value)
        })?;
    }
    Ok(())
}

fn method_agreement() -> Result<(), String> {
    for (k, d) in [(4, 12), (2, 21)] {
        let exact = exact_trace(k, d, -4).map_err(err_string)?.value.to_f64();
        let geo = lhs_geodesic(k, d, -4, 1e-7).map_err(err_string)?.value.to_f64();
        let lat = lhs_latticesum(k, d, -4, 1e-5).map_err(err_string)?.value.to_f64();
        let scale = 1.0 + exact.abs();
        ensure((geo - exact).abs() < 1e-6 * scale, || format!("geodesic k={k} D={d}: {geo} vs {exact}"))?;
        ensure((lat - exact).abs() < 1e-4 * scale, || format!("lattice sum k={k} D={d}: {lat} vs {exact}"))?;
    }
    let geo = lhs_geodesic(3, 12, -4, 1e-7).map_err(err_string)?.value.to_f64();
    let lat = lhs_latticesum(3, 12, -4, 1e-5).map_err(err_string)?.value.to_f64();
    ensure((geo - lat).abs() < 1e-4 * (1.0 + geo.abs()), || format!("k=3 D=12: {geo} vs {lat}"))
}

pub fn checks() -> Vec<Check> {
    vec![
        Check { name: "hypergeometric function", run: hypergeometric },
        Check { name: "hypothesis detection", run: hypothesis },
        Check { name: "class number relation", run: class_number_relation },
        Check { name: "exact trace formula", run: exact_formula },
        Check { name: "constant terms", run: constant_terms },
        Check { name: "Weil representation", run: weil_representation },
        Check { name: "Eisenstein quotient", run: eisenstein_quotient },
        Check { name: "cycle integral invariance", run: cycle_integral_invariance },
        Check { name: "method agreement", run: method_agreement },
    ]
}

/// Runs every check in order.
pub fn run_all() -> Vec<CheckResult> {
    checks().into_iter().map(|c| CheckResult { name: c.name, outcome: (c.run)() }).collect()
}
