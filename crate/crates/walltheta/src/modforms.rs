//! Catalog of the modular forms the engine is built from, the u-coefficient
//! extraction, decomposition into polynomials in U, and expansions in
//! y = Utilde - 2.
//!
//! Conventions: q^{1/n} powers live on the 1/48 exponent grid; phases are
//! exact elements of Q(zeta8), with 1^a meaning e^{2 pi i a}.

use crate::exactnum::{rat, rat_i, Cyclo8, Rat};
use crate::qseries::{FormalZ, QSeries, GRID};
use crate::{Error, Result};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// B_0, B_1, ... with B_1 = -1/2.
pub fn bernoulli(n: usize) -> Rat {
    static CACHE: OnceLock<Mutex<Vec<Rat>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(vec![rat_i(1)]));
    let mut v = cache.lock().unwrap();
    while v.len() <= n {
        let m = v.len();
        // sum_{j<m} C(m+1, j) B_j = 0 for m >= 1
        let mut s = rat_i(0);
        let mut binom = rat_i(1); // C(m+1, 0)
        for (j, b) in v.iter().enumerate() {
            s += &binom * b;
            binom = binom * rat_i((m + 1 - j) as i64) / rat_i((j + 1) as i64);
        }
        let b_m = -s / rat_i((m + 1) as i64);
        v.push(b_m);
    }
    v[n].clone()
}

fn sigma(k: u32, n: i64) -> Rat {
    let mut s = rat_i(0);
    for d in 1..=n {
        if n % d == 0 {
            s += rat_i(d.pow(k));
        }
    }
    s
}

fn sigma1_odd(n: i64) -> i64 {
    let mut s = 0;
    for d in 1..=n {
        if n % d == 0 && d % 2 == 1 {
            s += d;
        }
    }
    s
}

/// eta(num/den * tau) as an exact q-expansion via the pentagonal number sum,
/// valid below `trunc` grid units.
pub fn eta_scaled(num: i64, den: i64, trunc: i64) -> Result<QSeries> {
    let mut s = QSeries::zero(trunc);
    let mut k: i64 = 0;
    loop {
        let mut progressed = false;
        let pair = [k, -k];
        let reps: &[i64] = if k == 0 { &pair[..1] } else { &pair };
        for &kk in reps {
            // exponent of q: (num/den) * (1/24 + kk(3kk-1)/2), in 1/48 units
            let units_num = num * (2 + 24 * kk * (3 * kk - 1));
            if units_num % den != 0 {
                return Err(Error::GridOverflow(format!(
                    "eta({num}/{den} tau) leaves the 1/48 grid"
                )));
            }
            let e = units_num / den;
            if e < trunc {
                progressed = true;
                let sign = if k % 2 == 0 { 1 } else { -1 };
                s = s.add(&QSeries::monomial(e, Cyclo8::from_int(sign), trunc));
            }
        }
        if !progressed && k > 0 {
            break;
        }
        k += 1;
    }
    Ok(s)
}

/// Sum over n of (-1)^{n nu} q^{(n + mu/2)^2 / 2}, the one-variable theta
/// constants with characteristics.
fn theta_const(mu: i64, nu: i64, trunc: i64) -> QSeries {
    let mut s = QSeries::zero(trunc);
    let mut n: i64 = 0;
    loop {
        let mut progressed = false;
        for nn in [n, -n - 1] {
            // exponent units: 48 * (n + mu/2)^2 / 2 = 6 (2n + mu)^2
            let e = 6 * (2 * nn + mu) * (2 * nn + mu);
            if e < trunc {
                progressed = true;
                let sign = if (nn * nu).rem_euclid(2) == 1 { -1 } else { 1 };
                s = s.add(&QSeries::monomial(e, Cyclo8::from_int(sign), trunc));
            }
        }
        if !progressed {
            break;
        }
        n += 1;
    }
    s
}

/// G_k = -B_k/(2k) + sum sigma_{k-1}(n) q^n for even k >= 2.
pub fn eisenstein(k: u32, trunc: i64) -> QSeries {
    let mut s = QSeries::constant(
        Cyclo8::from_rat(-bernoulli(k as usize) / rat_i(2 * k as i64)),
        trunc,
    );
    let mut n = 1;
    while GRID * n < trunc {
        s = s.add(&QSeries::monomial(
            GRID * n,
            Cyclo8::from_rat(sigma(k - 1, n)),
            trunc,
        ));
        n += 1;
    }
    s
}

fn build(name: &str, qorder: i64) -> Result<QSeries> {
    let t = GRID * qorder;
    let pad = qorder + 8;
    let ok = |s: QSeries| -> Result<QSeries> {
        if s.trunc() < t {
            return Err(Error::Inconsistency(format!(
                "catalog {name} built with trunc {} < requested {t}",
                s.trunc()
            )));
        }
        Ok(s.clip(t))
    };
    match name {
        "eta" => eta_scaled(1, 1, t),
        "eta_h" => eta_scaled(1, 2, t),
        "eta_2" => eta_scaled(2, 1, t),
        "Delta" => ok(catalog("eta", pad)?.pow(24)),
        "Delta_h" => ok(catalog("eta_h", pad)?.pow(24)),
        "Delta_2" => ok(catalog("eta_2", pad)?.pow(24)),
        "theta" => Ok(theta_const(0, 0, t)),
        "theta01" => Ok(theta_const(0, 1, t)),
        "theta10" => Ok(theta_const(1, 0, t)),
        "f" => {
            let v = catalog("eta", pad)?
                .pow(3)
                .div(&catalog("theta", pad)?)?
                .scale(&Cyclo8::zeta_pow(-1));
            ok(v)
        }
        "R" => {
            let num = catalog("Delta", pad + 6)?.pow(2);
            let den = catalog("Delta_h", pad + 6)?.mul(&catalog("Delta_2", pad + 6)?);
            ok(num.div(&den)?)
        }
        "e1" => {
            let mut s = QSeries::constant(Cyclo8::from_rat(rat(-1, 6)), t);
            let mut n = 1;
            while GRID * n < t {
                s = s.add(&QSeries::monomial(
                    GRID * n,
                    Cyclo8::from_int(-4 * sigma1_odd(n)),
                    t,
                ));
                n += 1;
            }
            Ok(s)
        }
        "e2" | "e3" => {
            let alt = name == "e3";
            let mut s = QSeries::constant(Cyclo8::from_rat(rat(1, 12)), t);
            let mut n = 1;
            while 24 * n < t {
                let mut c = 2 * sigma1_odd(n);
                if alt && n % 2 == 1 {
                    c = -c;
                }
                s = s.add(&QSeries::monomial(24 * n, Cyclo8::from_int(c), t));
                n += 1;
            }
            Ok(s)
        }
        "U" => {
            let f2 = catalog("f", pad)?.pow(2);
            ok(catalog("e3", pad)?.scale_rat(&rat_i(-3)).div(&f2)?)
        }
        "u" => ok(catalog("U", pad)?.inv()?),
        "G" => ok(catalog("G2", qorder)?.add(&catalog("e3", qorder)?.scale_rat(&rat(1, 2)))),
        "Utilde" => {
            let h4 = catalog("eta_2", pad)?.pow(4).div(&catalog("eta", pad)?.pow(8))?;
            ok(catalog("e1", pad)?.scale_rat(&rat_i(-12)).mul(&h4))
        }
        "utilde" => ok(catalog("Utilde", pad)?.inv()?),
        "h" => ok(catalog("hinv", pad)?.inv()?),
        "hinv" => {
            ok(catalog("eta", pad)?.pow(4).div(&catalog("eta_2", pad)?.pow(2))?)
        }
        "theta10q" => Ok(catalog("theta10", qorder + 1)?.shift(-6).clip(t)),
        "gaussw" => {
            let a = catalog("G2", pad)?
                .scale_rat(&rat_i(4))
                .add(&catalog("e1", pad)?.scale_rat(&rat_i(2)));
            let w = catalog("eta_2", pad)?.pow(4).div(&catalog("eta", pad)?.pow(8))?;
            ok(a.mul(&w))
        }
        "qy" => {
            // q as a series in y = Utilde - 2; the reversion target variable
            // is stored on the integer grid.
            let y = catalog("Utilde", qorder + 2)?
                .sub(&QSeries::constant(Cyclo8::from_int(2), GRID * (qorder + 2)));
            ok(y.revert()?)
        }
        _ => {
            if let Some(krest) = name.strip_prefix('G') {
                if let Ok(k) = krest.parse::<u32>() {
                    if k >= 2 && k % 2 == 0 {
                        return Ok(eisenstein(k, t));
                    }
                }
            }
            Err(Error::Parse(format!("unknown series name {name:?}")))
        }
    }
}

/// Named q-expansion, exact below 48*qorder grid units. Results are cached.
pub fn catalog(name: &str, qorder: i64) -> Result<QSeries> {
    static CACHE: OnceLock<Mutex<HashMap<(String, i64), QSeries>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(s) = cache.lock().unwrap().get(&(name.to_owned(), qorder)) {
        return Ok(s.clone());
    }
    let s = build(name, qorder)?;
    cache
        .lock()
        .unwrap()
        .insert((name.to_owned(), qorder), s.clone());
    Ok(s)
}

/// Two-variable theta constant as a z-series: sum over n of
/// (-1)^{n nu} q^{(n + mu/2)^2/2} exp((n + mu/2) w), where w is a z-series
/// with strictly positive z-valuation.
pub fn theta_charz(mu: i64, nu: i64, w: &FormalZ, qorder: i64) -> Result<FormalZ> {
    let t = GRID * qorder;
    let one = QSeries::one(t);
    let mut acc = FormalZ::new(w.zorder());
    let mut n: i64 = 0;
    loop {
        let mut progressed = false;
        for nn in [n, -n - 1] {
            let e = 6 * (2 * nn + mu) * (2 * nn + mu);
            if e >= t {
                continue;
            }
            progressed = true;
            let a = rat(2 * nn + mu, 2); // n + mu/2
            let term = w.scale_rat(&a).exp(&one)?;
            let sign = if (nn * nu).rem_euclid(2) == 1 { -1 } else { 1 };
            let factor = QSeries::monomial(e, Cyclo8::from_int(sign), t);
            acc = acc.add(&term.mul_coeff(&factor));
        }
        if !progressed {
            break;
        }
        n += 1;
    }
    Ok(acc)
}

/// Coefficient of u^{r+1} in a series of modular weight -2(r+1) sitting on
/// the (1/4)Z exponent grid, extracted as the constant term of
/// (1/4) f^2 U^r R F.
pub fn coeff_in_u(fq: &QSeries, r: i64) -> Result<Cyclo8> {
    assert!(r >= 0, "u-power r+1 must be >= 1");
    let vmin = fq.valuation().unwrap_or(0).min(0);
    // Enough catalog order for the product's constant term to be readable.
    let mut qo = (24 + 12 * r - vmin) / GRID + 3;
    for _ in 0..4 {
        let f2 = catalog("f", qo)?.pow(2);
        let upow = if r == 0 {
            QSeries::one(i64::MAX / 4)
        } else {
            catalog("U", qo)?.pow(r as u32)
        };
        let i = f2
            .mul(&upow)
            .mul(&catalog("R", qo)?)
            .mul(fq)
            .scale_rat(&rat(1, 4));
        match i.coeff(0) {
            Ok(c) => return Ok(c),
            Err(Error::OrderStarvation { .. }) => {
                qo *= 2;
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::OrderStarvation {
        what: "u-coefficient extraction".into(),
        needed: 0,
        have: fq.trunc(),
    })
}

/// Same coefficient through the compositional route: restrict F to the
/// (1/4)Z grid, rewrite it in s = q^{1/4}, substitute the reversion of
/// u(s), and read off the u^{r+1} term. Agrees with `coeff_in_u`; kept as a
/// cross-check.
pub fn coeff_in_u_reversion(fq: &QSeries, r: i64) -> Result<Cyclo8> {
    assert!(r >= 0);
    // Restrict to exponents on the (1/4)Z grid (multiples of 12 units); the
    // discarded parts cannot contribute to integer u-powers.
    let s_trunc = (fq.trunc().div_euclid(12) + i64::from(fq.trunc().rem_euclid(12) != 0)) * GRID;
    let mut s_terms = QSeries::zero(s_trunc);
    for (e, c) in fq.terms() {
        if e.rem_euclid(12) == 0 {
            s_terms = s_terms.add(&QSeries::monomial(4 * e, c.clone(), s_trunc));
        }
    }
    // u as a series in s, on the integer grid of s.
    let vmin = s_terms.valuation().unwrap_or(0).min(0) / GRID;
    let need = r + 2 - vmin + 2;
    let uq = catalog("u", need.max(3))?;
    let mut us = QSeries::zero(GRID * need);
    for (e, c) in uq.terms() {
        debug_assert_eq!(e.rem_euclid(12), 0);
        if 4 * e < GRID * need {
            us = us.add(&QSeries::monomial(4 * e, c.clone(), GRID * need));
        }
    }
    let s_of_u = us.revert()?;
    let composed = s_terms.substitute(&s_of_u)?;
    composed.coeff(GRID * (r + 1))
}

/// Writes F as an exact polynomial in U, erroring if any remainder survives
/// within the truncation.
/// Polynomial in U, coefficients by ascending power.
pub type UPoly = Vec<Cyclo8>;

pub fn as_poly_in_big_u(fq: &QSeries) -> Result<UPoly> {
    let mut rem = fq.clone();
    let mut out: Vec<Cyclo8> = Vec::new();
    loop {
        match rem.valuation() {
            None => break,
            Some(v) if v > 0 => {
                return Err(Error::Inconsistency(format!(
                    "not a polynomial in U: positive-valuation remainder {rem}"
                )))
            }
            Some(v) => {
                if v % 12 != 0 {
                    return Err(Error::Inconsistency(format!(
                        "not a polynomial in U: valuation {v}/48 off the (1/4)Z grid"
                    )));
                }
                let d = (-v / 12) as usize;
                if d > 400 {
                    return Err(Error::UnimplementedRegime(
                        "U-degree above 400".into(),
                    ));
                }
                let upow = if d == 0 {
                    QSeries::one(i64::MAX / 4)
                } else {
                    // order padded so U^d stays readable across rem's window
                    let qo = (rem.trunc() + 12 * d as i64) / GRID + 2;
                    catalog("U", qo)?.pow(d as u32)
                };
                let lead = rem.coeff(v)?.div(&upow.coeff(v)?)?;
                if out.len() <= d {
                    out.resize(d + 1, Cyclo8::zero());
                }
                out[d] = &out[d] + &lead;
                rem = rem.sub(&upow.scale(&lead).clip(rem.trunc()));
                if rem.valuation().is_some_and(|nv| nv <= v) {
                    return Err(Error::Inconsistency(
                        "U-polynomial peeling failed to raise valuation".into(),
                    ));
                }
            }
        }
    }
    while out.last().is_some_and(|c| c.is_zero()) {
        out.pop();
    }
    Ok(out)
}

/// Expansion of an integer-grid series in y = Utilde - 2, as a Laurent
/// series stored on the integer grid of y. Finite principal parts are
/// allowed; yorder bounds the tracked order.
pub fn expand_in_y(fq: &QSeries, yorder: i64) -> Result<QSeries> {
    for (e, _) in fq.terms() {
        if e.rem_euclid(GRID) != 0 {
            return Err(Error::GridOverflow(format!(
                "y-expansion input exponent {e}/48 is not an integer"
            )));
        }
    }
    let depth = -fq.valuation().unwrap_or(0).min(0) / GRID;
    let q_of_y = catalog("qy", yorder + 2 * depth + 2)?;
    let out = fq.substitute(&q_of_y)?;
    if out.trunc() <= GRID * yorder {
        return Err(Error::OrderStarvation {
            what: "y-expansion".into(),
            needed: GRID * yorder,
            have: out.trunc(),
        });
    }
    Ok(out.clip(GRID * yorder + 1))
}
