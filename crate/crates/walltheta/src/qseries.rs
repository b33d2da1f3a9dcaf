//! Truncated q-expansions on the (1/48)Z exponent grid, z-Laurent series
//! with q-expansion coefficients, and auxiliary t-power series.
//!
//! Every series carries an explicit truncation order. Reading a coefficient
//! at or beyond it is an error, never a silent zero; arithmetic propagates
//! truncations pessimistically so results are exact wherever they are
//! readable at all.

use crate::exactnum::{rat_str, Cyclo8, Rat};
use crate::{Error, Result};
use num::{BigInt, One, Signed};
use std::collections::BTreeMap;
use std::fmt;

/// Number of grid units per integer power of q. Exponent `e` (in units)
/// represents q^{e/48}; 48 = lcm(24, 16, 8, 2) covers every fractional
/// power produced by eta, theta and their rescalings by 2 or 1/2.
pub const GRID: i64 = 48;

#[derive(Clone, PartialEq, Eq)]
pub struct QSeries {
    terms: BTreeMap<i64, Cyclo8>,
    trunc: i64,
}

fn normalized(mut terms: BTreeMap<i64, Cyclo8>, trunc: i64) -> QSeries {
    terms.retain(|&e, c| e < trunc && !c.is_zero());
    QSeries { terms, trunc }
}

impl QSeries {
    pub fn zero(trunc: i64) -> Self {
        QSeries {
            terms: BTreeMap::new(),
            trunc,
        }
    }

    pub fn one(trunc: i64) -> Self {
        Self::constant(Cyclo8::one(), trunc)
    }

    pub fn constant(c: Cyclo8, trunc: i64) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() && trunc > 0 {
            terms.insert(0, c);
        }
        QSeries { terms, trunc }
    }

    /// c * q^{e/48}.
    pub fn monomial(e: i64, c: Cyclo8, trunc: i64) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() && e < trunc {
            terms.insert(e, c);
        }
        QSeries { terms, trunc }
    }

    /// Bulk build from (exponent, coefficient) pairs, summing duplicates.
    pub(crate) fn from_terms(it: impl IntoIterator<Item = (i64, Cyclo8)>, trunc: i64) -> Self {
        let mut terms: BTreeMap<i64, Cyclo8> = BTreeMap::new();
        for (e, c) in it {
            let slot = terms.entry(e).or_insert_with(Cyclo8::zero);
            *slot += &c;
        }
        normalized(terms, trunc)
    }

    pub fn trunc(&self) -> i64 {
        self.trunc
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, &Cyclo8)> {
        self.terms.iter().map(|(&e, c)| (e, c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Smallest exponent with a nonzero tracked coefficient.
    pub fn valuation(&self) -> Option<i64> {
        self.terms.keys().next().copied()
    }

    fn val_eff(&self) -> i64 {
        self.valuation().unwrap_or(self.trunc)
    }

    pub fn coeff(&self, e: i64) -> Result<Cyclo8> {
        if e >= self.trunc {
            return Err(Error::OrderStarvation {
                what: "q-series coefficient".into(),
                needed: e,
                have: self.trunc,
            });
        }
        Ok(self.terms.get(&e).cloned().unwrap_or_else(Cyclo8::zero))
    }

    pub fn coeff_rat(&self, e: i64) -> Result<Rat> {
        self.coeff(e)?.expect_rat("q-series coefficient")
    }

    /// Lowers the truncation, discarding knowledge above it.
    pub fn clip(&self, trunc: i64) -> Self {
        let t = trunc.min(self.trunc);
        normalized(self.terms.clone(), t)
    }

    pub fn add(&self, o: &QSeries) -> QSeries {
        let t = self.trunc.min(o.trunc);
        let mut terms = self.terms.clone();
        for (&e, c) in &o.terms {
            let slot = terms.entry(e).or_insert_with(Cyclo8::zero);
            *slot += c;
        }
        normalized(terms, t)
    }

    pub fn sub(&self, o: &QSeries) -> QSeries {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> QSeries {
        let terms = self.terms.iter().map(|(&e, c)| (e, -c)).collect();
        QSeries {
            terms,
            trunc: self.trunc,
        }
    }

    pub fn scale(&self, c: &Cyclo8) -> QSeries {
        if c.is_zero() {
            return QSeries::zero(self.trunc);
        }
        let terms = self.terms.iter().map(|(&e, x)| (e, x * c)).collect();
        QSeries {
            terms,
            trunc: self.trunc,
        }
    }

    pub fn scale_rat(&self, r: &Rat) -> QSeries {
        self.scale(&Cyclo8::from_rat(r.clone()))
    }

    /// Multiply by q^{de/48}.
    pub fn shift(&self, de: i64) -> QSeries {
        let terms = self.terms.iter().map(|(&e, c)| (e + de, c.clone())).collect();
        QSeries {
            terms,
            trunc: self.trunc + de,
        }
    }

    pub fn mul(&self, o: &QSeries) -> QSeries {
        let t = (self.trunc + o.val_eff()).min(o.trunc + self.val_eff());
        let mut terms: BTreeMap<i64, Cyclo8> = BTreeMap::new();
        for (&ea, ca) in &self.terms {
            for (&eb, cb) in &o.terms {
                let e = ea + eb;
                if e >= t {
                    break;
                }
                let slot = terms.entry(e).or_insert_with(Cyclo8::zero);
                *slot += &(ca * cb);
            }
        }
        normalized(terms, t)
    }

    pub fn pow(&self, e: u32) -> QSeries {
        if e == 0 {
            // Identity with effectively unlimited knowledge.
            return QSeries::one(i64::MAX / 4);
        }
        let mut acc: Option<QSeries> = None;
        let mut base = self.clone();
        let mut k = e;
        loop {
            if k & 1 == 1 {
                acc = Some(match acc {
                    None => base.clone(),
                    Some(a) => a.mul(&base),
                });
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            base = base.mul(&base);
        }
        acc.unwrap()
    }

    pub fn inv(&self) -> Result<QSeries> {
        let v = self.valuation().ok_or_else(|| {
            Error::IndeterminateDivision(format!(
                "inverting a q-series that vanishes below its truncation {}",
                self.trunc
            ))
        })?;
        let cv = self.terms[&v].inv()?;
        let teps = self.trunc - v;
        let mut eps_terms = BTreeMap::new();
        for (&e, c) in self.terms.iter().skip(1) {
            eps_terms.insert(e - v, c * &cv);
        }
        let eps = normalized(eps_terms, teps);
        let mut acc = QSeries::one(teps);
        let mut pw = QSeries::one(teps);
        while !pw.terms.is_empty() {
            pw = pw.mul(&eps).neg();
            if pw.val_eff() >= teps {
                break;
            }
            acc = acc.add(&pw);
        }
        Ok(acc.scale(&cv).shift(-v))
    }

    pub fn div(&self, o: &QSeries) -> Result<QSeries> {
        Ok(self.mul(&o.inv()?))
    }

    /// q d/dq: multiplies the coefficient at q^{e/48} by e/48.
    pub fn qderiv(&self) -> QSeries {
        let terms = self
            .terms
            .iter()
            .map(|(&e, c)| (e, c.scale(&Rat::new(BigInt::from(e), BigInt::from(GRID)))))
            .collect();
        normalized(terms, self.trunc)
    }

    /// exp of a series with strictly positive valuation.
    pub fn exp(&self) -> Result<QSeries> {
        match self.valuation() {
            None => return Ok(QSeries::one(self.trunc)),
            Some(v) if v < 1 => {
                return Err(Error::GridOverflow(
                    "exp needs strictly positive q-valuation".into(),
                ))
            }
            _ => {}
        }
        let mut acc = QSeries::one(self.trunc);
        let mut pw = QSeries::one(self.trunc);
        let mut k: i64 = 0;
        loop {
            k += 1;
            pw = pw.mul(self).scale_rat(&Rat::new(BigInt::one(), BigInt::from(k)));
            if pw.val_eff() >= acc.trunc {
                break;
            }
            acc = acc.add(&pw);
        }
        Ok(acc)
    }

    /// tau -> 2 tau, i.e. q -> q^2. Odd half-grid gaps stay known zeros, so
    /// the truncation doubles.
    pub fn rescale_double(&self) -> QSeries {
        let terms = self.terms.iter().map(|(&e, c)| (2 * e, c.clone())).collect();
        QSeries {
            terms,
            trunc: 2 * self.trunc,
        }
    }

    /// tau -> tau/2, i.e. q -> q^{1/2}. Every tracked exponent must be even
    /// in grid units or the result would leave the grid.
    pub fn rescale_half(&self) -> Result<QSeries> {
        let mut terms = BTreeMap::new();
        for (&e, c) in &self.terms {
            if e % 2 != 0 {
                return Err(Error::GridOverflow(format!(
                    "exponent {e}/48 does not halve onto the grid"
                )));
            }
            terms.insert(e / 2, c.clone());
        }
        Ok(QSeries {
            terms,
            trunc: (self.trunc + 1).div_euclid(2),
        })
    }

    /// Composition self(inner). The outer series must live on the integer
    /// q-grid (negative powers allowed); inner must vanish at q = 0.
    pub fn substitute(&self, inner: &QSeries) -> Result<QSeries> {
        for (&e, _) in &self.terms {
            if e.rem_euclid(GRID) != 0 {
                return Err(Error::GridOverflow(format!(
                    "composition outer exponent {e}/48 is not an integer"
                )));
            }
        }
        let vin = match inner.valuation() {
            Some(v) if v >= 1 => v,
            Some(_) => {
                return Err(Error::GridOverflow(
                    "composition target must vanish at q = 0".into(),
                ))
            }
            None => {
                return Err(Error::IndeterminateDivision(
                    "composition target vanishes below its truncation".into(),
                ))
            }
        };
        // First integer power of the outer series that is not fully tracked.
        let k0 = self.trunc.div_euclid(GRID) + i64::from(self.trunc.rem_euclid(GRID) != 0);
        let bound = k0 * vin;
        let mut out = QSeries::zero(bound);
        let mut pow_cache: BTreeMap<i64, QSeries> = BTreeMap::new();
        pow_cache.insert(0, QSeries::one(bound));
        let inv = if self.terms.keys().next().is_some_and(|&e| e < 0) {
            Some(inner.inv()?)
        } else {
            None
        };
        for (&e, c) in &self.terms {
            let k = e / GRID;
            if !pow_cache.contains_key(&k) {
                let pw = if k > 0 {
                    let prev = if pow_cache.contains_key(&(k - 1)) {
                        pow_cache[&(k - 1)].clone()
                    } else {
                        inner.pow((k - 1) as u32)
                    };
                    prev.mul(inner)
                } else {
                    inv.as_ref().unwrap().pow((-k) as u32)
                };
                pow_cache.insert(k, pw.clip(bound));
            }
            out = out.add(&pow_cache[&k].scale(c));
        }
        Ok(out)
    }

    /// Compositional inverse of a series with valuation exactly one power
    /// of q and exponents on the integer grid.
    pub fn revert(&self) -> Result<QSeries> {
        match self.valuation() {
            Some(v) if v == GRID => {}
            _ => {
                return Err(Error::GridOverflow(
                    "reversion needs valuation exactly q^1".into(),
                ))
            }
        }
        for (&e, _) in &self.terms {
            if e % GRID != 0 {
                return Err(Error::GridOverflow(
                    "reversion needs integer-grid exponents".into(),
                ));
            }
        }
        let n_max = (self.trunc - 1).div_euclid(GRID);
        if n_max < 1 {
            return Err(Error::OrderStarvation {
                what: "series reversion".into(),
                needed: GRID + 1,
                have: self.trunc,
            });
        }
        let w = GRID * (n_max + 1);
        let a1 = self.terms[&GRID].clone();
        let mut g = QSeries::monomial(GRID, a1.inv()?, w);
        let a = Self {
            terms: self.terms.clone(),
            trunc: self.trunc.min(w),
        };
        for m in 2..=n_max {
            let h = a.substitute(&g)?;
            let resid = h.coeff(GRID * m)?;
            if !resid.is_zero() {
                let d = -&resid.div(&a1)?;
                g = g.add(&QSeries::monomial(GRID * m, d, w));
            }
        }
        Ok(g)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let terms: Vec<serde_json::Value> = self
            .terms
            .iter()
            .map(|(&e, c)| {
                let cv = match c.as_rat() {
                    Some(r) => serde_json::Value::String(rat_str(&r)),
                    None => serde_json::Value::Array(
                        c.to_strings()
                            .iter()
                            .map(|s| serde_json::Value::String(s.clone()))
                            .collect(),
                    ),
                };
                serde_json::json!([e, cv])
            })
            .collect();
        serde_json::json!({ "grid": GRID, "trunc": self.trunc, "terms": terms })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<QSeries> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Parse("q-series JSON must be an object".into()))?;
        let grid = obj.get("grid").and_then(|g| g.as_i64()).unwrap_or(GRID);
        if grid != GRID {
            return Err(Error::Parse(format!("unsupported grid {grid}, expected {GRID}")));
        }
        let trunc = obj
            .get("trunc")
            .and_then(|t| t.as_i64())
            .ok_or_else(|| Error::Parse("missing trunc".into()))?;
        let mut terms = BTreeMap::new();
        for t in obj
            .get("terms")
            .and_then(|t| t.as_array())
            .ok_or_else(|| Error::Parse("missing terms".into()))?
        {
            let pair = t
                .as_array()
                .filter(|p| p.len() == 2)
                .ok_or_else(|| Error::Parse("term must be [exponent, coeff]".into()))?;
            let e = pair[0]
                .as_i64()
                .ok_or_else(|| Error::Parse("term exponent must be an integer".into()))?;
            let c = match &pair[1] {
                serde_json::Value::String(s) => Cyclo8::from_rat(crate::exactnum::rat_parse(s)?),
                serde_json::Value::Array(a) => {
                    let strs: Vec<String> = a
                        .iter()
                        .map(|x| {
                            x.as_str()
                                .map(str::to_owned)
                                .ok_or_else(|| Error::Parse("coefficient parts must be strings".into()))
                        })
                        .collect::<Result<_>>()?;
                    Cyclo8::from_strings(&strs)?
                }
                _ => return Err(Error::Parse("coefficient must be string or array".into())),
            };
            terms.insert(e, c);
        }
        Ok(normalized(terms, trunc))
    }
}

fn exp_str(e: i64) -> String {
    let g = num::integer::gcd(e, GRID);
    let (n, d) = (e / g, GRID / g);
    match (n, d) {
        (1, 1) => "q".into(),
        (_, 1) => format!("q^{n}"),
        _ => format!("q^{{{n}/{d}}}"),
    }
}

impl fmt::Display for QSeries {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(fm, "O({})", exp_str(self.trunc));
        }
        let mut first = true;
        for (&e, c) in &self.terms {
            let (sign, mag) = match c.as_rat() {
                Some(r) if r.is_negative() => ("-", Cyclo8::from_rat(-r)),
                _ => ("+", c.clone()),
            };
            if first {
                if sign == "-" {
                    write!(fm, "-")?;
                }
                first = false;
            } else {
                write!(fm, " {sign} ")?;
            }
            let coeff_str = format!("{mag}");
            let braced = if mag.as_rat().is_some() {
                coeff_str.clone()
            } else {
                format!("({coeff_str})")
            };
            if e == 0 {
                write!(fm, "{braced}")?;
            } else if mag.is_one() {
                write!(fm, "{}", exp_str(e))?;
            } else {
                write!(fm, "{braced}*{}", exp_str(e))?;
            }
        }
        write!(fm, " + O({})", exp_str(self.trunc))
    }
}

impl fmt::Debug for QSeries {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(fm, "{self}")
    }
}

/// Coefficient ring for ZSeries / TSeries.
pub trait Coeff: Clone {
    /// Whether zero-valued coefficients still carry information (a q-series
    /// that vanishes below its truncation does; an exact scalar does not).
    const KEEP_ZERO: bool;
    fn c_add(&self, o: &Self) -> Self;
    fn c_mul(&self, o: &Self) -> Self;
    fn c_neg(&self) -> Self;
    fn c_is_zero(&self) -> bool;
    fn c_inv(&self) -> Result<Self>;
    fn c_scale(&self, r: &Rat) -> Self;
}

impl Coeff for Cyclo8 {
    const KEEP_ZERO: bool = false;
    fn c_add(&self, o: &Self) -> Self {
        self + o
    }
    fn c_mul(&self, o: &Self) -> Self {
        self * o
    }
    fn c_neg(&self) -> Self {
        -self
    }
    fn c_is_zero(&self) -> bool {
        self.is_zero()
    }
    fn c_inv(&self) -> Result<Self> {
        self.inv()
    }
    fn c_scale(&self, r: &Rat) -> Self {
        self.scale(r)
    }
}

impl Coeff for QSeries {
    const KEEP_ZERO: bool = true;
    fn c_add(&self, o: &Self) -> Self {
        self.add(o)
    }
    fn c_mul(&self, o: &Self) -> Self {
        self.mul(o)
    }
    fn c_neg(&self) -> Self {
        self.neg()
    }
    fn c_is_zero(&self) -> bool {
        self.is_zero()
    }
    fn c_inv(&self) -> Result<Self> {
        self.inv()
    }
    fn c_scale(&self, r: &Rat) -> Self {
        self.scale_rat(r)
    }
}

/// Laurent series in z with at worst a simple pole at z = 0, coefficients
/// tracked for z-powers <= zorder. Used both with exact scalars and with
/// q-series coefficients.
#[derive(Clone, PartialEq, Eq)]
pub struct ZSeries<C> {
    terms: BTreeMap<i64, C>,
    zorder: i64,
}

pub type NumericZ = ZSeries<Cyclo8>;
pub type FormalZ = ZSeries<QSeries>;

impl<C: Coeff> ZSeries<C> {
    pub fn new(zorder: i64) -> Self {
        ZSeries {
            terms: BTreeMap::new(),
            zorder,
        }
    }

    pub fn monomial(n: i64, c: C, zorder: i64) -> Result<Self> {
        if n < -1 {
            return Err(Error::PoleFloor(format!("z^{n} term requested")));
        }
        let mut s = Self::new(zorder);
        s.put(n, c);
        Ok(s)
    }

    pub fn constant(c: C, zorder: i64) -> Self {
        let mut s = Self::new(zorder);
        s.put(0, c);
        s
    }

    /// Inserts (adding to any existing coefficient); silently drops terms
    /// beyond zorder.
    pub fn put(&mut self, n: i64, c: C) {
        assert!(n >= -1, "pole floor");
        if n > self.zorder {
            return;
        }
        let merged = match self.terms.remove(&n) {
            Some(old) => old.c_add(&c),
            None => c,
        };
        if !merged.c_is_zero() || C::KEEP_ZERO {
            self.terms.insert(n, merged);
        }
    }

    pub fn zorder(&self) -> i64 {
        self.zorder
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, &C)> {
        self.terms.iter().map(|(&n, c)| (n, c))
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// First stored z-power; stored zero coefficients count, since for
    /// q-series coefficients "zero" only means zero within knowledge.
    fn val_eff(&self) -> i64 {
        self.terms.keys().next().copied().unwrap_or(self.zorder + 1)
    }

    pub fn coeff(&self, n: i64) -> Result<Option<&C>> {
        if n > self.zorder {
            return Err(Error::OrderStarvation {
                what: "z-series coefficient".into(),
                needed: n,
                have: self.zorder,
            });
        }
        Ok(self.terms.get(&n))
    }

    pub fn clip_z(&self, zorder: i64) -> Self {
        let zo = zorder.min(self.zorder);
        ZSeries {
            terms: self
                .terms
                .iter()
                .filter(|(&n, _)| n <= zo)
                .map(|(&n, c)| (n, c.clone()))
                .collect(),
            zorder: zo,
        }
    }

    /// Drops stored coefficients that are zero within knowledge. Only for
    /// terms known to be structurally absent; for q-series coefficients this
    /// discards their truncation caps.
    pub fn pruned(&self) -> Self {
        ZSeries {
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| !c.c_is_zero())
                .map(|(&n, c)| (n, c.clone()))
                .collect(),
            zorder: self.zorder,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        let zo = self.zorder.min(o.zorder);
        let mut out = ZSeries::new(zo);
        for (&n, c) in self.terms.iter().chain(o.terms.iter()) {
            if n <= zo {
                out.put(n, c.clone());
            }
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Self {
        ZSeries {
            terms: self.terms.iter().map(|(&n, c)| (n, c.c_neg())).collect(),
            zorder: self.zorder,
        }
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        let va = self.val_eff();
        let vb = o.val_eff();
        if !self.terms.is_empty() && !o.terms.is_empty() && va + vb < -1 {
            return Err(Error::PoleFloor(format!(
                "product would start at z^{}",
                va + vb
            )));
        }
        let zo = (self.zorder + vb).min(o.zorder + va);
        let mut out = ZSeries::new(zo);
        for (&na, ca) in &self.terms {
            for (&nb, cb) in &o.terms {
                let n = na + nb;
                if n > zo {
                    break;
                }
                out.put(n, ca.c_mul(cb));
            }
        }
        Ok(out)
    }

    pub fn mul_coeff(&self, c: &C) -> Self {
        ZSeries {
            terms: self.terms.iter().map(|(&n, x)| (n, x.c_mul(c))).collect(),
            zorder: self.zorder,
        }
    }

    pub fn scale_rat(&self, r: &Rat) -> Self {
        ZSeries {
            terms: self.terms.iter().map(|(&n, x)| (n, x.c_scale(r))).collect(),
            zorder: self.zorder,
        }
    }

    pub fn inv(&self) -> Result<Self> {
        let v = self.val_eff();
        if self.terms.is_empty() {
            return Err(Error::IndeterminateDivision(
                "inverting a z-series with no tracked terms".into(),
            ));
        }
        let pivot = &self.terms[&v];
        if pivot.c_is_zero() {
            return Err(Error::IndeterminateDivision(
                "leading z-coefficient is only known to vanish".into(),
            ));
        }
        if v > 1 {
            return Err(Error::PoleFloor(format!(
                "inverse would start at z^{}",
                -v
            )));
        }
        let cv_inv = pivot.c_inv()?;
        let one = pivot.c_mul(&cv_inv);
        let zo_eps = self.zorder - v;
        let mut eps = ZSeries::new(zo_eps);
        for (&n, c) in self.terms.iter().skip(1) {
            eps.put(n - v, c.c_mul(&cv_inv));
        }
        let mut acc = ZSeries::constant(one.clone(), zo_eps);
        let mut pw = ZSeries::constant(one, zo_eps);
        while !pw.terms.is_empty() {
            pw = pw.mul(&eps)?.neg();
            if pw.val_eff() > zo_eps {
                break;
            }
            acc = acc.add(&pw);
        }
        let mut out = ZSeries::new(zo_eps - v);
        for (&n, c) in &acc.terms {
            if n - v <= out.zorder {
                out.put(n - v, c.c_mul(&cv_inv));
            }
        }
        Ok(out)
    }

    pub fn div(&self, o: &Self) -> Result<Self> {
        self.mul(&o.inv()?)
    }

    /// exp of a series with strictly positive z-valuation. `one` supplies the
    /// multiplicative identity in the right coefficient context.
    pub fn exp(&self, one: &C) -> Result<Self> {
        if self.val_eff() < 1 && !self.terms.is_empty() {
            return Err(Error::PoleFloor(
                "exp needs strictly positive z-valuation".into(),
            ));
        }
        let mut acc = ZSeries::constant(one.clone(), self.zorder);
        let mut pw = ZSeries::constant(one.clone(), self.zorder);
        let mut k: i64 = 0;
        loop {
            k += 1;
            pw = pw.mul(self)?.scale_rat(&Rat::new(BigInt::one(), BigInt::from(k)));
            if pw.val_eff() > acc.zorder || pw.terms.is_empty() {
                break;
            }
            acc = acc.add(&pw);
        }
        Ok(acc)
    }

    /// Multiplies the z^n coefficient by s^n. Needs s invertible when a pole
    /// term is present.
    pub fn reweight(&self, s: &C) -> Result<Self> {
        let mut out = ZSeries::new(self.zorder);
        let s_inv = if self.terms.keys().next().is_some_and(|&n| n < 0) {
            Some(s.c_inv()?)
        } else {
            None
        };
        let mut cache: BTreeMap<i64, C> = BTreeMap::new();
        for (&n, c) in &self.terms {
            let w = match n.cmp(&0) {
                std::cmp::Ordering::Equal => c.clone(),
                std::cmp::Ordering::Greater => {
                    let p = cache
                        .entry(n)
                        .or_insert_with(|| c_pow(s, n as u32))
                        .clone();
                    c.c_mul(&p)
                }
                std::cmp::Ordering::Less => c.c_mul(s_inv.as_ref().unwrap()),
            };
            out.put(n, w);
        }
        Ok(out)
    }

    pub fn try_map<D: Coeff>(&self, mut f: impl FnMut(i64, &C) -> Result<D>) -> Result<ZSeries<D>> {
        let mut out = ZSeries::new(self.zorder);
        for (&n, c) in &self.terms {
            out.put(n, f(n, c)?);
        }
        Ok(out)
    }
}

fn c_pow<C: Coeff>(c: &C, mut e: u32) -> C {
    let mut base = c.clone();
    let mut acc: Option<C> = None;
    if e == 0 {
        panic!("c_pow needs e >= 1");
    }
    loop {
        if e & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(a) => a.c_mul(&base),
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base = base.c_mul(&base);
    }
    acc.unwrap()
}

impl<C: Coeff + fmt::Display> fmt::Display for ZSeries<C> {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(fm, "O(z^{})", self.zorder + 1);
        }
        let mut first = true;
        for (&n, c) in &self.terms {
            if !first {
                write!(fm, " + ")?;
            }
            first = false;
            match n {
                0 => write!(fm, "({c})")?,
                1 => write!(fm, "({c})*z")?,
                _ => write!(fm, "({c})*z^{n}")?,
            }
        }
        write!(fm, " + O(z^{})", self.zorder + 1)
    }
}

impl<C: Coeff + fmt::Display> fmt::Debug for ZSeries<C> {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(fm, "{self}")
    }
}

/// Power series in an auxiliary variable t (exponents >= 0) with generic
/// coefficients, tracked up to torder.
#[derive(Clone, PartialEq, Eq)]
pub struct TSeries<C> {
    terms: BTreeMap<i64, C>,
    torder: i64,
}

impl<C: Coeff> TSeries<C> {
    pub fn new(torder: i64) -> Self {
        TSeries {
            terms: BTreeMap::new(),
            torder,
        }
    }

    pub fn monomial(n: i64, c: C, torder: i64) -> Self {
        assert!(n >= 0, "t-exponents are nonnegative");
        let mut s = Self::new(torder);
        s.put(n, c);
        s
    }

    pub fn put(&mut self, n: i64, c: C) {
        assert!(n >= 0);
        if n > self.torder {
            return;
        }
        let merged = match self.terms.remove(&n) {
            Some(old) => old.c_add(&c),
            None => c,
        };
        if !merged.c_is_zero() || C::KEEP_ZERO {
            self.terms.insert(n, merged);
        }
    }

    pub fn torder(&self) -> i64 {
        self.torder
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, &C)> {
        self.terms.iter().map(|(&n, c)| (n, c))
    }

    pub fn coeff(&self, n: i64) -> Result<Option<&C>> {
        if n > self.torder {
            return Err(Error::OrderStarvation {
                what: "t-series coefficient".into(),
                needed: n,
                have: self.torder,
            });
        }
        Ok(self.terms.get(&n))
    }

    pub fn add(&self, o: &Self) -> Self {
        let to = self.torder.min(o.torder);
        let mut out = TSeries::new(to);
        for (&n, c) in self.terms.iter().chain(o.terms.iter()) {
            if n <= to {
                out.put(n, c.clone());
            }
        }
        out
    }

    pub fn neg(&self) -> Self {
        TSeries {
            terms: self.terms.iter().map(|(&n, c)| (n, c.c_neg())).collect(),
            torder: self.torder,
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let va = self.terms.keys().next().copied().unwrap_or(self.torder + 1);
        let vb = o.terms.keys().next().copied().unwrap_or(o.torder + 1);
        let to = (self.torder + vb).min(o.torder + va);
        let mut out = TSeries::new(to);
        for (&na, ca) in &self.terms {
            for (&nb, cb) in &o.terms {
                if na + nb > to {
                    break;
                }
                out.put(na + nb, ca.c_mul(cb));
            }
        }
        out
    }

    pub fn scale_rat(&self, r: &Rat) -> Self {
        TSeries {
            terms: self.terms.iter().map(|(&n, c)| (n, c.c_scale(r))).collect(),
            torder: self.torder,
        }
    }
}
