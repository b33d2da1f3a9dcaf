//! Exact scalars: arbitrary-precision rationals and the cyclotomic field
//! Q(zeta8), which is where all eighth roots of unity live.

use crate::{Error, Result};
use num::{BigInt, BigRational, One, Signed, Zero};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_i(n: i64) -> Rat {
    Rat::from(BigInt::from(n))
}

/// Parses "p/q" or "p".
pub fn rat_parse(s: &str) -> Result<Rat> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s, "1"),
    };
    let n: BigInt = num
        .parse()
        .map_err(|_| Error::Parse(format!("bad integer {num:?}")))?;
    let d: BigInt = den
        .parse()
        .map_err(|_| Error::Parse(format!("bad integer {den:?}")))?;
    if d.is_zero() {
        return Err(Error::Parse(format!("zero denominator in {s:?}")));
    }
    Ok(Rat::new(n, d))
}

pub fn rat_str(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Element of Q(zeta8) stored on the power basis 1, z, z^2, z^3 with
/// z = exp(2 pi i / 8), so z^4 = -1 and z^2 = i.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Cyclo8 {
    pub c: [Rat; 4],
}

impl Cyclo8 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::from_int(1)
    }

    pub fn i() -> Self {
        let mut v = Self::zero();
        v.c[2] = Rat::one();
        v
    }

    pub fn from_rat(r: Rat) -> Self {
        let mut v = Self::zero();
        v.c[0] = r;
        v
    }

    pub fn from_int(n: i64) -> Self {
        Self::from_rat(rat_i(n))
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|x| x.is_zero())
    }

    pub fn is_one(&self) -> bool {
        self.c[0].is_one() && self.c[1..].iter().all(|x| x.is_zero())
    }

    /// Returns the value as a rational if the z, z^2, z^3 coordinates vanish.
    pub fn as_rat(&self) -> Option<Rat> {
        if self.c[1..].iter().all(|x| x.is_zero()) {
            Some(self.c[0].clone())
        } else {
            None
        }
    }

    pub fn expect_rat(&self, what: &str) -> Result<Rat> {
        self.as_rat()
            .ok_or_else(|| Error::Inconsistency(format!("{what}: expected rational, got {self}")))
    }

    /// zeta8^a for integer a, i.e. e^{2 pi i a / 8}.
    pub fn zeta_pow(a: i64) -> Self {
        let k = a.rem_euclid(8) as usize;
        let mut v = Self::zero();
        if k < 4 {
            v.c[k] = Rat::one();
        } else {
            v.c[k - 4] = -Rat::one();
        }
        v
    }

    /// e^{2 pi i a} for a rational a with 8a integral.
    pub fn root_of_unity(a: &Rat) -> Result<Self> {
        let e = a * rat_i(8);
        if !e.denom().is_one() {
            return Err(Error::GridOverflow(format!(
                "root of unity exponent {} is not a multiple of 1/8",
                rat_str(a)
            )));
        }
        use num::Integer;
        let k8 = e.numer().mod_floor(&BigInt::from(8));
        let k = num::ToPrimitive::to_i64(&k8).expect("residue mod 8 fits i64");
        Ok(Self::zeta_pow(k))
    }

    pub fn scale(&self, r: &Rat) -> Self {
        let mut v = self.clone();
        for x in v.c.iter_mut() {
            *x *= r;
        }
        v
    }

    /// Galois map z -> z^k for odd k.
    pub fn galois(&self, k: u8) -> Self {
        let [a0, a1, a2, a3] = self.c.clone();
        let c = match k & 7 {
            1 => [a0, a1, a2, a3],
            3 => [a0, a3, -a2, a1],
            5 => [a0, -a1, a2, -a3],
            7 => [a0, -a3, -a2, -a1],
            _ => panic!("galois exponent must be odd"),
        };
        Self { c }
    }

    /// Complex conjugation, z -> z^-1.
    pub fn conj(&self) -> Self {
        self.galois(7)
    }

    pub fn inv(&self) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::IndeterminateDivision("1/0 in Q(zeta8)".into()));
        }
        // Product of the other three Galois conjugates; multiplying by it
        // lands in Q, the field norm.
        let y = &(&self.galois(3) * &self.galois(5)) * &self.galois(7);
        let n = self * &y;
        let n0 = n
            .as_rat()
            .expect("norm of a Q(zeta8) element must be rational");
        assert!(!n0.is_zero(), "nonzero element has nonzero norm");
        Ok(y.scale(&n0.recip()))
    }

    pub fn div(&self, rhs: &Self) -> Result<Self> {
        Ok(self * &rhs.inv()?)
    }

    pub fn pow(&self, mut e: u32) -> Self {
        let mut base = self.clone();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        acc
    }

    pub fn to_strings(&self) -> [String; 4] {
        [
            rat_str(&self.c[0]),
            rat_str(&self.c[1]),
            rat_str(&self.c[2]),
            rat_str(&self.c[3]),
        ]
    }

    pub fn from_strings(s: &[String]) -> Result<Self> {
        if s.len() != 4 {
            return Err(Error::Parse("cyclotomic value needs 4 coordinates".into()));
        }
        let mut v = Self::zero();
        for (i, t) in s.iter().enumerate() {
            v.c[i] = rat_parse(t)?;
        }
        Ok(v)
    }
}

impl fmt::Display for Cyclo8 {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = self.as_rat() {
            return write!(fm, "{}", rat_str(&r));
        }
        let names = ["", "*z8", "*i", "*i*z8"];
        let mut first = true;
        for (k, x) in self.c.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            if first {
                write!(fm, "{}{}", rat_str(x), names[k])?;
                first = false;
            } else if x.is_negative() {
                write!(fm, " - {}{}", rat_str(&-x), names[k])?;
            } else {
                write!(fm, " + {}{}", rat_str(x), names[k])?;
            }
        }
        if first {
            write!(fm, "0")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Cyclo8 {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(fm, "{self}")
    }
}

impl Add for &Cyclo8 {
    type Output = Cyclo8;
    fn add(self, rhs: &Cyclo8) -> Cyclo8 {
        let mut v = self.clone();
        for (a, b) in v.c.iter_mut().zip(rhs.c.iter()) {
            *a += b;
        }
        v
    }
}

impl Sub for &Cyclo8 {
    type Output = Cyclo8;
    fn sub(self, rhs: &Cyclo8) -> Cyclo8 {
        let mut v = self.clone();
        for (a, b) in v.c.iter_mut().zip(rhs.c.iter()) {
            *a -= b;
        }
        v
    }
}

impl Neg for &Cyclo8 {
    type Output = Cyclo8;
    fn neg(self) -> Cyclo8 {
        let mut v = self.clone();
        for a in v.c.iter_mut() {
            *a = -a.clone();
        }
        v
    }
}

impl Mul for &Cyclo8 {
    type Output = Cyclo8;
    fn mul(self, rhs: &Cyclo8) -> Cyclo8 {
        let mut out = Cyclo8::zero();
        for i in 0..4 {
            if self.c[i].is_zero() {
                continue;
            }
            for j in 0..4 {
                if rhs.c[j].is_zero() {
                    continue;
                }
                let p = &self.c[i] * &rhs.c[j];
                let k = i + j;
                if k < 4 {
                    out.c[k] += p;
                } else {
                    out.c[k - 4] -= p;
                }
            }
        }
        out
    }
}

impl AddAssign<&Cyclo8> for Cyclo8 {
    fn add_assign(&mut self, rhs: &Cyclo8) {
        for (a, b) in self.c.iter_mut().zip(rhs.c.iter()) {
            *a += b;
        }
    }
}

impl SubAssign<&Cyclo8> for Cyclo8 {
    fn sub_assign(&mut self, rhs: &Cyclo8) {
        for (a, b) in self.c.iter_mut().zip(rhs.c.iter()) {
            *a -= b;
        }
    }
}

impl MulAssign<&Cyclo8> for Cyclo8 {
    fn mul_assign(&mut self, rhs: &Cyclo8) {
        *self = &*self * rhs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c8(a: [i64; 4], d: i64) -> Cyclo8 {
        Cyclo8 {
            c: [rat(a[0], d), rat(a[1], d), rat(a[2], d), rat(a[3], d)],
        }
    }

    #[test]
    fn eighth_roots_table() {
        let z = Cyclo8::zeta_pow(1);
        assert_eq!(z.pow(2), Cyclo8::i());
        assert_eq!(z.pow(4), Cyclo8::from_int(-1));
        assert_eq!(z.pow(8), Cyclo8::one());
        // e^{2 pi i /4} = i, e^{2 pi i /2} = -1
        assert_eq!(Cyclo8::root_of_unity(&rat(1, 4)).unwrap(), Cyclo8::i());
        assert_eq!(
            Cyclo8::root_of_unity(&rat(1, 2)).unwrap(),
            Cyclo8::from_int(-1)
        );
        assert_eq!(
            Cyclo8::root_of_unity(&rat(-1, 8)).unwrap(),
            Cyclo8::zeta_pow(7)
        );
        assert_eq!(
            Cyclo8::root_of_unity(&rat(17, 8)).unwrap(),
            Cyclo8::zeta_pow(1)
        );
        assert!(Cyclo8::root_of_unity(&rat(1, 3)).is_err());
    }

    #[test]
    fn conjugation_and_norm() {
        let x = c8([1, 2, 3, 4], 5);
        let n = &x * &(&(&x.galois(3) * &x.galois(5)) * &x.galois(7));
        assert!(n.as_rat().is_some());
        assert_eq!(x.conj().conj(), x);
        // conj is a ring map
        let y = c8([-2, 0, 7, 1], 3);
        assert_eq!((&x * &y).conj(), &x.conj() * &y.conj());
    }

    #[test]
    fn display_reads_back() {
        let x = c8([1, -2, 0, 7], 4);
        let s = x.to_strings();
        assert_eq!(Cyclo8::from_strings(&s).unwrap(), x);
        assert_eq!(rat_parse("-3/6").unwrap(), rat(-1, 2));
        assert!(rat_parse("1/0").is_err());
    }

    fn arb_cyclo() -> impl Strategy<Value = Cyclo8> {
        (
            [-20i64..20, -20i64..20, -20i64..20, -20i64..20],
            1i64..12,
        )
            .prop_map(|(a, d)| c8(a, d))
    }

    proptest! {
        #[test]
        fn field_axioms(x in arb_cyclo(), y in arb_cyclo(), z in arb_cyclo()) {
            prop_assert_eq!(&(&x + &y) * &z, &(&x * &z) + &(&y * &z));
            prop_assert_eq!(&x * &y, &y * &x);
            prop_assert_eq!(&(&x * &y) * &z, &x * &(&y * &z));
        }

        #[test]
        fn inverses(x in arb_cyclo()) {
            if !x.is_zero() {
                let ix = x.inv().unwrap();
                prop_assert!((&x * &ix).is_one());
            }
        }
    }
}
