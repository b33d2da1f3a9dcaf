//! Rank-r integral lattices of signature (1, r-1) with a chosen positive cone:
//! surface intersection forms and their sign-flipped counterparts, the class
//! vector text syntax, characteristic vectors, constrained vector enumeration,
//! basic-class sets and wall lists.
//!
//! Vectors in a half-integral coset L + c/2 are always returned in doubled
//! coordinates y = 2*xi, so every list element is an integer vector.

use crate::{Error, Result};
use num::bigint::BigInt;
use num::integer::Integer;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use std::fmt;

pub type ClassVec = Vec<i64>;

fn bi(x: i64) -> BigInt {
    BigInt::from(x)
}

fn br(x: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

fn brb(x: BigInt) -> BigRational {
    BigRational::from_integer(x)
}

/// floor(sqrt(x)) + 1 for x >= 0, and 0 for negative x; used as a safe
/// outer bound when converting a coercivity cutoff into a loop limit.
fn isqrt_cap(x: BigRational) -> i64 {
    if x.is_negative() {
        return 0;
    }
    (x.floor().to_integer().sqrt() + BigInt::one())
        .to_i64()
        .expect("loop bound fits i64")
}

fn to_i64_vec(v: Vec<BigInt>) -> Result<Vec<i64>> {
    v.into_iter()
        .map(|x| {
            x.to_i64()
                .ok_or_else(|| Error::UnimplementedRegime("vector coordinate exceeds i64".into()))
        })
        .collect()
}

/// "4,2x2,1x8" <-> (4, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1).
pub fn parse_class_vector(s: &str) -> Result<ClassVec> {
    let mut out = Vec::new();
    for tok in s.split(',') {
        let t = tok.trim();
        if t.is_empty() {
            return Err(Error::Parse(format!("empty entry in class vector {s:?}")));
        }
        let (val, cnt) = match t.split_once('x') {
            Some((v, c)) => (v.trim(), c.trim()),
            None => (t, "1"),
        };
        let v: i64 = val
            .parse()
            .map_err(|_| Error::Parse(format!("bad coordinate in {t:?}")))?;
        let c: usize = cnt
            .parse()
            .map_err(|_| Error::Parse(format!("bad repeat count in {t:?}")))?;
        if c == 0 {
            return Err(Error::Parse(format!("zero repeat count in {t:?}")));
        }
        out.extend(std::iter::repeat(v).take(c));
    }
    Ok(out)
}

pub fn format_class_vector(v: &[i64]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let run = j - i + 1;
        if run == 1 {
            parts.push(format!("{}", v[i]));
        } else {
            parts.push(format!("{}x{}", v[i], run));
        }
        i = j + 1;
    }
    parts.join(",")
}

// ---------------------------------------------------------------------------
// integer linear algebra (column Hermite form over column operations)

fn mat_identity(r: usize) -> Vec<Vec<BigInt>> {
    (0..r)
        .map(|i| {
            (0..r)
                .map(|j| if i == j { BigInt::one() } else { BigInt::zero() })
                .collect()
        })
        .collect()
}

/// h = a * u with u unimodular; pivot columns come first, zero columns last.
/// Row i of h is supported on pivot columns of rows <= i.
struct ColHnf {
    h: Vec<Vec<BigInt>>,
    u: Vec<Vec<BigInt>>,
    pivots: Vec<(usize, usize)>,
    cols: usize,
}

fn col_hnf(a: &[Vec<BigInt>]) -> ColHnf {
    let n = a.len();
    let r = if n == 0 { 0 } else { a[0].len() };
    let mut h: Vec<Vec<BigInt>> = a.to_vec();
    let mut u = mat_identity(r);
    let mut pivots = Vec::new();
    let mut pc = 0usize;
    for row in 0..n {
        if pc >= r {
            break;
        }
        loop {
            let mut best: Option<usize> = None;
            for j in pc..r {
                if !h[row][j].is_zero() {
                    let better = match best {
                        None => true,
                        Some(b) => h[row][j].abs() < h[row][b].abs(),
                    };
                    if better {
                        best = Some(j);
                    }
                }
            }
            let Some(b) = best else { break };
            if b != pc {
                for rr in h.iter_mut() {
                    rr.swap(b, pc);
                }
                for rr in u.iter_mut() {
                    rr.swap(b, pc);
                }
            }
            if h[row][pc].is_negative() {
                for rr in h.iter_mut() {
                    let x = -rr[pc].clone();
                    rr[pc] = x;
                }
                for rr in u.iter_mut() {
                    let x = -rr[pc].clone();
                    rr[pc] = x;
                }
            }
            let mut clean = true;
            for j in pc + 1..r {
                if h[row][j].is_zero() {
                    continue;
                }
                let q = h[row][j].div_floor(&h[row][pc]);
                if !q.is_zero() {
                    for rr in h.iter_mut() {
                        let t = &rr[j] - &q * &rr[pc];
                        rr[j] = t;
                    }
                    for rr in u.iter_mut() {
                        let t = &rr[j] - &q * &rr[pc];
                        rr[j] = t;
                    }
                }
                if !h[row][j].is_zero() {
                    clean = false;
                }
            }
            if clean {
                break;
            }
        }
        if pc < r && !h[row][pc].is_zero() {
            pivots.push((row, pc));
            pc += 1;
        }
    }
    ColHnf { h, u, pivots, cols: r }
}

/// Basis of { v : a v = 0 }, as columns.
fn hnf_kernel(c: &ColHnf) -> Vec<Vec<BigInt>> {
    let rank = c.pivots.len();
    (rank..c.cols)
        .map(|j| c.u.iter().map(|row| row[j].clone()).collect())
        .collect()
}

/// One integral solution of a v = rhs, or None.
fn hnf_solve(c: &ColHnf, rhs: &[BigInt]) -> Option<Vec<BigInt>> {
    let n = c.h.len();
    let r = c.cols;
    let mut t = vec![BigInt::zero(); r];
    let mut next_piv = 0usize;
    for row in 0..n {
        let mut acc = rhs[row].clone();
        for &(pr, pcol) in c.pivots.iter().take(next_piv) {
            debug_assert!(pr < row);
            acc -= &c.h[row][pcol] * &t[pcol];
        }
        if next_piv < c.pivots.len() && c.pivots[next_piv].0 == row {
            let pcol = c.pivots[next_piv].1;
            let (q, rem) = acc.div_rem(&c.h[row][pcol]);
            if !rem.is_zero() {
                return None;
            }
            t[pcol] = q;
            next_piv += 1;
        } else if !acc.is_zero() {
            return None;
        }
    }
    let mut v = vec![BigInt::zero(); r];
    for (i, vi) in v.iter_mut().enumerate() {
        let mut s = BigInt::zero();
        for (j, tj) in t.iter().enumerate() {
            if !tj.is_zero() {
                s += &c.u[i][j] * tj;
            }
        }
        *vi = s;
    }
    Some(v)
}

fn det_bigint(m: &[Vec<i64>]) -> BigInt {
    let n = m.len();
    if n == 0 {
        return BigInt::one();
    }
    let mut a: Vec<Vec<BigInt>> = m
        .iter()
        .map(|row| row.iter().map(|&x| bi(x)).collect())
        .collect();
    let mut sign = 1i64;
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if a[k][k].is_zero() {
            let Some(p) = (k + 1..n).find(|&i| !a[i][k].is_zero()) else {
                return BigInt::zero();
            };
            a.swap(k, p);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let t = (&a[i][j] * &a[k][k] - &a[i][k] * &a[k][j]) / &prev;
                a[i][j] = t;
            }
        }
        prev = a[k][k].clone();
    }
    let d = a[n - 1][n - 1].clone();
    if sign < 0 {
        -d
    } else {
        d
    }
}

/// Exact signature (positive count, negative count) of a symmetric integer
/// matrix, plus a rational row vector v with v G v^T > 0 when one exists.
fn signature_of(gram: &[Vec<i64>]) -> (usize, usize, Option<Vec<BigRational>>) {
    let r = gram.len();
    let mut m: Vec<Vec<BigRational>> = gram
        .iter()
        .map(|row| row.iter().map(|&x| br(x)).collect())
        .collect();
    let mut p: Vec<Vec<BigRational>> = (0..r)
        .map(|i| (0..r).map(|j| br((i == j) as i64)).collect())
        .collect();
    let (mut pos, mut neg) = (0usize, 0usize);
    let mut posvec: Option<Vec<BigRational>> = None;
    for i in 0..r {
        if m[i][i].is_zero() {
            if let Some(j) = (i + 1..r).find(|&j| !m[j][j].is_zero()) {
                m.swap(i, j);
                for row in m.iter_mut() {
                    row.swap(i, j);
                }
                p.swap(i, j);
            } else if let Some(j) = (i + 1..r).find(|&j| !m[i][j].is_zero()) {
                for col in 0..r {
                    let t = &m[i][col] + &m[j][col];
                    m[i][col] = t;
                }
                for row in m.iter_mut() {
                    let t = &row[i] + &row[j];
                    row[i] = t;
                }
                for col in 0..r {
                    let t = &p[i][col] + &p[j][col];
                    p[i][col] = t;
                }
            }
        }
        if m[i][i].is_zero() {
            continue;
        }
        if m[i][i].is_positive() {
            pos += 1;
            if posvec.is_none() {
                posvec = Some(p[i].clone());
            }
        } else {
            neg += 1;
        }
        for j in i + 1..r {
            if m[j][i].is_zero() {
                continue;
            }
            let f = &m[j][i] / &m[i][i];
            for col in 0..r {
                let t = &m[j][col] - &f * &m[i][col];
                m[j][col] = t;
            }
            for row in m.iter_mut() {
                let t = &row[j] - &f * &row[i];
                row[j] = t;
            }
            for col in 0..r {
                let t = &p[j][col] - &f * &p[i][col];
                p[j][col] = t;
            }
        }
    }
    (pos, neg, posvec)
}

fn gcd_slice(v: &[i64]) -> i64 {
    v.iter().fold(0i64, |a, &b| a.gcd(&b))
}

fn rationals_to_primitive_int(v: &[BigRational]) -> Result<ClassVec> {
    let mut l = BigInt::one();
    for x in v {
        l = l.lcm(x.denom());
    }
    let ints: Vec<BigInt> = v.iter().map(|x| (x * brb(l.clone())).to_integer()).collect();
    let mut g = BigInt::zero();
    for x in &ints {
        g = g.gcd(x);
    }
    if g.is_zero() {
        return Err(Error::Parse("zero vector".into()));
    }
    to_i64_vec(ints.into_iter().map(|x| x / &g).collect())
}

// ---------------------------------------------------------------------------
// surfaces and lattices

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum SurfaceKind {
    P2Blow(usize),
    P1xP1,
    P1xP1Blow(usize),
    Custom,
}

impl fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceKind::P2Blow(n) => write!(f, "p2blow:{n}"),
            SurfaceKind::P1xP1 => write!(f, "p1xp1"),
            SurfaceKind::P1xP1Blow(n) => write!(f, "p1xp1blow:{n}"),
            SurfaceKind::Custom => write!(f, "custom"),
        }
    }
}

/// Simply connected four-manifold side: `gram` is the intersection form, of
/// signature (1, rank-1); `orient` picks the positive cone component;
/// `char_vec` is one characteristic vector (all classes w with
/// w.x = x.x mod 2 form char_vec + 2L).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SurfaceModel {
    pub kind: SurfaceKind,
    pub rank: usize,
    pub gram: Vec<Vec<i64>>,
    pub names: Vec<String>,
    pub orient: ClassVec,
    pub char_vec: ClassVec,
}

/// Sign-flipped counterpart: x.y here is minus the intersection product, the
/// quadratic form Q(x) = x.x/2 takes half-integer values on L + c/2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Lattice {
    pub rank: usize,
    pub gram: Vec<Vec<i64>>,
    pub orient: ClassVec,
}

fn char_mod2(gram: &[Vec<i64>]) -> Result<ClassVec> {
    let r = gram.len();
    assert!(r < 63, "rank too large for the GF(2) solver");
    let mut rows: Vec<u64> = (0..r)
        .map(|i| {
            let mut m = 0u64;
            for j in 0..r {
                if gram[i][j] & 1 != 0 {
                    m |= 1 << j;
                }
            }
            if gram[i][i] & 1 != 0 {
                m |= 1 << r;
            }
            m
        })
        .collect();
    let mut pivot_of_col = vec![usize::MAX; r];
    let mut used = vec![false; r];
    for col in 0..r {
        let Some(p) = (0..r).find(|&i| !used[i] && rows[i] >> col & 1 == 1) else {
            continue;
        };
        used[p] = true;
        pivot_of_col[col] = p;
        for i in 0..r {
            if i != p && rows[i] >> col & 1 == 1 {
                rows[i] ^= rows[p];
            }
        }
    }
    for i in 0..r {
        if !used[i] && rows[i] >> r & 1 == 1 {
            return Err(Error::Inconsistency("no characteristic vector".into()));
        }
    }
    let mut w = vec![0i64; r];
    for col in 0..r {
        let p = pivot_of_col[col];
        if p != usize::MAX {
            w[col] = (rows[p] >> r & 1) as i64;
        }
    }
    Ok(w)
}

impl SurfaceModel {
    fn assemble(
        kind: SurfaceKind,
        gram: Vec<Vec<i64>>,
        names: Vec<String>,
        orient_hint: Option<ClassVec>,
    ) -> Result<Self> {
        let r = gram.len();
        if r == 0 {
            return Err(Error::Parse("empty intersection form".into()));
        }
        for row in &gram {
            if row.len() != r {
                return Err(Error::Parse("intersection form is not square".into()));
            }
        }
        for i in 0..r {
            for j in 0..r {
                if gram[i][j] != gram[j][i] {
                    return Err(Error::Parse("intersection form is not symmetric".into()));
                }
            }
        }
        let det = det_bigint(&gram);
        if det.abs() != BigInt::one() {
            return Err(Error::Parse(format!(
                "intersection form is not unimodular (det = {det})"
            )));
        }
        let (pos, neg, posvec) = signature_of(&gram);
        if pos != 1 || neg != r - 1 {
            return Err(Error::Parse(format!(
                "intersection form has signature ({pos}, {neg}), need (1, {})",
                r - 1
            )));
        }
        let orient = match orient_hint {
            Some(o) => o,
            None => rationals_to_primitive_int(&posvec.expect("positive direction exists"))?,
        };
        let char_vec = char_mod2(&gram)?;
        let s = SurfaceModel {
            kind,
            rank: r,
            gram,
            names,
            orient,
            char_vec,
        };
        debug_assert!(s.qx(&s.orient) > 0);
        debug_assert!(s.is_characteristic(&s.char_vec));
        Ok(s)
    }

    /// Plane blown up in n points: basis H, E1..En, gram diag(1, -1, .., -1).
    pub fn p2blow(n: usize) -> Self {
        let r = n + 1;
        let gram: Vec<Vec<i64>> = (0..r)
            .map(|i| {
                (0..r)
                    .map(|j| {
                        if i != j {
                            0
                        } else if i == 0 {
                            1
                        } else {
                            -1
                        }
                    })
                    .collect()
            })
            .collect();
        let mut names = vec!["H".to_string()];
        names.extend((1..=n).map(|i| format!("E{i}")));
        let mut orient = vec![0i64; r];
        orient[0] = 1;
        Self::assemble(SurfaceKind::P2Blow(n), gram, names, Some(orient))
            .expect("diagonal form is valid")
    }

    /// Quadric: basis F, G with F.F = G.G = 0, F.G = 1.
    pub fn p1xp1() -> Self {
        let gram = vec![vec![0, 1], vec![1, 0]];
        let names = vec!["F".to_string(), "G".to_string()];
        Self::assemble(SurfaceKind::P1xP1, gram, names, Some(vec![1, 1]))
            .expect("hyperbolic form is valid")
    }

    /// Quadric blown up in n points: basis F, G, E1..En.
    pub fn p1xp1blow(n: usize) -> Self {
        let r = n + 2;
        let mut gram = vec![vec![0i64; r]; r];
        gram[0][1] = 1;
        gram[1][0] = 1;
        for i in 2..r {
            gram[i][i] = -1;
        }
        let mut names = vec!["F".to_string(), "G".to_string()];
        names.extend((1..=n).map(|i| format!("E{i}")));
        let mut orient = vec![0i64; r];
        orient[0] = 1;
        orient[1] = 1;
        Self::assemble(SurfaceKind::P1xP1Blow(n), gram, names, Some(orient))
            .expect("blown-up hyperbolic form is valid")
    }

    /// User-provided intersection form; must be unimodular of type (1, r-1).
    pub fn custom(gram: Vec<Vec<i64>>) -> Result<Self> {
        let names = (0..gram.len()).map(|i| format!("v{i}")).collect();
        Self::assemble(SurfaceKind::Custom, gram, names, None)
    }

    pub fn dot(&self, a: &[i64], b: &[i64]) -> i64 {
        assert_eq!(a.len(), self.rank);
        assert_eq!(b.len(), self.rank);
        let mut acc: i128 = 0;
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                acc += ai as i128 * self.gram[i][j] as i128 * bj as i128;
            }
        }
        acc.try_into().expect("pairing fits i64")
    }

    /// Self-intersection x.x; equals -2 Q(x) for the flipped lattice form.
    pub fn qx(&self, x: &[i64]) -> i64 {
        self.dot(x, x)
    }

    pub fn sigma_x(&self) -> i64 {
        2 - self.rank as i64
    }

    pub fn sigma_l(&self) -> i64 {
        -self.sigma_x()
    }

    pub fn is_characteristic(&self, w: &[i64]) -> bool {
        if w.len() != self.rank {
            return false;
        }
        (0..self.rank).all(|i| {
            let mut acc: i128 = 0;
            for j in 0..self.rank {
                acc += self.gram[i][j] as i128 * w[j] as i128;
            }
            (acc - self.gram[i][i] as i128).rem_euclid(2) == 0
        })
    }

    /// Primitive, square zero, and in the closure of the chosen cone component.
    pub fn is_cusp_class(&self, f: &[i64]) -> bool {
        f.len() == self.rank && self.qx(f) == 0 && gcd_slice(f) == 1 && self.dot(f, &self.orient) > 0
    }

    /// (w.w - sigma(X)) / 8 for characteristic w.
    pub fn class_order(&self, w: &[i64]) -> i64 {
        let d = self.qx(w) - self.sigma_x();
        assert!(d % 8 == 0, "order is defined for characteristic classes");
        d / 8
    }

    /// H + E_j in the blown-up plane family, G in the quadric family.
    pub fn default_g(&self, j: usize) -> Result<ClassVec> {
        match self.kind {
            SurfaceKind::P2Blow(n) => {
                if j == 0 || j > n {
                    return Err(Error::Parse(format!(
                        "no exceptional class E{j} on {}",
                        self.kind
                    )));
                }
                let mut g = vec![0i64; self.rank];
                g[0] = 1;
                g[j] = 1;
                Ok(g)
            }
            SurfaceKind::P1xP1 | SurfaceKind::P1xP1Blow(_) => {
                let mut g = vec![0i64; self.rank];
                g[1] = 1;
                Ok(g)
            }
            SurfaceKind::Custom => Err(Error::Parse(
                "no default cusp class on a custom surface".into(),
            )),
        }
    }

    pub fn lattice(&self) -> Lattice {
        Lattice {
            rank: self.rank,
            gram: self
                .gram
                .iter()
                .map(|row| row.iter().map(|&x| -x).collect())
                .collect(),
            orient: self.orient.clone(),
        }
    }
}

impl Lattice {
    pub fn dot(&self, a: &[i64], b: &[i64]) -> i64 {
        assert_eq!(a.len(), self.rank);
        assert_eq!(b.len(), self.rank);
        let mut acc: i128 = 0;
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                acc += ai as i128 * self.gram[i][j] as i128 * bj as i128;
            }
        }
        acc.try_into().expect("pairing fits i64")
    }

    /// Q(v) = v.v / 2 for integral v.
    pub fn q_int(&self, v: &[i64]) -> BigRational {
        br(self.dot(v, v)) / br(2)
    }

    /// Q(y/2) = y.y / 8 for doubled coordinates.
    pub fn q_half2(&self, y: &[i64]) -> BigRational {
        br(self.dot(y, y)) / br(8)
    }

    /// Primitive isotropic vectors pairing negatively with the orientation.
    pub fn in_s_l(&self, f: &[i64]) -> bool {
        f.len() == self.rank
            && self.dot(f, f) == 0
            && gcd_slice(f) == 1
            && self.dot(f, &self.orient) < 0
    }
}

// ---------------------------------------------------------------------------
// exact enumeration of a positive definite form over an affine integer coset

/// LDL^T factors of a positive definite symmetric matrix; enumeration of
/// (z - c)^T M (z - c) <= R over integer z is exact throughout.
pub(crate) struct DefiniteForm {
    m: usize,
    d: Vec<BigRational>,
    l: Vec<Vec<BigRational>>,
}

/// Largest integer interval [lo, hi] with (t - mu)^2 <= bound; empty iff lo > hi.
fn int_interval(mu: &BigRational, bound: &BigRational) -> (i64, i64) {
    if bound.is_negative() {
        return (1, 0);
    }
    let s = bound.floor().to_integer().sqrt() + BigInt::one();
    let fmu = mu.floor().to_integer();
    let mut hi = &fmu + &s;
    loop {
        let h = brb(hi.clone());
        if h <= *mu || (&h - mu) * (&h - mu) <= *bound {
            break;
        }
        hi -= 1;
    }
    let cmu = -(-mu).floor().to_integer();
    let mut lo = &cmu - &s;
    loop {
        let l = brb(lo.clone());
        if l >= *mu || (mu - &l) * (mu - &l) <= *bound {
            break;
        }
        lo += 1;
    }
    (
        lo.to_i64().expect("interval endpoint fits i64"),
        hi.to_i64().expect("interval endpoint fits i64"),
    )
}

impl DefiniteForm {
    pub(crate) fn new(gram: &[Vec<BigInt>]) -> Result<Self> {
        let m = gram.len();
        let mut d = vec![BigRational::zero(); m];
        let mut l = vec![vec![BigRational::zero(); m]; m];
        for i in 0..m {
            l[i][i] = BigRational::one();
        }
        for i in 0..m {
            let mut di = brb(gram[i][i].clone());
            for k in 0..i {
                di -= &d[k] * &l[i][k] * &l[i][k];
            }
            if !di.is_positive() {
                return Err(Error::Inconsistency(
                    "quadratic form is not positive definite".into(),
                ));
            }
            for j in i + 1..m {
                let mut x = brb(gram[j][i].clone());
                for k in 0..i {
                    x -= &d[k] * &l[i][k] * &l[j][k];
                }
                l[j][i] = x / &di;
            }
            d[i] = di;
        }
        Ok(DefiniteForm { m, d, l })
    }

    /// Solve M z = rhs.
    pub(crate) fn solve(&self, rhs: &[BigRational]) -> Vec<BigRational> {
        let m = self.m;
        let mut w = rhs.to_vec();
        for i in 0..m {
            for j in 0..i {
                let t = &w[i] - &self.l[i][j] * &w[j];
                w[i] = t;
            }
        }
        for i in 0..m {
            let t = &w[i] / &self.d[i];
            w[i] = t;
        }
        for i in (0..m).rev() {
            for j in i + 1..m {
                let t = &w[i] - &self.l[j][i] * &w[j];
                w[i] = t;
            }
        }
        w
    }

    /// x^T M x for rational x.
    pub(crate) fn eval(&self, x: &[BigRational]) -> BigRational {
        let mut acc = BigRational::zero();
        for i in 0..self.m {
            let mut u = x[i].clone();
            for j in i + 1..self.m {
                u += &self.l[j][i] * &x[j];
            }
            acc += &self.d[i] * &u * &u;
        }
        acc
    }

    /// All integer z with (z - c)^T M (z - c) <= radius.
    pub(crate) fn enumerate(
        &self,
        center: &[BigRational],
        radius: &BigRational,
        visit: &mut dyn FnMut(&[i64]),
    ) {
        if radius.is_negative() {
            return;
        }
        if self.m == 0 {
            visit(&[]);
            return;
        }
        let mut z = vec![0i64; self.m];
        self.descend(self.m - 1, radius.clone(), center, &mut z, visit);
    }

    fn descend(
        &self,
        i: usize,
        budget: BigRational,
        center: &[BigRational],
        z: &mut Vec<i64>,
        visit: &mut dyn FnMut(&[i64]),
    ) {
        let mut shift = BigRational::zero();
        for j in i + 1..self.m {
            shift += &self.l[j][i] * (br(z[j]) - &center[j]);
        }
        // term: d_i (z_i - c_i + shift)^2 <= budget
        let mu = &center[i] - &shift;
        let bound = &budget / &self.d[i];
        let (lo, hi) = int_interval(&mu, &bound);
        for zi in lo..=hi {
            z[i] = zi;
            let dev = br(zi) - &mu;
            let used = &self.d[i] * &dev * &dev;
            let rest = &budget - &used;
            if rest.is_negative() {
                continue;
            }
            if i == 0 {
                visit(z);
            } else {
                self.descend(i - 1, rest, center, z, visit);
            }
        }
        z[i] = 0;
    }
}

// ---------------------------------------------------------------------------
// the (f, g) pair frame

/// Enumeration frame for vectors y = base (mod 2) against a fixed pair (f, g):
/// pairings A = y.f, B = y.g split y into a rank-2 span piece with
/// span_q(A, B) = (gg A^2 - 2 gfg A B + gf B^2) / det2 and a negative definite
/// perpendicular piece, so y.y <= span_q(A, B) always.  The gram here must
/// have signature (1, r-1) and det2 < 0, gfg > 0.
pub(crate) struct PairFrame {
    gram: Vec<Vec<i64>>,
    base: Vec<i64>,
    rf: Vec<i64>,
    rg: Vec<i64>,
    base_a: i64,
    base_b: i64,
    gf: i64,
    gg: i64,
    gfg: i64,
    det2: i64,
    pairs: ColHnf,
    kcols: Vec<Vec<i64>>,
    ktg: Vec<Vec<i64>>,
    form: DefiniteForm,
}

fn gram_rows(gram: &[Vec<i64>], v: &[i64]) -> Vec<i64> {
    (0..gram.len())
        .map(|i| {
            let mut acc: i128 = 0;
            for j in 0..gram.len() {
                acc += gram[i][j] as i128 * v[j] as i128;
            }
            acc.try_into().expect("pairing row fits i64")
        })
        .collect()
}

// Basis reduction on a positive definite Gram matrix.  The walk over a coset
// explores balls whose node count depends directly on basis quality, so the
// kernel basis out of the HNF (often very skew) gets reduced once up front.
struct LllState {
    n: usize,
    g: Vec<Vec<BigInt>>,
    u: Vec<Vec<BigInt>>,
    mu: Vec<Vec<BigRational>>,
    bs: Vec<BigRational>,
    valid: usize,
}

impl LllState {
    fn ensure(&mut self, k: usize) {
        while self.valid <= k {
            let i = self.valid;
            let mut crow = vec![BigRational::zero(); i + 1];
            for j in 0..i {
                let mut x = brb(self.g[i][j].clone());
                for l in 0..j {
                    let t = &self.mu[j][l] * &crow[l];
                    x -= t;
                }
                self.mu[i][j] = &x / &self.bs[j];
                crow[j] = x;
            }
            let mut x = brb(self.g[i][i].clone());
            for l in 0..i {
                let t = &self.mu[i][l] * &crow[l];
                x -= t;
            }
            self.bs[i] = x;
            self.valid = i + 1;
        }
    }

    /// b_k -= q b_j for the nearest integer q to mu[k][j]; keeps GSO rows valid.
    fn reduce(&mut self, k: usize, j: usize) {
        self.ensure(k);
        let half = BigRational::new(BigInt::one(), bi(2));
        let q = (&self.mu[k][j] + half).floor().to_integer();
        if q.is_zero() {
            return;
        }
        for t in 0..self.n {
            let d = &q * &self.g[j][t];
            self.g[k][t] -= d;
        }
        for t in 0..self.n {
            let d = &q * &self.g[t][j];
            self.g[t][k] -= d;
        }
        for t in 0..self.n {
            let d = &q * &self.u[t][j];
            self.u[t][k] -= d;
        }
        let qr = brb(q);
        for l in 0..j {
            let d = &qr * &self.mu[j][l];
            self.mu[k][l] -= d;
        }
        self.mu[k][j] -= qr;
    }

    fn swap(&mut self, k: usize) {
        self.g.swap(k - 1, k);
        for row in &mut self.g {
            row.swap(k - 1, k);
        }
        for row in &mut self.u {
            row.swap(k - 1, k);
        }
        self.valid = self.valid.min(k - 1);
    }
}

/// Returns a unimodular column transform u; the reduced basis is
/// b'_j = sum_i u[i][j] b_i with Gram u^T gram u.
fn lll_gram(gram: &[Vec<BigInt>]) -> Vec<Vec<i64>> {
    let n = gram.len();
    let mut u = vec![vec![BigInt::zero(); n]; n];
    for (i, row) in u.iter_mut().enumerate() {
        row[i] = BigInt::one();
    }
    if n >= 2 {
        let mut st = LllState {
            n,
            g: gram.to_vec(),
            u,
            mu: vec![vec![BigRational::zero(); n]; n],
            bs: vec![BigRational::zero(); n],
            valid: 0,
        };
        let delta = BigRational::new(bi(3), bi(4));
        let mut k = 1;
        while k < st.n {
            for j in (0..k).rev() {
                st.reduce(k, j);
            }
            st.ensure(k);
            let t = &delta - &st.mu[k][k - 1] * &st.mu[k][k - 1];
            if st.bs[k] >= t * &st.bs[k - 1] {
                k += 1;
            } else {
                st.swap(k);
                k = (k - 1).max(1);
            }
        }
        u = st.u;
    }
    u.into_iter()
        .map(|row| {
            row.into_iter()
                .map(|x| x.to_i64().expect("reduced transform fits i64"))
                .collect()
        })
        .collect()
}

impl PairFrame {
    pub(crate) fn new_engine(
        gram: &[Vec<i64>],
        f: &[i64],
        g: &[i64],
        base: &[i64],
    ) -> Result<Self> {
        let r = gram.len();
        assert_eq!(f.len(), r);
        assert_eq!(g.len(), r);
        assert_eq!(base.len(), r);
        let rf = gram_rows(gram, f);
        let rg = gram_rows(gram, g);
        let dot = |u: &[i64], v: &[i64]| -> i64 {
            u.iter()
                .zip(v)
                .map(|(&a, &b)| a as i128 * b as i128)
                .sum::<i128>()
                .try_into()
                .expect("pairing fits i64")
        };
        let gf = dot(&rf, f);
        let gg = dot(&rg, g);
        let gfg = dot(&rf, g);
        let det2 = gf
            .checked_mul(gg)
            .and_then(|x| x.checked_sub(gfg.checked_mul(gfg)?))
            .ok_or_else(|| Error::UnimplementedRegime("span determinant overflow".into()))?;
        if det2 >= 0 {
            return Err(Error::Parse(
                "pair does not span an indefinite rank-2 subspace".into(),
            ));
        }
        if gfg <= 0 {
            return Err(Error::Parse(
                "pair is not in a common cone component".into(),
            ));
        }
        let rows: Vec<Vec<BigInt>> = vec![
            rf.iter().map(|&x| bi(x)).collect(),
            rg.iter().map(|&x| bi(x)).collect(),
        ];
        let pairs = col_hnf(&rows);
        let kernel = hnf_kernel(&pairs);
        let m = kernel.len();
        if m != r - 2 {
            return Err(Error::Inconsistency(
                "pair frame kernel has unexpected rank".into(),
            ));
        }
        let mut kcols: Vec<Vec<i64>> = Vec::with_capacity(m);
        for col in kernel {
            kcols.push(to_i64_vec(col)?);
        }
        // ktg[t] = (K_t)^T gram, an m x r matrix of pairing rows
        let mut ktg: Vec<Vec<i64>> = kcols.iter().map(|k| gram_rows(gram, k)).collect();
        // mz = -4 K^T gram K, positive definite on the perpendicular space
        let build_mz = |ktg: &[Vec<i64>], kcols: &[Vec<i64>]| {
            let mut mz = vec![vec![BigInt::zero(); m]; m];
            for s in 0..m {
                for t in 0..m {
                    let v = dot(&ktg[s], &kcols[t]);
                    mz[s][t] = bi(-4) * bi(v);
                }
            }
            mz
        };
        let mut mz = build_mz(&ktg, &kcols);
        if m >= 2 {
            let trans = lll_gram(&mz);
            let mut reduced: Vec<Vec<i64>> = vec![vec![0; r]; m];
            for (s, red) in reduced.iter_mut().enumerate() {
                for t in 0..m {
                    let c = trans[t][s];
                    if c == 0 {
                        continue;
                    }
                    for i in 0..r {
                        red[i] = red[i]
                            .checked_add(
                                c.checked_mul(kcols[t][i])
                                    .expect("reduced kernel vector fits i64"),
                            )
                            .expect("reduced kernel vector fits i64");
                    }
                }
            }
            kcols = reduced;
            ktg = kcols.iter().map(|k| gram_rows(gram, k)).collect();
            mz = build_mz(&ktg, &kcols);
        }
        let form = DefiniteForm::new(&mz)?;
        let base_a = dot(&rf, base);
        let base_b = dot(&rg, base);
        Ok(PairFrame {
            gram: gram.to_vec(),
            base: base.to_vec(),
            rf,
            rg,
            base_a,
            base_b,
            gf,
            gg,
            gfg,
            det2,
            pairs,
            kcols,
            ktg,
            form,
        })
    }

    pub(crate) fn parity_ok(&self, a: i64, b: i64) -> bool {
        (a - self.base_a) % 2 == 0 && (b - self.base_b) % 2 == 0
    }

    /// Upper bound for y.y over the coset with pairings (A, B).
    pub(crate) fn span_q(&self, a: i64, b: i64) -> BigRational {
        let num = br(self.gg) * br(a) * br(a) - br(2 * self.gfg) * br(a) * br(b)
            + br(self.gf) * br(b) * br(b);
        num / br(self.det2)
    }

    /// One vector y = base (mod 2) with y.f = a, y.g = b, or None.
    fn coset_base(&self, a: i64, b: i64) -> Result<Option<Vec<i64>>> {
        if !self.parity_ok(a, b) {
            return Ok(None);
        }
        let rhs = vec![bi((a - self.base_a) / 2), bi((b - self.base_b) / 2)];
        let Some(v) = hnf_solve(&self.pairs, &rhs) else {
            return Ok(None);
        };
        let v = to_i64_vec(v)?;
        let y0: Vec<i64> = self
            .base
            .iter()
            .zip(&v)
            .map(|(&b0, &vi)| b0 + 2 * vi)
            .collect();
        debug_assert_eq!(
            self.rf
                .iter()
                .zip(&y0)
                .map(|(&p, &y)| p as i128 * y as i128)
                .sum::<i128>(),
            a as i128
        );
        debug_assert_eq!(
            self.rg
                .iter()
                .zip(&y0)
                .map(|(&p, &y)| p as i128 * y as i128)
                .sum::<i128>(),
            b as i128
        );
        Ok(Some(y0))
    }

    fn self_sq(&self, y: &[i64]) -> i64 {
        let mut acc: i128 = 0;
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0 {
                continue;
            }
            for (j, &yj) in y.iter().enumerate() {
                acc += yi as i128 * self.gram[i][j] as i128 * yj as i128;
            }
        }
        acc.try_into().expect("square fits i64")
    }

    /// Center and offset data for the perpendicular walk over one coset.
    /// y = y0 + 2 K z, and y.y = y0.y0 + c2 - P(z) with
    /// P(z) = (z - zstar)^T Mz (z - zstar) >= 0, c2 = zstar^T Mz zstar.
    fn coset_geometry(&self, y0: &[i64]) -> (Vec<BigRational>, BigRational) {
        let m = self.kcols.len();
        let l: Vec<i64> = (0..m)
            .map(|t| {
                self.ktg[t]
                    .iter()
                    .zip(y0)
                    .map(|(&p, &y)| p as i128 * y as i128)
                    .sum::<i128>()
                    .try_into()
                    .expect("linear term fits i64")
            })
            .collect();
        let rhs: Vec<BigRational> = l.iter().map(|&x| br(2 * x)).collect();
        let zstar = self.form.solve(&rhs);
        let c2: BigRational = l
            .iter()
            .zip(&zstar)
            .map(|(&li, zi)| br(2 * li) * zi)
            .sum();
        (zstar, c2)
    }

    fn lift(&self, y0: &[i64], z: &[i64]) -> Vec<i64> {
        let mut y = y0.to_vec();
        for (t, &zt) in z.iter().enumerate() {
            if zt == 0 {
                continue;
            }
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += 2 * zt * self.kcols[t][i];
            }
        }
        y
    }

    /// All y = base (mod 2) with pairings (A, B) and y.y >= min_sq.
    pub(crate) fn enumerate_coset(
        &self,
        a: i64,
        b: i64,
        min_sq: &BigRational,
        visit: &mut dyn FnMut(Vec<i64>),
    ) -> Result<()> {
        let Some(y0) = self.coset_base(a, b)? else {
            return Ok(());
        };
        let (zstar, c2) = self.coset_geometry(&y0);
        let radius = br(self.self_sq(&y0)) + &c2 - min_sq;
        if radius.is_negative() {
            return Ok(());
        }
        let mut overflow = false;
        self.form.enumerate(&zstar, &radius, &mut |z| {
            let y = self.lift(&y0, z);
            if y.iter().any(|&c| c.abs() > i64::MAX / 4) {
                overflow = true;
                return;
            }
            visit(y);
        });
        if overflow {
            return Err(Error::UnimplementedRegime("vector coordinate overflow".into()));
        }
        Ok(())
    }

    /// max { y.y : y = base (mod 2), y.f = a, y.g = b }, or None if empty.
    /// Descends a value grid from the continuous maximum, testing each level
    /// with a thin ball; a Babai point bounds the descent from below.
    pub(crate) fn max_sq(&self, a: i64, b: i64) -> Result<Option<i64>> {
        let Some(y0) = self.coset_base(a, b)? else {
            return Ok(None);
        };
        let (zstar, c2) = self.coset_geometry(&y0);
        let y0sq = self.self_sq(&y0);
        // continuous maximum of y.y over the coset; every lattice value sits
        // on the grid y0.y0 mod 4 below it
        let span = br(y0sq) + &c2;
        let diff: Vec<BigRational> = zstar
            .iter()
            .map(|x| {
                (x + BigRational::new(BigInt::one(), bi(2))).floor() - x
            })
            .collect();
        let reach = &span - self.form.eval(&diff);
        let fs = span
            .floor()
            .to_integer()
            .to_i64()
            .expect("square fits i64");
        let mut v = fs - (fs - y0sq).rem_euclid(4);
        loop {
            let radius = &span - br(v);
            let mut found = false;
            self.form.enumerate(&zstar, &radius, &mut |_| found = true);
            if found {
                // earlier levels were empty, so v is attained exactly
                return Ok(Some(v));
            }
            debug_assert!(br(v) > reach, "Babai certificate level must hit");
            v -= 4;
        }
    }

    /// Walk A = 0, B over [b_lo, b_hi] keeping y.y >= min_sq.
    pub(crate) fn sweep_line_f(
        &self,
        b_lo: i64,
        b_hi: i64,
        min_sq: &BigRational,
        visit: &mut dyn FnMut(Vec<i64>),
    ) -> Result<()> {
        for b in b_lo..=b_hi {
            if self.parity_ok(0, b) {
                self.enumerate_coset(0, b, min_sq, visit)?;
            }
        }
        Ok(())
    }

    /// Walk B = 0, A over [a_lo, a_hi] keeping y.y >= min_sq.
    pub(crate) fn sweep_line_g(
        &self,
        a_lo: i64,
        a_hi: i64,
        min_sq: &BigRational,
        visit: &mut dyn FnMut(Vec<i64>),
    ) -> Result<()> {
        for a in a_lo..=a_hi {
            if self.parity_ok(a, 0) {
                self.enumerate_coset(a, 0, min_sq, visit)?;
            }
        }
        Ok(())
    }

    /// Walk the open quadrant sign(A) = sa, sign(B) = sb (sa * sb = -1)
    /// keeping y.y >= min_sq; finite because span_q is coercive there.
    pub(crate) fn sweep_quadrant(
        &self,
        sa: i64,
        sb: i64,
        min_sq: &BigRational,
        visit: &mut dyn FnMut(Vec<i64>),
    ) -> Result<()> {
        assert_eq!(sa * sb, -1);
        // span_q(A,B) >= min_sq becomes N(A,B) = gg A^2 - 2 gfg A B + gf B^2 <= T
        let t_cap = -min_sq * br(-self.det2);
        if t_cap.is_negative() {
            return Ok(());
        }
        let ta_max: i64 = if self.gg > 0 {
            ((t_cap.clone() / br(self.gg)).floor().to_integer().sqrt() + BigInt::one())
                .to_i64()
                .expect("sweep bound fits i64")
        } else {
            (t_cap.clone() / br(2 * self.gfg))
                .floor()
                .to_integer()
                .to_i64()
                .expect("sweep bound fits i64")
        };
        let n_of = |a: i64, b: i64| -> BigRational {
            br(self.gg) * br(a) * br(a) - br(2 * self.gfg) * br(a) * br(b)
                + br(self.gf) * br(b) * br(b)
        };
        for ta in 1..=ta_max {
            let a = sa * ta;
            if (a - self.base_a) % 2 != 0 {
                continue;
            }
            // admissible |B| interval on the sb side
            let (tb_lo, tb_hi);
            if self.gf == 0 {
                let rem = &t_cap - br(self.gg) * br(ta) * br(ta);
                if rem.is_negative() {
                    continue;
                }
                tb_lo = 1;
                tb_hi = (rem / br(2 * self.gfg * ta))
                    .floor()
                    .to_integer()
                    .to_i64()
                    .expect("sweep bound fits i64");
            } else {
                // roots of gf B^2 - 2 gfg A B + (gg A^2 - T) in B
                let disc = br(self.gf) * &t_cap + br(-self.det2) * br(ta) * br(ta);
                debug_assert!(!disc.is_negative());
                let s = disc.floor().to_integer().sqrt() + BigInt::one();
                let gfa = bi(self.gfg) * bi(a);
                let mut b_hi = (&gfa + &s).div_floor(&bi(self.gf));
                let mut b_lo = (&gfa - &s).div_floor(&bi(self.gf));
                // tighten with the exact predicate
                while n_of(
                    a,
                    b_hi.to_i64().expect("endpoint fits i64"),
                ) > t_cap
                    && b_hi > b_lo
                {
                    b_hi -= 1;
                }
                while n_of(
                    a,
                    b_lo.to_i64().expect("endpoint fits i64"),
                ) > t_cap
                    && b_lo < b_hi
                {
                    b_lo += 1;
                }
                let lo = b_lo.to_i64().expect("endpoint fits i64");
                let hi = b_hi.to_i64().expect("endpoint fits i64");
                // restrict to the sb side
                if sb > 0 {
                    tb_lo = 1.max(lo);
                    tb_hi = hi;
                } else {
                    tb_lo = 1.max(-hi);
                    tb_hi = -lo;
                }
                for tb in tb_lo..=tb_hi {
                    let b = sb * tb;
                    if self.parity_ok(a, b) && n_of(a, b) <= t_cap {
                        self.enumerate_coset(a, b, min_sq, visit)?;
                    }
                }
                continue;
            }
            for tb in tb_lo..=tb_hi {
                let b = sb * tb;
                if self.parity_ok(a, b) {
                    self.enumerate_coset(a, b, min_sq, visit)?;
                }
            }
        }
        Ok(())
    }

    /// For isotropic f the line A = 0 repeats with period 2 gfg in B; a single
    /// window then decides whether the constraint set on that line is infinite.
    pub(crate) fn line_f_unbounded(&self, sb: i64, min_sq: &BigRational) -> Result<bool> {
        assert!(self.gf == 0);
        let period = 2 * self.gfg;
        for tb in 1..=period {
            let b = sb * tb;
            if !self.parity_ok(0, b) {
                continue;
            }
            if let Some(v) = self.max_sq(0, b)? {
                if br(v) >= *min_sq {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    pub(crate) fn line_g_unbounded(&self, sa: i64, min_sq: &BigRational) -> Result<bool> {
        assert!(self.gg == 0);
        let period = 2 * self.gfg;
        for ta in 1..=period {
            let a = sa * ta;
            if !self.parity_ok(a, 0) {
                continue;
            }
            if let Some(v) = self.max_sq(a, 0)? {
                if br(v) >= *min_sq {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

// ---------------------------------------------------------------------------
// public operations

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SignPattern {
    /// xi.f >= 0 > xi.g
    NonNegNeg,
    /// xi.f < 0 <= xi.g
    NegNonNeg,
    /// xi.f > 0 > xi.g
    PosNeg,
    /// xi.f < 0 < xi.g
    NegPos,
    /// xi.f = 0 and lo <= 2 xi.g <= hi (doubled pairing values)
    ZeroWindow { lo: i64, hi: i64 },
    /// xi.g = 0 and lo <= 2 xi.f <= hi (doubled pairing values)
    WindowZero { lo: i64, hi: i64 },
}

/// All xi in L + shift/2 with Q(xi) <= q_max under a sign pattern on
/// (xi.f, xi.g), in doubled coordinates y = 2 xi (lexicographically sorted).
/// f and g must lie in S_L.  Patterns that keep an isotropic boundary line
/// without a window are rejected when that line carries infinitely many
/// solutions.
pub fn enum_shifted_vectors(
    lat: &Lattice,
    shift2: &[i64],
    f: &[i64],
    g: &[i64],
    q_max: &BigRational,
    pattern: &SignPattern,
) -> Result<Vec<ClassVec>> {
    if !lat.in_s_l(f) {
        return Err(Error::Parse("f is not in S_L".into()));
    }
    if !lat.in_s_l(g) {
        return Err(Error::Parse("g is not in S_L".into()));
    }
    if shift2.len() != lat.rank {
        return Err(Error::Parse("shift has wrong length".into()));
    }
    pair_enum(lat, shift2, f, g, q_max, pattern)
}

/// Engine shared with the interior-vector callers: no S_L requirement, only
/// an indefinite rank-2 span with both vectors against the same cone side.
pub(crate) fn pair_enum(
    lat: &Lattice,
    shift2: &[i64],
    f: &[i64],
    g: &[i64],
    q_max: &BigRational,
    pattern: &SignPattern,
) -> Result<Vec<ClassVec>> {
    // engine gram is the sign-flip of the lattice gram, so engine pairings
    // are the negatives of lattice pairings: a_lat = -A, b_lat = -B.
    let eng: Vec<Vec<i64>> = lat
        .gram
        .iter()
        .map(|row| row.iter().map(|&x| -x).collect())
        .collect();
    let frame = PairFrame::new_engine(&eng, f, g, shift2)?;
    let min_sq = br(-8) * q_max; // y.y_eng >= -8 q_max  <=>  Q(y/2) <= q_max
    let mut out: Vec<ClassVec> = Vec::new();
    let mut push = |y: Vec<i64>| out.push(y);
    match pattern {
        SignPattern::NonNegNeg => {
            // lattice (>= 0, < 0) is engine A <= 0, B >= 1
            if frame.gf == 0 {
                if frame.line_f_unbounded(1, &min_sq)? {
                    return Err(Error::UnimplementedRegime(
                        "infinite family on the xi.f = 0 line; use a windowed pattern".into(),
                    ));
                }
            } else {
                // bounded line: |B| limited by coercivity of span_q(0, .)
                let cap = isqrt_cap(-&min_sq * br(-frame.det2) / br(frame.gf));
                frame.sweep_line_f(1, cap, &min_sq, &mut push)?;
            }
            frame.sweep_quadrant(-1, 1, &min_sq, &mut push)?;
        }
        SignPattern::NegNonNeg => {
            if frame.gg == 0 {
                if frame.line_g_unbounded(1, &min_sq)? {
                    return Err(Error::UnimplementedRegime(
                        "infinite family on the xi.g = 0 line; use a windowed pattern".into(),
                    ));
                }
            } else {
                let cap = isqrt_cap(-&min_sq * br(-frame.det2) / br(frame.gg));
                frame.sweep_line_g(1, cap, &min_sq, &mut push)?;
            }
            frame.sweep_quadrant(1, -1, &min_sq, &mut push)?;
        }
        SignPattern::PosNeg => frame.sweep_quadrant(-1, 1, &min_sq, &mut push)?,
        SignPattern::NegPos => frame.sweep_quadrant(1, -1, &min_sq, &mut push)?,
        SignPattern::ZeroWindow { lo, hi } => {
            frame.sweep_line_f(-hi, -lo, &min_sq, &mut push)?
        }
        SignPattern::WindowZero { lo, hi } => {
            frame.sweep_line_g(-hi, -lo, &min_sq, &mut push)?
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// The sets of characteristic classes organizing a boundary invariant, split
/// by the sign behaviour against the cusp pair (F, G), with the extremal
/// square M and the order bound k = (M - sigma(X)) / 8.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BasicClassSets {
    pub b_i: Vec<ClassVec>,
    pub b_f: Vec<ClassVec>,
    pub b_g: Vec<ClassVec>,
    pub orders_i: Vec<i64>,
    pub orders_f: Vec<i64>,
    pub orders_g: Vec<i64>,
    pub m_square: i64,
    pub k: i64,
}

pub fn basic_classes(
    s: &SurfaceModel,
    f: &[i64],
    g_opt: Option<&[i64]>,
) -> Result<BasicClassSets> {
    let g_own;
    let g: &[i64] = match g_opt {
        Some(g) => g,
        None => {
            g_own = s.default_g(1)?;
            &g_own
        }
    };
    if !s.is_cusp_class(f) {
        return Err(Error::Parse(format!(
            "F = {} is not a cusp class",
            format_class_vector(f)
        )));
    }
    if !s.is_cusp_class(g) {
        return Err(Error::Parse(format!(
            "G = {} is not a cusp class",
            format_class_vector(g)
        )));
    }
    let np = s.dot(f, g);
    if np == 0 {
        return Err(Error::Parse("degenerate cusp pair".into()));
    }
    debug_assert!(np > 0);
    let sig = s.sigma_x();
    let frame = PairFrame::new_engine(&s.gram, f, g, &s.char_vec)?;

    // extremal square M = max { W.W : W characteristic, W.F >= 0 >= W.G }.
    // On the A = 0 line translation by 2F moves B by 2 np and keeps W.W, so a
    // window of length 2 np inside B <= 0 is exhaustive; likewise for B = 0.
    let mut m_best: Option<i64> = None;
    for b in (1 - 2 * np)..=0 {
        if frame.parity_ok(0, b) {
            if let Some(v) = frame.max_sq(0, b)? {
                m_best = Some(m_best.map_or(v, |x: i64| x.max(v)));
            }
        }
    }
    for a in 0..=(2 * np - 1) {
        if frame.parity_ok(a, 0) {
            if let Some(v) = frame.max_sq(a, 0)? {
                m_best = Some(m_best.map_or(v, |x: i64| x.max(v)));
            }
        }
    }
    if m_best.is_none() {
        'witness: for ta in 1..=(2 * np + 2) {
            for tb in 1..=(2 * np + 2) {
                if frame.parity_ok(ta, -tb) {
                    if let Some(v) = frame.max_sq(ta, -tb)? {
                        m_best = Some(v);
                        break 'witness;
                    }
                }
            }
        }
    }
    let Some(mut m_sq) = m_best else {
        return Err(Error::Inconsistency(
            "no characteristic vector satisfies the cone conditions".into(),
        ));
    };
    // strict quadrant A > 0 > B: W.W <= span_q(A, B), so only pairs with
    // span_q >= current best can improve.
    let first_a = if frame.base_a % 2 == 0 { 2 } else { 1 };
    let first_b = if frame.base_b % 2 == 0 { -2 } else { -1 };
    let mut a = first_a;
    while frame.span_q(a, first_b) >= br(m_sq) {
        let mut b = first_b;
        while frame.span_q(a, b) >= br(m_sq) {
            if let Some(v) = frame.max_sq(a, b)? {
                if v > m_sq {
                    m_sq = v;
                }
            }
            b -= 2;
        }
        a += 2;
        if m_sq == 0 {
            break;
        }
    }
    if m_sq > 0 || (m_sq - sig) % 8 != 0 {
        return Err(Error::Inconsistency(format!(
            "extremal square {m_sq} incompatible with signature {sig}"
        )));
    }
    let k = (m_sq - sig) / 8;

    // membership sweeps: W.W > sigma(X), characteristic W lattice parity,
    // with W.W = sigma + 8, ..., m_sq in steps of 8.
    let lb = br(sig + 8);
    let mut b_i: Vec<ClassVec> = Vec::new();
    let mut b_f: Vec<ClassVec> = Vec::new();
    let mut b_g: Vec<ClassVec> = Vec::new();
    frame.sweep_quadrant(1, -1, &lb, &mut |y| b_i.push(y))?;
    frame.sweep_line_f(1, 2 * np, &lb, &mut |y| b_f.push(y))?;
    frame.sweep_line_g(1, 2 * np, &lb, &mut |y| b_g.push(y))?;
    for set in [&mut b_i, &mut b_f, &mut b_g] {
        set.sort_unstable();
        set.dedup();
    }
    let orders = |set: &[ClassVec]| -> Vec<i64> { set.iter().map(|w| s.class_order(w)).collect() };
    let (orders_i, orders_f, orders_g) = (orders(&b_i), orders(&b_f), orders(&b_g));
    for (set, ord) in [(&b_i, &orders_i), (&b_f, &orders_f), (&b_g, &orders_g)] {
        for (w, &o) in set.iter().zip(ord.iter()) {
            if !s.is_characteristic(w) || o < 1 || o > k {
                return Err(Error::Inconsistency(format!(
                    "class {} fails the membership checks",
                    format_class_vector(w)
                )));
            }
        }
    }
    Ok(BasicClassSets {
        b_i,
        b_f,
        b_g,
        orders_i,
        orders_f,
        orders_g,
        m_square: m_sq,
        k,
    })
}

/// Walls of type (C, d) separating two period points: xi in C/2 + L with
/// (d + 3)/4 + xi.xi in Z>=0 and xi.H1 < 0 < xi.H2, in doubled coordinates.
pub fn wall_enum(
    s: &SurfaceModel,
    c: &[i64],
    d: i64,
    h1: &[BigRational],
    h2: &[BigRational],
) -> Result<Vec<ClassVec>> {
    if c.len() != s.rank || h1.len() != s.rank || h2.len() != s.rank {
        return Err(Error::Parse("vector length mismatch".into()));
    }
    let h1i = rationals_to_primitive_int(h1)?;
    let h2i = rationals_to_primitive_int(h2)?;
    for h in [&h1i, &h2i] {
        if s.qx(h) <= 0 || s.dot(h, &s.orient) <= 0 {
            return Err(Error::Parse(
                "period point is not in the positive cone".into(),
            ));
        }
    }
    if h1i == h2i {
        return Ok(Vec::new());
    }
    let need = -(d + 3);
    let frame = PairFrame::new_engine(&s.gram, &h1i, &h2i, c)?;
    // a period point on a wall of this type makes the chamber ambiguous
    for (on_h1, gq) in [(true, frame.gf), (false, frame.gg)] {
        let cap = isqrt_cap(br(-need) * br(-frame.det2) / br(gq));
        let mut hit = false;
        let mut check = |y: Vec<i64>| {
            let sq = s.qx(&y);
            if sq < 0 && (sq - need).rem_euclid(4) == 0 {
                hit = true;
            }
        };
        if on_h1 {
            frame.sweep_line_f(-cap, cap, &br(need), &mut check)?;
        } else {
            frame.sweep_line_g(-cap, cap, &br(need), &mut check)?;
        }
        if hit {
            return Err(Error::Parse("ambiguous chamber".into()));
        }
    }
    let mut out: Vec<ClassVec> = Vec::new();
    frame.sweep_quadrant(-1, 1, &br(need), &mut |y| {
        let sq = s.qx(&y);
        debug_assert!(sq < 0);
        if (sq - need).rem_euclid(4) == 0 {
            out.push(y);
        }
    })?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Saturated rank-2 span of (f, g) inside Z^r and its orthogonal complement,
/// both as column bases.
pub(crate) fn span_and_perp(
    gram: &[Vec<i64>],
    f: &[i64],
    g: &[i64],
) -> Result<(Vec<Vec<i64>>, Vec<Vec<i64>>)> {
    let rows: Vec<Vec<BigInt>> = vec![
        gram_rows(gram, f).iter().map(|&x| bi(x)).collect(),
        gram_rows(gram, g).iter().map(|&x| bi(x)).collect(),
    ];
    let perp_cols = hnf_kernel(&col_hnf(&rows));
    let perp: Vec<Vec<i64>> = perp_cols
        .into_iter()
        .map(to_i64_vec)
        .collect::<Result<_>>()?;
    let prows: Vec<Vec<BigInt>> = perp
        .iter()
        .map(|p| gram_rows(gram, p).iter().map(|&x| bi(x)).collect())
        .collect();
    let span_cols = hnf_kernel(&col_hnf(&prows));
    let span: Vec<Vec<i64>> = span_cols
        .into_iter()
        .map(to_i64_vec)
        .collect::<Result<_>>()?;
    Ok((span, perp))
}

/// Representatives of Z^r modulo the lattice spanned by the given columns
/// (full rank required); count equals |det|.
pub(crate) fn coset_reps(cols: &[Vec<i64>]) -> Result<Vec<Vec<i64>>> {
    let r = cols.len();
    if r == 0 {
        return Ok(vec![vec![]]);
    }
    assert!(cols.iter().all(|c| c.len() == r));
    // rows of the matrix whose columns are the sublattice basis
    let a: Vec<Vec<BigInt>> = (0..r)
        .map(|i| cols.iter().map(|c| bi(c[i])).collect())
        .collect();
    let hnf = col_hnf(&a);
    if hnf.pivots.len() != r {
        return Err(Error::Parse("sublattice basis is not full rank".into()));
    }
    let diag: Vec<i64> = (0..r)
        .map(|i| hnf.h[i][i].to_i64().expect("diagonal fits i64"))
        .collect();
    let total: i64 = diag.iter().product();
    if total > 1 << 22 {
        return Err(Error::UnimplementedRegime("coset index too large".into()));
    }
    let mut reps: Vec<Vec<i64>> = vec![vec![]];
    for &di in &diag {
        let mut next = Vec::with_capacity(reps.len() * di as usize);
        for rep in &reps {
            for v in 0..di {
                let mut e = rep.clone();
                e.push(v);
                next.push(e);
            }
        }
        reps = next;
    }
    Ok(reps)
}

pub fn make_surface(spec_str: &str) -> Result<SurfaceModel> {
    if spec_str == "p1xp1" {
        return Ok(SurfaceModel::p1xp1());
    }
    if let Some(n) = spec_str.strip_prefix("p2blow:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Parse(format!("bad surface {spec_str:?}")))?;
        return Ok(SurfaceModel::p2blow(n));
    }
    if let Some(n) = spec_str.strip_prefix("p1xp1blow:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Parse(format!("bad surface {spec_str:?}")))?;
        return Ok(SurfaceModel::p1xp1blow(n));
    }
    Err(Error::Parse(format!(
        "unknown surface {spec_str:?}; expected p2blow:N, p1xp1 or p1xp1blow:N"
    )))
}
