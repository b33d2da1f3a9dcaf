//! Theta series of odd unimodular lattices of type (r-1, 1), regularized by a
//! pair of primitive isotropic classes on the positive cone.  The series are
//! Laurent in z with exact q-expansions on the 1/48 grid; the two-cusp
//! difference phi, the basic-class profile Omega, and the principal-part
//! extraction tying them together live here too.
//!
//! Conventions: a vector pairing enters exponentials through the z-weight,
//! e^{2 pi i xi.x} |-> e^{(xi.x) z}, and shift phases e^{pi i xi.b} are eighth
//! roots of unity.  Enumeration works with doubled vectors y = 2 xi, so the
//! q-exponent of xi is 6 y.y grid units.

use std::collections::{BTreeMap, HashMap};

use num::{BigInt, Integer, Zero};

use crate::exactnum::{rat, rat_i, Cyclo8, Rat};
use crate::lattice::{
    basic_classes, enum_shifted_vectors, BasicClassSets, ClassVec, Lattice, SignPattern,
    SurfaceModel,
};
use crate::modforms::{as_poly_in_big_u, bernoulli, catalog, expand_in_y, UPoly};
use crate::qseries::{FormalZ, NumericZ, QSeries, GRID};
use crate::{Error, Result};

/// Rational pairing a.x against an integer gram matrix.
pub(crate) fn dot_rat(gram: &[Vec<i64>], a: &[i64], x: &[Rat]) -> Rat {
    let mut acc = rat_i(0);
    for (i, ai) in a.iter().enumerate() {
        if *ai == 0 {
            continue;
        }
        for (j, xj) in x.iter().enumerate() {
            let gij = gram[i][j];
            if gij == 0 {
                continue;
            }
            acc = acc + xj.clone() * rat_i(*ai * gij);
        }
    }
    acc
}

/// Rational square x.y against an integer gram matrix.
pub(crate) fn dot_rr(gram: &[Vec<i64>], x: &[Rat], y: &[Rat]) -> Rat {
    let mut acc = rat_i(0);
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter().enumerate() {
            let gij = gram[i][j];
            if gij == 0 {
                continue;
            }
            acc = acc + xi.clone() * yj.clone() * rat_i(gij);
        }
    }
    acc
}

pub(crate) fn pm(par: i64) -> Cyclo8 {
    Cyclo8::from_int(if par.rem_euclid(2) == 0 { 1 } else { -1 })
}

pub(crate) fn pow2_rat(e: i64) -> Rat {
    if e >= 0 {
        Rat::from_integer(BigInt::from(1) << e as usize)
    } else {
        Rat::new(BigInt::from(1), BigInt::from(1) << (-e) as usize)
    }
}

pub(crate) fn pow_signed(s: &QSeries, e: i64, one_trunc: i64) -> Result<QSeries> {
    if e == 0 {
        Ok(QSeries::one(one_trunc))
    } else if e > 0 {
        Ok(s.pow(e as u32))
    } else {
        Ok(s.inv()?.pow((-e) as u32))
    }
}

/// e^{c z} truncated past z^zorder.
pub(crate) fn exp_z(c: &Cyclo8, zorder: i64) -> NumericZ {
    let mut out = NumericZ::new(zorder);
    let mut term = Cyclo8::one();
    out.put(0, term.clone());
    for n in 1..=zorder {
        term = (&term * c).scale(&rat(1, n));
        if term.is_zero() {
            break;
        }
        out.put(n, term.clone());
    }
    out
}

/// Laurent development of 1/(1 - e^{c z}): the simple pole at z = 0 carries
/// -1/c, and the positive part runs over even Bernoulli numbers.
pub(crate) fn inv_one_minus_exp(c: &Cyclo8, zorder: i64) -> Result<NumericZ> {
    if c.is_zero() {
        return Err(Error::PoleFloor("pole in z beyond the Laurent floor".into()));
    }
    let mut out = NumericZ::new(zorder);
    out.put(-1, -&c.inv()?);
    out.put(0, Cyclo8::from_rat(rat(1, 2)));
    let mut cp = Cyclo8::one();
    let mut fact = rat_i(1);
    for k in 1..=zorder {
        cp = &cp * c;
        fact = fact * rat_i(k + 1);
        let b = bernoulli((k + 1) as usize);
        if b.is_zero() {
            continue;
        }
        out.put(k, cp.scale(&((-b) / fact.clone())));
    }
    Ok(out)
}

/// Inverse of 1 - (-1)^par e^{c z}.  Odd par keeps the value 2 at z = 0 and
/// inverts regularly; even par needs c != 0 and picks up a z-pole.
pub(crate) fn pole_inverse(par: i64, lin: &Cyclo8, zorder: i64) -> Result<NumericZ> {
    if par.rem_euclid(2) == 1 {
        let mut s = exp_z(lin, zorder);
        s.put(0, Cyclo8::one());
        s.inv()
    } else if lin.is_zero() {
        Err(Error::IndeterminateDivision("undefined at this x".into()))
    } else {
        inv_one_minus_exp(lin, zorder)
    }
}

fn scatter(
    per_z: &mut BTreeMap<i64, BTreeMap<i64, Cyclo8>>,
    e: i64,
    sl: &NumericZ,
    sign: i64,
    zmax: i64,
) {
    for (n, c) in sl.terms() {
        if n > zmax || c.is_zero() {
            continue;
        }
        let row = per_z.entry(n).or_default();
        let cur = row.entry(e).or_insert_with(Cyclo8::zero);
        if sign >= 0 {
            *cur += c;
        } else {
            *cur -= c;
        }
    }
}

pub(crate) fn rows_to_formal(
    per_z: BTreeMap<i64, BTreeMap<i64, Cyclo8>>,
    trunc: i64,
    zorder: i64,
) -> FormalZ {
    let mut out = FormalZ::new(zorder);
    for (n, row) in per_z {
        let qs = QSeries::from_terms(row, trunc);
        if !qs.is_zero() {
            out.put(n, qs);
        }
    }
    out
}

pub(crate) fn gauss_formal(cq: &QSeries, zorder: i64, trunc: i64) -> Result<FormalZ> {
    if zorder < 2 || cq.is_zero() {
        return Ok(FormalZ::constant(QSeries::one(trunc), zorder));
    }
    FormalZ::monomial(2, cq.clone(), zorder)?.exp(&QSeries::one(trunc))
}

pub(crate) fn gauss_numeric(c: &Rat, zorder: i64) -> Result<NumericZ> {
    if zorder < 2 || c.is_zero() {
        return Ok(NumericZ::constant(Cyclo8::one(), zorder));
    }
    NumericZ::monomial(2, Cyclo8::from_rat(c.clone()), zorder)?.exp(&Cyclo8::one())
}

/// Two-variable elliptic kernel with simple poles on both torus circles:
///
///   F(u, v) = -1/(1 - e^u) + 1/(1 - e^{-v}) - 2 sum_{n,m>0} sinh(nu + mv) q^{nm}
///
/// taken with linear arguments u = u_lin z, v = v_lin z.  Odd in (u, v) jointly
/// and symmetric under swapping the two arguments.
pub fn kronecker_f(u_lin: &Cyclo8, v_lin: &Cyclo8, qorder: i64, zorder: i64) -> Result<FormalZ> {
    if u_lin.is_zero() || v_lin.is_zero() {
        return Err(Error::PoleFloor("pole in z beyond the Laurent floor".into()));
    }
    let trunc = GRID * qorder;
    let mut per_z: BTreeMap<i64, BTreeMap<i64, Cyclo8>> =
        (-1..=zorder).map(|n| (n, BTreeMap::new())).collect();
    let a = inv_one_minus_exp(u_lin, zorder)?.neg();
    let b = inv_one_minus_exp(&(-v_lin), zorder)?;
    scatter(&mut per_z, 0, &a.add(&b), 1, zorder);
    for n in 1..=qorder {
        for m in 1..=(qorder / n) {
            let w = &u_lin.scale(&rat_i(n)) + &v_lin.scale(&rat_i(m));
            let t = exp_z(&w, zorder).sub(&exp_z(&(-&w), zorder));
            scatter(&mut per_z, GRID * n * m, &t, -1, zorder);
        }
    }
    Ok(rows_to_formal(per_z, trunc, zorder))
}

/// A theta evaluation request: lattice model, shift class c, phase class b,
/// regularizing cusp pair (f, g), rational evaluation vector x, and the q/z
/// truncation orders.
#[derive(Clone, Debug)]
pub struct ThetaRequest {
    pub surface: SurfaceModel,
    pub c: ClassVec,
    pub b: ClassVec,
    pub f: ClassVec,
    pub g: ClassVec,
    pub x: Vec<Rat>,
    pub qorder: i64,
    pub zorder: i64,
}

impl ThetaRequest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        surface: SurfaceModel,
        c: ClassVec,
        b: ClassVec,
        f: ClassVec,
        g: ClassVec,
        x: Vec<Rat>,
        qorder: i64,
        zorder: i64,
    ) -> Result<Self> {
        let r = ThetaRequest {
            surface,
            c,
            b,
            f,
            g,
            x,
            qorder,
            zorder,
        };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let rank = self.surface.rank;
        for (name, v) in [("c", &self.c), ("b", &self.b), ("f", &self.f), ("g", &self.g)] {
            if v.len() != rank {
                return Err(Error::Parse(format!("{name} has wrong length")));
            }
        }
        if self.x.len() != rank {
            return Err(Error::Parse("x has wrong length".into()));
        }
        if !self.surface.is_cusp_class(&self.f) || !self.surface.is_cusp_class(&self.g) {
            return Err(Error::Parse(
                "f and g must be primitive isotropic classes on the positive cone".into(),
            ));
        }
        if self.surface.dot(&self.f, &self.g) <= 0 {
            return Err(Error::Parse("degenerate cusp pair".into()));
        }
        if self.qorder < 1 || self.zorder < 0 {
            return Err(Error::Parse("orders out of range".into()));
        }
        Ok(())
    }
}

/// Evaluation vector with denominators cleared: x_i = num_i / den.
struct XForm {
    num: Vec<i64>,
    den: i64,
}

fn integerize(x: &[Rat]) -> Result<XForm> {
    let mut den = BigInt::from(1);
    for v in x {
        den = den.lcm(v.denom());
    }
    let deni =
        i64::try_from(&den).map_err(|_| Error::Parse("x has oversized denominators".into()))?;
    let mut num = Vec::with_capacity(x.len());
    for v in x {
        let n = v.numer() * (&den / v.denom());
        num.push(i64::try_from(&n).map_err(|_| Error::Parse("x has oversized entries".into()))?);
    }
    Ok(XForm { num, den: deni })
}

fn premul(gram: &[Vec<i64>], v: &[i64]) -> Vec<i64> {
    gram.iter()
        .map(|row| row.iter().zip(v).map(|(g, x)| g * x).sum())
        .collect()
}

fn dot_plain(a: &[i64], b: &[i64]) -> i64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as i128) * (*y as i128))
        .sum::<i128>() as i64
}

type GroupKey = (i64, i64, i64);

/// Collapse an enumerated vector list to multiplicities keyed by q-exponent,
/// integerized x-pairing, and b-phase.  `fold` adds the mirror -y with
/// opposite multiplicity, which turns the strict-quadrant sum into its sinh
/// form.
fn group_vectors(
    lat: &Lattice,
    vecs: &[ClassVec],
    gx: &[i64],
    gb: &[i64],
    trunc: i64,
    fold: bool,
) -> BTreeMap<GroupKey, i64> {
    let diag: Option<Vec<i64>> = {
        let all_off_zero = (0..lat.rank)
            .all(|i| (0..lat.rank).all(|j| i == j || lat.gram[i][j] == 0));
        if all_off_zero {
            Some((0..lat.rank).map(|i| lat.gram[i][i]).collect())
        } else {
            None
        }
    };
    let mut m = BTreeMap::new();
    for y in vecs {
        let yy = match &diag {
            Some(d) => d.iter().zip(y).map(|(di, yi)| di * yi * yi).sum::<i64>(),
            None => lat.dot(y, y),
        };
        let e = 6 * yy;
        debug_assert!(e >= 0, "negative square on the regularized support");
        if e >= trunc {
            continue;
        }
        let s = dot_plain(y, gx);
        let t = dot_plain(y, gb);
        *m.entry((e, s, (2 * t).rem_euclid(8))).or_insert(0) += 1;
        if fold {
            *m.entry((e, -s, (-2 * t).rem_euclid(8))).or_insert(0) -= 1;
        }
    }
    m
}

fn assemble_slices(
    groups: &BTreeMap<GroupKey, i64>,
    den2: i64,
    zo: i64,
    cache: &mut HashMap<(i64, i64), NumericZ>,
) -> BTreeMap<i64, NumericZ> {
    let mut slices: BTreeMap<i64, NumericZ> = BTreeMap::new();
    for (&(e, s, ph), &cnt) in groups {
        if cnt == 0 {
            continue;
        }
        let ex = cache
            .entry((s, zo))
            .or_insert_with(|| exp_z(&Cyclo8::from_rat(rat(s, den2)), zo))
            .clone();
        let t = ex.mul_coeff(&Cyclo8::zeta_pow(ph).scale(&rat_i(cnt)));
        match slices.remove(&e) {
            Some(cur) => {
                slices.insert(e, cur.add(&t));
            }
            None => {
                slices.insert(e, t);
            }
        }
    }
    slices
}

/// Regularized theta series of the request's lattice: two boundary sums along
/// the cusp lines, each against the inverted pole factor of its cusp, plus the
/// sinh sum over the strict sign quadrant.  Rows are Laurent in z from z^{-1}.
pub fn theta_indef(req: &ThetaRequest) -> Result<FormalZ> {
    req.validate()?;
    let lat = req.surface.lattice();
    let wz = req.zorder + 1;
    let trunc = GRID * req.qorder;
    let q_max = rat_i(req.qorder);
    let xf = integerize(&req.x)?;
    let gx = premul(&lat.gram, &xf.num);
    let gb = premul(&lat.gram, &req.b);
    let den2 = 2 * xf.den;
    let fg2 = 2 * lat.dot(&req.f, &req.g);
    debug_assert!(fg2 < 0);
    let mut per_z: BTreeMap<i64, BTreeMap<i64, Cyclo8>> =
        (-1..=req.zorder).map(|n| (n, BTreeMap::new())).collect();
    let mut cache: HashMap<(i64, i64), NumericZ> = HashMap::new();

    for side in 0..2 {
        let (pat, dvec, sign): (SignPattern, &ClassVec, i64) = if side == 0 {
            (SignPattern::ZeroWindow { lo: fg2, hi: -1 }, &req.f, 1)
        } else {
            (SignPattern::WindowZero { lo: fg2, hi: -1 }, &req.g, -1)
        };
        let vecs = enum_shifted_vectors(&lat, &req.c, &req.f, &req.g, &q_max, &pat)?;
        if vecs.is_empty() {
            continue;
        }
        let groups = group_vectors(&lat, &vecs, &gx, &gb, trunc, false);
        drop(vecs);
        let lin_den = Cyclo8::from_rat(rat(dot_plain(dvec, &gx), xf.den));
        let inv_den = pole_inverse(lat.dot(dvec, &req.b), &lin_den, wz)?;
        for (e, sl) in &assemble_slices(&groups, den2, wz, &mut cache) {
            scatter(&mut per_z, *e, &sl.mul(&inv_den)?, sign, req.zorder);
        }
    }

    let vecs = enum_shifted_vectors(&lat, &req.c, &req.f, &req.g, &q_max, &SignPattern::PosNeg)?;
    let groups = group_vectors(&lat, &vecs, &gx, &gb, trunc, true);
    drop(vecs);
    for (e, sl) in &assemble_slices(&groups, den2, req.zorder, &mut cache) {
        scatter(&mut per_z, *e, sl, 1, req.zorder);
    }

    Ok(rows_to_formal(per_z, trunc, req.zorder))
}

/// Cusp-difference series: the normalized theta of (c, c) against (f, g),
/// divided through by f per z-weight, with its Gaussian factor.  Its residue
/// development against u recovers wall-crossing differences of invariants.
pub fn phi_fn(req: &ThetaRequest) -> Result<FormalZ> {
    if req.b != req.c {
        return Err(Error::Parse("phi requires b = c".into()));
    }
    let qin = req.qorder + (6 * (req.zorder + 2) + GRID - 1) / GRID;
    let tr = GRID * qin;
    let lat = req.surface.lattice();
    let sig = req.surface.sigma_l();
    let mut r2 = req.clone();
    r2.zorder = req.zorder + 1;
    r2.qorder = qin;
    let th = theta_indef(&r2)?;
    if th.is_empty() {
        return Ok(FormalZ::new(req.zorder));
    }
    let f_inv = catalog("f", qin)?.inv()?;
    let cc = lat.dot(&req.c, &req.c);
    let pre = pow_signed(&catalog("theta", qin)?, -sig, tr)?
        .mul(&f_inv)
        .scale(&Cyclo8::root_of_unity(&rat(-3 * cc, 8))?)
        .scale_rat(&rat_i(2));
    let gx = dot_rr(&lat.gram, &req.x, &req.x);
    let gauss = gauss_formal(
        &f_inv.pow(2).mul(&catalog("G", qin)?).scale_rat(&gx),
        r2.zorder,
        tr,
    )?;
    Ok(th.reweight(&f_inv)?.mul_coeff(&pre).mul(&gauss)?.clip_z(req.zorder))
}

type GroupKeyT = (i64, i64, i64, i64);

/// group_vectors with the e-pairing tracked as a fourth key component, for
/// the t-graded series.  The e-pairing stays constant along each resummed
/// pole family because the cusp classes are required to be orthogonal to e.
fn group_vectors_t(
    lat: &Lattice,
    vecs: &[ClassVec],
    gx: &[i64],
    gb: &[i64],
    ge: &[i64],
    trunc: i64,
    fold: bool,
) -> BTreeMap<GroupKeyT, i64> {
    let diag: Option<Vec<i64>> = {
        let all_off_zero = (0..lat.rank)
            .all(|i| (0..lat.rank).all(|j| i == j || lat.gram[i][j] == 0));
        if all_off_zero {
            Some((0..lat.rank).map(|i| lat.gram[i][i]).collect())
        } else {
            None
        }
    };
    let mut m = BTreeMap::new();
    for y in vecs {
        let yy = match &diag {
            Some(d) => d.iter().zip(y).map(|(di, yi)| di * yi * yi).sum::<i64>(),
            None => lat.dot(y, y),
        };
        let e = 6 * yy;
        debug_assert!(e >= 0, "negative square on the regularized support");
        if e >= trunc {
            continue;
        }
        let s = dot_plain(y, gx);
        let t = dot_plain(y, gb);
        let ye = dot_plain(y, ge);
        *m.entry((e, s, (2 * t).rem_euclid(8), ye)).or_insert(0) += 1;
        if fold {
            *m.entry((e, -s, (-2 * t).rem_euclid(8), -ye)).or_insert(0) -= 1;
        }
    }
    m
}

/// (xi.e)^m / m! for the doubled pairing ye = (2 xi).e, m = 0..=torder.
fn t_weights(ye: i64, torder: i64) -> Vec<Cyclo8> {
    let mut ws = Vec::with_capacity(torder as usize + 1);
    let mut cur = rat_i(1);
    for m in 0..=torder {
        if m > 0 {
            cur = cur * rat(ye, 2 * m);
        }
        ws.push(Cyclo8::from_rat(cur.clone()));
    }
    ws
}

/// t-slices of the regularized theta with argument x z + t e: slice m sums
/// the same terms as theta_indef weighted by (xi.e)^m / m!.  Needs both cusp
/// classes orthogonal to e so each pole family carries one t-weight.
pub fn theta_indef_t(req: &ThetaRequest, evec: &[i64], torder: i64) -> Result<Vec<FormalZ>> {
    req.validate()?;
    let lat = req.surface.lattice();
    if evec.len() != lat.rank {
        return Err(Error::Parse("e-vector length mismatch".into()));
    }
    if lat.dot(&req.f, evec) != 0 || lat.dot(&req.g, evec) != 0 {
        return Err(Error::UnimplementedRegime(
            "t-graded theta needs cusp classes orthogonal to e".into(),
        ));
    }
    if torder < 0 {
        return Err(Error::Parse("negative t-order".into()));
    }
    let wz = req.zorder + 1;
    let trunc = GRID * req.qorder;
    let q_max = rat_i(req.qorder);
    let xf = integerize(&req.x)?;
    let gx = premul(&lat.gram, &xf.num);
    let gb = premul(&lat.gram, &req.b);
    let ge = premul(&lat.gram, evec);
    let den2 = 2 * xf.den;
    let fg2 = 2 * lat.dot(&req.f, &req.g);
    let mut per: Vec<BTreeMap<i64, BTreeMap<i64, Cyclo8>>> = (0..=torder)
        .map(|_| (-1..=req.zorder).map(|n| (n, BTreeMap::new())).collect())
        .collect();
    let mut cache: HashMap<(i64, i64), NumericZ> = HashMap::new();

    for side in 0..2 {
        let (pat, dvec, sign): (SignPattern, &ClassVec, i64) = if side == 0 {
            (SignPattern::ZeroWindow { lo: fg2, hi: -1 }, &req.f, 1)
        } else {
            (SignPattern::WindowZero { lo: fg2, hi: -1 }, &req.g, -1)
        };
        let vecs = enum_shifted_vectors(&lat, &req.c, &req.f, &req.g, &q_max, &pat)?;
        if vecs.is_empty() {
            continue;
        }
        let groups = group_vectors_t(&lat, &vecs, &gx, &gb, &ge, trunc, false);
        drop(vecs);
        let lin_den = Cyclo8::from_rat(rat(dot_plain(dvec, &gx), xf.den));
        let inv_den = pole_inverse(lat.dot(dvec, &req.b), &lin_den, wz)?;
        for (&(e, s, ph, ye), &cnt) in &groups {
            if cnt == 0 {
                continue;
            }
            let ex = cache
                .entry((s, wz))
                .or_insert_with(|| exp_z(&Cyclo8::from_rat(rat(s, den2)), wz))
                .clone();
            let base = ex
                .mul_coeff(&Cyclo8::zeta_pow(ph).scale(&rat_i(cnt)))
                .mul(&inv_den)?;
            for (m, w) in t_weights(ye, torder).iter().enumerate() {
                if w.is_zero() {
                    continue;
                }
                scatter(&mut per[m], e, &base.mul_coeff(w), sign, req.zorder);
            }
        }
    }

    let vecs = enum_shifted_vectors(&lat, &req.c, &req.f, &req.g, &q_max, &SignPattern::PosNeg)?;
    let groups = group_vectors_t(&lat, &vecs, &gx, &gb, &ge, trunc, true);
    drop(vecs);
    for (&(e, s, ph, ye), &cnt) in &groups {
        if cnt == 0 {
            continue;
        }
        let ex = cache
            .entry((s, req.zorder))
            .or_insert_with(|| exp_z(&Cyclo8::from_rat(rat(s, den2)), req.zorder))
            .clone();
        let base = ex.mul_coeff(&Cyclo8::zeta_pow(ph).scale(&rat_i(cnt)));
        for (m, w) in t_weights(ye, torder).iter().enumerate() {
            if w.is_zero() {
                continue;
            }
            scatter(&mut per[m], e, &base.mul_coeff(w), 1, req.zorder);
        }
    }
    Ok(per
        .into_iter()
        .map(|p| rows_to_formal(p, trunc, req.zorder))
        .collect())
}

/// t-slices of phi with argument x z + t e.  The e-direction is reweighted by
/// 1/f exactly like z, and the Gaussian picks up e^{(e.e) G t^2 / f^2}, mixed
/// across slices; the z-t cross term is excluded by requiring x orthogonal
/// to e (every blowup comparison pulls x back from the base surface).
pub fn phi_fn_t(req: &ThetaRequest, evec: &[i64], torder: i64) -> Result<Vec<FormalZ>> {
    if req.b != req.c {
        return Err(Error::Parse("phi requires b = c".into()));
    }
    let lat = req.surface.lattice();
    if evec.len() != lat.rank {
        return Err(Error::Parse("e-vector length mismatch".into()));
    }
    if !dot_rat(&lat.gram, evec, &req.x).is_zero() {
        return Err(Error::UnimplementedRegime(
            "t-graded phi needs x orthogonal to e".into(),
        ));
    }
    let qin = req.qorder + (6 * (req.zorder + 2 + torder) + GRID - 1) / GRID;
    let tr = GRID * qin;
    let sig = req.surface.sigma_l();
    let mut r2 = req.clone();
    r2.zorder = req.zorder + 1;
    r2.qorder = qin;
    let slices = theta_indef_t(&r2, evec, torder)?;
    let f_inv = catalog("f", qin)?.inv()?;
    let cc = lat.dot(&req.c, &req.c);
    let pre = pow_signed(&catalog("theta", qin)?, -sig, tr)?
        .mul(&f_inv)
        .scale(&Cyclo8::root_of_unity(&rat(-3 * cc, 8))?)
        .scale_rat(&rat_i(2));
    let gx = dot_rr(&lat.gram, &req.x, &req.x);
    let gbase = f_inv.pow(2).mul(&catalog("G", qin)?);
    let gauss = gauss_formal(&gbase.scale_rat(&gx), r2.zorder, tr)?;
    let mut dressed: Vec<FormalZ> = Vec::with_capacity(torder as usize + 1);
    let mut fpow = QSeries::one(tr);
    for sl in &slices {
        let d = sl
            .reweight(&f_inv)?
            .mul_coeff(&pre)
            .mul(&gauss)?
            .mul_coeff(&fpow);
        dressed.push(d);
        fpow = fpow.mul(&f_inv);
    }
    let gt = gbase.scale_rat(&rat_i(lat.dot(evec, evec)));
    let mut gt_pow: Vec<QSeries> = vec![QSeries::one(tr)];
    for j in 1..=(torder / 2) as usize {
        let mut p = gt_pow[j - 1].mul(&gt);
        p = p.scale_rat(&rat(1, j as i64));
        gt_pow.push(p);
    }
    let mut out = Vec::with_capacity(torder as usize + 1);
    for m in 0..=torder {
        let mut acc = FormalZ::new(req.zorder);
        for j in 0..=(m / 2) {
            acc = acc.add(
                &dressed[(m - 2 * j) as usize]
                    .mul_coeff(&gt_pow[j as usize])
                    .clip_z(req.zorder),
            );
        }
        out.push(acc);
    }
    Ok(out)
}

/// Characteristic-coset image of phi: the theta of (w, c) for a characteristic
/// w, renormalized so that its rows live on the integral y-grid and their
/// principal y-parts match the structure polynomials row by row.
pub fn phi_w_image_with(req: &ThetaRequest, w: &[i64]) -> Result<FormalZ> {
    if req.b != req.c {
        return Err(Error::Parse("phi requires b = c".into()));
    }
    if !req.surface.is_characteristic(w) {
        return Err(Error::Parse("w is not characteristic".into()));
    }
    let sig = req.surface.sigma_l();
    let qin = req.qorder + (sig + 7) / 8 + 1;
    let tr = GRID * qin;
    let lat = req.surface.lattice();
    let mut r2 = req.clone();
    r2.c = w.to_vec();
    r2.b = req.c.clone();
    r2.zorder = req.zorder + 1;
    r2.qorder = qin;
    let th = theta_indef(&r2)?;
    if th.is_empty() {
        return Ok(FormalZ::new(req.zorder));
    }
    let h = catalog("h", qin)?;
    let cc = lat.dot(&req.c, &req.c);
    let pre = pow_signed(&catalog("theta10", qin)?, -sig, tr)?
        .mul(&h)
        .scale(&Cyclo8::root_of_unity(&rat(cc, 4))?)
        .scale_rat(&rat_i(-4));
    let gx = dot_rr(&lat.gram, &req.x, &req.x);
    let gauss = gauss_formal(&catalog("gaussw", qin)?.scale_rat(&gx), r2.zorder, tr)?;
    Ok(th
        .reweight(&h.scale_rat(&rat_i(-2)))?
        .mul_coeff(&pre)
        .mul(&gauss)?
        .clip_z(req.zorder))
}

/// Same with the model's stored characteristic vector.
pub fn phi_w_image(req: &ThetaRequest) -> Result<FormalZ> {
    let w = req.surface.char_vec.clone();
    phi_w_image_with(req, &w)
}

/// Shared assembler for the basic-class series: boundary groups against their
/// pole factors plus interior classes as exponential pairs.  `lattice_grid`
/// flips the q-exponent orientation to the positive-grid normalization used
/// by the principal-part extraction; `leading_only` keeps the extremal-square
/// slice and drops the q-powers.
#[allow(clippy::too_many_arguments)]
fn omega_core(
    s: &SurfaceModel,
    bcs: &BasicClassSets,
    c: &[i64],
    f: &[i64],
    g: &[i64],
    x: &[Rat],
    lattice_grid: bool,
    leading_only: bool,
    zorder: i64,
    trunc: i64,
) -> Result<FormalZ> {
    let wz = zorder + 1;
    let cc = s.dot(c, c);
    let expo = |w: &ClassVec| -> i64 {
        if leading_only {
            0
        } else if lattice_grid {
            -6 * s.qx(w)
        } else {
            6 * s.qx(w)
        }
    };
    let mut per_z: BTreeMap<i64, BTreeMap<i64, Cyclo8>> =
        (-1..=zorder).map(|n| (n, BTreeMap::new())).collect();
    for (set, dvec, sign) in [(&bcs.b_f, f, -1i64), (&bcs.b_g, g, 1)] {
        let members: Vec<&ClassVec> = set
            .iter()
            .filter(|w| !leading_only || s.qx(w) == bcs.m_square)
            .collect();
        if members.is_empty() {
            continue;
        }
        let den_lin = Cyclo8::from_rat(dot_rat(&s.gram, dvec, x) * rat_i(2));
        let inv_den = pole_inverse(s.dot(c, dvec), &den_lin, wz)?;
        for w in members {
            let par = (s.dot(c, w) + cc) / 2;
            let t = exp_z(&Cyclo8::from_rat(dot_rat(&s.gram, w, x)), wz).mul_coeff(&pm(par));
            scatter(&mut per_z, expo(w), &t.mul(&inv_den)?, sign, zorder);
        }
    }
    for w in &bcs.b_i {
        if leading_only && s.qx(w) != bcs.m_square {
            continue;
        }
        let lin = Cyclo8::from_rat(dot_rat(&s.gram, w, x));
        let cw = s.dot(c, w);
        let t = exp_z(&lin, zorder)
            .mul_coeff(&pm((cw + cc) / 2))
            .sub(&exp_z(&(-&lin), zorder).mul_coeff(&pm((cc - cw) / 2)));
        scatter(&mut per_z, expo(w), &t, 1, zorder);
    }
    Ok(rows_to_formal(per_z, trunc, zorder))
}

/// Basic-class series of (surface, c) for the cusp pair (f, g): each boundary
/// class contributes q^{W.W/8} e^{(W.x) z} against the inverted pole of its
/// cusp, each interior class an antisymmetrized exponential pair.
pub fn omega_fn(
    s: &SurfaceModel,
    c: &[i64],
    f: &[i64],
    g_opt: Option<&[i64]>,
    x: &[Rat],
    qorder: i64,
    zorder: i64,
) -> Result<FormalZ> {
    let g_own;
    let g: &[i64] = match g_opt {
        Some(g) => g,
        None => {
            g_own = s.default_g(1)?;
            &g_own
        }
    };
    if c.len() != s.rank || x.len() != s.rank {
        return Err(Error::Parse("c or x has wrong length".into()));
    }
    let bcs = basic_classes(s, f, Some(g))?;
    omega_core(s, &bcs, c, f, g, x, false, false, zorder, GRID * qorder)
}

/// Extremal-square slice of the basic-class series, with the q-powers dropped.
pub fn oh_leading(
    s: &SurfaceModel,
    c: &[i64],
    f: &[i64],
    g_opt: Option<&[i64]>,
    x: &[Rat],
    zorder: i64,
) -> Result<NumericZ> {
    let g_own;
    let g: &[i64] = match g_opt {
        Some(g) => g,
        None => {
            g_own = s.default_g(1)?;
            &g_own
        }
    };
    if c.len() != s.rank || x.len() != s.rank {
        return Err(Error::Parse("c or x has wrong length".into()));
    }
    let bcs = basic_classes(s, f, Some(g))?;
    let om = omega_core(s, &bcs, c, f, g, x, false, true, zorder, GRID)?;
    om.try_map(|_, qs| qs.coeff(0))
}

/// Structure data for one configuration: per z-row the principal-part
/// polynomial P_n (coefficients of (U -+ 2)^{-j}, constant term zero), the
/// polynomial remainder R_n in U, and the extremal coefficient a_n.
#[derive(Clone, Debug)]
pub struct StructureEntry {
    pub n: i64,
    pub p_n: Vec<Cyclo8>,
    pub r_n: UPoly,
    pub a_n: Cyclo8,
}

#[derive(Clone, Debug)]
pub struct StructureData {
    pub m: i64,
    pub k: i64,
    pub entries: Vec<StructureEntry>,
}

/// Extract and cross-check the structure of phi rows:
///
/// 1. develop the renormalized basic-class series in y = Utilde - 2 and read
///    the principal coefficients P_n off the negative y-powers;
/// 2. peel P_n(1/(U-2)) + i^{c.c-1-n} P_n(-1/(U+2)) off the phi row and
///    insist the remainder is a U-polynomial of degree at most (n+1)/2;
/// 3. compare the top coefficients a_n against the extremal slice with its
///    Gaussian and power-of-two normalization.
pub fn structure_extract(req: &ThetaRequest) -> Result<StructureData> {
    if req.b != req.c {
        return Err(Error::Parse("phi requires b = c".into()));
    }
    let s = &req.surface;
    let lat = s.lattice();
    let sig = s.sigma_l();
    let bcs = basic_classes(s, &req.f, Some(&req.g))?;
    let k = bcs.k;
    let m = -bcs.m_square;
    let fail = || Error::Inconsistency("structure-theorem consistency failure".into());
    let gx = dot_rr(&lat.gram, &req.x, &req.x);

    // principal parts from the basic-class route
    let qe = req.qorder.max(2 * k + 6) + (sig + 7) / 8 + 1;
    let tre = GRID * qe;
    let ze = req.zorder + 1;
    let om = omega_core(s, &bcs, &req.c, &req.f, &req.g, &req.x, true, false, ze, tre)?;
    let mut pdata: BTreeMap<i64, Vec<Cyclo8>> = BTreeMap::new();
    if om.is_empty() {
        for n in -1..=req.zorder {
            pdata.insert(n, vec![Cyclo8::zero(); k as usize + 1]);
        }
    } else {
        let h = catalog("h", qe)?;
        let pre = pow_signed(&catalog("theta10", qe)?, -sig, tre)?
            .mul(&h)
            .scale_rat(&rat_i(4));
        let gauss = gauss_formal(&catalog("gaussw", qe)?.scale_rat(&gx), ze, tre)?;
        let e_series = om.reweight(&h)?.mul_coeff(&pre).mul(&gauss)?;
        for n in -1..=req.zorder {
            let row = match e_series.coeff(n)? {
                Some(r) => r.clone(),
                None => QSeries::zero(tre),
            };
            let mut p = vec![Cyclo8::zero(); k as usize + 1];
            if !row.is_zero() {
                let y = expand_in_y(&row, 0)?;
                if let Some(v) = y.valuation() {
                    if v < -48 * k {
                        return Err(fail());
                    }
                }
                for j in 1..=k {
                    p[j as usize] = y.coeff(-48 * j)?;
                }
            }
            pdata.insert(n, p);
        }
    }

    // cusp-difference route: peel the same principal parts off phi against U
    let phi = phi_fn(req)?;
    let qu = req.qorder + k + 2;
    let tru = GRID * qu;
    let uu = catalog("U", qu)?;
    let two = QSeries::constant(Cyclo8::from_int(2), tru);
    let t_minus = uu.sub(&two).inv()?;
    let t_plus = uu.add(&two).inv()?.neg();
    let mut tm_pow: Vec<QSeries> = vec![QSeries::one(tru)];
    let mut tp_pow: Vec<QSeries> = vec![QSeries::one(tru)];
    for j in 1..=k as usize {
        let a = tm_pow[j - 1].mul(&t_minus);
        tm_pow.push(a);
        let b = tp_pow[j - 1].mul(&t_plus);
        tp_pow.push(b);
    }
    let cc = lat.dot(&req.c, &req.c);

    let mut entries = Vec::new();
    for n in -1..=req.zorder {
        let p = pdata.remove(&n).unwrap();
        let wn = match phi.coeff(n)? {
            Some(r) => r.clone(),
            None => QSeries::zero(GRID * req.qorder),
        };
        let phase = Cyclo8::root_of_unity(&rat(cc - 1 - n, 4))?;
        let mut cand = QSeries::zero(tru);
        for j in 1..=k as usize {
            if p[j].is_zero() {
                continue;
            }
            cand = cand
                .add(&tm_pow[j].scale(&p[j]))
                .add(&tp_pow[j].scale(&(&phase * &p[j])));
        }
        let resid = wn.sub(&cand);
        let r_n = as_poly_in_big_u(&resid).map_err(|_| fail())?;
        if r_n.len() as i64 > (n + 1) / 2 + 1 {
            return Err(fail());
        }
        let a_n = if k >= 1 {
            p[k as usize].clone()
        } else {
            Cyclo8::zero()
        };
        entries.push(StructureEntry { n, p_n: p, r_n, a_n });
    }

    // extremal slice closes the loop on the top coefficients; one extra
    // z-order feeds the pole row so the product stays sharp through zorder
    let zx = req.zorder + 1;
    let ohn = omega_core(s, &bcs, &req.c, &req.f, &req.g, &req.x, false, true, zx, GRID)?
        .try_map(|_, qs| qs.coeff(0))?;
    let rhs = if ohn.is_empty() {
        NumericZ::new(req.zorder)
    } else {
        let qhalf = gx.clone() / rat_i(2);
        ohn.mul(&gauss_numeric(&(-qhalf), zx)?)?
            .scale_rat(&pow2_rat(2 - (sig + 3 * m) / 4))
            .clip_z(req.zorder)
    };
    for ent in &entries {
        let rv = match rhs.coeff(ent.n) {
            Ok(Some(c)) => c.clone(),
            _ => Cyclo8::zero(),
        };
        if !(&ent.a_n - &rv).is_zero() {
            return Err(fail());
        }
    }

    Ok(StructureData { m, k, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modforms::coeff_in_u;
    use crate::qseries::test_util::assert_qs_eq;
    use proptest::prelude::*;

    fn fz_coeff(fz: &FormalZ, n: i64) -> QSeries {
        match fz.coeff(n) {
            Ok(Some(r)) => r.clone(),
            Ok(None) => QSeries::zero(GRID * 64),
            Err(_) => panic!("row {n} beyond z-order"),
        }
    }

    fn assert_fz_eq(a: &FormalZ, b: &FormalZ, ctx: &str) {
        let zo = a.zorder().min(b.zorder());
        for n in -1..=zo {
            assert_qs_eq(&fz_coeff(a, n), &fz_coeff(b, n), &format!("{ctx} [z^{n}]"));
        }
    }

    #[test]
    fn laurent_inverse_matches_generic_division() {
        let c = Cyclo8::from_rat(rat(3, 7));
        let a = inv_one_minus_exp(&c, 8).unwrap();
        let mut den = exp_z(&c, 10).neg();
        den.put(0, Cyclo8::one());
        let b = den.inv().unwrap();
        for n in -1..=7 {
            let av = a.coeff(n).unwrap().cloned().unwrap_or_else(Cyclo8::zero);
            let bv = b.coeff(n).unwrap().cloned().unwrap_or_else(Cyclo8::zero);
            assert!((&av - &bv).is_zero(), "z^{n}");
        }
    }

    // product development of the kernel over even weight-k coefficients
    fn prod_form(u: &Rat, v: &Rat, qorder: i64, zorder: i64) -> FormalZ {
        let wz = zorder + 1;
        let trunc = GRID * qorder;
        let uc = Cyclo8::from_rat(u.clone());
        let vc = Cyclo8::from_rat(v.clone());
        let s = &uc + &vc;
        let lead = s.div(&(&uc * &vc)).unwrap();
        let principal = FormalZ::monomial(-1, QSeries::constant(lead, trunc), wz).unwrap();
        let mut arg = FormalZ::new(wz);
        let mut fact = rat_i(1);
        let mut up = uc.clone();
        let mut vp = vc.clone();
        let mut sp = s.clone();
        for kk in 2..=wz {
            fact = fact * rat_i(kk);
            up = &up * &uc;
            vp = &vp * &vc;
            sp = &sp * &s;
            if kk % 2 == 1 {
                continue;
            }
            let coef = (&(&up + &vp) - &sp).scale(&(rat_i(2) / fact.clone()));
            if coef.is_zero() {
                continue;
            }
            arg.put(kk, catalog(&format!("G{kk}"), qorder).unwrap().scale(&coef));
        }
        let ex = arg.exp(&QSeries::one(trunc)).unwrap();
        principal.mul(&ex).unwrap().clip_z(zorder)
    }

    #[test]
    fn kernel_matches_product_form() {
        let pairs = [
            (rat_i(1), rat_i(1)),
            (rat_i(2), rat_i(-3)),
            (rat(1, 2), rat(1, 3)),
            (rat(-5, 7), rat_i(2)),
            (rat_i(4), rat(1, 4)),
        ];
        for (u, v) in pairs {
            let a = kronecker_f(
                &Cyclo8::from_rat(u.clone()),
                &Cyclo8::from_rat(v.clone()),
                8,
                8,
            )
            .unwrap();
            let b = prod_form(&u, &v, 8, 8);
            assert_fz_eq(&a, &b, &format!("F({u},{v})"));
        }
    }

    #[test]
    fn kernel_symmetries() {
        let u = Cyclo8::from_rat(rat(2, 3));
        let v = Cyclo8::from_rat(rat(-1, 5));
        let a = kronecker_f(&u, &v, 6, 7).unwrap();
        let b = kronecker_f(&v, &u, 6, 7).unwrap();
        assert_fz_eq(&a, &b, "swap");
        let c = kronecker_f(&(-&u), &(-&v), 6, 7).unwrap().neg();
        assert_fz_eq(&a, &c, "odd");
        assert!(matches!(
            kronecker_f(&Cyclo8::zero(), &u, 4, 4),
            Err(Error::PoleFloor(_))
        ));
    }

    #[test]
    fn hyperbolic_theta_is_the_kernel() {
        let s = SurfaceModel::p1xp1();
        let req = ThetaRequest::new(
            s,
            vec![0, 0],
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![rat(-2, 3), rat(1, 2)],
            4,
            4,
        )
        .unwrap();
        let th = theta_indef(&req).unwrap();
        let u = Cyclo8::from_rat(rat(1, 2));
        let v = Cyclo8::from_rat(rat(2, 3));
        let fk = kronecker_f(&u, &v, 4, 4).unwrap();
        assert_fz_eq(&th, &fk, "hyperbolic reduction");
    }

    // definitional sum over a coordinate box; pole lines are resummed by the
    // generic Laurent inverse, independent of the Bernoulli development
    fn box_pole_inv(par: i64, lin: &Rat, wz: i64) -> NumericZ {
        let c = Cyclo8::from_rat(lin.clone());
        let mut den = exp_z(&c, wz + 2).mul_coeff(&pm(par + 1));
        den.put(0, Cyclo8::one());
        den.inv().unwrap()
    }

    fn num_term(lat: &Lattice, y: &[i64], req: &ThetaRequest) -> NumericZ {
        let lin = Cyclo8::from_rat(dot_rat(&lat.gram, y, &req.x) / rat_i(2));
        let ph = Cyclo8::zeta_pow((2 * lat.dot(y, &req.b)).rem_euclid(8));
        exp_z(&lin, req.zorder + 1).mul_coeff(&ph)
    }

    fn theta_box(req: &ThetaRequest, r: i64) -> FormalZ {
        let lat = req.surface.lattice();
        let rank = lat.rank;
        let trunc = GRID * req.qorder;
        let wz = req.zorder + 1;
        let mut per_z: BTreeMap<i64, BTreeMap<i64, Cyclo8>> =
            (-1..=req.zorder).map(|n| (n, BTreeMap::new())).collect();
        let lin_f = dot_rat(&lat.gram, &req.f, &req.x);
        let lin_g = dot_rat(&lat.gram, &req.g, &req.x);
        let inv_f = box_pole_inv(lat.dot(&req.f, &req.b), &lin_f, wz);
        let inv_g = box_pole_inv(lat.dot(&req.g, &req.b), &lin_g, wz);
        let fg2 = 2 * lat.dot(&req.f, &req.g);
        let mut idx = vec![-r; rank];
        'outer: loop {
            let y: Vec<i64> = (0..rank).map(|i| req.c[i] + 2 * idx[i]).collect();
            let e = 6 * lat.dot(&y, &y);
            let yf = lat.dot(&y, &req.f);
            let yg = lat.dot(&y, &req.g);
            let contrib: Option<(NumericZ, i64)> = if yf > 0 && yg < 0 {
                Some((num_term(&lat, &y, req), 1))
            } else if yf < 0 && yg > 0 {
                Some((num_term(&lat, &y, req), -1))
            } else if yf == 0 && (fg2..=-1).contains(&yg) {
                Some((num_term(&lat, &y, req).mul(&inv_f).unwrap(), 1))
            } else if yg == 0 && (fg2..=-1).contains(&yf) {
                Some((num_term(&lat, &y, req).mul(&inv_g).unwrap(), -1))
            } else {
                None
            };
            if let Some((sl, sign)) = contrib {
                assert!(e >= 0, "negative square on the support");
                if e < trunc {
                    // contributing vectors must sit strictly inside the box
                    assert!(idx.iter().all(|&t| t.abs() <= r - 2), "box too small");
                    scatter(&mut per_z, e, &sl, sign, req.zorder);
                }
            }
            let mut i = 0;
            loop {
                if i == rank {
                    break 'outer;
                }
                idx[i] += 1;
                if idx[i] <= r {
                    break;
                }
                idx[i] = -r;
                i += 1;
            }
        }
        rows_to_formal(per_z, trunc, req.zorder)
    }

    #[test]
    fn theta_matches_definitional_box_sum() {
        let req = ThetaRequest::new(
            SurfaceModel::p1xp1(),
            vec![1, 1],
            vec![1, 0],
            vec![1, 0],
            vec![0, 1],
            vec![rat(-2, 3), rat(1, 2)],
            4,
            3,
        )
        .unwrap();
        assert_fz_eq(&theta_indef(&req).unwrap(), &theta_box(&req, 20), "hyperbolic box");

        let req = ThetaRequest::new(
            SurfaceModel::p2blow(2),
            vec![1, 1, 0],
            vec![0, 1, 1],
            vec![1, 1, 0],
            vec![5, 3, 4],
            vec![rat(1, 2), rat(1, 3), rat(1, 5)],
            3,
            3,
        )
        .unwrap();
        assert_fz_eq(&theta_indef(&req).unwrap(), &theta_box(&req, 24), "rank-3 box");
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 10, ..ProptestConfig::default() })]
        #[test]
        fn theta_odd_under_negating_x(
            xn in proptest::collection::vec(-6i64..7, 3),
            csel in 0usize..4,
            bsel in 0usize..4,
        ) {
            let s = SurfaceModel::p2blow(2);
            let f = vec![1, 1, 0];
            let g = vec![5, 3, 4];
            let picks: [Vec<i64>; 4] = [vec![0, 0, 0], vec![1, 1, 0], vec![0, 1, 1], vec![1, 1, 1]];
            let c = picks[csel].clone();
            let b = picks[bsel].clone();
            let dens = [2i64, 3, 5];
            let x: Vec<Rat> = xn.iter().enumerate().map(|(i, n)| rat(*n, dens[i])).collect();
            let lat = s.lattice();
            let okx = !dot_rat(&lat.gram, &f, &x).is_zero()
                && !dot_rat(&lat.gram, &g, &x).is_zero();
            prop_assume!(okx);
            let req = ThetaRequest::new(s, c.clone(), b.clone(), f, g, x.clone(), 2, 3).unwrap();
            let th = theta_indef(&req).unwrap();
            let mut rneg = req.clone();
            rneg.x = x.iter().map(|v| -v.clone()).collect();
            let tn = theta_indef(&rneg).unwrap();
            let cb = lat.dot(&c, &b);
            let expect = if cb.rem_euclid(2) == 0 { tn.neg() } else { tn };
            assert_fz_eq(&th, &expect, "oddness");
        }
    }

    #[test]
    fn theta_cocycle_over_cusp_triples() {
        let s = SurfaceModel::p2blow(2);
        let f = vec![1, 1, 0];
        let g = vec![1, 0, 1];
        let h = vec![5, 3, 4];
        let c = vec![1, 0, 1];
        let b = vec![0, 1, 1];
        let x = vec![rat(1, 2), rat(-1, 3), rat(1, 7)];
        let mk = |fa: &Vec<i64>, ga: &Vec<i64>| {
            ThetaRequest::new(
                s.clone(),
                c.clone(),
                b.clone(),
                fa.clone(),
                ga.clone(),
                x.clone(),
                3,
                3,
            )
            .unwrap()
        };
        let t_fg = theta_indef(&mk(&f, &g)).unwrap();
        let t_gh = theta_indef(&mk(&g, &h)).unwrap();
        let t_fh = theta_indef(&mk(&f, &h)).unwrap();
        assert_fz_eq(&t_fg.add(&t_gh), &t_fh, "cocycle");
    }

    #[test]
    fn theta_rejects_bad_requests() {
        let s = SurfaceModel::p1xp1();
        assert!(ThetaRequest::new(
            s.clone(),
            vec![0, 0],
            vec![0, 0],
            vec![1, 0],
            vec![1, 0],
            vec![rat(1, 2), rat(1, 3)],
            2,
            2,
        )
        .is_err());
        // x orthogonal to f while the f-line window is populated
        let req = ThetaRequest::new(
            s,
            vec![0, 0],
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![rat(1, 2), rat_i(0)],
            2,
            2,
        )
        .unwrap();
        assert!(matches!(
            theta_indef(&req),
            Err(Error::IndeterminateDivision(_))
        ));
    }

    // on the ruled quadric both boundary invariants vanish, so the residues
    // of the cusp-difference series against u must vanish row by row; this
    // also holds for any cusp pair with an empty basic-class list
    #[test]
    fn phi_residues_vanish_without_basic_classes() {
        let s = SurfaceModel::p1xp1();
        let x = vec![rat(1, 2), rat(1, 3)];
        for c in [vec![0, 0], vec![1, 0], vec![1, 1]] {
            let req = ThetaRequest::new(
                s.clone(),
                c.clone(),
                c.clone(),
                vec![1, 0],
                vec![0, 1],
                x.clone(),
                6,
                4,
            )
            .unwrap();
            let ph = phi_fn(&req).unwrap();
            for n in -1..=4 {
                let row = fz_coeff(&ph, n);
                for r in 0..=2i64 {
                    let a = coeff_in_u(&row, r).unwrap();
                    assert!(a.is_zero(), "residue for c = {c:?} at z^{n}, r = {r}: {a}");
                }
            }
        }

        let s2 = SurfaceModel::p2blow(2);
        let req = ThetaRequest::new(
            s2.clone(),
            vec![1, 1, 1],
            vec![1, 1, 1],
            vec![1, 1, 0],
            vec![5, 3, 4],
            vec![rat(1, 2), rat(1, 3), rat(1, 5)],
            5,
            3,
        )
        .unwrap();
        let bcs = basic_classes(&s2, &req.f, Some(&req.g)).unwrap();
        assert!(bcs.b_f.is_empty() && bcs.b_g.is_empty() && bcs.b_i.is_empty());
        let ph = phi_fn(&req).unwrap();
        for n in -1..=3 {
            for r in 0..=2i64 {
                let a = coeff_in_u(&fz_coeff(&ph, n), r).unwrap();
                assert!(a.is_zero(), "blowup residue at z^{n}, r = {r}: {a}");
            }
        }
    }

    #[test]
    fn phi_doubles_with_the_argument() {
        let s = SurfaceModel::p2blow(2);
        let c = vec![0, 0, 0];
        let x: Vec<Rat> = vec![rat_i(1), rat(1, 3), rat(1, 2)];
        let x2: Vec<Rat> = x.iter().map(|v| v.clone() * rat_i(2)).collect();
        let mk = |xx: Vec<Rat>| {
            ThetaRequest::new(
                s.clone(),
                c.clone(),
                c.clone(),
                vec![1, 1, 0],
                vec![5, 3, 4],
                xx,
                3,
                3,
            )
            .unwrap()
        };
        let p1 = phi_fn(&mk(x)).unwrap();
        let p2 = phi_fn(&mk(x2)).unwrap();
        for n in -1..=3 {
            let scaled = fz_coeff(&p1, n).scale_rat(&pow2_rat(n));
            assert_qs_eq(&fz_coeff(&p2, n), &scaled, &format!("z^{n} doubling"));
        }
    }

    #[test]
    fn omega_profiles_match_the_class_lists() {
        let s = SurfaceModel::p2blow(10);
        let mut f = vec![4, 2, 2];
        f.extend([1; 8]);
        let bcs = basic_classes(&s, &f, None).unwrap();
        assert_eq!(bcs.b_f.len(), 2);
        assert!(bcs.b_i.is_empty() && bcs.b_g.is_empty());
        let mut c = vec![0; 11];
        c[10] = 1;
        let x: Vec<Rat> = (0..11).map(|i| rat(1, i + 2)).collect();
        let om = omega_fn(&s, &c, &f, None, &x, 2, 3).unwrap();
        let mut seen = false;
        for n in -1..=3 {
            let row = fz_coeff(&om, n);
            for (e, cf) in row.terms() {
                assert!(e == -6 || cf.is_zero(), "stray q-exponent {e}");
                seen = seen || !cf.is_zero();
            }
        }
        assert!(seen, "empty profile for a two-class configuration");

        // a near-diagonal cusp has no classes at all
        let s2 = SurfaceModel::p2blow(2);
        let f2 = vec![1, 1, 0];
        let g2 = vec![5, 3, 4];
        let bcs2 = basic_classes(&s2, &f2, Some(&g2)).unwrap();
        assert!(bcs2.b_f.is_empty() && bcs2.b_g.is_empty() && bcs2.b_i.is_empty());
        let om2 = omega_fn(
            &s2,
            &[1, 1, 1],
            &f2,
            Some(&g2),
            &[rat(1, 2), rat(1, 3), rat(1, 5)],
            2,
            2,
        )
        .unwrap();
        for n in -1..=2 {
            assert!(fz_coeff(&om2, n).is_zero(), "empty profile with classes");
        }
    }

    #[test]
    fn char_image_depth_and_w_independence() {
        let s = SurfaceModel::p2blow(2);
        let c = vec![0, 1, 1];
        let x = vec![rat(1, 2), rat(1, 3), rat(1, 5)];
        let req = ThetaRequest::new(
            s.clone(),
            c.clone(),
            c,
            vec![1, 1, 0],
            vec![5, 3, 4],
            x,
            3,
            2,
        )
        .unwrap();
        let a = phi_w_image(&req).unwrap();
        let b = phi_w_image_with(&req, &[3, 1, 1]).unwrap();
        assert_fz_eq(&a, &b, "w-independence");
        let bcs = basic_classes(&s, &req.f, Some(&req.g)).unwrap();
        for n in -1..=2 {
            let row = fz_coeff(&a, n);
            if let Some(v) = row.valuation() {
                assert!(v >= -48 * bcs.k.max(0), "depth at z^{n}");
                assert_eq!(v.rem_euclid(48), 0, "off-grid exponent at z^{n}");
            }
        }
    }

    fn run_structure(n: usize, f: Vec<i64>, c: Vec<i64>, zorder: i64) -> StructureData {
        let s = SurfaceModel::p2blow(n);
        let g = s.default_g(1).unwrap();
        let x: Vec<Rat> = (0..s.rank).map(|i| rat(1, i as i64 + 2)).collect();
        let req = ThetaRequest::new(s, c.clone(), c, f, g, x, 4, zorder).unwrap();
        structure_extract(&req).unwrap()
    }

    #[test]
    fn structure_extraction_on_small_blowups() {
        let mut f9 = vec![3];
        f9.extend([1; 9]);
        let sd = run_structure(9, f9, vec![0; 10], 3);
        assert_eq!(sd.k, 1);
        let mut live = false;
        for e in &sd.entries {
            assert!(e.p_n[0].is_zero());
            live = live || e.p_n.iter().any(|p| !p.is_zero());
        }
        assert!(live, "vacuous structure data");

        let mut f10 = vec![4, 2, 2];
        f10.extend([1; 8]);
        let sd = run_structure(10, f10, vec![0; 11], 3);
        assert_eq!((sd.k, sd.m), (1, 1));

        let mut f10b = vec![5, 2, 2, 2, 2, 2];
        f10b.extend([1; 5]);
        let sd = run_structure(10, f10b, vec![0; 11], 3);
        assert_eq!((sd.k, sd.m), (1, 1));
    }

    #[test]
    fn structure_agrees_with_the_char_image_route() {
        let s = SurfaceModel::p2blow(9);
        let mut f = vec![3];
        f.extend([1; 9]);
        let g = s.default_g(1).unwrap();
        let c = vec![0; 10];
        let x: Vec<Rat> = (0..10).map(|i| rat(1, i + 2)).collect();
        let req = ThetaRequest::new(s, c.clone(), c, f, g, x, 4, 3).unwrap();
        let sd = structure_extract(&req).unwrap();
        let wi = phi_w_image(&req).unwrap();
        for ent in &sd.entries {
            let row = fz_coeff(&wi, ent.n);
            if row.is_zero() {
                assert!(
                    ent.p_n.iter().all(|p| p.is_zero()),
                    "zero image against nonzero P at z^{}",
                    ent.n
                );
                continue;
            }
            let y = expand_in_y(&row, 0).unwrap();
            for j in 1..=sd.k {
                let a = y.coeff(-48 * j).unwrap();
                assert!(
                    (&a - &ent.p_n[j as usize]).is_zero(),
                    "principal y-part at z^{}, depth {j}",
                    ent.n
                );
            }
        }
    }

    #[test]
    fn structure_with_an_interior_class() {
        let s = SurfaceModel::p2blow(13);
        let mut f = vec![4, 2];
        f.extend([1; 12]);
        let g = s.default_g(1).unwrap();
        let c = vec![1; 14];
        let x: Vec<Rat> = (0..14).map(|i| rat(1, i + 2)).collect();
        let req = ThetaRequest::new(s, c.clone(), c, f, g, x, 2, 2).unwrap();
        let sd = structure_extract(&req).unwrap();
        assert_eq!((sd.k, sd.m), (1, 4));
    }

    // t-expansion slices of the exceptional-coordinate factor: the sum over
    // half-vectors k/2 with k = ce mod 2, each weighing q^{k^2/8} with phase
    // zeta8^{2 ce k} and t-weight (k/2)^m / m!
    fn blow_factor_slices(ce: i64, tr: i64, torder: i64) -> Vec<QSeries> {
        (0..=torder)
            .map(|m| {
                let mut rows: BTreeMap<i64, Cyclo8> = BTreeMap::new();
                for k in -64i64..=64 {
                    if k.rem_euclid(2) != ce.rem_euclid(2) {
                        continue;
                    }
                    let e = 6 * k * k;
                    if e >= tr {
                        continue;
                    }
                    let mut w = rat_i(1);
                    for i in 1..=m {
                        w = w * rat(k, 2 * i);
                    }
                    let c = Cyclo8::zeta_pow((2 * ce * k).rem_euclid(8)).scale(&w);
                    let cur = rows.entry(e).or_insert_with(Cyclo8::zero);
                    *cur += &c;
                }
                QSeries::from_terms(rows, tr)
            })
            .collect()
    }

    // pulling both cusp classes and x back from the base surface splits the
    // blown-up theta into base theta times a one-variable theta constant in
    // t, slice by slice in t
    #[test]
    fn t_graded_theta_factors_at_the_cusp() {
        let base = SurfaceModel::p1xp1();
        let hat = SurfaceModel::p1xp1blow(1);
        let x = vec![rat(1, 2), rat(1, 3)];
        let xh = vec![rat(1, 2), rat(1, 3), rat_i(0)];
        let evec = vec![0, 0, 1];
        let (qo, zo, to) = (4, 5, 4);
        let tr = GRID * qo;
        for ce in [0i64, 1] {
            let c = vec![1, 0];
            let mut ch = c.clone();
            ch.push(ce);
            let breq = ThetaRequest::new(
                base.clone(),
                c.clone(),
                c,
                vec![1, 0],
                vec![0, 1],
                x.clone(),
                qo,
                zo,
            )
            .unwrap();
            let hreq = ThetaRequest::new(
                hat.clone(),
                ch.clone(),
                ch,
                vec![1, 0, 0],
                vec![0, 1, 0],
                xh.clone(),
                qo,
                zo,
            )
            .unwrap();
            let tb = theta_indef(&breq).unwrap();
            let slices = theta_indef_t(&hreq, &evec, to).unwrap();
            assert_eq!(slices.len(), to as usize + 1);
            let fac = blow_factor_slices(ce, tr, to);
            for m in 0..=to as usize {
                assert_fz_eq(
                    &slices[m],
                    &tb.mul_coeff(&fac[m]),
                    &format!("exceptional shift {ce}, t^{m}"),
                );
            }
        }
    }

    #[test]
    fn t_graded_phi_starts_from_the_plain_series() {
        let hat = SurfaceModel::p1xp1blow(1);
        let ch = vec![1, 0, 1];
        let req = ThetaRequest::new(
            hat,
            ch.clone(),
            ch,
            vec![1, 0, 0],
            vec![0, 1, 0],
            vec![rat(1, 2), rat(1, 3), rat_i(0)],
            3,
            4,
        )
        .unwrap();
        let plain = phi_fn(&req).unwrap();
        let slices = phi_fn_t(&req, &[0, 0, 1], 3).unwrap();
        assert_fz_eq(&slices[0], &plain, "t^0 slice");

        // a degenerate t-direction contributes nothing beyond the t^0 slice
        let zs = phi_fn_t(&req, &[0, 0, 0], 3).unwrap();
        assert_fz_eq(&zs[0], &plain, "zero direction t^0");
        for (m, s) in zs.iter().enumerate().skip(1) {
            assert!(s.pruned().is_empty(), "zero direction t^{m}");
        }
    }

    #[test]
    fn t_graded_requests_check_orthogonality() {
        let hat = SurfaceModel::p1xp1blow(1);
        let ch = vec![0, 0, 1];
        let req = ThetaRequest::new(
            hat.clone(),
            ch.clone(),
            ch.clone(),
            vec![1, 0, 0],
            vec![1, 2, 2],
            vec![rat(1, 2), rat(1, 3), rat_i(0)],
            2,
            2,
        )
        .unwrap();
        assert!(matches!(
            theta_indef_t(&req, &[0, 0, 1], 2),
            Err(Error::UnimplementedRegime(_))
        ));
        let req2 = ThetaRequest::new(
            hat,
            ch.clone(),
            ch,
            vec![1, 0, 0],
            vec![0, 1, 0],
            vec![rat(1, 2), rat(1, 3), rat(1, 5)],
            2,
            2,
        )
        .unwrap();
        assert!(matches!(
            phi_fn_t(&req2, &[0, 0, 1], 2),
            Err(Error::UnimplementedRegime(_))
        ));
    }
}
