//! Graded formal Weyl algebra at a single fiber.
//!
//! Fiber generators `y^1..y^{2n}` commute and carry weight 1, `hbar` carries
//! weight 2, and the form generators `dz^i`, `dzbar^j` anticommute. Forms are
//! stored as a bit mask in the global order `dz^0 < .. < dz^{2n-1} < dzbar^0 < ..`
//! so every wedge sign lands in the coefficient.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Zero};
use rand::Rng;
use thiserror::Error;

use crate::rational::{fmt_q, frac, invert, parse_q, q, Q};

#[derive(Debug, Error, PartialEq)]
pub enum WeylError {
    #[error("dimension mismatch: n = {0} vs n = {1}")]
    DimensionMismatch(usize, usize),
    #[error("weight cutoff mismatch: {0} vs {1}")]
    CutoffMismatch(u32, u32),
    #[error("curvature is not delta-closed: delta(R) has {0} nonzero terms")]
    CurvatureNotClosed(usize),
    #[error("curvature must be a 2-form of fiber degree 2 without hbar (offending term: {0})")]
    CurvatureShape(String),
    #[error("connection potential must be a 1-form of fiber degree 2 without hbar (offending term: {0})")]
    ConnectionShape(String),
    #[error("cutoff must be at least 3, got {0}")]
    CutoffTooSmall(u32),
    #[error("initial value must have no fiber generators and no dz (offending term: {0})")]
    NotInPiZero(String),
    #[error("division by hbar leaves an hbar^0 remainder")]
    HbarRemainder,
    #[error("half-dimension {0} out of range (1..=4)")]
    BadDimension(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Multidegree of a single term.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key {
    pub hbar: u32,
    pub fiber: Vec<u32>,
    /// Bits `0..2n` are `dz`, bits `2n..4n` are `dzbar`.
    pub forms: u32,
}

impl Key {
    pub fn fiber_degree(&self) -> u32 {
        self.fiber.iter().sum()
    }

    pub fn weight(&self) -> u32 {
        self.fiber_degree() + 2 * self.hbar
    }

    pub fn form_degree(&self) -> u32 {
        self.forms.count_ones()
    }

    fn hol_mask(&self) -> u32 {
        let d = self.fiber.len() as u32;
        self.forms & ((1u32 << d) - 1)
    }

    pub fn hol_degree(&self) -> u32 {
        self.hol_mask().count_ones()
    }

    pub fn antihol_degree(&self) -> u32 {
        self.form_degree() - self.hol_degree()
    }
}

/// Sign of `A ∧ B` when both are ascending masks: one factor of -1 for every
/// pair `a in A, b in B` with `a > b`.
pub(crate) fn wedge_sign(a: u32, b: u32) -> Option<bool> {
    if a & b != 0 {
        return None;
    }
    let mut inversions = 0u32;
    let mut rest = b;
    while rest != 0 {
        let bit = rest.trailing_zeros();
        rest &= rest - 1;
        let above = if bit >= 31 { 0 } else { a & !((1u32 << (bit + 1)) - 1) };
        inversions += above.count_ones();
    }
    Some(inversions % 2 == 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeylElement {
    n: usize,
    cutoff: u32,
    terms: BTreeMap<Key, Q>,
}

impl WeylElement {
    pub fn zero(n: usize, cutoff: u32) -> Self {
        WeylElement { n, cutoff, terms: BTreeMap::new() }
    }

    pub fn one(n: usize, cutoff: u32) -> Self {
        let mut e = Self::zero(n, cutoff);
        e.add_term(Key { hbar: 0, fiber: vec![0; 2 * n], forms: 0 }, Q::one());
        e
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn terms(&self) -> &BTreeMap<Key, Q> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Re-truncates at a new cutoff.
    pub fn with_cutoff(&self, cutoff: u32) -> Self {
        let mut e = Self::zero(self.n, cutoff);
        for (k, v) in &self.terms {
            e.add_term(k.clone(), v.clone());
        }
        e
    }

    /// Adds `c` times the monomial `key`, dropping it above the cutoff.
    pub fn add_term(&mut self, key: Key, c: Q) {
        debug_assert_eq!(key.fiber.len(), 2 * self.n);
        if c.is_zero() || key.weight() > self.cutoff {
            return;
        }
        match self.terms.entry(key) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn monomial(n: usize, cutoff: u32, c: Q, hbar: u32, fiber: &[u32], dz: &[usize], dzbar: &[usize]) -> Self {
        let mut e = Self::zero(n, cutoff);
        let d = 2 * n;
        let mut mask = 0u32;
        let mut sign = false;
        let gens: Vec<u32> = dz.iter().map(|&i| i as u32).chain(dzbar.iter().map(|&j| (d + j) as u32)).collect();
        for g in gens {
            match wedge_sign(mask, 1 << g) {
                None => return e,
                Some(s) => {
                    sign ^= s;
                    mask |= 1 << g;
                }
            }
        }
        let c = if sign { -c } else { c };
        e.add_term(Key { hbar, fiber: fiber.to_vec(), forms: mask }, c);
        e
    }

    /// The fiber generator `y^i`.
    pub fn fiber_gen(n: usize, cutoff: u32, i: usize) -> Self {
        let mut f = vec![0; 2 * n];
        f[i] = 1;
        Self::monomial(n, cutoff, Q::one(), 0, &f, &[], &[])
    }

    pub fn dz(n: usize, cutoff: u32, i: usize) -> Self {
        Self::monomial(n, cutoff, Q::one(), 0, &vec![0; 2 * n], &[i], &[])
    }

    pub fn dzbar(n: usize, cutoff: u32, j: usize) -> Self {
        Self::monomial(n, cutoff, Q::one(), 0, &vec![0; 2 * n], &[], &[j])
    }

    pub fn hbar(n: usize, cutoff: u32) -> Self {
        Self::monomial(n, cutoff, Q::one(), 1, &vec![0; 2 * n], &[], &[])
    }

    fn check(&self, other: &Self) -> Result<(), WeylError> {
        if self.n != other.n {
            return Err(WeylError::DimensionMismatch(self.n, other.n));
        }
        if self.cutoff != other.cutoff {
            return Err(WeylError::CutoffMismatch(self.cutoff, other.cutoff));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, WeylError> {
        self.check(other)?;
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), v.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, WeylError> {
        self.add(&other.scale(&-Q::one()))
    }

    pub fn scale(&self, c: &Q) -> Self {
        let mut out = Self::zero(self.n, self.cutoff);
        if c.is_zero() {
            return out;
        }
        for (k, v) in &self.terms {
            out.terms.insert(k.clone(), v * c);
        }
        out
    }

    fn map_terms(&self, cutoff: u32, f: impl Fn(&Key, &Q, &mut Self)) -> Self {
        let mut out = Self::zero(self.n, cutoff);
        for (k, v) in &self.terms {
            f(k, v, &mut out);
        }
        out
    }

    /// Keeps the terms satisfying `pred`.
    pub fn filter(&self, pred: impl Fn(&Key) -> bool) -> Self {
        self.map_terms(self.cutoff, |k, v, out| {
            if pred(k) {
                out.add_term(k.clone(), v.clone());
            }
        })
    }

    /// Component of exact total weight `w`.
    pub fn weight_component(&self, w: u32) -> Self {
        self.filter(|k| k.weight() == w)
    }

    /// The `hbar^0` part.
    pub fn mod_hbar(&self) -> Self {
        self.filter(|k| k.hbar == 0)
    }

    /// Parity by form degree, `None` if mixed.
    pub fn parity(&self) -> Option<bool> {
        let mut it = self.terms.keys().map(|k| k.form_degree() % 2 == 1);
        let first = it.next().unwrap_or(false);
        if it.all(|p| p == first) {
            Some(first)
        } else {
            None
        }
    }

    fn split_parity(&self) -> (Self, Self) {
        (self.filter(|k| k.form_degree() % 2 == 0), self.filter(|k| k.form_degree() % 2 == 1))
    }

    /// Divides by `hbar`; fails if an `hbar^0` term is present.
    pub fn div_hbar(&self) -> Result<Self, WeylError> {
        let mut out = Self::zero(self.n, self.cutoff);
        for (k, v) in &self.terms {
            if k.hbar == 0 {
                return Err(WeylError::HbarRemainder);
            }
            let mut k2 = k.clone();
            k2.hbar -= 1;
            out.add_term(k2, v.clone());
        }
        Ok(out)
    }
}

impl fmt::Display for WeylElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.dim() as u32;
        for (k, v) in &self.terms {
            let fiber: Vec<String> = k.fiber.iter().map(|e| e.to_string()).collect();
            let dz: Vec<String> = (0..d).filter(|i| k.forms >> i & 1 == 1).map(|i| i.to_string()).collect();
            let dzb: Vec<String> = (0..d).filter(|i| k.forms >> (d + i) & 1 == 1).map(|i| i.to_string()).collect();
            writeln!(f, "coeff({}) hbar^{} delta[{}] dz[{}] dzbar[{}]", fmt_q(v), k.hbar, fiber.join(","), dz.join(","), dzb.join(","))?;
        }
        Ok(())
    }
}

/// Parses the one-term-per-line text format; blank lines and `#` comments are skipped.
pub fn parse_element(text: &str, n: usize, cutoff: u32) -> Result<WeylElement, WeylError> {
    let mut e = WeylElement::zero(n, cutoff);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t = parse_term_line(line, n).map_err(|msg| WeylError::Parse { line: lineno + 1, msg })?;
        e = e.add(&WeylElement::monomial(n, cutoff, t.0, t.1, &t.2, &t.3, &t.4))?;
    }
    Ok(e)
}

type TermParts = (Q, u32, Vec<u32>, Vec<usize>, Vec<usize>);

fn bracket_list(s: &str, tag: &str) -> Result<Vec<usize>, String> {
    let body =
        s.strip_prefix(tag).and_then(|r| r.strip_prefix('[')).and_then(|r| r.strip_suffix(']')).ok_or_else(|| format!("expected {tag}[...], got `{s}`"))?;
    if body.trim().is_empty() {
        return Ok(Vec::new());
    }
    body.split(',').map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad index `{x}` in {tag}"))).collect()
}

fn parse_term_line(line: &str, n: usize) -> Result<TermParts, String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(format!("expected 5 fields, got {}", parts.len()));
    }
    let c = parts[0].strip_prefix("coeff(").and_then(|r| r.strip_suffix(')')).and_then(parse_q).ok_or_else(|| format!("bad coefficient `{}`", parts[0]))?;
    let h = parts[1].strip_prefix("hbar^").and_then(|r| r.parse::<u32>().ok()).ok_or_else(|| format!("bad hbar power `{}`", parts[1]))?;
    let fiber: Vec<u32> = bracket_list(parts[2], "delta")?.into_iter().map(|x| x as u32).collect();
    if fiber.len() != 2 * n {
        return Err(format!("delta exponent vector has length {}, expected {}", fiber.len(), 2 * n));
    }
    let dz = bracket_list(parts[3], "dz")?;
    let dzb = bracket_list(parts[4], "dzbar")?;
    if dz.iter().chain(dzb.iter()).any(|&i| i >= 2 * n) {
        return Err(format!("form index out of range 0..{}", 2 * n));
    }
    Ok((c, h, fiber, dz, dzb))
}

/// The constant symplectic form on the fiber and its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct Symplectic {
    pub omega: Vec<Vec<Q>>,
    pub omega_inv: Vec<Vec<Q>>,
}

impl Symplectic {
    /// Darboux form with `omega_{2k,2k+1} = 1`.
    pub fn standard(n: usize) -> Self {
        let d = 2 * n;
        let mut omega = vec![vec![Q::zero(); d]; d];
        for k in 0..n {
            omega[2 * k][2 * k + 1] = q(1);
            omega[2 * k + 1][2 * k] = q(-1);
        }
        let omega_inv = invert(&omega).expect("standard form is invertible");
        Symplectic { omega, omega_inv }
    }
}

/// Operations that need the symplectic structure.
#[derive(Clone, Debug)]
pub struct WeylAlgebra {
    pub n: usize,
    pub form: Symplectic,
    pairs: Vec<(usize, usize, Q)>,
}

impl WeylAlgebra {
    pub fn new(n: usize) -> Self {
        Self::with_form(Symplectic::standard(n))
    }

    pub fn with_form(form: Symplectic) -> Self {
        let d = form.omega.len();
        let mut pairs = Vec::new();
        for i in 0..d {
            for j in 0..d {
                if !form.omega_inv[i][j].is_zero() {
                    pairs.push((i, j, form.omega_inv[i][j].clone()));
                }
            }
        }
        WeylAlgebra { n: d / 2, form, pairs }
    }

    /// Quantum product with every term kept up to `cutoff`.
    fn product_at(&self, a: &WeylElement, b: &WeylElement, cutoff: u32) -> WeylElement {
        let mut out = WeylElement::zero(a.n, cutoff);
        for (ka, va) in &a.terms {
            for (kb, vb) in &b.terms {
                if ka.weight() + kb.weight() > cutoff {
                    continue;
                }
                let Some(sign) = wedge_sign(ka.forms, kb.forms) else { continue };
                let forms = ka.forms | kb.forms;
                let base = if sign { -(va * vb) } else { va * vb };
                // T_k holds the k-fold contraction of the two fiber monomials.
                let mut level: BTreeMap<(Vec<u32>, Vec<u32>), Q> = BTreeMap::new();
                level.insert((ka.fiber.clone(), kb.fiber.clone()), Q::one());
                let mut k = 0u32;
                while !level.is_empty() {
                    let kfact = crate::rational::factorial(k);
                    for ((fa, fb), c) in &level {
                        let fiber: Vec<u32> = fa.iter().zip(fb).map(|(x, y)| x + y).collect();
                        out.add_term(Key { hbar: ka.hbar + kb.hbar + k, fiber, forms }, &base * c / &kfact);
                    }
                    let mut next: BTreeMap<(Vec<u32>, Vec<u32>), Q> = BTreeMap::new();
                    for ((fa, fb), c) in &level {
                        for (i, j, w) in &self.pairs {
                            if fa[*i] == 0 || fb[*j] == 0 {
                                continue;
                            }
                            let mut fa2 = fa.clone();
                            let mut fb2 = fb.clone();
                            let m = c * w * q(fa[*i] as i64) * q(fb[*j] as i64);
                            fa2[*i] -= 1;
                            fb2[*j] -= 1;
                            let e = next.entry((fa2, fb2)).or_insert_with(Q::zero);
                            *e += m;
                        }
                    }
                    next.retain(|_, v| !v.is_zero());
                    level = next;
                    k += 1;
                }
            }
        }
        out
    }

    pub fn product(&self, a: &WeylElement, b: &WeylElement) -> Result<WeylElement, WeylError> {
        a.check(b)?;
        Ok(self.product_at(a, b, a.cutoff))
    }

    fn bracket_at(&self, a: &WeylElement, b: &WeylElement, cutoff: u32) -> WeylElement {
        let (a0, a1) = a.split_parity();
        let (b0, b1) = b.split_parity();
        let mut out = WeylElement::zero(a.n, cutoff);
        for (x, px) in [(&a0, false), (&a1, true)] {
            for (y, py) in [(&b0, false), (&b1, true)] {
                if x.is_zero() || y.is_zero() {
                    continue;
                }
                let xy = self.product_at(x, y, cutoff);
                let yx = self.product_at(y, x, cutoff);
                let s = if px && py { q(1) } else { q(-1) };
                for (k, v) in xy.terms.into_iter().chain(yx.scale(&s).terms) {
                    out.add_term(k, v);
                }
            }
        }
        out
    }

    /// Graded commutator `a∘b - (-1)^{|a||b|} b∘a`, extended bilinearly over parity components.
    pub fn bracket(&self, a: &WeylElement, b: &WeylElement) -> Result<WeylElement, WeylError> {
        a.check(b)?;
        Ok(self.bracket_at(a, b, a.cutoff))
    }

    /// `(1/hbar) [a, b]`, computed two weight units past the cutoff so nothing is lost.
    pub fn hbar_bracket(&self, a: &WeylElement, b: &WeylElement) -> Result<WeylElement, WeylError> {
        a.check(b)?;
        let raw = self.bracket_at(a, b, a.cutoff + 2);
        Ok(raw.div_hbar()?.with_cutoff(a.cutoff))
    }

    /// `(1/hbar) a∘b`.
    pub fn hbar_product(&self, a: &WeylElement, b: &WeylElement) -> Result<WeylElement, WeylError> {
        a.check(b)?;
        let raw = self.product_at(a, b, a.cutoff + 2);
        Ok(raw.div_hbar()?.with_cutoff(a.cutoff))
    }
}

/// `delta(a) = dz^i ∧ ∂a/∂y^i`.
pub fn op_delta(a: &WeylElement) -> WeylElement {
    let d = a.dim();
    a.map_terms(a.cutoff, |k, v, out| {
        for i in 0..d {
            if k.fiber[i] == 0 {
                continue;
            }
            let Some(sign) = wedge_sign(1 << i, k.forms) else { continue };
            let mut k2 = k.clone();
            k2.fiber[i] -= 1;
            k2.forms |= 1 << i;
            let c = v * q(k.fiber[i] as i64);
            out.add_term(k2, if sign { -c } else { c });
        }
    })
}

/// Left contraction with `∂/∂z^i` on a form mask; `None` if `dz^i` is absent.
fn contract(forms: u32, i: u32) -> Option<(u32, bool)> {
    if forms >> i & 1 == 0 {
        return None;
    }
    let below = forms & ((1u32 << i) - 1);
    Some((forms & !(1 << i), below.count_ones() % 2 == 1))
}

/// `delta*(a) = y^i ι_{∂_{z^i}} a`.
pub fn op_delta_star(a: &WeylElement) -> WeylElement {
    let d = a.dim();
    a.map_terms(a.cutoff, |k, v, out| {
        for i in 0..d {
            let Some((forms, sign)) = contract(k.forms, i as u32) else { continue };
            let mut k2 = k.clone();
            k2.fiber[i] += 1;
            k2.forms = forms;
            out.add_term(k2, if sign { -v.clone() } else { v.clone() });
        }
    })
}

/// `delta^{-1} = delta*/(p+r)` on the component with `p` holomorphic form
/// degree and `r` fiber degree; zero when `p + r = 0`.
pub fn op_delta_inverse(a: &WeylElement) -> WeylElement {
    let d = a.dim();
    a.map_terms(a.cutoff, |k, v, out| {
        let pr = k.hol_degree() + k.fiber_degree();
        if pr == 0 {
            return;
        }
        let scale = frac(1, pr as i64);
        for i in 0..d {
            let Some((forms, sign)) = contract(k.forms, i as u32) else { continue };
            let mut k2 = k.clone();
            k2.fiber[i] += 1;
            k2.forms = forms;
            let c = v * &scale;
            out.add_term(k2, if sign { -c } else { c });
        }
    })
}

/// Projection onto terms with no fiber generators and no `dz`.
pub fn project_pi0(a: &WeylElement) -> WeylElement {
    a.filter(|k| k.fiber_degree() == 0 && k.hol_degree() == 0)
}

/// Curvature and optional connection potential at one fiber.
///
/// With a potential `H = Γ_{ijk} dz^i y^j y^k` (Γ totally symmetric) the
/// connection acts by `∇ = (1/hbar)[H, -]`, which anticommutes with `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionData {
    pub n: usize,
    pub curvature: WeylElement,
    pub potential: Option<WeylElement>,
}

impl ConnectionData {
    /// Checks the shape invariants and `delta(R) = 0`.
    pub fn new(curvature: WeylElement, potential: Option<WeylElement>) -> Result<Self, WeylError> {
        let n = curvature.n;
        for k in curvature.terms().keys() {
            if k.form_degree() != 2 || k.fiber_degree() != 2 || k.hbar != 0 {
                return Err(WeylError::CurvatureShape(format!("{k:?}")));
            }
        }
        if let Some(h) = &potential {
            if h.n != n {
                return Err(WeylError::DimensionMismatch(n, h.n));
            }
            for k in h.terms().keys() {
                if k.form_degree() != 1 || k.fiber_degree() != 2 || k.hbar != 0 {
                    return Err(WeylError::ConnectionShape(format!("{k:?}")));
                }
            }
        }
        let dr = op_delta(&curvature);
        if !dr.is_zero() {
            return Err(WeylError::CurvatureNotClosed(dr.len()));
        }
        Ok(ConnectionData { n, curvature, potential })
    }

    /// Builds `H` from a totally symmetric Γ and derives `R` as the
    /// `hbar^0` part of `(1/hbar) H∘H`.
    pub fn from_christoffel(alg: &WeylAlgebra, cutoff: u32, gamma: impl Fn(usize, usize, usize) -> Q) -> Result<Self, WeylError> {
        let n = alg.n;
        let d = 2 * n;
        let mut h = WeylElement::zero(n, cutoff);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let g = gamma(i, j, k);
                    if g.is_zero() {
                        continue;
                    }
                    let mut f = vec![0; d];
                    f[j] += 1;
                    f[k] += 1;
                    h = h.add(&WeylElement::monomial(n, cutoff, g, 0, &f, &[i], &[]))?;
                }
            }
        }
        let r = alg.hbar_product(&h, &h)?.mod_hbar();
        Self::new(r, Some(h))
    }

    pub fn with_cutoff(&self, cutoff: u32) -> Self {
        ConnectionData { n: self.n, curvature: self.curvature.with_cutoff(cutoff), potential: self.potential.as_ref().map(|h| h.with_cutoff(cutoff)) }
    }

    /// Text form: a `[curvature]` section and an optional `[connection]`
    /// section, each holding element lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[curvature]\n");
        s += &self.curvature.to_string();
        if let Some(h) = &self.potential {
            s += "[connection]\n";
            s += &h.to_string();
        }
        s
    }

    pub fn parse(text: &str, n: usize, cutoff: u32) -> Result<Self, WeylError> {
        let mut section = "";
        let mut curv = String::new();
        let mut conn = String::new();
        let mut saw_conn = false;
        for (lineno, line) in text.lines().enumerate() {
            let t = line.trim();
            match t {
                "[curvature]" => section = "curvature",
                "[connection]" => {
                    section = "connection";
                    saw_conn = true;
                }
                _ if t.is_empty() || t.starts_with('#') => {}
                _ => match section {
                    "curvature" => curv += &format!("{t}\n"),
                    "connection" => conn += &format!("{t}\n"),
                    _ => return Err(WeylError::Parse { line: lineno + 1, msg: "term outside a [curvature] or [connection] section".into() }),
                },
            }
        }
        // Parse at a generous cutoff so the shape check sees every term.
        let big = cutoff.max(4);
        let r = parse_element(&curv, n, big)?;
        let h = if saw_conn { Some(parse_element(&conn, n, big)?) } else { None };
        Ok(Self::new(r, h)?.with_cutoff(cutoff))
    }
}

impl WeylAlgebra {
    /// `∇a`; zero without a potential.
    pub fn covariant_derivative(&self, a: &WeylElement, conn: &ConnectionData) -> Result<WeylElement, WeylError> {
        if conn.n != a.n {
            return Err(WeylError::DimensionMismatch(a.n, conn.n));
        }
        match &conn.potential {
            None => Ok(WeylElement::zero(a.n, a.cutoff)),
            Some(h) => self.hbar_bracket(&h.with_cutoff(a.cutoff), a),
        }
    }

    /// Fixed-point solution of `I = delta^{-1}(R + ∇I + (1/hbar) I∘I)`.
    pub fn fedosov_solve(&self, conn: &ConnectionData, cutoff: u32) -> Result<WeylElement, WeylError> {
        if cutoff < 3 {
            return Err(WeylError::CutoffTooSmall(cutoff));
        }
        if !op_delta(&conn.curvature).is_zero() {
            return Err(WeylError::CurvatureNotClosed(op_delta(&conn.curvature).len()));
        }
        let conn = conn.with_cutoff(cutoff);
        let mut i = WeylElement::zero(self.n, cutoff);
        for _ in 0..=cutoff {
            let rhs = conn.curvature.add(&self.covariant_derivative(&i, &conn)?)?.add(&self.hbar_product(&i, &i)?)?;
            let next = op_delta_inverse(&rhs);
            if next == i {
                return Ok(i);
            }
            i = next;
        }
        Ok(i)
    }

    /// `A = delta I - R - ∇I - (1/hbar) I∘I` modulo hbar.
    ///
    /// `delta` lowers weight by one, so the top weight of `I` does not
    /// determine `A`; only weights below the cutoff are reported.
    pub fn flatness_residual(&self, i: &WeylElement, conn: &ConnectionData) -> Result<WeylElement, WeylError> {
        let conn = conn.with_cutoff(i.cutoff);
        let a = op_delta(i).sub(&conn.curvature)?.sub(&self.covariant_derivative(i, &conn)?)?.sub(&self.hbar_product(i, i)?)?;
        let top = i.cutoff;
        Ok(a.mod_hbar().filter(|k| k.weight() < top))
    }

    /// `D a = ∇a - delta a + (1/hbar)[I, a]`, reported below the cutoff weight
    /// for the same reason as [`Self::flatness_residual`].
    pub fn flat_differential(&self, a: &WeylElement, i: &WeylElement, conn: &ConnectionData) -> Result<WeylElement, WeylError> {
        let conn = conn.with_cutoff(a.cutoff);
        let top = a.cutoff;
        let d = self.covariant_derivative(a, &conn)?.sub(&op_delta(a))?.add(&self.hbar_bracket(&i.with_cutoff(a.cutoff), a)?)?;
        Ok(d.filter(|k| k.weight() < top))
    }

    /// `α = α0 + delta^{-1}(∇α + (1/hbar)[I, α])` by fixed-point iteration.
    pub fn flat_section_lift(&self, alpha0: &WeylElement, i: &WeylElement, conn: &ConnectionData, cutoff: u32) -> Result<WeylElement, WeylError> {
        if let Some((k, _)) = alpha0.terms().iter().find(|(k, _)| k.fiber_degree() != 0 || k.hol_degree() != 0) {
            return Err(WeylError::NotInPiZero(format!("{k:?}")));
        }
        let a0 = alpha0.with_cutoff(cutoff);
        let i = i.with_cutoff(cutoff);
        let conn = conn.with_cutoff(cutoff);
        let mut alpha = a0.clone();
        for _ in 0..=cutoff + 1 {
            let rhs = self.covariant_derivative(&alpha, &conn)?.add(&self.hbar_bracket(&i, &alpha)?)?;
            let next = a0.add(&op_delta_inverse(&rhs))?;
            if next == alpha {
                return Ok(alpha);
            }
            alpha = next;
        }
        Ok(alpha)
    }
}

/// Random elements for property checks.
pub mod random {
    use super::*;

    fn coeff<R: Rng>(rng: &mut R) -> Q {
        let mut num = rng.gen_range(-5i64..=5);
        if num == 0 {
            num = 1;
        }
        frac(num, rng.gen_range(1i64..=3))
    }

    fn fiber<R: Rng>(rng: &mut R, d: usize, deg: u32) -> Vec<u32> {
        let mut f = vec![0; d];
        for _ in 0..deg {
            f[rng.gen_range(0..d)] += 1;
        }
        f
    }

    /// Arbitrary element with `terms` random monomials below the cutoff.
    pub fn element<R: Rng>(rng: &mut R, n: usize, cutoff: u32, terms: usize) -> WeylElement {
        let d = 2 * n;
        let mut e = WeylElement::zero(n, cutoff);
        for _ in 0..terms {
            let w = rng.gen_range(0..=cutoff);
            let hbar = rng.gen_range(0..=w / 2);
            let f = fiber(rng, d, w - 2 * hbar);
            let forms: u32 = rng.gen_range(0..(1u32 << (2 * d))) & rng.gen::<u32>() & rng.gen::<u32>();
            e.add_term(Key { hbar, fiber: f, forms }, coeff(rng));
        }
        e
    }

    /// Element of fixed form parity.
    pub fn homogeneous<R: Rng>(rng: &mut R, n: usize, cutoff: u32, terms: usize, odd: bool) -> WeylElement {
        let e = element(rng, n, cutoff, terms * 2);
        e.filter(|k| (k.form_degree() % 2 == 1) == odd)
    }

    /// Element in the `(0,*,0)` component: only `dzbar` and hbar.
    pub fn pi0_element<R: Rng>(rng: &mut R, n: usize, cutoff: u32, terms: usize) -> WeylElement {
        let d = 2 * n;
        let mut e = WeylElement::zero(n, cutoff);
        for _ in 0..terms {
            let hbar = rng.gen_range(0..=cutoff / 2);
            let forms = (rng.gen_range(0..(1u32 << d))) << d;
            e.add_term(Key { hbar, fiber: vec![0; d], forms }, coeff(rng));
        }
        e
    }

    /// A random totally symmetric Γ with small integer entries.
    pub fn symmetric_christoffel<R: Rng>(rng: &mut R, n: usize, density: f64) -> BTreeMap<Vec<usize>, Q> {
        let d = 2 * n;
        let mut g = BTreeMap::new();
        for i in 0..d {
            for j in i..d {
                for k in j..d {
                    if rng.gen_bool(density) {
                        g.insert(vec![i, j, k], coeff(rng));
                    }
                }
            }
        }
        g
    }

    /// Looks up a symmetric table by sorted index.
    pub fn sym_lookup(table: &BTreeMap<Vec<usize>, Q>, i: usize, j: usize, k: usize) -> Q {
        let mut idx = vec![i, j, k];
        idx.sort_unstable();
        table.get(&idx).cloned().unwrap_or_else(Q::zero)
    }
}
