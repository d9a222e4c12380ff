//! Finite-dimensional BV calculus and the RG flow on a toy space.
//!
//! Functionals are polynomials in graded generators with an `ħ` grading
//! (negative powers allowed for intermediate `I/ħ`). Derivatives act from the
//! left. A kernel `K` acts by `∂_K = ½ Σ K^{ab} ∂_a ∂_b`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::graph::{collect_classes, genus, GraphClass, GraphError};
use crate::rational::{factorial, fmt_q, frac, q, Q};
use crate::weight::q_from_json;

#[derive(Debug, Error)]
pub enum BvError {
    #[error("functionals live on different spaces")]
    SpaceMismatch,
    #[error("kernel is not graded-symmetric at ({0},{1})")]
    NotGradedSymmetric(usize, usize),
    #[error("kernel entry ({0},{1}) has the wrong parity")]
    KernelParity(usize, usize),
    #[error("Q is not parity-odd at ({0},{1})")]
    NotOdd(usize, usize),
    #[error("pairing is not graded-antisymmetric and odd at ({0},{1})")]
    BadPairing(usize, usize),
    #[error("pairing is singular")]
    SingularPairing,
    #[error("{0} must be even")]
    NotEven(&'static str),
    #[error("term {0} is not stable (needs 2g - 2 + k >= 1)")]
    NotInteraction(String),
    #[error("truncation too large: {0}")]
    CutoffTooLarge(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToySpace {
    names: Vec<String>,
    odd: Vec<bool>,
}

impl ToySpace {
    pub fn new(generators: &[(&str, bool)]) -> Arc<Self> {
        Arc::new(ToySpace { names: generators.iter().map(|g| g.0.to_string()).collect(), odd: generators.iter().map(|g| g.1).collect() })
    }

    /// Generators `x0, x1, ...` with the given parities.
    pub fn with_parities(odd: &[bool]) -> Arc<Self> {
        Arc::new(ToySpace { names: (0..odd.len()).map(|i| format!("x{i}")).collect(), odd: odd.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.odd.len()
    }

    pub fn is_odd(&self, a: usize) -> bool {
        self.odd[a]
    }

    pub fn name(&self, a: usize) -> &str {
        &self.names[a]
    }

    /// `copies + 1` blocks of the generators: block 0 is the space itself,
    /// block `v + 1` is vertex copy `v`.
    fn copies(&self, copies: usize) -> Arc<Self> {
        let mut names = self.names.clone();
        let mut odd = self.odd.clone();
        for v in 0..copies {
            names.extend(self.names.iter().map(|s| format!("{s}@{v}")));
            odd.extend(self.odd.iter().copied());
        }
        Arc::new(ToySpace { names, odd })
    }
}

/// Monomial as `(generator, exponent)` pairs sorted by generator.
pub type Mono = Vec<(u16, u16)>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Functional {
    space: Arc<ToySpace>,
    terms: BTreeMap<(i32, Mono), Q>,
}

fn mono_degree(m: &Mono) -> usize {
    m.iter().map(|&(_, e)| e as usize).sum()
}

/// Product of two sorted monomials with its Koszul sign, or `None` if an
/// odd generator repeats.
fn mono_mul(space: &ToySpace, a: &Mono, b: &Mono) -> Option<(Mono, bool)> {
    let mut neg = false;
    for &(vb, _) in b {
        if space.odd[vb as usize] {
            let passed = a.iter().filter(|&&(va, _)| va > vb && space.odd[va as usize]).count();
            if a.iter().any(|&(va, _)| va == vb) {
                return None;
            }
            neg ^= passed % 2 == 1;
        }
    }
    let mut out: Mono = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j].0 < a[i].0 {
            out.push(b[j]);
            j += 1;
        } else {
            out.push((a[i].0, a[i].1 + b[j].1));
            i += 1;
            j += 1;
        }
    }
    Some((out, neg))
}

impl Functional {
    pub fn zero(space: &Arc<ToySpace>) -> Self {
        Functional { space: space.clone(), terms: BTreeMap::new() }
    }

    pub fn constant(space: &Arc<ToySpace>, c: Q) -> Self {
        Self::monomial(space, c, 0, &[])
    }

    pub fn one(space: &Arc<ToySpace>) -> Self {
        Self::constant(space, Q::one())
    }

    /// `c ħ^hbar Π x_a^e` with the factors multiplied in the order given.
    pub fn monomial(space: &Arc<ToySpace>, c: Q, hbar: i32, factors: &[(usize, u32)]) -> Self {
        let mut out = Functional::zero(space);
        out.add_term(hbar, Vec::new(), c);
        for &(a, e) in factors {
            for _ in 0..e {
                out = out.mul(&Self::generator(space, a));
            }
        }
        out
    }

    pub fn generator(space: &Arc<ToySpace>, a: usize) -> Self {
        let mut out = Functional::zero(space);
        out.add_term(0, vec![(a as u16, 1)], Q::one());
        out
    }

    pub fn space(&self) -> &Arc<ToySpace> {
        &self.space
    }

    pub fn terms(&self) -> &BTreeMap<(i32, Mono), Q> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, hbar: i32, mono: Mono, c: Q) {
        if c.is_zero() {
            return;
        }
        let key = (hbar, mono);
        let e = self.terms.entry(key.clone()).or_insert_with(Q::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&key);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for ((h, m), c) in &other.terms {
            out.add_term(*h, m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&q(-1)))
    }

    pub fn scale(&self, c: &Q) -> Self {
        let mut out = Functional::zero(&self.space);
        if c.is_zero() {
            return out;
        }
        out.terms = self.terms.iter().map(|(k, v)| (k.clone(), v * c)).collect();
        out
    }

    /// Multiplies by `ħ^k`.
    pub fn shift_hbar(&self, k: i32) -> Self {
        Functional { space: self.space.clone(), terms: self.terms.iter().map(|((h, m), c)| ((h + k, m.clone()), c.clone())).collect() }
    }

    pub fn filter(&self, keep: impl Fn(i32, &Mono) -> bool) -> Self {
        Functional { space: self.space.clone(), terms: self.terms.iter().filter(|((h, m), _)| keep(*h, m)).map(|(k, v)| (k.clone(), v.clone())).collect() }
    }

    /// Part of `ħ`-power `h` and polynomial degree `k`, with `ħ` stripped.
    pub fn component(&self, h: i32, k: usize) -> Self {
        let mut out = Functional::zero(&self.space);
        for ((hh, m), c) in &self.terms {
            if *hh == h && mono_degree(m) == k {
                out.add_term(0, m.clone(), c.clone());
            }
        }
        out
    }

    pub fn term_parity(&self, m: &Mono) -> bool {
        m.iter().filter(|&&(a, e)| self.space.odd[a as usize] && e % 2 == 1).count() % 2 == 1
    }

    /// Splits into (even part, odd part).
    pub fn split_parity(&self) -> (Self, Self) {
        (self.filter(|_, m| !self.term_parity(m)), self.filter(|_, m| self.term_parity(m)))
    }

    pub fn is_even(&self) -> bool {
        self.terms.keys().all(|(_, m)| !self.term_parity(m))
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.mul_truncated(other, |_, _| true)
    }

    /// Product keeping only terms accepted by `keep(hbar, degree)`.
    pub fn mul_truncated(&self, other: &Self, keep: impl Fn(i32, usize) -> bool) -> Self {
        let mut out = Functional::zero(&self.space);
        for ((h1, m1), c1) in &self.terms {
            for ((h2, m2), c2) in &other.terms {
                let h = h1 + h2;
                if !keep(h, mono_degree(m1) + mono_degree(m2)) {
                    continue;
                }
                if let Some((m, neg)) = mono_mul(&self.space, m1, m2) {
                    let c = c1 * c2;
                    out.add_term(h, m, if neg { -c } else { c });
                }
            }
        }
        out
    }

    /// Left derivative `∂/∂x_a`.
    pub fn derivative(&self, a: usize) -> Self {
        let mut out = Functional::zero(&self.space);
        let odd_a = self.space.odd[a];
        for ((h, m), c) in &self.terms {
            let Some(pos) = m.iter().position(|&(v, _)| v as usize == a) else { continue };
            let e = m[pos].1;
            let mut nm = m.clone();
            let mut coeff = c * Q::from_integer(e.into());
            if odd_a {
                let before = m[..pos].iter().filter(|&&(v, ee)| self.space.odd[v as usize] && ee % 2 == 1).count();
                if before % 2 == 1 {
                    coeff = -coeff;
                }
            }
            if e == 1 {
                nm.remove(pos);
            } else {
                nm[pos].1 -= 1;
            }
            out.add_term(*h, nm, coeff);
        }
        out
    }

    /// Renames generators by `map` (an algebra homomorphism into `target`).
    fn rename(&self, target: &Arc<ToySpace>, map: impl Fn(usize) -> usize) -> Self {
        let mut out = Functional::zero(target);
        for ((h, m), c) in &self.terms {
            let mut f = Functional::zero(target);
            f.add_term(*h, Vec::new(), c.clone());
            for &(a, e) in m {
                for _ in 0..e {
                    f = f.mul(&Functional::generator(target, map(a as usize)));
                }
            }
            out = out.add(&f);
        }
        out
    }

    fn check_space(&self, other: &Self) -> Result<(), BvError> {
        if self.space != other.space {
            return Err(BvError::SpaceMismatch);
        }
        Ok(())
    }

    pub fn fmt_term(&self, h: i32, m: &Mono, c: &Q) -> String {
        let mut s = fmt_q(c);
        if h != 0 {
            s += &format!(" hbar^{h}");
        }
        for &(a, e) in m {
            s += &format!(" {}", self.space.names[a as usize]);
            if e > 1 {
                s += &format!("^{e}");
            }
        }
        s
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms.iter().map(|((h, m), c)| self.fmt_term(*h, m, c)).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Graded-symmetric two-tensor `K^{ab} = (-1)^{|a||b|} K^{ba}` of a single parity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    space: Arc<ToySpace>,
    matrix: Vec<Vec<Q>>,
    odd: bool,
}

impl Kernel {
    pub fn new(space: &Arc<ToySpace>, matrix: Vec<Vec<Q>>, odd: bool) -> Result<Self, BvError> {
        let d = space.dim();
        if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
            return Err(BvError::DimensionMismatch(format!("kernel must be {d}x{d}")));
        }
        for a in 0..d {
            for b in 0..d {
                if matrix[a][b].is_zero() {
                    if !matrix[b][a].is_zero() {
                        return Err(BvError::NotGradedSymmetric(a, b));
                    }
                    continue;
                }
                if (space.odd[a] ^ space.odd[b]) != odd {
                    return Err(BvError::KernelParity(a, b));
                }
                let sign = if space.odd[a] && space.odd[b] { -matrix[b][a].clone() } else { matrix[b][a].clone() };
                if matrix[a][b] != sign {
                    return Err(BvError::NotGradedSymmetric(a, b));
                }
            }
        }
        Ok(Kernel { space: space.clone(), matrix, odd })
    }

    pub fn zero(space: &Arc<ToySpace>, odd: bool) -> Self {
        let d = space.dim();
        Kernel { space: space.clone(), matrix: vec![vec![Q::zero(); d]; d], odd }
    }

    /// BV kernel `K^{ab} = (-1)^{|a|} (ω^{-1})^{ab}` from an odd,
    /// graded-antisymmetric pairing `ω_{ab}`.
    pub fn from_pairing(space: &Arc<ToySpace>, pairing: &[Vec<Q>]) -> Result<Self, BvError> {
        let d = space.dim();
        if pairing.len() != d || pairing.iter().any(|r| r.len() != d) {
            return Err(BvError::DimensionMismatch(format!("pairing must be {d}x{d}")));
        }
        for a in 0..d {
            for b in 0..d {
                let graded = if space.odd[a] && space.odd[b] { pairing[b][a].clone() } else { -pairing[b][a].clone() };
                if pairing[a][b] != graded || (!pairing[a][b].is_zero() && space.odd[a] == space.odd[b]) {
                    return Err(BvError::BadPairing(a, b));
                }
            }
        }
        let inv = crate::rational::invert(pairing).ok_or(BvError::SingularPairing)?;
        let m = (0..d).map(|a| (0..d).map(|b| if space.odd[a] { -inv[a][b].clone() } else { inv[a][b].clone() }).collect()).collect();
        Kernel::new(space, m, true)
    }

    pub fn matrix(&self) -> &[Vec<Q>] {
        &self.matrix
    }

    pub fn is_odd(&self) -> bool {
        self.odd
    }

    pub fn add(&self, other: &Kernel) -> Result<Kernel, BvError> {
        let m = self.matrix.iter().zip(&other.matrix).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect();
        Kernel::new(&self.space, m, self.odd)
    }

    pub fn sub(&self, other: &Kernel) -> Result<Kernel, BvError> {
        let m = self.matrix.iter().zip(&other.matrix).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect()).collect();
        Kernel::new(&self.space, m, self.odd)
    }
}

/// `Σ M^{ab} ∂_a ∂_b F` for an arbitrary matrix (no symmetry required).
pub fn second_order_contract(m: &[Vec<Q>], f: &Functional) -> Functional {
    let d = f.space.dim();
    let mut out = Functional::zero(&f.space);
    for b in 0..d {
        if m.iter().all(|r| r[b].is_zero()) {
            continue;
        }
        let db = f.derivative(b);
        if db.is_zero() {
            continue;
        }
        for (a, row) in m.iter().enumerate() {
            if !row[b].is_zero() {
                out = out.add(&db.derivative(a).scale(&row[b]));
            }
        }
    }
    out
}

/// `∂_K F = ½ Σ K^{ab} ∂_a ∂_b F`.
pub fn kernel_contract(k: &Kernel, f: &Functional) -> Result<Functional, BvError> {
    if k.space != f.space {
        return Err(BvError::SpaceMismatch);
    }
    Ok(second_order_contract(&k.matrix, f).scale(&frac(1, 2)))
}

/// `Δ_K F`; identical to [`kernel_contract`], named for the odd-kernel use.
pub fn bv_laplacian(k: &Kernel, f: &Functional) -> Result<Functional, BvError> {
    kernel_contract(k, f)
}

/// `{F,G}_K = Δ(FG) - Δ(F)G - (-1)^{|F||K|} F Δ(G)`, split by the parity of `F`.
pub fn bv_bracket(k: &Kernel, f: &Functional, g: &Functional) -> Result<Functional, BvError> {
    f.check_space(g)?;
    let mut out = Functional::zero(&f.space);
    let (fe, fo) = f.split_parity();
    for (part, odd) in [(fe, false), (fo, true)] {
        if part.is_zero() {
            continue;
        }
        let mut s = bv_laplacian(k, &part.mul(g))?.sub(&bv_laplacian(k, &part)?.mul(g));
        let third = part.mul(&bv_laplacian(k, g)?);
        s = if odd && k.odd { s.add(&third) } else { s.sub(&third) };
        out = out.add(&s);
    }
    Ok(out)
}

/// Odd linear vector field `Q(x_a) = Σ_b q[a][b] x_b`, extended as a derivation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VectorField {
    space: Arc<ToySpace>,
    q: Vec<Vec<Q>>,
}

impl VectorField {
    pub fn new(space: &Arc<ToySpace>, q: Vec<Vec<Q>>) -> Result<Self, BvError> {
        let d = space.dim();
        if q.len() != d || q.iter().any(|r| r.len() != d) {
            return Err(BvError::DimensionMismatch(format!("Q must be {d}x{d}")));
        }
        for a in 0..d {
            for b in 0..d {
                if !q[a][b].is_zero() && space.odd[a] == space.odd[b] {
                    return Err(BvError::NotOdd(a, b));
                }
            }
        }
        Ok(VectorField { space: space.clone(), q })
    }

    pub fn zero(space: &Arc<ToySpace>) -> Self {
        let d = space.dim();
        VectorField { space: space.clone(), q: vec![vec![Q::zero(); d]; d] }
    }

    pub fn apply(&self, f: &Functional) -> Functional {
        let mut out = Functional::zero(&f.space);
        for (a, row) in self.q.iter().enumerate() {
            let da = f.derivative(a);
            if da.is_zero() {
                continue;
            }
            for (b, c) in row.iter().enumerate() {
                if !c.is_zero() {
                    out = out.add(&Functional::generator(&f.space, b).mul(&da).scale(c));
                }
            }
        }
        out
    }
}

/// The kernel `M` with `[Q, ∂_P] = ∂_M`, found by probing the commutator on
/// quadratic monomials.
pub fn differential_of_kernel(qf: &VectorField, p: &Kernel) -> Result<Kernel, BvError> {
    let space = &p.space;
    let d = space.dim();
    let mut m = vec![vec![Q::zero(); d]; d];
    for a in 0..d {
        for b in a..d {
            if a == b && space.odd[a] {
                continue;
            }
            let mono = Functional::generator(space, a).mul(&Functional::generator(space, b));
            let comm = qf.apply(&kernel_contract(p, &mono)?).sub(&kernel_contract(p, &qf.apply(&mono))?);
            let c = comm.terms.get(&(0, Vec::new())).cloned().unwrap_or_else(Q::zero);
            // ∂_M(x_a x_b) = M^{ba} for a != b, and M^{aa} for a == b.
            m[b][a] = c.clone();
            m[a][b] = if space.odd[a] && space.odd[b] { -c } else { c };
        }
    }
    Kernel::new(space, m, !p.odd)
}

/// `Q(I) + ½{I,I}_K + ħ Δ_K I + curving`.
pub fn qme_residual(qf: &VectorField, i: &Functional, k: &Kernel, curving: &Functional) -> Result<Functional, BvError> {
    i.check_space(curving)?;
    let br = bv_bracket(k, i, i)?.scale(&frac(1, 2));
    Ok(qf.apply(i).add(&br).add(&bv_laplacian(k, i)?.shift_hbar(1)).add(curving))
}

/// `e^{ħ∂_P}` on a functional (terminates because `∂_P` lowers degree).
pub fn exp_hbar_kernel(p: &Kernel, f: &Functional) -> Result<Functional, BvError> {
    let mut out = f.clone();
    let mut cur = f.clone();
    let mut j = 1;
    loop {
        cur = kernel_contract(p, &cur)?.shift_hbar(1).scale(&frac(1, j));
        if cur.is_zero() {
            return Ok(out);
        }
        out = out.add(&cur);
        j += 1;
    }
}

/// Output window of the RG flow: `ħ^g x^k` terms with `g <= max_hbar` and
/// `2g - 2 + k <= max_psi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowTruncation {
    pub max_hbar: i32,
    pub max_psi: i32,
}

impl FlowTruncation {
    pub const MAX_HBAR: i32 = 4;
    pub const MAX_PSI: i32 = 8;

    pub fn new(max_hbar: i32, max_psi: i32) -> Result<Self, BvError> {
        if !(0..=Self::MAX_HBAR).contains(&max_hbar) {
            return Err(BvError::CutoffTooLarge(format!("hbar cutoff {max_hbar} outside 0..={}", Self::MAX_HBAR)));
        }
        if !(1..=Self::MAX_PSI).contains(&max_psi) {
            return Err(BvError::CutoffTooLarge(format!("psi bound {max_psi} outside 1..={}", Self::MAX_PSI)));
        }
        Ok(FlowTruncation { max_hbar, max_psi })
    }

    fn keeps(&self, h: i32, k: usize) -> bool {
        h <= self.max_hbar && 2 * h - 2 + k as i32 <= self.max_psi
    }
}

fn check_interaction(i: &Functional) -> Result<(), BvError> {
    if !i.is_even() {
        return Err(BvError::NotEven("interaction"));
    }
    for ((h, m), c) in &i.terms {
        if *h < 0 || 2 * h - 2 + (mono_degree(m) as i32) < 1 {
            return Err(BvError::NotInteraction(i.fmt_term(*h, m, c)));
        }
    }
    Ok(())
}

/// `W(P, I) = ħ log(e^{ħ∂_P} e^{I/ħ})` by direct expansion.
///
/// With `ψ'(ħ^h x^k) = 2h + k`, `I/ħ` has `ψ' >= 1`, products add `ψ'` and
/// `ħ∂_P` preserves it, so truncating at `ψ' <= max_psi` is exact.
pub fn rg_flow(p: &Kernel, i: &Functional, trunc: FlowTruncation) -> Result<Functional, BvError> {
    if p.odd {
        return Err(BvError::NotEven("propagator"));
    }
    if p.space != i.space {
        return Err(BvError::SpaceMismatch);
    }
    check_interaction(i)?;
    let psi = trunc.max_psi;
    let keep = |h: i32, k: usize| 2 * h + k as i32 <= psi;
    let t = i.shift_hbar(-1);
    let mut y = Functional::one(&i.space);
    let mut power = Functional::one(&i.space);
    for m in 1..=psi {
        power = power.mul_truncated(&t, keep).scale(&frac(1, m as i64));
        y = y.add(&power);
    }
    let x = exp_hbar_kernel(p, &y)?.sub(&Functional::one(&i.space));
    let mut log = Functional::zero(&i.space);
    let mut xp = Functional::one(&i.space);
    for j in 1..=psi {
        xp = xp.mul_truncated(&x, keep);
        let sign = if j % 2 == 1 { 1 } else { -1 };
        log = log.add(&xp.scale(&frac(sign, j as i64)));
    }
    Ok(log.shift_hbar(1).filter(|h, m| trunc.keeps(h, mono_degree(m))))
}

/// One connected stable graph's contribution to the RG flow.
#[derive(Clone, Debug)]
pub struct GraphTerm {
    pub class: GraphClass,
    pub value: Functional,
}

/// Connected stable graphs whose vertices have types `(g, k)` from `types`
/// and whose total `ψ = Σ(2g_v - 2 + k_v)` and genus fit in `trunc`.
pub fn flow_graphs(types: &[(u32, u32)], trunc: FlowTruncation) -> Result<Vec<GraphClass>, BvError> {
    let psi_of = |&(g, k): &(u32, u32)| 2 * g as i32 - 2 + k as i32;
    let mut types: Vec<(u32, u32)> = types.iter().copied().filter(|t| psi_of(t) >= 1 && psi_of(t) <= trunc.max_psi).collect();
    types.sort_unstable();
    types.dedup();
    let mut out = BTreeMap::new();
    let mut stack: Vec<usize> = Vec::new();
    fn multisets(
        types: &[(u32, u32)],
        start: usize,
        budget: i32,
        stack: &mut Vec<usize>,
        trunc: FlowTruncation,
        out: &mut BTreeMap<String, GraphClass>,
    ) -> Result<(), BvError> {
        if !stack.is_empty() {
            emit(types, stack, trunc, out)?;
        }
        for t in start..types.len() {
            let (g, k) = types[t];
            let cost = 2 * g as i32 - 2 + k as i32;
            if cost <= budget {
                stack.push(t);
                multisets(types, t, budget - cost, stack, trunc, out)?;
                stack.pop();
            }
        }
        Ok(())
    }
    fn emit(types: &[(u32, u32)], stack: &[usize], trunc: FlowTruncation, out: &mut BTreeMap<String, GraphClass>) -> Result<(), BvError> {
        let v = stack.len();
        let genus: Vec<u32> = stack.iter().map(|&t| types[t].0).collect();
        let val: Vec<u32> = stack.iter().map(|&t| types[t].1).collect();
        let gsum: u32 = genus.iter().sum();
        let ksum: u32 = val.iter().sum();
        let mut tails = vec![0u32; v];
        loop {
            let tsum: u32 = tails.iter().sum();
            let runs_ok = (1..v).all(|i| stack[i] != stack[i - 1] || tails[i] <= tails[i - 1]);
            if runs_ok && (ksum - tsum).is_multiple_of(2) {
                let e = ((ksum - tsum) / 2) as i32;
                let g = e - v as i32 + 1 + gsum as i32;
                if e >= v as i32 - 1 && g <= trunc.max_hbar {
                    let degrees: Vec<u32> = val.iter().zip(&tails).map(|(k, t)| k - t).collect();
                    collect_classes(&genus, &degrees, &tails, true, true, out)?;
                }
            }
            let Some(p) = (0..v).find(|&p| tails[p] < val[p]) else { break };
            tails[p] += 1;
            for x in &mut tails[..p] {
                *x = 0;
            }
        }
        Ok(())
    }
    multisets(&types, 0, trunc.max_psi, &mut stack, trunc, &mut out)?;
    Ok(out.into_values().collect())
}

/// Evaluates `ħ^{g(γ)}/|Aut γ| · Π t_v! · [Π_edges P^{ab}∂^{(u)}_a∂^{(w)}_b] Π_v I_v(x^{(v)})`
/// with vertex copies merged back into `x` once all their edges are done.
pub fn graph_weight(p: &Kernel, i: &Functional, class: &GraphClass) -> Result<Functional, BvError> {
    let g = &class.graph;
    let nv = g.num_vertices();
    let d = i.space.dim();
    let ext = i.space.copies(nv);
    let copy = |v: usize, a: usize| (v + 1) * d + a;
    let adj = g.adjacency();
    let last_neighbor: Vec<usize> = (0..nv).map(|v| (0..nv).filter(|&w| adj[v][w] > 0).max().unwrap_or(v).max(v)).collect();
    let mut merged = vec![false; nv];
    let mut f = Functional::one(&ext);
    let mut tail_factor = Q::one();
    for v in 0..nv {
        let k = g.valency(v);
        let vertex = i.component(g.vertex_genus(v) as i32, k);
        f = f.mul(&vertex.rename(&ext, |a| copy(v, a)));
        tail_factor *= factorial(g.tails_at(v).len() as u32);
        for u in 0..=v {
            for _ in 0..adj[u][v] {
                let mut next = Functional::zero(&ext);
                for b in 0..d {
                    let db = f.derivative(copy(v, b));
                    if db.is_zero() {
                        continue;
                    }
                    for a in 0..d {
                        if !p.matrix[a][b].is_zero() {
                            next = next.add(&db.derivative(copy(u, a)).scale(&p.matrix[a][b]));
                        }
                    }
                }
                f = next;
            }
        }
        for u in 0..=v {
            if !merged[u] && last_neighbor[u] <= v {
                f = f.rename(&ext, |x| if x >= copy(u, 0) && x < copy(u, d) { x - (u + 1) * d } else { x });
                merged[u] = true;
            }
        }
        if f.is_zero() {
            break;
        }
    }
    let scale = tail_factor / Q::from_integer(class.aut.into());
    let hbar = genus(g) as i32;
    let mut out = Functional::zero(&i.space);
    for ((h, m), c) in &f.terms {
        out.add_term(h + hbar, m.clone(), c * &scale);
    }
    Ok(out)
}

/// Per-graph terms of the RG flow.
pub fn rg_flow_graph_terms(p: &Kernel, i: &Functional, trunc: FlowTruncation) -> Result<Vec<GraphTerm>, BvError> {
    if p.odd {
        return Err(BvError::NotEven("propagator"));
    }
    if p.space != i.space {
        return Err(BvError::SpaceMismatch);
    }
    check_interaction(i)?;
    let mut types: Vec<(u32, u32)> = i.terms.keys().map(|(h, m)| (*h as u32, mono_degree(m) as u32)).collect();
    types.sort_unstable();
    types.dedup();
    let classes = flow_graphs(&types, trunc)?;
    classes.into_par_iter().map(|class| Ok(GraphTerm { value: graph_weight(p, i, &class)?, class })).collect()
}

/// `W(P, I)` as a sum over connected stable graphs.
pub fn rg_flow_graphs(p: &Kernel, i: &Functional, trunc: FlowTruncation) -> Result<Functional, BvError> {
    let mut out = Functional::zero(&i.space);
    for t in rg_flow_graph_terms(p, i, trunc)? {
        out = out.add(&t.value);
    }
    Ok(out.filter(|h, m| trunc.keeps(h, mono_degree(m))))
}

// ---------------------------------------------------------------------------
// Fixtures

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorJson {
    name: String,
    parity: u8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TermJson {
    #[serde(default)]
    hbar: i32,
    /// `[[generator, exponent], ...]`, multiplied in the order given.
    mono: Vec<(usize, u32)>,
    coeff: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureJson {
    generators: Vec<GeneratorJson>,
    #[serde(default)]
    pairing: Option<Vec<Vec<Value>>>,
    propagator: Vec<Vec<Value>>,
    #[serde(default)]
    propagator_split: Option<Vec<Vec<Value>>>,
    #[serde(default)]
    bv_kernel: Option<Vec<Vec<Value>>>,
    #[serde(default)]
    q: Option<Vec<Vec<Value>>>,
    interaction: Vec<TermJson>,
    #[serde(default)]
    curving: Vec<TermJson>,
    #[serde(default = "default_psi")]
    max_psi: i32,
}

fn default_psi() -> i32 {
    4
}

/// Inputs for `rg check`.
#[derive(Clone, Debug)]
pub struct RgFixture {
    pub space: Arc<ToySpace>,
    pub propagator: Kernel,
    pub propagator_split: Option<Kernel>,
    pub bv_kernel: Option<Kernel>,
    pub q: Option<VectorField>,
    pub interaction: Functional,
    pub curving: Functional,
    pub max_psi: i32,
}

fn matrix(rows: &[Vec<Value>], d: usize, what: &str) -> Result<Vec<Vec<Q>>, BvError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(BvError::DimensionMismatch(format!("{what} must be {d}x{d}")));
    }
    rows.iter().map(|r| r.iter().map(|v| q_from_json(v).ok_or_else(|| BvError::Fixture(format!("bad rational {v} in {what}")))).collect()).collect()
}

fn functional(space: &Arc<ToySpace>, terms: &[TermJson]) -> Result<Functional, BvError> {
    let mut out = Functional::zero(space);
    for t in terms {
        if let Some(&(a, _)) = t.mono.iter().find(|(a, _)| *a >= space.dim()) {
            return Err(BvError::Fixture(format!("generator {a} out of range")));
        }
        let c = q_from_json(&t.coeff).ok_or_else(|| BvError::Fixture(format!("bad rational {}", t.coeff)))?;
        out = out.add(&Functional::monomial(space, c, t.hbar, &t.mono));
    }
    Ok(out)
}

impl RgFixture {
    pub fn from_json(text: &str) -> Result<Self, BvError> {
        let raw: FixtureJson = serde_json::from_str(text).map_err(|e| BvError::Fixture(e.to_string()))?;
        let gens: Vec<(&str, bool)> = raw.generators.iter().map(|g| (g.name.as_str(), g.parity % 2 == 1)).collect();
        let space = ToySpace::new(&gens);
        let d = space.dim();
        let propagator = Kernel::new(&space, matrix(&raw.propagator, d, "propagator")?, false)?;
        let propagator_split = raw.propagator_split.map(|m| matrix(&m, d, "propagator_split").and_then(|m| Kernel::new(&space, m, false))).transpose()?;
        let bv_kernel = match (raw.bv_kernel, raw.pairing) {
            (Some(k), _) => Some(Kernel::new(&space, matrix(&k, d, "bv_kernel")?, true)?),
            (None, Some(w)) => Some(Kernel::from_pairing(&space, &matrix(&w, d, "pairing")?)?),
            (None, None) => None,
        };
        let q = raw.q.map(|m| matrix(&m, d, "q").and_then(|m| VectorField::new(&space, m))).transpose()?;
        let interaction = functional(&space, &raw.interaction)?;
        let curving = functional(&space, &raw.curving)?;
        FlowTruncation::new(FlowTruncation::MAX_HBAR, raw.max_psi)?;
        Ok(RgFixture { space, propagator, propagator_split, bv_kernel, q, interaction, curving, max_psi: raw.max_psi })
    }
}

/// Residuals reported by `rg check`; the first three must vanish.
#[derive(Clone, Debug)]
pub struct RgReport {
    pub graph_classes: usize,
    pub graph_vs_expansion: Functional,
    pub semigroup: Option<Functional>,
    pub laplacian_squared: Option<Functional>,
    pub qme: Option<Functional>,
}

impl RgReport {
    pub fn consistent(&self) -> bool {
        self.graph_vs_expansion.is_zero()
            && self.semigroup.as_ref().is_none_or(Functional::is_zero)
            && self.laplacian_squared.as_ref().is_none_or(Functional::is_zero)
    }
}

pub fn rg_check(fx: &RgFixture, max_hbar: i32) -> Result<RgReport, BvError> {
    let trunc = FlowTruncation::new(max_hbar, fx.max_psi)?;
    let terms = rg_flow_graph_terms(&fx.propagator, &fx.interaction, trunc)?;
    let mut by_graphs = Functional::zero(&fx.space);
    for t in &terms {
        by_graphs = by_graphs.add(&t.value);
    }
    let by_graphs = by_graphs.filter(|h, m| trunc.keeps(h, mono_degree(m)));
    let by_expansion = rg_flow(&fx.propagator, &fx.interaction, trunc)?;
    let semigroup = match &fx.propagator_split {
        Some(p1) => {
            let p2 = fx.propagator.sub(p1)?;
            let two_step = rg_flow(&p2, &rg_flow(p1, &fx.interaction, trunc)?, trunc)?;
            Some(two_step.sub(&by_expansion))
        }
        None => None,
    };
    let laplacian_squared = match &fx.bv_kernel {
        Some(k) => Some(bv_laplacian(k, &bv_laplacian(k, &fx.interaction)?)?),
        None => None,
    };
    let qme = match (&fx.q, &fx.bv_kernel) {
        (Some(qf), Some(k)) => Some(qme_residual(qf, &fx.interaction, k, &fx.curving)?),
        _ => None,
    };
    Ok(RgReport { graph_classes: terms.len(), graph_vs_expansion: by_graphs.sub(&by_expansion), semigroup, laplacian_squared, qme })
}
