//! Graph weights from vertex tensors.
//!
//! Each vertex of valency `k` carries a tensor `Φ_{ā; i_1..i_k}` symmetric in
//! the fiber indices. Edges contract fiber indices with `ω^{ij}`, oriented
//! from the lower to the higher vertex. The antiholomorphic slots `dz̄^ā` are
//! odd symbols; the weight is the coefficient of the top monomial
//! `dz̄^0 ⋯ dz̄^{2n-1}`, i.e. the `ε` contraction. Tails with an abstract label
//! `a` contribute an odd symbol `ψ_a^i`, and the top monomial then also
//! includes every `ψ_a^0 ⋯ ψ_a^{2n-1}` (Berezin integration).

use std::collections::{BTreeMap, HashMap};

use num_traits::{One, Zero};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::graph::{canonical_form, GraphError, StableGraph};
use crate::rational::{factorial, invert, parse_q, Q};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("no vertex tensor supplied for valency {0}")]
    MissingTensor(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("omega is not antisymmetric")]
    NotAntisymmetric,
    #[error("omega is singular")]
    Singular,
    #[error("omega_inv does not invert omega")]
    BadInverse,
    #[error("vertex tensor of valency {valency} is not symmetric at {at}; pass it through symmetrize_tensor or set \"symmetrize\": true")]
    NotSymmetric { valency: usize, at: String },
    #[error("valency {0} is below 3")]
    LowValency(usize),
    #[error("tail {0} is unlabeled and has no vector")]
    UnassignedTail(usize),
    #[error("too many odd generators ({0}, limit 64)")]
    TooManyGenerators(usize),
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Sparse tensor with one antiholomorphic index and `valency` fiber indices,
/// symmetric in the fiber indices. Keys store the fiber indices sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymTensor {
    valency: usize,
    entries: BTreeMap<(usize, Vec<usize>), Q>,
}

impl SymTensor {
    pub fn zero(valency: usize) -> Self {
        SymTensor { valency, entries: BTreeMap::new() }
    }

    pub fn valency(&self) -> usize {
        self.valency
    }

    /// Sets the value for every ordering of `idx`.
    pub fn set(&mut self, abar: usize, idx: &[usize], value: Q) {
        assert_eq!(idx.len(), self.valency);
        let mut key = idx.to_vec();
        key.sort_unstable();
        if value.is_zero() {
            self.entries.remove(&(abar, key));
        } else {
            self.entries.insert((abar, key), value);
        }
    }

    pub fn get(&self, abar: usize, idx: &[usize]) -> Q {
        let mut key = idx.to_vec();
        key.sort_unstable();
        self.entries.get(&(abar, key)).cloned().unwrap_or_else(Q::zero)
    }

    /// Nonzero entries as `((ā, sorted indices), value)`.
    pub fn entries(&self) -> impl Iterator<Item = (&(usize, Vec<usize>), &Q)> {
        self.entries.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Full symmetrization with `1/k!` normalization of a tensor given by
/// ordered components.
pub fn symmetrize_tensor(raw: &BTreeMap<(usize, Vec<usize>), Q>, valency: usize) -> SymTensor {
    let mut out = SymTensor::zero(valency);
    let kf = factorial(valency as u32);
    for ((abar, idx), v) in raw {
        assert_eq!(idx.len(), valency);
        let mut key = idx.clone();
        key.sort_unstable();
        let mut mult = Q::one();
        let mut i = 0;
        while i < key.len() {
            let j = (i..key.len()).find(|&j| key[j] != key[i]).unwrap_or(key.len());
            mult *= factorial((j - i) as u32);
            i = j;
        }
        let add = v * mult / &kf;
        let cur = out.get(*abar, &key);
        out.set(*abar, &key, cur + add);
    }
    out
}

/// Checks that ordered components are already symmetric; returns the first
/// offending key otherwise.
fn symmetric_view(raw: &BTreeMap<(usize, Vec<usize>), Q>, valency: usize) -> Result<SymTensor, String> {
    let mut out = SymTensor::zero(valency);
    for ((abar, idx), v) in raw {
        for perm in distinct_permutations(idx) {
            let other = raw.get(&(*abar, perm.clone())).cloned().unwrap_or_else(Q::zero);
            if &other != v {
                return Err(format!("abar={abar} idx={perm:?}"));
            }
        }
        out.set(*abar, idx, v.clone());
    }
    Ok(out)
}

/// Distinct orderings of a multiset, in lexicographic order.
pub fn distinct_permutations(items: &[usize]) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = items.to_vec();
    cur.sort_unstable();
    let mut out = vec![cur.clone()];
    while let Some(i) = (0..cur.len().saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) {
        let j = (i + 1..cur.len()).rev().find(|&j| cur[j] > cur[i]).unwrap();
        cur.swap(i, j);
        cur[i + 1..].reverse();
        out.push(cur.clone());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetData {
    pub n: usize,
    pub omega: Vec<Vec<Q>>,
    pub omega_inv: Vec<Vec<Q>>,
    pub tensors: BTreeMap<usize, SymTensor>,
}

#[derive(Deserialize)]
struct TargetJson {
    n: usize,
    omega: Vec<Vec<Value>>,
    #[serde(default)]
    omega_inv: Option<Vec<Vec<Value>>>,
    vertex_tensors: Vec<TensorJson>,
    #[serde(default)]
    symmetrize: bool,
}

#[derive(Deserialize)]
struct TensorJson {
    valency: usize,
    entries: Vec<EntryJson>,
}

#[derive(Deserialize)]
struct EntryJson {
    abar: usize,
    idx: Vec<usize>,
    value: Value,
}

/// Reads a rational from a JSON string (`"p/q"`, decimal) or number.
pub fn q_from_json(v: &Value) -> Option<Q> {
    match v {
        Value::String(s) => parse_q(s),
        Value::Number(n) => parse_q(&n.to_string()),
        _ => None,
    }
}

fn q_matrix(rows: &[Vec<Value>]) -> Result<Vec<Vec<Q>>, WeightError> {
    rows.iter().map(|r| r.iter().map(|v| q_from_json(v).ok_or_else(|| WeightError::Json(format!("bad rational {v}")))).collect()).collect()
}

impl TargetData {
    pub fn new(n: usize, omega: Vec<Vec<Q>>, tensors: BTreeMap<usize, SymTensor>) -> Result<Self, WeightError> {
        let d = 2 * n;
        if omega.len() != d || omega.iter().any(|r| r.len() != d) {
            return Err(WeightError::DimensionMismatch(format!("omega must be {d}x{d}")));
        }
        for i in 0..d {
            for j in 0..d {
                if omega[i][j] != -omega[j][i].clone() {
                    return Err(WeightError::NotAntisymmetric);
                }
            }
        }
        let omega_inv = invert(&omega).ok_or(WeightError::Singular)?;
        for (&k, t) in &tensors {
            if k < 3 {
                return Err(WeightError::LowValency(k));
            }
            if t.valency != k {
                return Err(WeightError::DimensionMismatch(format!("tensor stored under valency {k} has valency {}", t.valency)));
            }
            for ((abar, idx), _) in t.entries() {
                if *abar >= d || idx.iter().any(|&i| i >= d) {
                    return Err(WeightError::DimensionMismatch(format!("index out of range 0..{d} in valency-{k} tensor")));
                }
            }
        }
        Ok(TargetData { n, omega, omega_inv, tensors })
    }

    pub fn from_json(text: &str) -> Result<Self, WeightError> {
        let raw: TargetJson = serde_json::from_str(text).map_err(|e| WeightError::Json(e.to_string()))?;
        let omega = q_matrix(&raw.omega)?;
        let mut tensors = BTreeMap::new();
        for t in &raw.vertex_tensors {
            let mut comps: BTreeMap<(usize, Vec<usize>), Q> = BTreeMap::new();
            for e in &t.entries {
                if e.idx.len() != t.valency {
                    return Err(WeightError::DimensionMismatch(format!("entry {:?} in valency-{} tensor", e.idx, t.valency)));
                }
                let v = q_from_json(&e.value).ok_or_else(|| WeightError::Json(format!("bad rational {}", e.value)))?;
                *comps.entry((e.abar, e.idx.clone())).or_insert_with(Q::zero) += v;
            }
            let sym = if raw.symmetrize {
                symmetrize_tensor(&comps, t.valency)
            } else {
                symmetric_view(&comps, t.valency).map_err(|at| WeightError::NotSymmetric { valency: t.valency, at })?
            };
            tensors.insert(t.valency, sym);
        }
        let target = TargetData::new(raw.n, omega, tensors)?;
        if let Some(inv) = raw.omega_inv {
            if q_matrix(&inv)? != target.omega_inv {
                return Err(WeightError::BadInverse);
            }
        }
        Ok(target)
    }

    /// Copy with `ω` replaced by `λω` (so `ω^{-1}` becomes `λ^{-1}ω^{-1}`).
    pub fn scale_omega(&self, lambda: &Q) -> Result<Self, WeightError> {
        let omega = self.omega.iter().map(|r| r.iter().map(|x| x * lambda).collect()).collect();
        TargetData::new(self.n, omega, self.tensors.clone())
    }
}

/// How tails enter the weight.
#[derive(Clone, Debug, PartialEq)]
pub enum TailAssignment {
    /// Each tail's graph label `a ≥ 1` becomes the odd symbol `ψ_a`.
    Abstract,
    /// Each tail (by half-edge id) is contracted with a fiber vector.
    Vectors(BTreeMap<usize, Vec<Q>>),
}

enum Slot {
    Back(usize),
    Forward,
    LoopFirst,
    LoopSecond(usize),
    Tail(u32),
}

/// Parity of the odd content of each vertex.
fn vertex_parity(g: &StableGraph, abstract_tails: bool) -> Vec<bool> {
    (0..g.num_vertices()).map(|v| !abstract_tails || g.tails_at(v).len().is_multiple_of(2)).collect()
}

/// Weight of `g` in its given vertex order, without canonicalization.
/// Labels on tails are abstract symbols when `vectors` is `None`, and
/// otherwise index into `vectors`.
fn contract(g: &StableGraph, target: &TargetData, vectors: Option<&BTreeMap<u32, Vec<Q>>>) -> Result<Q, WeightError> {
    let d = 2 * target.n;
    let max_label = g.tails().iter().map(|&h| g.label(h)).max().unwrap_or(0) as usize;
    let generators = if vectors.is_some() { d } else { d * (1 + max_label) };
    if generators > 64 {
        return Err(WeightError::TooManyGenerators(generators));
    }
    for h in g.tails() {
        match vectors {
            None if g.label(h) == 0 => return Err(WeightError::UnassignedTail(h)),
            Some(vs) => {
                let x = vs.get(&g.label(h)).ok_or(WeightError::UnassignedTail(h))?;
                if x.len() != d {
                    return Err(WeightError::DimensionMismatch(format!("tail vector has length {}, expected {d}", x.len())));
                }
            }
            None => {}
        }
    }
    let psi_bit = |label: u32, i: usize| d + (label as usize - 1) * d + i;
    let mut top: u64 = if generators == 64 { u64::MAX } else { (1u64 << generators) - 1 };
    if vectors.is_none() {
        // Only labels that actually occur need to be saturated.
        for a in 1..=max_label as u32 {
            if !g.tails().iter().any(|&h| g.label(h) == a) {
                for i in 0..d {
                    top &= !(1u64 << psi_bit(a, i));
                }
            }
        }
    }

    let mut open: Vec<usize> = Vec::new();
    let mut states: HashMap<(Vec<u8>, u64), Q> = HashMap::new();
    states.insert((Vec::new(), 0), Q::one());
    for v in 0..g.num_vertices() {
        let halfs = g.half_edges_at(v);
        let k = halfs.len();
        let tensor = target.tensors.get(&k).ok_or(WeightError::MissingTensor(k))?;
        let slots: Vec<Slot> = halfs
            .iter()
            .map(|&h| {
                let p = g.partner(h);
                if p == h {
                    Slot::Tail(g.label(h))
                } else if g.vertex_of(p) < v {
                    Slot::Back(open.iter().position(|&o| o == p).expect("partner is open"))
                } else if g.vertex_of(p) > v {
                    Slot::Forward
                } else if h < p {
                    Slot::LoopFirst
                } else {
                    Slot::LoopSecond(halfs.iter().position(|&x| x == p).unwrap())
                }
            })
            .collect();
        // Odd symbols of this vertex: dz̄ first, then ψ's by (label, half-edge).
        let mut psi_order: Vec<usize> = (0..k).filter(|&s| matches!(slots[s], Slot::Tail(_))).collect();
        psi_order.sort_by_key(|&s| (g.label(halfs[s]), halfs[s]));
        let closed: Vec<bool> = (0..open.len()).map(|o| slots.iter().any(|s| matches!(s, Slot::Back(x) if *x == o))).collect();
        let forward: Vec<usize> = (0..k).filter(|&s| matches!(slots[s], Slot::Forward)).collect();

        let choices: Vec<(usize, Vec<usize>, Q)> =
            tensor.entries().flat_map(|((abar, idx), c)| distinct_permutations(idx).into_iter().map(move |p| (*abar, p, c.clone()))).collect();
        let mut next: HashMap<(Vec<u8>, u64), Q> = HashMap::new();
        for ((idx_open, mask), coeff) in &states {
            'choice: for (abar, assign, c) in &choices {
                for (s, slot) in slots.iter().enumerate() {
                    let i = assign[s];
                    let zero = match slot {
                        Slot::Back(o) => target.omega_inv[idx_open[*o] as usize][i].is_zero(),
                        Slot::LoopSecond(first) => target.omega_inv[assign[*first]][i].is_zero(),
                        Slot::Tail(label) => vectors.is_some_and(|vs| vs[label][i].is_zero()),
                        Slot::Forward | Slot::LoopFirst => false,
                    };
                    if zero {
                        continue 'choice;
                    }
                }
                let mut f = coeff * c;
                for (s, slot) in slots.iter().enumerate() {
                    let i = assign[s];
                    match slot {
                        Slot::Back(o) => f *= &target.omega_inv[idx_open[*o] as usize][i],
                        Slot::LoopSecond(first) => f *= &target.omega_inv[assign[*first]][i],
                        Slot::Tail(label) => {
                            if let Some(vs) = vectors {
                                f *= &vs[label][i];
                            }
                        }
                        Slot::Forward | Slot::LoopFirst => {}
                    }
                }
                let mut m = *mask;
                let mut bits = vec![*abar];
                if vectors.is_none() {
                    for &s in &psi_order {
                        if let Slot::Tail(label) = slots[s] {
                            bits.push(psi_bit(label, assign[s]));
                        }
                    }
                }
                for b in bits {
                    if m >> b & 1 == 1 {
                        continue 'choice;
                    }
                    if (m >> b >> 1).count_ones() % 2 == 1 {
                        f = -f;
                    }
                    m |= 1u64 << b;
                }
                let mut new_idx: Vec<u8> = idx_open.iter().zip(&closed).filter(|(_, c)| !**c).map(|(x, _)| *x).collect();
                new_idx.extend(forward.iter().map(|&s| assign[s] as u8));
                *next.entry((new_idx, m)).or_insert_with(Q::zero) += f;
            }
        }
        next.retain(|_, c| !c.is_zero());
        states = next;
        open = open.iter().zip(&closed).filter(|(_, c)| !**c).map(|(x, _)| *x).collect();
        open.extend(forward.iter().map(|&s| halfs[s]));
    }
    Ok(states.get(&(Vec::new(), top)).cloned().unwrap_or_else(Q::zero))
}

/// Tail vectors keyed by their label code.
type TailVectors = BTreeMap<u32, Vec<Q>>;

/// Encodes vector tails as labels (rank of the vector among the distinct
/// vectors, from 1) so that canonicalization sees them.
fn encode_tails(g: &StableGraph, tails: &TailAssignment) -> Result<(StableGraph, Option<TailVectors>), WeightError> {
    match tails {
        TailAssignment::Abstract => Ok((g.clone(), None)),
        TailAssignment::Vectors(map) => {
            let mut distinct: Vec<&Vec<Q>> = Vec::new();
            for h in g.tails() {
                let x = map.get(&h).ok_or(WeightError::UnassignedTail(h))?;
                if !distinct.contains(&x) {
                    distinct.push(x);
                }
            }
            distinct.sort();
            let labelled = g.clone().with_labels_by(|h| 1 + distinct.iter().position(|x| *x == &map[&h]).unwrap() as u32);
            let table = distinct.iter().enumerate().map(|(i, x)| (i as u32 + 1, (*x).clone())).collect();
            Ok((labelled, Some(table)))
        }
    }
}

/// Weight of the isomorphism class of `g`, computed on its canonical form.
pub fn rw_class(g: &StableGraph, target: &TargetData, tails: &TailAssignment) -> Result<Q, WeightError> {
    let (labelled, table) = encode_tails(g, tails)?;
    contract(&canonical_form(&labelled), target, table.as_ref())
}

/// Weight of `g` in its own vertex order and edge orientation.
pub fn rw_raw(g: &StableGraph, target: &TargetData, tails: &TailAssignment) -> Result<Q, WeightError> {
    let (labelled, table) = encode_tails(g, tails)?;
    contract(&labelled, target, table.as_ref())
}

/// Sign picked up by [`rw_raw`] when `g` is relabeled by `(vperm, hperm)`:
/// the Koszul sign of the odd vertices plus one sign per reversed edge.
pub fn relabel_sign(g: &StableGraph, vperm: &[usize], hperm: &[usize], abstract_tails: bool) -> i32 {
    let parity = vertex_parity(g, abstract_tails);
    let odd_new: Vec<usize> = (0..g.num_vertices()).filter(|&v| parity[v]).map(|v| vperm[v]).collect();
    let mut inversions = 0;
    for i in 0..odd_new.len() {
        for j in i + 1..odd_new.len() {
            if odd_new[i] > odd_new[j] {
                inversions += 1;
            }
        }
    }
    for (a, b) in g.edges() {
        let (u, w) = (g.vertex_of(a), g.vertex_of(b));
        let (lo, hi) = if u < w || (u == w && a < b) { (a, b) } else { (b, a) };
        let (nlo, nhi) = (vperm[g.vertex_of(lo)], vperm[g.vertex_of(hi)]);
        if nlo > nhi || (nlo == nhi && hperm[lo] > hperm[hi]) {
            inversions += 1;
        }
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Checks well-definedness under the relabeling `(vperm, hperm)`: the class
/// weight is unchanged and the raw weight changes exactly by
/// [`relabel_sign`].
pub fn relabel_invariance_check(g: &StableGraph, target: &TargetData, tails: &TailAssignment, vperm: &[usize], hperm: &[usize]) -> Result<bool, WeightError> {
    let h = g.relabel(vperm, hperm);
    let moved = match tails {
        TailAssignment::Abstract => TailAssignment::Abstract,
        TailAssignment::Vectors(map) => TailAssignment::Vectors(map.iter().map(|(k, x)| (hperm[*k], x.clone())).collect()),
    };
    let same_class = rw_class(g, target, tails)? == rw_class(&h, target, &moved)?;
    let sign = relabel_sign(g, vperm, hperm, matches!(tails, TailAssignment::Abstract));
    let raw_ok = rw_raw(&h, target, &moved)? == rw_raw(g, target, tails)? * Q::from_integer(sign.into());
    Ok(same_class && raw_ok)
}
