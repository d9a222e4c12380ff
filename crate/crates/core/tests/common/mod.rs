//! Helpers and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwk_core::bv::*;
use rwk_core::graph::StableGraph;
use rwk_core::rational::{frac, q, Q};
use rwk_core::weight::{SymTensor, TargetData};
use rwk_core::weyl::random::{sym_lookup, symmetric_christoffel};
use rwk_core::weyl::{ConnectionData, WeylAlgebra};

pub fn rq(rng: &mut ChaCha8Rng) -> Q {
    frac(rng.gen_range(-3..=3), rng.gen_range(1..=3))
}

pub fn random_space(rng: &mut ChaCha8Rng, dim: usize) -> Arc<ToySpace> {
    let odd: Vec<bool> = (0..dim).map(|_| rng.gen_bool(0.4)).collect();
    ToySpace::with_parities(&odd)
}

pub fn random_kernel(rng: &mut ChaCha8Rng, s: &Arc<ToySpace>, odd: bool) -> Kernel {
    let d = s.dim();
    let mut m = vec![vec![Q::zero(); d]; d];
    for a in 0..d {
        for b in a..d {
            if (s.is_odd(a) ^ s.is_odd(b)) != odd || (a == b && s.is_odd(a)) {
                continue;
            }
            let v = rq(rng);
            m[a][b] = v.clone();
            m[b][a] = if s.is_odd(a) && s.is_odd(b) { -v } else { v };
        }
    }
    Kernel::new(s, m, odd).unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, s: &Arc<ToySpace>) -> VectorField {
    let d = s.dim();
    let m = (0..d).map(|a| (0..d).map(|b| if s.is_odd(a) != s.is_odd(b) { rq(rng) } else { Q::zero() }).collect()).collect();
    VectorField::new(s, m).unwrap()
}

/// Random functional with terms `ħ^h x^k` for `(h, k)` in `shapes`.
pub fn random_functional(rng: &mut ChaCha8Rng, s: &Arc<ToySpace>, shapes: &[(i32, u32)], terms_each: usize, even_only: bool) -> Functional {
    let mut f = Functional::zero(s);
    for &(h, k) in shapes {
        for _ in 0..terms_each {
            let factors: Vec<(usize, u32)> = (0..k).map(|_| (rng.gen_range(0..s.dim()), 1)).collect();
            let t = Functional::monomial(s, rq(rng), h, &factors);
            if even_only && !t.is_even() {
                continue;
            }
            f = f.add(&t);
        }
    }
    f
}

pub const INTERACTION_SHAPES: [(i32, u32); 6] = [(0, 3), (0, 4), (1, 1), (1, 2), (2, 0), (1, 3)];

pub fn darboux(n: usize) -> Vec<Vec<Q>> {
    let d = 2 * n;
    let mut w = vec![vec![q(0); d]; d];
    for k in 0..n {
        w[2 * k][2 * k + 1] = q(1);
        w[2 * k + 1][2 * k] = q(-1);
    }
    w
}

pub fn random_tensor(rng: &mut ChaCha8Rng, n: usize, valency: usize) -> SymTensor {
    let d = 2 * n;
    let mut t = SymTensor::zero(valency);
    let mut idx = vec![0usize; valency];
    loop {
        if idx.windows(2).all(|w| w[0] <= w[1]) {
            for abar in 0..d {
                if rng.gen_bool(0.6) {
                    t.set(abar, &idx, frac(rng.gen_range(-4..=4), rng.gen_range(1..=3)));
                }
            }
        }
        let Some(p) = (0..valency).find(|&p| idx[p] + 1 < d) else { break };
        idx[p] += 1;
        for x in &mut idx[..p] {
            *x = 0;
        }
    }
    t
}

pub fn random_target(seed: u64, n: usize, valencies: &[usize]) -> TargetData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = valencies.iter().map(|&k| (k, random_tensor(&mut rng, n, k))).collect();
    TargetData::new(n, darboux(n), tensors).unwrap()
}

/// Sign of the permutation sorting `seq`, or `None` on a repeated entry.
pub fn sort_sign(seq: &[usize]) -> Option<i64> {
    let mut s = 1;
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            if seq[i] == seq[j] {
                return None;
            }
            if seq[i] > seq[j] {
                s = -s;
            }
        }
    }
    Some(s)
}

/// Sum over every antiholomorphic index per vertex and fiber index per
/// half-edge, in the graph's own vertex order.
pub fn index_loop_oracle(g: &StableGraph, target: &TargetData, vectors: Option<&BTreeMap<usize, Vec<Q>>>) -> Q {
    let d = 2 * target.n;
    let nh = g.num_half_edges();
    let nv = g.num_vertices();
    let labels: BTreeSet<u32> = g.tails().iter().map(|&h| g.label(h)).collect();
    let mut top: Vec<usize> = (0..d).collect();
    if vectors.is_none() {
        for &a in &labels {
            top.extend((0..d).map(|i| d * a as usize + i));
        }
    }
    let at: Vec<Vec<usize>> = (0..nv).map(|v| g.half_edges_at(v)).collect();
    let tails_at: Vec<Vec<usize>> = (0..nv)
        .map(|v| {
            let mut ts = g.tails_at(v);
            ts.sort_by_key(|&h| (g.label(h), h));
            ts
        })
        .collect();
    let edges: Vec<(usize, usize)> = g.edges().into_iter().map(|(a, b)| if (g.vertex_of(a), a) < (g.vertex_of(b), b) { (a, b) } else { (b, a) }).collect();
    let mut total = Q::zero();
    let mut fiber = vec![0usize; nh];
    loop {
        let mut edge_factor = Q::from_integer(1.into());
        for &(lo, hi) in &edges {
            edge_factor *= &target.omega_inv[fiber[lo]][fiber[hi]];
        }
        if !edge_factor.is_zero() {
            let mut abar = vec![0usize; nv];
            loop {
                let mut f = edge_factor.clone();
                let mut odd = Vec::new();
                for v in 0..nv {
                    let idx: Vec<usize> = at[v].iter().map(|&h| fiber[h]).collect();
                    f *= target.tensors[&idx.len()].get(abar[v], &idx);
                    odd.push(abar[v]);
                    for &h in &tails_at[v] {
                        match vectors {
                            Some(vs) => f *= &vs[&h][fiber[h]],
                            None => odd.push(d * g.label(h) as usize + fiber[h]),
                        }
                    }
                }
                let mut sorted = odd.clone();
                sorted.sort_unstable();
                if !f.is_zero() && sorted == top {
                    if let Some(s) = sort_sign(&odd) {
                        total += f * Q::from_integer(s.into());
                    }
                }
                let Some(p) = (0..nv).find(|&p| abar[p] + 1 < d) else { break };
                abar[p] += 1;
                for x in &mut abar[..p] {
                    *x = 0;
                }
            }
        }
        let Some(p) = (0..nh).find(|&p| fiber[p] + 1 < d) else { break };
        fiber[p] += 1;
        for x in &mut fiber[..p] {
            *x = 0;
        }
    }
    total
}

pub fn random_vectors(rng: &mut ChaCha8Rng, g: &StableGraph, d: usize) -> BTreeMap<usize, Vec<Q>> {
    g.tails().into_iter().map(|h| (h, (0..d).map(|_| q(rng.gen_range(-2..=2))).collect())).collect()
}

/// Hamiltonian connection from a random symmetric Γ.
pub fn connection(seed: u64, n: usize, cutoff: u32) -> (WeylAlgebra, ConnectionData) {
    let alg = WeylAlgebra::new(n);
    let table = symmetric_christoffel(&mut ChaCha8Rng::seed_from_u64(seed), n, 0.5);
    let conn = ConnectionData::from_christoffel(&alg, cutoff, |i, j, k| sym_lookup(&table, i, j, k)).unwrap();
    (alg, conn)
}
