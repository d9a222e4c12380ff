//! Acceptance suite: one PASS/FAIL line per criterion, each with a time budget.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rwk_core::assemble::{assemble_partition, Number, SourceData};
use rwk_core::bv::*;
use rwk_core::graph::*;
use rwk_core::heat;
use rwk_core::rational::{frac, q, Q};
use rwk_core::weight::*;
use rwk_core::weyl::random::{element, pi0_element};
use rwk_core::weyl::*;

mod common;
use common::*;

fn weyl_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pending: [Vec<WeylElement>; 2] = [Vec::new(), Vec::new()];
    let (mut assoc, mut jacobi) = (0, 0);
    for k in 0..1000 {
        let n = 1 + k % 2;
        let a = element(&mut rng, n, 6, 5);
        assert!(op_delta(&op_delta(&a)).is_zero());
        assert!(op_delta_inverse(&op_delta_inverse(&a)).is_zero());
        let h = a.with_cutoff(7);
        let lhs = op_delta(&op_delta_inverse(&h)).add(&op_delta_inverse(&op_delta(&h))).unwrap().add(&project_pi0(&h)).unwrap();
        assert_eq!(lhs, h, "homotopy identity, element {k}");
        pending[n - 1].push(a);
        if pending[n - 1].len() < 3 {
            continue;
        }
        let triple = std::mem::take(&mut pending[n - 1]);
        let alg = WeylAlgebra::new(n);
        if (k / 2) % 2 == 0 {
            let [x, y, z] = [&triple[0], &triple[1], &triple[2]];
            let left = alg.product(&alg.product(x, y).unwrap(), z).unwrap();
            let right = alg.product(x, &alg.product(y, z).unwrap()).unwrap();
            assert_eq!(left, right, "associativity, element {k}");
            assoc += 1;
        } else {
            let parity: Vec<bool> = (0..3).map(|_| rng.gen_bool(0.5)).collect();
            let h: Vec<WeylElement> = triple.iter().zip(&parity).map(|(e, &p)| e.filter(|key| (key.form_degree() % 2 == 1) == p)).collect();
            let br = |x: &WeylElement, y: &WeylElement| alg.bracket(x, y).unwrap();
            let s = if parity[0] && parity[1] { q(-1) } else { q(1) };
            let lhs = br(&h[0], &br(&h[1], &h[2]));
            let rhs = br(&br(&h[0], &h[1]), &h[2]).add(&br(&h[1], &br(&h[0], &h[2])).scale(&s)).unwrap();
            assert_eq!(lhs, rhs, "Jacobi, element {k}");
            jacobi += 1;
        }
    }
    assert!(assoc >= 150 && jacobi >= 150, "{assoc} associativity and {jacobi} Jacobi triples");
}

fn fedosov() {
    let fixtures: Vec<_> = (0..30).map(|s| connection(s, 1, 9)).filter(|(_, c)| !c.curvature.is_zero()).take(3).collect();
    assert_eq!(fixtures.len(), 3);
    for (alg, conn) in fixtures {
        assert!(op_delta(&conn.curvature).is_zero(), "curvature is not delta-closed");
        let i = alg.fedosov_solve(&conn, 9).unwrap();
        let res = alg.flatness_residual(&i, &conn).unwrap();
        assert!(res.is_zero(), "residual below weight 9:\n{res}");
        assert!(op_delta_inverse(&i).is_zero());
        assert_eq!(i.weight_component(3), op_delta_inverse(&conn.curvature.with_cutoff(9)));
    }
}

/// Dense rank over the rationals.
fn rank(mut rows: Vec<Vec<Q>>) -> usize {
    let cols = rows.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][c].is_zero()) else { continue };
        rows.swap(r, p);
        let pivot = rows[r][c].clone();
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = &rows[i][c] / &pivot;
                let pr = rows[r].clone();
                for (x, y) in rows[i].iter_mut().zip(&pr) {
                    *x -= &f * y;
                }
            }
        }
        r += 1;
    }
    r
}

/// Monomials `hbar^k y^m dzbar^S` of weight `w` with `|m| > 0`.
fn sections_of_weight(n: usize, w: u32) -> Vec<Key> {
    let d = 2 * n;
    let mut out = Vec::new();
    for hbar in 0..=w / 2 {
        let deg = w - 2 * hbar;
        if deg == 0 {
            continue;
        }
        let mut fiber = vec![0u32; d];
        fiber[0] = deg;
        loop {
            for s in 0..(1u32 << d) {
                out.push(Key { hbar, fiber: fiber.clone(), forms: s << d });
            }
            // Next composition of `deg` into `d` parts.
            let Some(p) = (0..d - 1).rev().find(|&p| fiber[p] > 0) else { break };
            fiber[p] -= 1;
            let rest: u32 = fiber[p + 1..].iter().sum::<u32>() + 1;
            for x in &mut fiber[p + 1..] {
                *x = 0;
            }
            fiber[p + 1] = rest;
        }
    }
    out
}

fn flat_sections() {
    let (alg, conn) = connection(11, 1, 6);
    let i = alg.fedosov_solve(&conn, 6).unwrap();
    for seed in 0..10 {
        let a0 = pi0_element(&mut ChaCha8Rng::seed_from_u64(seed), 1, 6, 3);
        let alpha = alg.flat_section_lift(&a0, &i, &conn, 6).unwrap();
        assert_eq!(project_pi0(&alpha), a0.with_cutoff(6));
        assert!(alg.flat_differential(&alpha, &i, &conn).unwrap().mod_hbar().is_zero(), "seed {seed}");
    }
    // Injectivity per weight stage: if pi0(α) = 0 the lowest weight part of Dα
    // is -delta α_w, and delta has trivial kernel on these monomials.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for w in 1..=6u32 {
        let basis = sections_of_weight(1, w);
        let images: Vec<WeylElement> = basis
            .iter()
            .map(|k| {
                let mut e = WeylElement::zero(1, 7);
                e.add_term(k.clone(), q(1));
                op_delta(&e)
            })
            .collect();
        let keys: Vec<Key> = images.iter().flat_map(|e| e.terms().keys().cloned()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let rows = images.iter().map(|e| keys.iter().map(|k| e.terms().get(k).cloned().unwrap_or_else(Q::zero)).collect()).collect();
        assert_eq!(rank(rows), basis.len(), "delta not injective at weight {w}");
        for _ in 0..5 {
            let mut alpha = WeylElement::zero(1, 6);
            for k in &basis {
                if rng.gen_bool(0.5) {
                    alpha.add_term(k.clone(), frac(rng.gen_range(1..=4), rng.gen_range(1..=3)));
                }
            }
            if alpha.is_zero() {
                alpha.add_term(basis[0].clone(), q(1));
            }
            alpha = alpha.add(&element(&mut rng, 1, 6, 6).filter(|k| k.weight() > w && k.hol_degree() == 0 && k.fiber_degree() > 0)).unwrap();
            assert!(project_pi0(&alpha).is_zero());
            let d = alg.flat_differential(&alpha, &i, &conn).unwrap();
            assert_eq!(d.weight_component(w - 1), op_delta(&alpha.weight_component(w)).scale(&q(-1)));
            assert!(!d.is_zero());
        }
    }
}

fn graph_classification() {
    for n in 1..=4 {
        for b1 in 4..=7 {
            assert!(admissible_partition_graphs(n, b1).unwrap().is_empty());
        }
        for b1 in [2, 3] {
            let classes = admissible_partition_graphs(n, b1).unwrap();
            assert_eq!(classes.len(), 1, "n={n} b1={b1}");
            check_against_raw(&classes, &oracle::raw_admissible(n, b1));
        }
    }
    let cycles = admissible_partition_graphs(3, 1).unwrap();
    check_against_raw(&cycles, &oracle::raw_admissible(3, 1));
    let mut shapes: Vec<Vec<usize>> = cycles
        .iter()
        .map(|c| {
            let mut s: Vec<usize> = c.graph.components().iter().map(|x| x.len()).collect();
            s.sort_unstable_by(|a, b| b.cmp(a));
            s
        })
        .collect();
    shapes.sort();
    assert_eq!(shapes, vec![vec![2, 2, 2], vec![3, 3], vec![4, 2], vec![6]]);
    let theta = StableGraph::trivalent(2, &[(0, 1), (0, 1), (0, 1)]).unwrap();
    let one = admissible_partition_graphs(1, 0).unwrap();
    check_against_raw(&one, &oracle::raw_admissible(1, 0));
    assert_eq!(one.iter().map(|c| c.key.clone()).collect::<Vec<_>>(), vec![canonical_key(&theta)]);
    let two = admissible_partition_graphs(2, 0).unwrap();
    assert_eq!(two.len(), 3);
    check_against_raw(&two, &oracle::raw_admissible(2, 0));
    let two_thetas = StableGraph::trivalent(4, &[(0, 1), (0, 1), (0, 1), (2, 3), (2, 3), (2, 3)]).unwrap();
    assert!(two.iter().any(|c| c.key == canonical_key(&two_thetas)));
}

fn check_against_raw(classes: &[GraphClass], raw: &[StableGraph]) {
    for (i, a) in classes.iter().enumerate() {
        for b in &classes[i + 1..] {
            assert!(!oracle::isomorphic(&a.graph, &b.graph), "{} ~ {}", a.key, b.key);
        }
    }
    let mut hit = vec![false; classes.len()];
    for g in raw {
        let m: Vec<usize> = (0..classes.len()).filter(|&i| oracle::isomorphic(g, &classes[i].graph)).collect();
        assert_eq!(m.len(), 1, "raw graph {}", render_line(g));
        hit[m[0]] = true;
    }
    assert!(hit.iter().all(|&h| h), "class without raw witness");
}

fn automorphisms() {
    let theta = StableGraph::trivalent(2, &[(0, 1), (0, 1), (0, 1)]).unwrap();
    let k4 = StableGraph::trivalent(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
    for (g, expected) in [(&theta, 12), (&k4, 24)] {
        assert_eq!(automorphism_order(g).unwrap(), expected);
        assert_eq!(oracle::vertex_permutation_aut(g), expected);
        assert_eq!(oracle::half_edge_aut(g), expected);
    }
    let mut count = 0;
    for n in 1..=4 {
        for b1 in 0..=3 {
            for c in admissible_partition_graphs(n, b1).unwrap() {
                let g = &c.graph;
                assert_eq!(2 * g.num_edges() + g.num_tails(), 3 * g.num_vertices(), "{}", c.key);
                count += 1;
            }
        }
    }
    assert!(count >= 40, "{count}");
}

fn weight_system() {
    let mut loop_graphs = BTreeMap::new();
    for v in 1..=3usize {
        for total in (0..=3 * v as u32).step_by(2) {
            for degrees in sorted_compositions(v, total, 3) {
                let tails: Vec<u32> = degrees.iter().map(|d| 3 - d).collect();
                collect_classes(&vec![0; v], &degrees, &tails, true, false, &mut loop_graphs).unwrap();
            }
        }
    }
    loop_graphs.retain(|_, c| has_self_loop(&c.graph));
    assert!(loop_graphs.len() >= 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..5 {
        let target = random_target(seed, 1, &[3]);
        for c in loop_graphs.values() {
            let vecs = random_vectors(&mut rng, &c.graph, 2);
            assert!(rw_class(&c.graph, &target, &TailAssignment::Vectors(vecs)).unwrap().is_zero(), "{}", c.key);
            let labelled = c.graph.clone().with_labels_by(|h| 1 + (h % 3) as u32);
            assert!(rw_class(&labelled, &target, &TailAssignment::Abstract).unwrap().is_zero(), "{}", c.key);
        }
    }

    let t1 = random_target(3, 1, &[3]);
    let t2 = random_target(4, 2, &[3]);
    let theta = StableGraph::trivalent(2, &[(0, 1), (0, 1), (0, 1)]).unwrap();
    let k4 = StableGraph::trivalent(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
    let mut cases: Vec<(StableGraph, &TargetData)> = vec![(theta.clone(), &t1), (theta.clone(), &t2), (k4, &t2)];
    for b1 in 1..=3 {
        cases.push((admissible_partition_graphs(1, b1).unwrap()[0].graph.clone(), &t1));
    }
    for trial in 0..50 {
        let (g, target) = &cases[trial % cases.len()];
        let mut vperm: Vec<usize> = (0..g.num_vertices()).collect();
        let mut hperm: Vec<usize> = (0..g.num_half_edges()).collect();
        vperm.shuffle(&mut rng);
        hperm.shuffle(&mut rng);
        assert!(relabel_invariance_check(g, target, &TailAssignment::Abstract, &vperm, &hperm).unwrap(), "trial {trial}");
    }

    let target = random_target(5, 1, &[3]);
    for lambda in [frac(3, 2), q(-2), frac(-1, 5)] {
        let scaled = target.scale_omega(&lambda).unwrap();
        for c in enumerate_trivalent(4, 2, true).unwrap().into_iter().chain(enumerate_trivalent(2, 0, true).unwrap()) {
            let tails = TailAssignment::Vectors(random_vectors(&mut rng, &c.graph, 2));
            let factor = num_traits::pow(lambda.recip(), c.graph.num_edges());
            assert_eq!(rw_class(&c.graph, &scaled, &tails).unwrap(), rw_class(&c.graph, &target, &tails).unwrap() * factor);
        }
    }

    let mut t = SymTensor::zero(3);
    t.set(0, &[0, 0, 0], q(1));
    t.set(1, &[1, 1, 1], q(1));
    let target = TargetData::new(1, darboux(1), BTreeMap::from([(3, t)])).unwrap();
    let oracle = index_loop_oracle(&theta, &target, None);
    assert!(!oracle.is_zero());
    assert_eq!(rw_class(&theta, &target, &TailAssignment::Abstract).unwrap(), oracle);
    for seed in 0..5 {
        let target = random_target(60 + seed, 1, &[3]);
        assert_eq!(rw_class(&theta, &target, &TailAssignment::Abstract).unwrap(), index_loop_oracle(&theta, &target, None));
    }
}

fn bv_toy() {
    let trunc = FlowTruncation::new(3, 4).unwrap();
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_space(&mut rng, 1 + seed as usize % 4);
        let p = random_kernel(&mut rng, &s, false);
        let i = random_functional(&mut rng, &s, &INTERACTION_SHAPES, 2, true);
        assert_eq!(rg_flow_graphs(&p, &i, trunc).unwrap(), rg_flow(&p, &i, trunc).unwrap(), "expansion, seed {seed}");
    }
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let s = random_space(&mut rng, 2 + seed as usize % 3);
        let p1 = random_kernel(&mut rng, &s, false);
        let p2 = random_kernel(&mut rng, &s, false);
        let i = random_functional(&mut rng, &s, &[(0, 3), (1, 1), (1, 2)], 2, true);
        let one_step = rg_flow(&p1.add(&p2).unwrap(), &i, trunc).unwrap();
        let two_steps = rg_flow(&p2, &rg_flow(&p1, &i, trunc).unwrap(), trunc).unwrap();
        assert_eq!(one_step, two_steps, "semigroup, seed {seed}");
    }
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let s = random_space(&mut rng, 2 + seed as usize % 3);
        let k = random_kernel(&mut rng, &s, true);
        let f = random_functional(&mut rng, &s, &[(0, 0), (0, 2), (0, 3), (0, 4), (1, 5)], 3, false);
        assert!(bv_laplacian(&k, &bv_laplacian(&k, &f).unwrap()).unwrap().is_zero(), "laplacian, seed {seed}");
    }
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let s = random_space(&mut rng, 3 + seed as usize % 2);
        let qf = random_field(&mut rng, &s);
        let p = random_kernel(&mut rng, &s, false);
        let k_l = random_kernel(&mut rng, &s, true);
        let k_eps = k_l.add(&differential_of_kernel(&qf, &p).unwrap()).unwrap();
        let x = random_functional(&mut rng, &s, &[(0, 1), (0, 2), (0, 3), (0, 4), (1, 2)], 3, false);
        let op = |k: &Kernel, f: &Functional| qf.apply(f).add(&bv_laplacian(k, f).unwrap().shift_hbar(1));
        let lhs = op(&k_l, &exp_hbar_kernel(&p, &x).unwrap());
        let rhs = exp_hbar_kernel(&p, &op(&k_eps, &x)).unwrap();
        assert_eq!(lhs, rhs, "compatibility, seed {seed}");
    }
}

fn heat_identities() {
    let r = heat::apply_heat_operator_leading(&heat::leading_kernel());
    assert!(r.is_empty(), "residual: {r}");
    assert_eq!(heat::apply_dstar_leading(&heat::leading_kernel()), heat::expected_dstar_leading());
    for c in heat::verify_all() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

fn numeric_constants() {
    let (a, b) = heat::boundary_limit(1e-3, 1.0).unwrap();
    assert!((a - PI.sqrt()).abs() < 1e-3, "{a}");
    assert!((b - PI.sqrt()).abs() < 1e-3, "{b}");
    let s = heat::fiber_sphere_integral();
    assert!((s - 1.0).abs() < 1e-6, "{s}");
}

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn end_to_end() {
    let target = TargetData::from_json(&fixture("target_n1.json")).unwrap();
    for name in ["source_b1_3.json", "source_b1_3_torsion.json"] {
        let source = SourceData::from_json(&fixture(name)).unwrap();
        let report = assemble_partition(&target, &source).unwrap();
        let classes = admissible_partition_graphs(1, 3).unwrap();
        assert_eq!(classes.len(), 1);
        let g = &classes[0].graph;
        let b = index_loop_oracle(g, &target, None);
        let aut = oracle::half_edge_aut(g) as i64;
        let triple = source.harmonic_intersections.clone().unwrap();
        let expected = b * num_traits::pow(triple, g.num_vertices()) / q(aut) * q(source.torsion_count as i64);
        assert_eq!(report.total, Number::Exact(expected), "{name}");
    }
    let source = SourceData::from_json(&fixture("source_b1_4.json")).unwrap();
    assert_eq!(assemble_partition(&target, &source).unwrap().total, Number::Exact(q(0)));
    for b1 in 4..=8 {
        let text = format!(r#"{{"b1": {b1}, "torsion_count": 3, "analytic_weights": {{"x": "5/2"}}, "harmonic_intersections": "7"}}"#);
        let source = SourceData::from_json(&text).unwrap();
        assert_eq!(assemble_partition(&target, &source).unwrap().total, Number::Exact(q(0)));
    }
}

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn()); 10] = [
        ("Weyl algebra identities on 1000 random elements", 30, weyl_identities),
        ("Fedosov recursion flat up to weight 8", 60, fedosov),
        ("flat-section lift and injectivity", 30, flat_sections),
        ("admissible graph classification", 60, graph_classification),
        ("automorphism orders and trivalence", 10, automorphisms),
        ("weight system", 30, weight_system),
        ("RG/BV toy suite", 120, bv_toy),
        ("heat kernel identities", 10, heat_identities),
        ("numeric constants", 5, numeric_constants),
        ("end-to-end partition sum", 10, end_to_end),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let elapsed = start.elapsed();
        let verdict = match outcome {
            Err(e) => Err(panic_message(e.as_ref())),
            Ok(()) if elapsed > Duration::from_secs(*budget) => Err(format!("over the {budget} s budget")),
            Ok(()) => Ok(()),
        };
        match verdict {
            Ok(()) => println!("PASS {:>2} {name} ({:.2} s)", k + 1, elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({:.2} s): {msg}", k + 1, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
