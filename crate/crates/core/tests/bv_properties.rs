use num_traits::Zero;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rwk_core::bv::*;
use rwk_core::rational::{frac, q, Q};

mod common;
use common::*;

#[test]
fn graph_sum_equals_exponential_expansion() {
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 1 + (seed as usize % 4);
        let s = random_space(&mut rng, dim);
        let p = random_kernel(&mut rng, &s, false);
        let i = random_functional(&mut rng, &s, &INTERACTION_SHAPES, 2, true);
        let trunc = FlowTruncation::new(3, 4).unwrap();
        let by_graphs = rg_flow_graphs(&p, &i, trunc).unwrap();
        let by_expansion = rg_flow(&p, &i, trunc).unwrap();
        assert_eq!(by_graphs, by_expansion, "seed {seed}");
    }
}

#[test]
fn graph_sum_reaches_three_loops() {
    let s = ToySpace::with_parities(&[false, true, true]);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = random_kernel(&mut rng, &s, false);
    let i = random_functional(&mut rng, &s, &[(0, 3), (0, 4), (1, 2)], 3, true);
    let trunc = FlowTruncation::new(3, 4).unwrap();
    let terms = rg_flow_graph_terms(&p, &i, trunc).unwrap();
    assert!(terms.iter().any(|t| rwk_core::graph::genus(&t.class.graph) == 3));
    let w = rg_flow(&p, &i, trunc).unwrap();
    assert!(w.terms().keys().any(|(h, _)| *h == 3), "no hbar^3 term in {w}");
    assert_eq!(rg_flow_graphs(&p, &i, trunc).unwrap(), w);
}

#[test]
fn zero_propagator_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = random_space(&mut rng, 3);
    let i = random_functional(&mut rng, &s, &INTERACTION_SHAPES, 2, true);
    let trunc = FlowTruncation::new(4, 8).unwrap();
    assert_eq!(rg_flow(&Kernel::zero(&s, false), &i, trunc).unwrap(), i);
    assert_eq!(rg_flow_graphs(&Kernel::zero(&s, false), &i, trunc).unwrap(), i);
}

#[test]
fn semigroup_for_random_splits() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let s = random_space(&mut rng, 2 + seed as usize % 3);
        let p1 = random_kernel(&mut rng, &s, false);
        let p2 = random_kernel(&mut rng, &s, false);
        let i = random_functional(&mut rng, &s, &[(0, 3), (1, 1), (1, 2)], 2, true);
        let trunc = FlowTruncation::new(3, 4).unwrap();
        let one_step = rg_flow(&p1.add(&p2).unwrap(), &i, trunc).unwrap();
        let two_steps = rg_flow(&p2, &rg_flow(&p1, &i, trunc).unwrap(), trunc).unwrap();
        assert_eq!(one_step, two_steps, "seed {seed}");
    }
}

#[test]
fn self_loop_vanishes_against_graded_antisymmetric_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let s = random_space(&mut rng, 4);
        let d = s.dim();
        let mut a = vec![vec![Q::zero(); d]; d];
        for x in 0..d {
            for y in x..d {
                let v = rq(&mut rng);
                let sign_sym = s.is_odd(x) && s.is_odd(y);
                if x == y && !s.is_odd(x) {
                    continue;
                }
                a[x][y] = v.clone();
                a[y][x] = if sign_sym { v } else { -v };
            }
        }
        let f = random_functional(&mut rng, &s, &[(0, 2), (0, 3), (0, 4)], 4, false);
        assert!(second_order_contract(&a, &f).is_zero());
    }
}

#[test]
fn cme_fixture_has_order_hbar_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s = ToySpace::with_parities(&[false, true, false, true]);
    let qf = random_field(&mut rng, &s);
    let k = random_kernel(&mut rng, &s, true);
    let i = random_functional(&mut rng, &s, &[(0, 3), (1, 1), (1, 2)], 3, true);
    let i0 = i.filter(|h, _| h == 0);
    let curving = qf.apply(&i0).add(&bv_bracket(&k, &i0, &i0).unwrap().scale(&frac(1, 2))).scale(&q(-1));
    let res = qme_residual(&qf, &i, &k, &curving).unwrap();
    assert!(res.terms().keys().all(|(h, _)| *h >= 1), "{res}");
    assert!(!res.is_zero());
}

#[test]
fn trivial_qme_solution() {
    let s = ToySpace::with_parities(&[false, true]);
    let k = Kernel::new(&s, vec![vec![q(0), q(1)], vec![q(1), q(0)]], true).unwrap();
    let i = Functional::monomial(&s, q(2), 0, &[(0, 3)]);
    let res = qme_residual(&VectorField::zero(&s), &i, &k, &Functional::zero(&s)).unwrap();
    assert!(res.is_zero());
}

#[test]
fn compatibility_with_differential_of_kernel() {
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
        assert_eq!(lhs, rhs, "seed {seed}");
    }
}

#[test]
fn pairing_gives_odd_kernel() {
    let s = ToySpace::new(&[("x", false), ("y", false), ("a", true), ("b", true)]);
    let w = vec![vec![q(0), q(0), q(1), q(0)], vec![q(0), q(0), q(0), q(2)], vec![q(-1), q(0), q(0), q(0)], vec![q(0), q(-2), q(0), q(0)]];
    let k = Kernel::from_pairing(&s, &w).unwrap();
    assert!(k.is_odd());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = random_functional(&mut rng, &s, &[(0, 2), (0, 3), (0, 4), (0, 5)], 6, false);
    assert!(bv_laplacian(&k, &bv_laplacian(&k, &f).unwrap()).unwrap().is_zero());
}

fn sign(b: bool) -> Q {
    if b {
        q(-1)
    } else {
        q(1)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn laplacian_squares_to_zero(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_space(&mut rng, 2 + (seed % 3) as usize);
        let k = random_kernel(&mut rng, &s, true);
        let f = random_functional(&mut rng, &s, &[(0, 0), (0, 2), (0, 3), (0, 4), (1, 5)], 3, false);
        prop_assert!(bv_laplacian(&k, &bv_laplacian(&k, &f).unwrap()).unwrap().is_zero());
        prop_assert!(bv_laplacian(&k, &Functional::constant(&s, q(3))).unwrap().is_zero());
    }

    #[test]
    fn bracket_symmetry_and_leibniz(seed in any::<u64>(), kernel_odd in any::<bool>(), pf in any::<bool>(), pg in any::<bool>(), ph in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_space(&mut rng, 3);
        let k = random_kernel(&mut rng, &s, kernel_odd);
        let pick = |rng: &mut ChaCha8Rng, odd: bool| {
            let f = random_functional(rng, &s, &[(0, 1), (0, 2), (0, 3)], 3, false);
            if odd { f.split_parity().1 } else { f.split_parity().0 }
        };
        let (f, g, h) = (pick(&mut rng, pf), pick(&mut rng, pg), pick(&mut rng, ph));
        let br = |a: &Functional, b: &Functional| bv_bracket(&k, a, b).unwrap();
        prop_assert_eq!(br(&f, &g), br(&g, &f).scale(&sign(pf && pg)));
        // {F, GH} = {F,G} H + (-1)^{(|F|+|K|)|G|} G {F,H}
        let s2 = sign((pf ^ kernel_odd) && pg);
        prop_assert_eq!(br(&f, &g.mul(&h)), br(&f, &g).mul(&h).add(&g.mul(&br(&f, &h)).scale(&s2)));
        prop_assert!(br(&f, &Functional::constant(&s, q(5))).is_zero());
    }
}
