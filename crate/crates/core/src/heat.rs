//! Leading-order heat-kernel calculus in a flat chart of a 3-manifold.
//!
//! A term is `c · t^{a/2} · u^α · [G] · du^I · [Ω^i_j]` where `G` is the
//! Gaussian and `Ω` is an abstract antisymmetric curvature 2-form on the base.
//! The Gaussian is normalised so the flat kernel `t^{-3/2} G` solves
//! `(∂_t - ¼Δ) = 0`, i.e. `G = e^{-|u|²/t}` with `∂_i G = -(2u^i/t) G` and
//! `∂_t G = (|u|²/t²) G`. The overall constant `(4π)^{-3/2}` is dropped.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::{fmt_q, frac, q, Q};

#[derive(Debug, Error)]
pub enum HeatError {
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
}

/// Everything about a term except its coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Shape {
    /// Power of `t^{1/2}`.
    pub t_half: i32,
    pub u: [u32; 3],
    pub gauss: bool,
    /// Bit `i` set iff `du^i` is present; the wedge is in increasing order.
    pub du: u8,
    /// `Ω^i_j` with `i < j`.
    pub omega: Option<(u8, u8)>,
}

impl Shape {
    pub fn scalar() -> Self {
        Shape { t_half: 0, u: [0; 3], gauss: false, du: 0, omega: None }
    }

    /// `(p, r)`: polynomial degree in `t^{1/2}, u` and form degree in `du`.
    pub fn bidegree(&self) -> (i32, i32) {
        (self.t_half + self.u.iter().sum::<u32>() as i32, self.du.count_ones() as i32)
    }

    pub fn total_degree(&self) -> i32 {
        let (p, r) = self.bidegree();
        p + r
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TermSum {
    terms: BTreeMap<Shape, Q>,
}

fn omega_key(i: usize, j: usize) -> Option<(Shape, bool)> {
    (i != j).then(|| {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        (Shape { omega: Some((a as u8, b as u8)), ..Shape::scalar() }, i > j)
    })
}

impl TermSum {
    pub fn zero() -> Self {
        Self::default()
    }

    /// A single term, with `du` factors wedged in the order given and `Ω^i_j`
    /// as given (antisymmetry applied).
    pub fn term(c: Q, t_half: i32, u: [u32; 3], gauss: bool, du: &[usize], omega: Option<(usize, usize)>) -> Self {
        let mut s = TermSum::zero();
        s.add_term(Shape { t_half, u, gauss, du: 0, omega: None }, c);
        for &i in du {
            s = s.wedge_du(i);
        }
        if let Some((i, j)) = omega {
            s = s.mul_omega(i, j);
        }
        s
    }

    pub fn terms(&self) -> &BTreeMap<Shape, Q> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, shape: Shape, c: Q) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(shape).or_insert_with(Q::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&shape);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (s, c) in &other.terms {
            out.add_term(*s, c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&q(-1)))
    }

    pub fn scale(&self, c: &Q) -> Self {
        let mut out = TermSum::zero();
        for (s, v) in &self.terms {
            out.add_term(*s, v * c);
        }
        out
    }

    fn map_terms(&self, f: impl Fn(&Shape, &Q, &mut TermSum)) -> Self {
        let mut out = TermSum::zero();
        for (s, c) in &self.terms {
            f(s, c, &mut out);
        }
        out
    }

    /// Right multiplication by `du^i`.
    pub fn wedge_du(&self, i: usize) -> Self {
        let bit = 1u8 << i;
        self.map_terms(|s, c, out| {
            if s.du & bit == 0 {
                let after = (s.du & !((bit << 1) - 1)).count_ones();
                let c = if after % 2 == 1 { -c.clone() } else { c.clone() };
                out.add_term(Shape { du: s.du | bit, ..*s }, c);
            }
        })
    }

    /// Multiplication by `Ω^i_j`. Two curvature factors exceed the base form
    /// degree and vanish.
    pub fn mul_omega(&self, i: usize, j: usize) -> Self {
        let Some((key, neg)) = omega_key(i, j) else {
            return TermSum::zero();
        };
        self.map_terms(|s, c, out| {
            if s.omega.is_none() {
                out.add_term(Shape { omega: key.omega, ..*s }, if neg { -c.clone() } else { c.clone() });
            }
        })
    }

    /// Multiplication by `u^i`.
    pub fn mul_u(&self, i: usize) -> Self {
        self.map_terms(|s, c, out| {
            let mut u = s.u;
            u[i] += 1;
            out.add_term(Shape { u, ..*s }, c.clone());
        })
    }

    pub fn d_dt(&self) -> Self {
        self.map_terms(|s, c, out| {
            out.add_term(Shape { t_half: s.t_half - 2, ..*s }, c * frac(s.t_half as i64, 2));
            if s.gauss {
                for i in 0..3 {
                    let mut u = s.u;
                    u[i] += 2;
                    out.add_term(Shape { t_half: s.t_half - 4, u, ..*s }, c.clone());
                }
            }
        })
    }

    pub fn d_du(&self, i: usize) -> Self {
        self.map_terms(|s, c, out| {
            if s.u[i] > 0 {
                let mut u = s.u;
                u[i] -= 1;
                out.add_term(Shape { u, ..*s }, c * q(s.u[i] as i64));
            }
            if s.gauss {
                let mut u = s.u;
                u[i] += 1;
                out.add_term(Shape { t_half: s.t_half - 2, u, ..*s }, c * q(-2));
            }
        })
    }

    /// Contraction `ι(∂/∂u^i)` from the left.
    pub fn iota(&self, i: usize) -> Self {
        let bit = 1u8 << i;
        self.map_terms(|s, c, out| {
            if s.du & bit != 0 {
                let before = (s.du & (bit - 1)).count_ones();
                let c = if before % 2 == 1 { -c.clone() } else { c.clone() };
                out.add_term(Shape { du: s.du & !bit, ..*s }, c);
            }
        })
    }

    /// Keeps the terms with `p + r >= 0`; the rest are returned as violations.
    pub fn vanishing_filter(&self) -> FilterOutcome {
        let mut kept = TermSum::zero();
        let mut violations = TermSum::zero();
        for (s, c) in &self.terms {
            let (p, r) = s.bidegree();
            if p + r < 0 {
                violations.add_term(*s, c.clone());
            } else {
                kept.add_term(*s, c.clone());
            }
        }
        FilterOutcome { kept, violations }
    }

    /// `Some(k)` if every term has total degree `k`.
    pub fn homogeneous_degree(&self) -> Option<i32> {
        let mut it = self.terms.keys().map(Shape::total_degree);
        let first = it.next()?;
        it.all(|d| d == first).then_some(first)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: TermSum,
    pub violations: TermSum,
}

impl fmt::Display for TermSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, (s, c)) in self.terms.iter().enumerate() {
            let sep = if n == 0 {
                if c.is_negative() {
                    "-"
                } else {
                    ""
                }
            } else if c.is_negative() {
                " - "
            } else {
                " + "
            };
            let mut parts = vec![fmt_q(&c.abs())];
            if s.t_half != 0 {
                parts.push(format!("t^({}/2)", s.t_half));
            }
            for (i, &e) in s.u.iter().enumerate() {
                match e {
                    0 => {}
                    1 => parts.push(format!("u{i}")),
                    _ => parts.push(format!("u{i}^{e}")),
                }
            }
            if s.gauss {
                parts.push("G".into());
            }
            if let Some((i, j)) = s.omega {
                parts.push(format!("Om{i}{j}"));
            }
            let du: Vec<String> = (0..3).filter(|i| s.du >> i & 1 == 1).map(|i| format!("du{i}")).collect();
            if !du.is_empty() {
                parts.push(du.join("^"));
            }
            write!(f, "{sep}{}", parts.join(" "))?;
        }
        Ok(())
    }
}

/// `Σ_{ijk} ε_{ijk} f(i, j, k)`.
pub fn epsilon_sum(f: impl Fn(usize, usize, usize) -> TermSum) -> TermSum {
    const PERMS: [([usize; 3], i64); 6] = [([0, 1, 2], 1), ([1, 2, 0], 1), ([2, 0, 1], 1), ([1, 0, 2], -1), ([0, 2, 1], -1), ([2, 1, 0], -1)];
    PERMS.iter().fold(TermSum::zero(), |acc, &([i, j, k], s)| acc.add(&f(i, j, k).scale(&q(s))))
}

/// Leading heat operator `∂_t - ¼ Σ_i ∂_i² + c Σ_{ij} Ω^i_j ι_i ι_j` in the
/// flat chart.
pub fn apply_heat_operator_with(s: &TermSum, omega_coeff: &Q) -> TermSum {
    let mut out = s.d_dt();
    for i in 0..3 {
        out = out.sub(&s.d_du(i).d_du(i).scale(&frac(1, 4)));
    }
    if !omega_coeff.is_zero() {
        for i in 0..3 {
            for j in 0..3 {
                out = out.add(&s.iota(j).iota(i).mul_omega(i, j).scale(omega_coeff));
            }
        }
    }
    out
}

/// [`apply_heat_operator_with`] at unit curvature coefficient, the value the
/// leading-term cancellation requires.
pub fn apply_heat_operator_leading(s: &TermSum) -> TermSum {
    apply_heat_operator_with(s, &Q::one())
}

/// `(d*)_{[-2]} = -¼ Σ_i ι_i ∂_i` in the flat chart.
pub fn apply_dstar_leading(s: &TermSum) -> TermSum {
    (0..3).fold(TermSum::zero(), |acc, i| acc.add(&s.d_du(i).iota(i))).scale(&frac(-1, 4))
}

/// `t^{-3/2} G du⁰du¹du²`.
pub fn flat_heat_kernel() -> TermSum {
    TermSum::term(q(1), -3, [0; 3], true, &[0, 1, 2], None)
}

/// `ε_{ijk} t^{-1/2} G Ω^i_j du^k`.
pub fn curvature_correction() -> TermSum {
    epsilon_sum(|i, j, k| TermSum::term(q(1), -1, [0; 3], true, &[k], Some((i, j))))
}

/// `(K_t)_{[0]} = ε_{ijk}(⅙ t^{-3/2} G du^i du^j du^k + t^{-1/2} G Ω^i_j du^k)`.
pub fn leading_kernel() -> TermSum {
    epsilon_sum(|i, j, k| TermSum::term(frac(1, 6), -3, [0; 3], true, &[i, j, k], None)).add(&curvature_correction())
}

/// The expected `((d*⊗1)K_t)_{[-2]}`:
/// `ε_{ijk}(¼ t^{-5/2} G u^i du^j du^k + ½ t^{-3/2} G u^k Ω^i_j)`.
pub fn expected_dstar_leading() -> TermSum {
    epsilon_sum(|i, j, k| {
        let mut u = [0; 3];
        u[i] = 1;
        let a = TermSum::term(frac(1, 4), -5, u, true, &[j, k], None);
        let mut u = [0; 3];
        u[k] = 1;
        a.add(&TermSum::term(frac(1, 2), -3, u, true, &[], Some((i, j))))
    })
}

/// `(∫₀ᴸ r³/(4t^{5/2}) e^{-r²/4t} dt, ∫₀ᴸ r/(2t^{3/2}) e^{-r²/4t} dt)`.
/// Both tend to `√π` as `r → 0`.
pub fn boundary_limit(r: f64, l: f64) -> Result<(f64, f64), HeatError> {
    if r.is_nan() || r <= 0.0 {
        return Err(HeatError::NonPositive("r", r));
    }
    if l.is_nan() || l <= 0.0 {
        return Err(HeatError::NonPositive("L", l));
    }
    let f1 = |t: f64| if t <= 0.0 { 0.0 } else { r.powi(3) / (4.0 * t.powf(2.5)) * (-r * r / (4.0 * t)).exp() };
    let f2 = |t: f64| if t <= 0.0 { 0.0 } else { r / (2.0 * t.powf(1.5)) * (-r * r / (4.0 * t)).exp() };
    Ok((integrate_split(f1, r, l), integrate_split(f2, r, l)))
}

/// Tanh-sinh on `[0, L]` split at geometric breakpoints so the peak near
/// `t ~ r²` is resolved.
fn integrate_split(f: impl Fn(f64) -> f64, r: f64, l: f64) -> f64 {
    // Below t = r²/2000 the integrand is under e^{-500}.
    let floor = r * r / 2000.0;
    let mut points = vec![l];
    while *points.last().unwrap() / 4.0 > floor {
        let next = points.last().unwrap() / 4.0;
        points.push(next);
    }
    points.push(0.0);
    points.windows(2).map(|w| quadrature::double_exponential::integrate(&f, w[1], w[0], 1e-14).integral).sum()
}

/// `∫∫ g(û, ∂_θû, ∂_φû) dθ dφ` over `[0,π]×[0,2π]` by product Gauss-Legendre.
fn sphere_chart_integral(g: impl Fn([f64; 3], [f64; 3], [f64; 3]) -> f64, degree: usize) -> f64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(degree.max(1)).unwrap());
    rule.integrate(0.0, PI, |th| {
        rule.integrate(0.0, 2.0 * PI, |ph| {
            let (st, ct, sp, cp) = (th.sin(), th.cos(), ph.sin(), ph.cos());
            g([st * cp, st * sp, ct], [ct * cp, ct * sp, -st], [-st * sp, st * cp, 0.0])
        })
    })
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const SPHERE_DEGREE: usize = 24;

/// `∫_{S²} f(û) dA`.
pub fn sphere_integral(f: impl Fn([f64; 3]) -> f64, degree: usize) -> f64 {
    sphere_chart_integral(|x, xt, xp| f(x) * dot(cross(xt, xp), cross(xt, xp)).sqrt(), degree)
}

/// `c/(8π) ∫_{S²} ε_{ijk} û^i dû^j dû^k`; the pullback to `(θ, φ)` is
/// `2 û·(û_θ × û_φ) dθ∧dφ`.
pub fn fiber_sphere_integral_scaled(c: f64) -> f64 {
    c / (8.0 * PI) * sphere_chart_integral(|x, xt, xp| 2.0 * dot(x, cross(xt, xp)), SPHERE_DEGREE)
}

/// Normalised fiber integral of the boundary propagator form; equals 1.
pub fn fiber_sphere_integral() -> f64 {
    fiber_sphere_integral_scaled(1.0)
}

/// One machine-checked identity.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Number of surviving terms in the residual (0 for numeric checks that pass).
    pub residual_terms: usize,
    pub detail: String,
}

fn symbolic(name: &'static str, residual: TermSum) -> IdentityCheck {
    IdentityCheck { name, passed: residual.is_empty(), residual_terms: residual.len(), detail: residual.to_string() }
}

fn numeric(name: &'static str, value: f64, expected: f64, tol: f64) -> IdentityCheck {
    let passed = (value - expected).abs() <= tol;
    IdentityCheck { name, passed, residual_terms: usize::from(!passed), detail: format!("{value:.12} (expected {expected:.12}, tol {tol:e})") }
}

/// Runs every leading-term identity and the two numeric constants.
pub fn verify_all() -> Vec<IdentityCheck> {
    let k0 = leading_kernel();
    let heat_k0 = apply_heat_operator_leading(&k0);
    let omega_image = epsilon_sum(|i, j, k| TermSum::term(q(1), -3, [0; 3], true, &[k], Some((i, j))));
    let sqrt_pi = PI.sqrt();
    let mut out = vec![
        symbolic("flat heat operator annihilates the flat kernel", apply_heat_operator_with(&flat_heat_kernel(), &Q::zero())),
        symbolic("curvature correction maps to its t^(-3/2) image", apply_heat_operator_leading(&curvature_correction()).sub(&omega_image)),
        symbolic("heat operator annihilates the leading kernel", heat_k0),
        symbolic("d* of the leading kernel matches the expected form", apply_dstar_leading(&k0).sub(&expected_dstar_leading())),
        symbolic("leading kernel satisfies p + r >= 0", k0.vanishing_filter().violations),
    ];
    let degree_ok = k0.homogeneous_degree() == Some(0) && apply_dstar_leading(&k0).homogeneous_degree() == Some(-2);
    out.push(IdentityCheck {
        name: "leading operators lower total degree by 2",
        passed: degree_ok,
        residual_terms: usize::from(!degree_ok),
        detail: String::new(),
    });
    match boundary_limit(1e-3, 1.0) {
        Ok((a, b)) => {
            out.push(numeric("boundary limit of the du-cubed coefficient", a, sqrt_pi, 1e-3));
            out.push(numeric("boundary limit of the curvature coefficient", b, sqrt_pi, 1e-3));
        }
        Err(e) => out.push(IdentityCheck { name: "boundary limits", passed: false, residual_terms: 1, detail: e.to_string() }),
    }
    out.push(numeric("fiber sphere integral", fiber_sphere_integral(), 1.0, 1e-6));
    out
}
