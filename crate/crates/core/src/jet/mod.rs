//! Third-order scalar jets and a reverse-mode tape over them.
//!
//! A [`Jet3`] carries a value together with its first three derivatives with
//! respect to one designated scalar input. Elementwise operations propagate
//! jets exactly (Leibniz rule for products, Faà di Bruno for unary maps).
//!
//! The [`Tape`] records every jet operation so that a scalar objective built
//! from jet components (for example a PDE residual `κ·u'' − λ·u³`) can be
//! differentiated in reverse with respect to network parameters *and* to the
//! lifted input coordinate itself.

mod tape;

pub use tape::{Gradient, Node, Tape, UnaryKind};

use std::ops::{Add, Mul, Neg, Sub};

/// Value and derivatives `(v, d1, d2, d3)` with respect to one scalar input.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet3 {
    c: [f64; 4],
}

/// Binomial coefficients `C(k, j)` for `k, j ≤ 3`.
const BINOM: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0],
    [1.0, 3.0, 3.0, 1.0],
];

impl Jet3 {
    pub const ZERO: Jet3 = Jet3 { c: [0.0; 4] };

    pub const fn new(v: f64, d1: f64, d2: f64, d3: f64) -> Self {
        Jet3 { c: [v, d1, d2, d3] }
    }

    pub const fn constant(v: f64) -> Self {
        Jet3::new(v, 0.0, 0.0, 0.0)
    }

    /// The derivative seed `(x, 1, 0, 0)`.
    pub const fn seed(x: f64) -> Self {
        Jet3::new(x, 1.0, 0.0, 0.0)
    }

    pub const fn from_array(c: [f64; 4]) -> Self {
        Jet3 { c }
    }

    #[inline]
    pub fn v(&self) -> f64 {
        self.c[0]
    }
    #[inline]
    pub fn d1(&self) -> f64 {
        self.c[1]
    }
    #[inline]
    pub fn d2(&self) -> f64 {
        self.c[2]
    }
    #[inline]
    pub fn d3(&self) -> f64 {
        self.c[3]
    }

    #[inline]
    pub fn components(&self) -> [f64; 4] {
        self.c
    }

    /// Component `k` (0 = value).
    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.c[k]
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|x| x.is_finite())
    }

    #[inline]
    pub fn scale(self, s: f64) -> Self {
        Jet3 {
            c: [s * self.c[0], s * self.c[1], s * self.c[2], s * self.c[3]],
        }
    }

    /// `s·self + shift` (shift only touches the value).
    #[inline]
    pub fn affine(self, s: f64, shift: f64) -> Self {
        let mut out = self.scale(s);
        out.c[0] += shift;
        out
    }

    #[inline]
    pub fn dot(&self, other: &Jet3) -> f64 {
        self.c[0] * other.c[0] + self.c[1] * other.c[1] + self.c[2] * other.c[2] + self.c[3] * other.c[3]
    }

    /// `self += s·other`, componentwise.
    #[inline]
    pub fn add_scaled(&mut self, s: f64, other: &Jet3) {
        self.c[0] += s * other.c[0];
        self.c[1] += s * other.c[1];
        self.c[2] += s * other.c[2];
        self.c[3] += s * other.c[3];
    }

    /// Product by the Leibniz rule.
    pub fn mul_jet(self, b: Jet3) -> Jet3 {
        let a = self.c;
        let b = b.c;
        Jet3::new(
            a[0] * b[0],
            a[1] * b[0] + a[0] * b[1],
            a[2] * b[0] + 2.0 * a[1] * b[1] + a[0] * b[2],
            a[3] * b[0] + 3.0 * a[2] * b[1] + 3.0 * a[1] * b[2] + a[0] * b[3],
        )
    }

    /// Compose with a scalar function whose derivatives at `self.v()` are
    /// `f = [f(a), f'(a), f''(a), f'''(a)]`.
    pub fn compose(self, f: &[f64]) -> Jet3 {
        let [_, a1, a2, a3] = self.c;
        Jet3::new(
            f[0],
            f[1] * a1,
            f[2] * a1 * a1 + f[1] * a2,
            f[3] * a1 * a1 * a1 + 3.0 * f[2] * a1 * a2 + f[1] * a3,
        )
    }

    /// Pull an output adjoint `adj` back through [`Jet3::compose`].
    ///
    /// `f` must hold five derivatives (`f''''` enters the sensitivity of the
    /// third component to the expansion point).
    pub fn compose_adjoint(self, f: &[f64; 5], adj: &Jet3) -> Jet3 {
        let [_, a1, a2, a3] = self.c;
        let [b0, b1, b2, b3] = adj.c;
        let g0 = b0 * f[1]
            + b1 * f[2] * a1
            + b2 * (f[3] * a1 * a1 + f[2] * a2)
            + b3 * (f[4] * a1 * a1 * a1 + 3.0 * f[3] * a1 * a2 + f[2] * a3);
        let g1 = b1 * f[1] + b2 * 2.0 * f[2] * a1 + b3 * (3.0 * f[3] * a1 * a1 + 3.0 * f[2] * a2);
        let g2 = b2 * f[1] + b3 * 3.0 * f[2] * a1;
        let g3 = b3 * f[1];
        Jet3::new(g0, g1, g2, g3)
    }

    pub fn tanh(self) -> Jet3 {
        self.compose(&tanh_derivs(self.v()))
    }

    pub fn exp(self) -> Jet3 {
        let e = self.v().exp();
        self.compose(&[e, e, e, e])
    }

    /// ReLU with the subgradient convention `d1 = 0` at the kink.
    pub fn relu(self) -> Jet3 {
        if self.v() > 0.0 {
            self
        } else {
            Jet3::ZERO
        }
    }
}

/// `tanh` and its first four derivatives at `x`.
pub(crate) fn tanh_derivs(x: f64) -> [f64; 5] {
    let t = x.tanh();
    let s = 1.0 - t * t;
    [
        t,
        s,
        -2.0 * t * s,
        s * (6.0 * t * t - 2.0),
        t * s * (16.0 - 24.0 * t * t),
    ]
}

/// Adjoint of a product with respect to its left factor `a`, given the right
/// factor `b`.
pub(crate) fn mul_adjoint(b: &Jet3, adj: &Jet3) -> Jet3 {
    let mut g = [0.0; 4];
    for (j, gj) in g.iter_mut().enumerate() {
        for k in j..4 {
            *gj += BINOM[k][j] * b.c[k - j] * adj.c[k];
        }
    }
    Jet3 { c: g }
}

impl Add for Jet3 {
    type Output = Jet3;
    fn add(self, o: Jet3) -> Jet3 {
        Jet3::new(self.c[0] + o.c[0], self.c[1] + o.c[1], self.c[2] + o.c[2], self.c[3] + o.c[3])
    }
}

impl Sub for Jet3 {
    type Output = Jet3;
    fn sub(self, o: Jet3) -> Jet3 {
        Jet3::new(self.c[0] - o.c[0], self.c[1] - o.c[1], self.c[2] - o.c[2], self.c[3] - o.c[3])
    }
}

impl Mul for Jet3 {
    type Output = Jet3;
    fn mul(self, o: Jet3) -> Jet3 {
        self.mul_jet(o)
    }
}

impl Neg for Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_of_seed_at_zero() {
        assert_eq!(Jet3::seed(0.0).tanh(), Jet3::new(0.0, 1.0, 0.0, -2.0));
    }

    #[test]
    fn leibniz_product() {
        let a = Jet3::new(2.0, 1.0, 0.0, 0.0);
        let b = Jet3::new(3.0, 1.0, 0.0, 0.0);
        assert_eq!(a * b, Jet3::new(6.0, 5.0, 2.0, 0.0));
    }

    #[test]
    fn product_matches_symbolic_cubic() {
        // (x^2 + 1)(2x - 3) = 2x^3 - 3x^2 + 2x - 3
        let x = 0.7;
        let s = Jet3::seed(x);
        let p = (s * s).affine(1.0, 1.0) * s.affine(2.0, -3.0);
        let expect = [
            2.0 * x * x * x - 3.0 * x * x + 2.0 * x - 3.0,
            6.0 * x * x - 6.0 * x + 2.0,
            12.0 * x - 6.0,
            12.0,
        ];
        for k in 0..4 {
            assert!((p.get(k) - expect[k]).abs() < 1e-12, "component {k}");
        }
    }

    #[test]
    fn exp_chain() {
        // exp(2x): derivatives 2^k e^{2x}
        let x = 0.3;
        let j = Jet3::seed(x).scale(2.0).exp();
        let e = (2.0 * x).exp();
        for k in 0..4 {
            let expect = 2f64.powi(k as i32) * e;
            assert!((j.get(k) - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn relu_kink_convention() {
        assert_eq!(Jet3::seed(0.0).relu(), Jet3::ZERO);
        assert_eq!(Jet3::seed(0.5).relu(), Jet3::seed(0.5));
    }

    #[test]
    fn tanh_fourth_derivative_matches_difference_of_third() {
        let h = 1e-5;
        for &x in &[-1.3, -0.2, 0.4, 2.0] {
            let fd = (tanh_derivs(x + h)[3] - tanh_derivs(x - h)[3]) / (2.0 * h);
            assert!((fd - tanh_derivs(x)[4]).abs() < 1e-8);
        }
    }
}
