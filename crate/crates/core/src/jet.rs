//! Truncated multivariate Taylor polynomials in three variables.
//!
//! A [`Jet`] carries every partial derivative of a scalar up to third order
//! around a base point. Velocity fields built from scalar potentials need up
//! to three derivatives of the potential to produce a velocity gradient, so
//! this is enough to evaluate every basis member exactly (up to roundoff).

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

/// Number of monomials of total degree ≤ 3 in three variables.
pub const JET_LEN: usize = 20;
const MAX_DEG: u8 = 3;

struct Tables {
    exps: [[u8; 3]; JET_LEN],
    /// (a, b, c): monomial a times monomial b equals monomial c.
    products: Vec<(u8, u8, u8)>,
    /// For each variable: (source, target, factor) so that d/dx_i of the
    /// source monomial is factor × target monomial.
    derivs: [Vec<(u8, u8, f64)>; 3],
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut exps = [[0u8; 3]; JET_LEN];
        let mut k = 0;
        for deg in 0..=MAX_DEG {
            for a in (0..=deg).rev() {
                for b in (0..=deg - a).rev() {
                    exps[k] = [a, b, deg - a - b];
                    k += 1;
                }
            }
        }
        let index = |e: [u8; 3]| exps.iter().position(|x| *x == e);
        let mut products = Vec::new();
        for (a, ea) in exps.iter().enumerate() {
            for (b, eb) in exps.iter().enumerate() {
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                if e.iter().sum::<u8>() <= MAX_DEG {
                    products.push((a as u8, b as u8, index(e).unwrap() as u8));
                }
            }
        }
        let derivs = std::array::from_fn(|i| {
            let mut v = Vec::new();
            for (src, e) in exps.iter().enumerate() {
                if e[i] > 0 {
                    let mut t = *e;
                    t[i] -= 1;
                    v.push((src as u8, index(t).unwrap() as u8, e[i] as f64));
                }
            }
            v
        });
        Tables {
            exps,
            products,
            derivs,
        }
    })
}

/// Truncated Taylor expansion `f(x0 + δ) ≈ Σ c_α δ^α`, |α| ≤ 3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub c: [f64; JET_LEN],
}

impl Jet {
    pub const ZERO: Jet = Jet { c: [0.0; JET_LEN] };

    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = v;
        Jet { c }
    }

    /// The coordinate function `x_i` expanded around `x0`.
    pub fn variable(i: usize, x0: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = x0;
        c[1 + i] = 1.0;
        Jet { c }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// First partial derivatives at the base point.
    pub fn gradient(&self) -> [f64; 3] {
        [self.c[1], self.c[2], self.c[3]]
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.c.iter_mut().for_each(|v| *v *= s);
        self
    }

    /// Partial derivative with respect to `x_i`; the result is exact up to
    /// one degree less than the input.
    pub fn d(&self, i: usize) -> Self {
        let mut out = Jet::ZERO;
        for &(src, dst, f) in &tables().derivs[i] {
            out.c[dst as usize] += f * self.c[src as usize];
        }
        out
    }

    /// Composition `f ∘ self` given `f, f', f'', f'''` at the base value.
    pub fn compose(&self, f: [f64; 4]) -> Self {
        let mut delta = *self;
        delta.c[0] = 0.0;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let mut out = delta.scale(f[1]) + d2.scale(f[2] / 2.0) + d3.scale(f[3] / 6.0);
        out.c[0] += f[0];
        out
    }

    /// `self^(-1/2)`; the base value must be positive.
    pub fn inv_sqrt(&self) -> Self {
        let s = self.c[0];
        let a = s.powf(-0.5);
        self.compose([a, -0.5 * a / s, 0.75 * a / (s * s), -1.875 * a / (s * s * s)])
    }

    pub fn powi(&self, n: u32) -> Self {
        let mut out = Jet::constant(1.0);
        for _ in 0..n {
            out = out * *self;
        }
        out
    }

    /// Exponents of the monomial stored at `index`.
    pub fn exponents(index: usize) -> [u8; 3] {
        tables().exps[index]
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        for (a, b) in self.c.iter_mut().zip(rhs.c.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: Jet) -> Jet {
        for (a, b) in self.c.iter_mut().zip(rhs.c.iter()) {
            *a -= b;
        }
        self
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut out = Jet::ZERO;
        for &(a, b, c) in &tables().products {
            out.c[c as usize] += self.c[a as usize] * rhs.c[b as usize];
        }
        out
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

/// A vector of three jets, one per Cartesian component.
pub type JetVec = [Jet; 3];

pub fn cross(a: &JetVec, b: &JetVec) -> JetVec {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Gradient of a scalar jet as a vector of jets (one degree less exact).
pub fn grad(f: &Jet) -> JetVec {
    [f.d(0), f.d(1), f.d(2)]
}

/// Curl of a vector of jets.
pub fn curl(a: &JetVec) -> JetVec {
    [
        a[2].d(1) - a[1].d(2),
        a[0].d(2) - a[2].d(0),
        a[1].d(0) - a[0].d(1),
    ]
}

/// Extract value and gradient `g[i][k] = ∂_k u_i` from a vector of jets.
pub fn value_and_gradient(u: &JetVec) -> ([f64; 3], [[f64; 3]; 3]) {
    (
        [u[0].value(), u[1].value(), u[2].value()],
        [u[0].gradient(), u[1].gradient(), u[2].gradient()],
    )
}
