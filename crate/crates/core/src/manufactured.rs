//! Manufactured solutions and the data they induce.
//!
//! Exact fields are built from truncated bivariate Taylor expansions
//! ([`Jet`]), so every derivative the source term needs comes from the
//! closed-form expression of `u` alone.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::forms::PhysicalParams;
use crate::mesh::BoundaryTag;
use crate::space::{dirichlet_tags, BoundaryData, Layout, ScalarFn};

/// Highest total degree carried by a [`Jet`].
pub const JET_DEGREE: usize = 4;
const JET_LEN: usize = (JET_DEGREE + 1) * (JET_DEGREE + 2) / 2;

#[inline]
fn jidx(a: usize, b: usize) -> usize {
    let d = a + b;
    d * (d + 1) / 2 + b
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Taylor coefficients `c_ab` of `Σ c_ab dx^a dy^b` up to total degree 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    c: [f64; JET_LEN],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = v;
        Jet { c }
    }

    /// The coordinate `x` expanded around `x0`.
    pub fn var_x(x0: f64) -> Self {
        let mut j = Jet::constant(x0);
        j.c[jidx(1, 0)] = 1.0;
        j
    }

    pub fn var_y(y0: f64) -> Self {
        let mut j = Jet::constant(y0);
        j.c[jidx(0, 1)] = 1.0;
        j
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `∂^{a+b} / ∂x^a ∂y^b` at the expansion point.
    pub fn deriv(&self, a: usize, b: usize) -> f64 {
        assert!(a + b <= JET_DEGREE);
        factorial(a) * factorial(b) * self.c[jidx(a, b)]
    }

    pub fn dx(&self) -> Jet {
        let mut out = [0.0; JET_LEN];
        for d in 0..JET_DEGREE {
            for b in 0..=d {
                let a = d - b;
                out[jidx(a, b)] = (a + 1) as f64 * self.c[jidx(a + 1, b)];
            }
        }
        Jet { c: out }
    }

    pub fn dy(&self) -> Jet {
        let mut out = [0.0; JET_LEN];
        for d in 0..JET_DEGREE {
            for b in 0..=d {
                let a = d - b;
                out[jidx(a, b)] = (b + 1) as f64 * self.c[jidx(a, b + 1)];
            }
        }
        Jet { c: out }
    }

    /// `g(self)` given `g` and its first four derivatives at `self.value()`.
    pub fn compose(&self, g: [f64; JET_DEGREE + 1]) -> Jet {
        let mut h = *self;
        h.c[0] = 0.0;
        let mut out = Jet::constant(g[0]);
        let mut pow = Jet::constant(1.0);
        for (k, gk) in g.iter().enumerate().skip(1) {
            pow = pow * h;
            out = out + pow * (gk / factorial(k));
        }
        out
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose([e; 5])
    }

    pub fn tanh(&self) -> Jet {
        let t = self.value().tanh();
        let s = 1.0 - t * t;
        self.compose([t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0), s * (16.0 * t - 24.0 * t * t * t)])
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.compose([s, c, -s, -c, s])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.compose([c, -s, -c, s, c])
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.c.iter_mut().zip(o.c).for_each(|(a, b)| *a += b);
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, o: Jet) -> Jet {
        self.c.iter_mut().zip(o.c).for_each(|(a, b)| *a -= b);
        self
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.c.iter_mut().for_each(|a| *a = -*a);
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, s: f64) -> Jet {
        self.c.iter_mut().for_each(|a| *a *= s);
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, s: f64) -> Jet {
        self.c[0] += s;
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = [0.0; JET_LEN];
        for d1 in 0..=JET_DEGREE {
            for b1 in 0..=d1 {
                let x = self.c[jidx(d1 - b1, b1)];
                if x == 0.0 {
                    continue;
                }
                for d2 in 0..=(JET_DEGREE - d1) {
                    for b2 in 0..=d2 {
                        out[jidx(d1 - b1 + d2 - b2, b1 + b2)] += x * o.c[jidx(d2 - b2, b2)];
                    }
                }
            }
        }
        Jet { c: out }
    }
}

/// Manufactured problems with closed-form solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactKind {
    /// Stationary tanh front with exponential boundary layers.
    Front,
    /// `sin(πt) sin(πx)` on the space-time slab `(0,1) × (0,0.1)`.
    TransientSine,
    /// `sin(πx) sin(πy)` for the linear reaction term.
    SineSquare,
}

/// Fixed formula string of the front solution, echoed into run metadata.
pub const FRONT_FORMULA: &str = "u(x,y) = x*y*tanh((x - 0.5*y - 0.25)/sqrt(2*lambda)) \
* (x + (exp(50*x) - 1)/(1 - exp(50))) * (y + (exp(10*x) - 1)/(1 - exp(10)))";
pub const TRANSIENT_FORMULA: &str = "u(x,t) = sin(pi*t)*sin(pi*x)";
pub const SINE_SQUARE_FORMULA: &str = "u(x,y) = sin(pi*x)*sin(pi*y)";

/// Exact fields at a point. Spatial quantities use only the first
/// component in space-time runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactPoint {
    pub u: f64,
    /// Full gradient in mesh coordinates.
    pub grad_u: [f64; 2],
    pub q: f64,
    pub grad_q: [f64; 2],
    /// Spatial gradient of `u`, the exact `r`.
    pub r: [f64; 2],
    /// Spatial gradient of `q`, the exact `t`.
    pub t: [f64; 2],
    pub div_r: f64,
    pub div_t: f64,
    pub source: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Manufactured {
    pub kind: ExactKind,
    pub params: PhysicalParams,
    pub layout: Layout,
}

impl Manufactured {
    pub fn new(kind: ExactKind, params: PhysicalParams) -> Self {
        let layout = match kind {
            ExactKind::TransientSine => Layout::SpaceTime,
            _ => Layout::Stationary,
        };
        Manufactured { kind, params, layout }
    }

    pub fn formula(&self) -> &'static str {
        match self.kind {
            ExactKind::Front => FRONT_FORMULA,
            ExactKind::TransientSine => TRANSIENT_FORMULA,
            ExactKind::SineSquare => SINE_SQUARE_FORMULA,
        }
    }

    /// `u` as a jet around `x`.
    pub fn u_jet(&self, x: [f64; 2]) -> Jet {
        let (jx, jy) = (Jet::var_x(x[0]), Jet::var_y(x[1]));
        let pi = std::f64::consts::PI;
        match self.kind {
            ExactKind::Front => {
                let w = (2.0 * self.params.lambda).sqrt();
                let front = ((jx - jy * 0.5 + (-0.25)) * (1.0 / w)).tanh();
                let layer_x = jx + ((jx * 50.0).exp() + (-1.0)) * (1.0 / (1.0 - 50f64.exp()));
                let layer_y = jy + ((jx * 10.0).exp() + (-1.0)) * (1.0 / (1.0 - 10f64.exp()));
                jx * jy * front * layer_x * layer_y
            }
            ExactKind::TransientSine => (jy * pi).sin() * (jx * pi).sin(),
            ExactKind::SineSquare => (jx * pi).sin() * (jy * pi).sin(),
        }
    }

    fn nonlinear(&self, u: Jet) -> Jet {
        if self.params.linear {
            -u
        } else {
            u * u * u - u
        }
    }

    fn lap_s(&self, j: &Jet) -> Jet {
        match self.layout {
            Layout::Stationary => j.dx().dx() + j.dy().dy(),
            Layout::SpaceTime => j.dx().dx(),
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> ExactPoint {
        let lambda = self.params.lambda;
        let u = self.u_jet(x);
        let q = self.nonlinear(u) - self.lap_s(&u) * lambda;
        let lap_q = self.lap_s(&q).value();
        let grad_u = [u.dx().value(), u.dy().value()];
        let grad_q = [q.dx().value(), q.dy().value()];
        let (r, t, source) = match self.layout {
            Layout::Stationary => (grad_u, grad_q, self.params.d * lap_q),
            Layout::SpaceTime => (
                [grad_u[0], 0.0],
                [grad_q[0], 0.0],
                -grad_u[1] + self.params.d * lap_q,
            ),
        };
        ExactPoint {
            u: u.value(),
            grad_u,
            q: q.value(),
            grad_q,
            r,
            t,
            div_r: self.lap_s(&u).value(),
            div_t: lap_q,
            source,
        }
    }

    pub fn u_fn(&self) -> ScalarFn {
        let m = *self;
        Arc::new(move |x| m.eval(x).u)
    }

    pub fn q_fn(&self) -> ScalarFn {
        let m = *self;
        Arc::new(move |x| m.eval(x).q)
    }

    pub fn source_fn(&self) -> ScalarFn {
        let m = *self;
        Arc::new(move |x| m.eval(x).source)
    }

    /// Exact `u` and `q` on every constrained side.
    pub fn boundary_data(&self) -> BoundaryData {
        let (ut, qt) = dirichlet_tags(self.layout);
        BoundaryData::uniform(self.u_fn(), ut, self.q_fn(), qt)
    }

    /// Sides carrying data: all four for stationary runs.
    pub fn tags(&self) -> &'static [BoundaryTag] {
        dirichlet_tags(self.layout).0
    }
}
