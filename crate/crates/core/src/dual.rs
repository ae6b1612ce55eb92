//! Forward-mode automatic differentiation for the closed-form kernels.
//!
//! The Green's tensors are written once, generic over [`Scalar`], and
//! evaluated with `f64` (values), [`Dual3`] (gradient in one point) or
//! [`HyperDual33`] (gradients in two points plus the mixed second
//! derivatives). Only the operations the kernels need are provided.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn re(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
}

/// Value plus gradient with respect to three variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual3 {
    pub re: f64,
    pub eps: [f64; 3],
}

impl Dual3 {
    pub fn variable(value: f64, index: usize) -> Self {
        let mut eps = [0.0; 3];
        eps[index] = 1.0;
        Self { re: value, eps }
    }

    /// The three coordinates of `p` as independent variables.
    pub fn seed(p: [f64; 3]) -> [Self; 3] {
        [Self::variable(p[0], 0), Self::variable(p[1], 1), Self::variable(p[2], 2)]
    }

    fn chain(self, f: f64, df: f64) -> Self {
        Self {
            re: f,
            eps: self.eps.map(|e| df * e),
        }
    }
}

impl Add for Dual3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            re: self.re + o.re,
            eps: [self.eps[0] + o.eps[0], self.eps[1] + o.eps[1], self.eps[2] + o.eps[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            re: self.re - o.re,
            eps: [self.eps[0] - o.eps[0], self.eps[1] - o.eps[1], self.eps[2] - o.eps[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            re: self.re * o.re,
            eps: [
                self.eps[0] * o.re + self.re * o.eps[0],
                self.eps[1] * o.re + self.re * o.eps[1],
                self.eps[2] * o.re + self.re * o.eps[2],
            ],
        }
    }
}

impl Div for Dual3 {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl Neg for Dual3 {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            eps: self.eps.map(|e| -e),
        }
    }
}

impl Add<f64> for Dual3 {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.re += o;
        self
    }
}

impl Sub<f64> for Dual3 {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.re -= o;
        self
    }
}

impl Mul<f64> for Dual3 {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Self {
            re: self.re * o,
            eps: self.eps.map(|e| e * o),
        }
    }
}

impl Div<f64> for Dual3 {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl Scalar for Dual3 {
    fn cst(v: f64) -> Self {
        Self { re: v, eps: [0.0; 3] }
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.re;
        self.chain(r, -r * r)
    }
}

/// Value, gradients in two independent 3-vectors `a` and `b`, and the mixed
/// block `∂²/∂a_i∂b_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperDual33 {
    pub re: f64,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub ab: [[f64; 3]; 3],
}

impl HyperDual33 {
    /// Seeds `pa` as the `a` variables and `pb` as the `b` variables.
    pub fn seed(pa: [f64; 3], pb: [f64; 3]) -> ([Self; 3], [Self; 3]) {
        let mk = |v: f64, i: usize, first: bool| {
            let mut d = Self::cst(v);
            if first {
                d.a[i] = 1.0;
            } else {
                d.b[i] = 1.0;
            }
            d
        };
        (
            [mk(pa[0], 0, true), mk(pa[1], 1, true), mk(pa[2], 2, true)],
            [mk(pb[0], 0, false), mk(pb[1], 1, false), mk(pb[2], 2, false)],
        )
    }

    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        let mut ab = [[0.0; 3]; 3];
        for (i, row) in ab.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = df * self.ab[i][j] + d2f * self.a[i] * self.b[j];
            }
        }
        Self {
            re: f,
            a: self.a.map(|e| df * e),
            b: self.b.map(|e| df * e),
            ab,
        }
    }
}

impl Add for HyperDual33 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut r = self;
        r.re += o.re;
        for i in 0..3 {
            r.a[i] += o.a[i];
            r.b[i] += o.b[i];
            for j in 0..3 {
                r.ab[i][j] += o.ab[i][j];
            }
        }
        r
    }
}

impl Sub for HyperDual33 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for HyperDual33 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut ab = [[0.0; 3]; 3];
        for (i, row) in ab.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.ab[i][j] * o.re + self.a[i] * o.b[j] + self.b[j] * o.a[i] + self.re * o.ab[i][j];
            }
        }
        Self {
            re: self.re * o.re,
            a: [0, 1, 2].map(|i| self.a[i] * o.re + self.re * o.a[i]),
            b: [0, 1, 2].map(|i| self.b[i] * o.re + self.re * o.b[i]),
            ab,
        }
    }
}

impl Div for HyperDual33 {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl Neg for HyperDual33 {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl Add<f64> for HyperDual33 {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.re += o;
        self
    }
}

impl Sub<f64> for HyperDual33 {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.re -= o;
        self
    }
}

impl Mul<f64> for HyperDual33 {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Self {
            re: self.re * o,
            a: self.a.map(|e| e * o),
            b: self.b.map(|e| e * o),
            ab: self.ab.map(|r| r.map(|e| e * o)),
        }
    }
}

impl Div<f64> for HyperDual33 {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl Scalar for HyperDual33 {
    fn cst(v: f64) -> Self {
        Self {
            re: v,
            a: [0.0; 3],
            b: [0.0; 3],
            ab: [[0.0; 3]; 3],
        }
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.re))
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.re;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}
