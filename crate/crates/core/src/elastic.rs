//! Isotropic elastic constitutive types.
//!
//! The elasticity tensor is `C = λ I⊗I + 2μ 𝕀`, acting on symmetric strains as
//! `C e = λ tr(e) I + 2μ e`. Strong convexity (`μ > 0`, `3λ + 2μ > 0`) makes
//! `C e : e` a positive-definite quadratic form on symmetric tensors.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Points, displacements and directions in ℝ³.
pub type Vec3 = Vector3<f64>;

/// A general second-order tensor (3×3 matrix).
pub type Tensor2 = Matrix3<f64>;

/// Homogeneous Lamé pair satisfying the strong convexity condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LameParameters {
    lambda: f64,
    mu: f64,
}

impl LameParameters {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::Convexity {
                name: "lambda",
                value: lambda,
                reason: "must be finite",
            });
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Convexity {
                name: "mu",
                value: mu,
                reason: "shear modulus must be positive",
            });
        }
        if 3.0 * lambda + 2.0 * mu <= 0.0 {
            return Err(Error::Convexity {
                name: "lambda",
                value: lambda,
                reason: "3*lambda + 2*mu must be positive",
            });
        }
        Ok(Self { lambda, mu })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// ν = λ / (2(λ + μ)). Always in (−1, 1/2) for admissible pairs.
    pub fn poisson_ratio(&self) -> f64 {
        self.lambda / (2.0 * (self.lambda + self.mu))
    }

    /// Largest `c` with `C e : e ≥ c |e|²` for every symmetric `e`.
    pub fn coercivity_constant(&self) -> f64 {
        (3.0 * self.lambda + 2.0 * self.mu).min(2.0 * self.mu)
    }

    pub fn stress(&self, e: &SymTensor2) -> SymTensor2 {
        stress(self, e)
    }
}

/// Symmetric 3×3 tensor stored as its six independent entries
/// `[xx, yy, zz, yz, xz, xy]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor2(pub [f64; 6]);

impl SymTensor2 {
    pub fn zero() -> Self {
        Self([0.0; 6])
    }

    pub fn identity() -> Self {
        Self([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    }

    pub fn from_matrix_sym_part(a: &Tensor2) -> Self {
        Self([
            a[(0, 0)],
            a[(1, 1)],
            a[(2, 2)],
            0.5 * (a[(1, 2)] + a[(2, 1)]),
            0.5 * (a[(0, 2)] + a[(2, 0)]),
            0.5 * (a[(0, 1)] + a[(1, 0)]),
        ])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        const IDX: [[usize; 3]; 3] = [[0, 5, 4], [5, 1, 3], [4, 3, 2]];
        self.0[IDX[i][j]]
    }

    pub fn to_matrix(&self) -> Tensor2 {
        Tensor2::from_fn(|i, j| self.get(i, j))
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    /// Frobenius inner product `A : B`.
    pub fn contract(&self, other: &SymTensor2) -> f64 {
        let a = &self.0;
        let b = &other.0;
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5])
    }

    pub fn norm(&self) -> f64 {
        self.contract(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|v| v * s))
    }

    pub fn mul_vec(&self, n: &Vec3) -> Vec3 {
        self.to_matrix() * n
    }
}

impl std::ops::Add for SymTensor2 {
    type Output = SymTensor2;
    fn add(self, rhs: Self) -> Self {
        let mut out = self.0;
        out.iter_mut().zip(rhs.0).for_each(|(a, b)| *a += b);
        Self(out)
    }
}

/// Symmetric part of a displacement gradient.
pub fn strain(grad_u: &Tensor2) -> SymTensor2 {
    SymTensor2::from_matrix_sym_part(grad_u)
}

/// `λ tr(e) I + 2μ e`.
pub fn stress(p: &LameParameters, e: &SymTensor2) -> SymTensor2 {
    stress_with(p.lambda, p.mu, e)
}

pub(crate) fn stress_with(lambda: f64, mu: f64, e: &SymTensor2) -> SymTensor2 {
    let tr = e.trace();
    let mut s = e.0.map(|v| 2.0 * mu * v);
    for v in s.iter_mut().take(3) {
        *v += lambda * tr;
    }
    SymTensor2(s)
}

type ScalarField = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;

/// Spatially varying Lamé coefficients with declared admissibility bounds.
///
/// `lipschitz_bound` bounds the Lipschitz seminorm of each coefficient;
/// `alpha0` and `beta0` are the floors for `μ` and `3λ + 2μ`.
#[derive(Clone)]
pub struct LameField {
    lambda: ScalarField,
    mu: ScalarField,
    pub lipschitz_bound: f64,
    pub alpha0: f64,
    pub beta0: f64,
    /// Optional constant `C` in `|∇λ|, |∇μ| ≤ C/ϱ` (metadata only).
    pub decay_constant: Option<f64>,
    constant: Option<LameParameters>,
    label: String,
}

impl fmt::Debug for LameField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LameField")
            .field("label", &self.label)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .field("alpha0", &self.alpha0)
            .field("beta0", &self.beta0)
            .field("decay_constant", &self.decay_constant)
            .finish()
    }
}

impl LameField {
    pub fn new<L, M>(lambda: L, mu: M, lipschitz_bound: f64, alpha0: f64, beta0: f64) -> Self
    where
        L: Fn(&Vec3) -> f64 + Send + Sync + 'static,
        M: Fn(&Vec3) -> f64 + Send + Sync + 'static,
    {
        Self {
            lambda: Arc::new(lambda),
            mu: Arc::new(mu),
            lipschitz_bound,
            alpha0,
            beta0,
            decay_constant: None,
            constant: None,
            label: "custom".to_string(),
        }
    }

    pub fn constant(p: LameParameters) -> Self {
        let (l, m) = (p.lambda(), p.mu());
        Self {
            lambda: Arc::new(move |_| l),
            mu: Arc::new(move |_| m),
            lipschitz_bound: 0.0,
            alpha0: m,
            beta0: 3.0 * l + 2.0 * m,
            decay_constant: Some(0.0),
            constant: Some(p),
            label: format!("constant(lambda={l}, mu={m})"),
        }
    }

    /// `λ = lambda`, `μ(x) = mu0 + amplitude · tanh(x₃ + depth)`.
    pub fn tanh_shear(lambda: f64, mu0: f64, amplitude: f64, depth: f64) -> Self {
        let a = amplitude.abs();
        let mut f = Self::new(
            move |_| lambda,
            move |x| mu0 + amplitude * (x[2] + depth).tanh(),
            a,
            mu0 - a,
            3.0 * lambda + 2.0 * (mu0 - a),
        );
        f.label = format!("tanh-shear(lambda={lambda}, mu0={mu0}, amplitude={amplitude}, depth={depth})");
        f
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn lambda_at(&self, x: &Vec3) -> f64 {
        (self.lambda)(x)
    }

    pub fn mu_at(&self, x: &Vec3) -> f64 {
        (self.mu)(x)
    }

    /// The constant parameters, when the field was built from them.
    pub fn as_constant(&self) -> Option<LameParameters> {
        self.constant
    }

    /// Frozen coefficients at `x`.
    pub fn at(&self, x: &Vec3) -> Result<LameParameters> {
        LameParameters::new(self.lambda_at(x), self.mu_at(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldViolation {
    ShearFloor { point: Vec3, mu: f64, floor: f64 },
    BulkFloor { point: Vec3, value: f64, floor: f64 },
    Lipschitz { p: Vec3, q: Vec3, estimate: f64, bound: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct FieldReport {
    pub violations: Vec<FieldViolation>,
    /// Largest sampled difference quotient over all pairs.
    pub max_lipschitz_estimate: f64,
}

impl FieldReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sampled admissibility check: convexity floors at every point and the
/// pairwise Lipschitz quotient of both coefficients.
pub fn validate_field(field: &LameField, samples: &[Vec3]) -> Result<FieldReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("validate_field needs at least one sample point".into()));
    }
    let values: Vec<(f64, f64)> = samples
        .iter()
        .map(|x| (field.lambda_at(x), field.mu_at(x)))
        .collect();
    let mut report = FieldReport::default();
    for (x, &(l, m)) in samples.iter().zip(&values) {
        if !(m >= field.alpha0 && field.alpha0 > 0.0) {
            report.violations.push(FieldViolation::ShearFloor {
                point: *x,
                mu: m,
                floor: field.alpha0,
            });
        }
        let bulk = 3.0 * l + 2.0 * m;
        if !(bulk >= field.beta0 && field.beta0 > 0.0) {
            report.violations.push(FieldViolation::BulkFloor {
                point: *x,
                value: bulk,
                floor: field.beta0,
            });
        }
    }
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let dist = (samples[i] - samples[j]).norm();
            if dist == 0.0 {
                continue;
            }
            let dl = (values[i].0 - values[j].0).abs();
            let dm = (values[i].1 - values[j].1).abs();
            let q = dl.max(dm) / dist;
            report.max_lipschitz_estimate = report.max_lipschitz_estimate.max(q);
            if q > field.lipschitz_bound {
                report.violations.push(FieldViolation::Lipschitz {
                    p: samples[i],
                    q: samples[j],
                    estimate: q,
                    bound: field.lipschitz_bound,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn poisson_ratio_examples() {
        assert_eq!(LameParameters::new(1.0, 1.0).unwrap().poisson_ratio(), 0.25);
        assert_eq!(LameParameters::new(0.0, 1.0).unwrap().poisson_ratio(), 0.0);
        assert_relative_eq!(LameParameters::new(2.0, 1.0).unwrap().poisson_ratio(), 1.0 / 3.0);
    }

    #[test]
    fn convexity_rejected() {
        let e = LameParameters::new(1.0, -1.0).unwrap_err();
        assert!(matches!(e, Error::Convexity { name: "mu", .. }));
        let e = LameParameters::new(-1.0, 1.0).unwrap_err();
        assert!(matches!(e, Error::Convexity { name: "lambda", .. }));
        assert!(LameParameters::new(-0.6, 1.0).is_ok());
    }

    #[test]
    fn strain_examples() {
        assert_eq!(strain(&Tensor2::identity()), SymTensor2::identity());
        let skew = Tensor2::new(0.0, 1.0, -2.0, -1.0, 0.0, 3.0, 2.0, -3.0, 0.0);
        assert_eq!(strain(&skew), SymTensor2::zero());
        let g = Tensor2::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let e = strain(&g).to_matrix();
        assert_eq!(e, Tensor2::new(0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn stress_examples() {
        let p = LameParameters::new(1.0, 1.0).unwrap();
        assert_eq!(stress(&p, &SymTensor2::identity()), SymTensor2::identity().scale(5.0));
        assert_eq!(stress(&p, &SymTensor2::zero()), SymTensor2::zero());
        let q = LameParameters::new(7.3, 0.4).unwrap();
        let dev = SymTensor2([1.0, -0.25, -0.75, 0.2, -0.1, 0.3]);
        let s = stress(&q, &dev);
        for (a, b) in s.0.iter().zip(dev.0) {
            assert_relative_eq!(*a, 0.8 * b, epsilon = 1e-15);
        }
    }

    #[test]
    fn constant_field_is_admissible() {
        let f = LameField::constant(LameParameters::new(1.0, 1.0).unwrap());
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64, -0.5 * i as f64, -1.0 - i as f64)).collect();
        assert!(validate_field(&f, &pts).unwrap().is_admissible());
    }

    #[test]
    fn negative_shear_point_reported() {
        let f = LameField::new(|_| 1.0, |x| if x[0] > 0.5 { -1.0 } else { 1.0 }, 1e3, 0.5, 0.5);
        let pts = vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, -1.0)];
        let rep = validate_field(&f, &pts).unwrap();
        assert!(rep.violations.iter().any(|v| matches!(v,
            FieldViolation::ShearFloor { point, .. } if *point == pts[1])));
        assert!(!rep.violations.iter().any(|v| matches!(v,
            FieldViolation::ShearFloor { point, .. } if *point == pts[0])));
    }

    #[test]
    fn tanh_profile_passes_lipschitz_bound() {
        // |d/dx3 (0.1 tanh x3)| <= 0.1, so every difference quotient is below 0.2.
        let f = LameField::new(|_| 1.0, |x| 1.0 + 0.1 * x[2].tanh(), 0.2, 0.5, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-4.0..0.0)))
            .collect();
        let rep = validate_field(&f, &pts).unwrap();
        assert!(rep.is_admissible(), "{:?}", rep.violations.first());
        assert!(rep.max_lipschitz_estimate <= 0.1 + 1e-12);
    }

    #[test]
    fn empty_sample_set_rejected() {
        let f = LameField::constant(LameParameters::new(1.0, 1.0).unwrap());
        assert!(validate_field(&f, &[]).is_err());
    }

    fn sym_strategy() -> impl Strategy<Value = SymTensor2> {
        prop::array::uniform6(-10.0f64..10.0).prop_map(SymTensor2)
    }

    proptest! {
        #[test]
        fn stress_of_strain_is_linear(
            g in prop::array::uniform9(-5.0f64..5.0),
            h in prop::array::uniform9(-5.0f64..5.0),
            a in -3.0f64..3.0,
        ) {
            let p = LameParameters::new(1.7, 0.9).unwrap();
            let g = Tensor2::from_row_slice(&g);
            let h = Tensor2::from_row_slice(&h);
            let lhs = stress(&p, &strain(&(g * a + h)));
            let rhs = stress(&p, &strain(&g)).scale(a) + stress(&p, &strain(&h));
            for (x, y) in lhs.0.iter().zip(rhs.0) {
                prop_assert!((x - y).abs() <= 1e-11 * (1.0 + y.abs()));
            }
            let skew = g - g.transpose();
            prop_assert_eq!(stress(&p, &strain(&skew)), SymTensor2::zero());
        }

        #[test]
        fn quadratic_form_is_coercive(
            e in sym_strategy(),
            lambda in -0.6f64..20.0,
            mu in 0.05f64..10.0,
        ) {
            prop_assume!(3.0 * lambda + 2.0 * mu > 1e-3);
            let p = LameParameters::new(lambda, mu).unwrap();
            let c = p.coercivity_constant();
            prop_assert!(c > 0.0);
            let q = stress(&p, &e).contract(&e);
            prop_assert!(q >= c * e.contract(&e) * (1.0 - 1e-12));
        }
    }
}
