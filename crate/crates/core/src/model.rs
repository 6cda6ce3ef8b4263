//! Gradient-flow model: free energy `E[φ] = γ/2 ⟨∇φ, ∇φ⟩ + ∫ E₁(φ)` and the
//! dissipation operator `G`.

use std::fmt::Debug;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("gamma must be positive, got {0}")]
    Gamma(f64),
    #[error("beta must be nonnegative, got {0}")]
    Beta(f64),
}

/// Bulk potential density `E₁(φ)` together with the pieces the schemes need.
pub trait Potential: Debug + Send + Sync {
    fn density(&self, phi: f64) -> f64;
    fn derivative(&self, phi: f64) -> f64;
    fn second_derivative(&self, phi: f64) -> f64;
    /// First-order finite quotient `(E₁(a) − E₁(b)) / (a − b)`, continuous at `a = b`.
    fn quotient(&self, a: f64, b: f64) -> f64;
    /// Partial derivatives of [`Potential::quotient`] in `a` and `b`.
    fn quotient_partials(&self, a: f64, b: f64) -> (f64, f64);
}

/// `E₁(φ) = (1 − φ²)² / (4ε²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWell {
    pub epsilon: f64,
}

impl Potential for DoubleWell {
    fn density(&self, phi: f64) -> f64 {
        let s = 1.0 - phi * phi;
        s * s / (4.0 * self.epsilon * self.epsilon)
    }

    fn derivative(&self, phi: f64) -> f64 {
        phi * (phi * phi - 1.0) / (self.epsilon * self.epsilon)
    }

    fn second_derivative(&self, phi: f64) -> f64 {
        (3.0 * phi * phi - 1.0) / (self.epsilon * self.epsilon)
    }

    fn quotient(&self, a: f64, b: f64) -> f64 {
        (a + b) * (a * a + b * b - 2.0) / (4.0 * self.epsilon * self.epsilon)
    }

    fn quotient_partials(&self, a: f64, b: f64) -> (f64, f64) {
        let s = 4.0 * self.epsilon * self.epsilon;
        let ab = 2.0 * a * b;
        (
            (3.0 * a * a + b * b + ab - 2.0) / s,
            (a * a + 3.0 * b * b + ab - 2.0) / s,
        )
    }
}

/// `E₁ ≡ 0`: turns every scheme into a linear diffusion, used for
/// manufactured solutions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn density(&self, _: f64) -> f64 {
        0.0
    }
    fn derivative(&self, _: f64) -> f64 {
        0.0
    }
    fn second_derivative(&self, _: f64) -> f64 {
        0.0
    }
    fn quotient(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn quotient_partials(&self, _: f64, _: f64) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// Dissipation mechanism: `G = −I` (L², Allen–Cahn) or `G = Δ` (H⁻¹, Cahn–Hilliard).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissipationKind {
    L2,
    Hminus1,
}

impl DissipationKind {
    pub fn conserves_mass(self) -> bool {
        matches!(self, DissipationKind::Hminus1)
    }
}

/// Free-energy parameters.
///
/// `beta` shifts part of the potential into the linear operator
/// `L = −Δ + β/ε²` used by the relaxed schemes; `c0` offsets the auxiliary
/// variables. The shifted rewrite reproduces the original energy only for
/// `gamma = 1`.
#[derive(Debug, Clone)]
pub struct FreeEnergy {
    pub gamma: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub c0: f64,
    potential: Arc<dyn Potential>,
}

impl FreeEnergy {
    pub fn double_well(gamma: f64, epsilon: f64) -> Self {
        Self {
            gamma,
            epsilon,
            beta: 0.0,
            c0: 0.0,
            potential: Arc::new(DoubleWell { epsilon }),
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_c0(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    pub fn with_potential(mut self, potential: Arc<dyn Potential>) -> Self {
        self.potential = potential;
        self
    }

    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.epsilon > 0.0) {
            return Err(ModelError::Epsilon(self.epsilon));
        }
        if !(self.gamma > 0.0) {
            return Err(ModelError::Gamma(self.gamma));
        }
        if !(self.beta >= 0.0) {
            return Err(ModelError::Beta(self.beta));
        }
        Ok(())
    }

    pub fn e1_density(&self, phi: f64) -> f64 {
        self.potential.density(phi)
    }

    pub fn e1_derivative(&self, phi: f64) -> f64 {
        self.potential.derivative(phi)
    }

    pub fn e1_second_derivative(&self, phi: f64) -> f64 {
        self.potential.second_derivative(phi)
    }

    pub fn e1_quotient(&self, a: f64, b: f64) -> f64 {
        self.potential.quotient(a, b)
    }

    pub fn e1_quotient_partials(&self, a: f64, b: f64) -> (f64, f64) {
        self.potential.quotient_partials(a, b)
    }

    /// `β/ε²`, the zeroth-order part of `L`.
    pub fn stabilization(&self) -> f64 {
        self.beta / (self.epsilon * self.epsilon)
    }

    fn offset_density(&self) -> f64 {
        (2.0 * self.beta + self.beta * self.beta) / (4.0 * self.epsilon * self.epsilon)
    }

    /// `Ē₁(φ) = E₁(φ) − β φ²/(2ε²) + (2β+β²)/(4ε²)`; for the double well this is
    /// `(1+β−φ²)²/(4ε²)`.
    pub fn shifted_density(&self, phi: f64) -> f64 {
        self.e1_density(phi) - 0.5 * self.stabilization() * phi * phi + self.offset_density()
    }

    pub fn shifted_derivative(&self, phi: f64) -> f64 {
        self.e1_derivative(phi) - self.stabilization() * phi
    }

    /// `|Ω|(2β+β²)/(4ε²)`.
    pub fn energy_offset(&self, domain_measure: f64) -> f64 {
        domain_measure * self.offset_density()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fe(eps: f64) -> FreeEnergy {
        FreeEnergy::double_well(1.0, eps)
    }

    #[test]
    fn density_values() {
        let f = fe(0.1);
        assert_eq!(f.e1_density(1.0), 0.0);
        assert_eq!(f.e1_density(-1.0), 0.0);
        assert!((f.e1_density(0.0) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_values() {
        let f = fe(1.0);
        assert_eq!(f.e1_derivative(0.0), 0.0);
        assert_eq!(f.e1_derivative(1.0), 0.0);
        assert_eq!(f.e1_derivative(-1.0), 0.0);
        // central difference of the density at step 1e-6
        let h = 1e-6;
        let fd = (f.e1_density(0.5 + h) - f.e1_density(0.5 - h)) / (2.0 * h);
        assert!((fd - (-0.375)).abs() < 1e-8);
        assert!((f.e1_derivative(0.5) + 0.375).abs() < 1e-15);
    }

    #[test]
    fn quotient_values() {
        let f = fe(1.0);
        assert_eq!(f.e1_quotient(1.0, -1.0), 0.0);
        let oracle = (f.e1_density(0.5) - f.e1_density(-0.2)) / 0.7;
        assert!((oracle - (-0.12825)).abs() < 1e-12);
        assert!((f.e1_quotient(0.5, -0.2) - (-0.12825)).abs() < 1e-14);
    }

    #[test]
    fn quotient_on_diagonal_is_derivative() {
        let f = fe(0.3);
        for k in 0..20 {
            let phi = -1.5 + 0.157 * k as f64;
            let q = f.e1_quotient(phi, phi);
            assert!((q - f.e1_derivative(phi)).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn shifted_values() {
        let f = fe(0.1).with_beta(1.0);
        assert!((f.shifted_density(0.0) - 100.0).abs() < 1e-10);
        let dw = |phi: f64| {
            let s = 1.0 + f.beta - phi * phi;
            s * s / (4.0 * f.epsilon * f.epsilon)
        };
        for phi in [-1.3, -0.4, 0.0, 0.7, 1.1] {
            assert!((f.shifted_density(phi) - dw(phi)).abs() < 1e-10 * (1.0 + dw(phi)));
            let closed = phi * (phi * phi - 1.0 - f.beta) / (f.epsilon * f.epsilon);
            assert!((f.shifted_derivative(phi) - closed).abs() < 1e-10 * (1.0 + closed.abs()));
        }
        let g = fe(0.1);
        for phi in [-0.8, 0.3] {
            assert_eq!(g.shifted_density(phi), g.e1_density(phi));
            assert_eq!(g.shifted_derivative(phi), g.e1_derivative(phi));
        }
    }

    #[test]
    fn shifted_derivative_matches_finite_differences() {
        let f = fe(0.2).with_beta(2.0);
        let h = 1e-6;
        for k in 0..20 {
            let phi = -1.2 + 0.121 * k as f64;
            let fd = (f.shifted_density(phi + h) - f.shifted_density(phi - h)) / (2.0 * h);
            let an = f.shifted_derivative(phi);
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(1.0),
                "{phi}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let f = fe(0.4);
        let h = 1e-6;
        for (a, b) in [(0.3, -0.9), (1.2, 0.1), (-0.5, -0.5)] {
            let (da, db) = f.e1_quotient_partials(a, b);
            let fa = (f.e1_quotient(a + h, b) - f.e1_quotient(a - h, b)) / (2.0 * h);
            let fb = (f.e1_quotient(a, b + h) - f.e1_quotient(a, b - h)) / (2.0 * h);
            assert!((da - fa).abs() < 1e-6 * da.abs().max(1.0));
            assert!((db - fb).abs() < 1e-6 * db.abs().max(1.0));
        }
    }

    #[test]
    fn validation() {
        assert!(fe(0.1).validate().is_ok());
        assert!(matches!(fe(0.0).validate(), Err(ModelError::Epsilon(_))));
        assert!(FreeEnergy::double_well(-1.0, 0.1).validate().is_err());
        assert!(fe(0.1).with_beta(-1.0).validate().is_err());
        assert!(fe(0.1).with_beta(2.0).energy_offset(3.0) >= 0.0);
    }

    proptest! {
        #[test]
        fn quotient_times_difference_is_energy_difference(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let f = fe(0.1);
            let lhs = f.e1_quotient(a, b) * (a - b);
            let rhs = f.e1_density(a) - f.e1_density(b);
            let scale = f.e1_density(a).abs().max(f.e1_density(b).abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn quotient_is_symmetric(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let f = fe(0.37);
            prop_assert_eq!(f.e1_quotient(a, b), f.e1_quotient(b, a));
        }
    }
}
