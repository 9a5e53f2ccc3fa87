//! The logarithmic transformation family and its gamma frailty.
//!
//! `G(x) = log(1 + r·x)/r` for `r > 0`, with `r = 0` denoting the identity
//! (proportional hazards). For `r > 0` the transformation arises as the
//! negative log Laplace transform of a gamma frailty with mean 1 and
//! variance `r`, which is what makes the Poisson data augmentation of the
//! EM algorithm work. Frailty expectations without closed form are computed
//! by generalized Gauss-Laguerre quadrature.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformation family parameter `r ≥ 0` (the frailty variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformationFamily {
    r: f64,
}

impl TransformationFamily {
    pub fn new(r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::config(format!("transformation parameter r must be finite and >= 0, got {r}")));
        }
        Ok(TransformationFamily { r })
    }

    /// Proportional hazards: identity transformation, degenerate frailty.
    pub fn proportional_hazards() -> Self {
        TransformationFamily { r: 0.0 }
    }

    /// Proportional odds: `G(x) = log(1 + x)`.
    pub fn proportional_odds() -> Self {
        TransformationFamily { r: 1.0 }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn is_ph(&self) -> bool {
        self.r == 0.0
    }

    /// `G(x)`, nondecreasing and concave with `G(0) = 0`.
    pub fn apply(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0, "transformation argument must be nonnegative");
        if self.r == 0.0 {
            x
        } else {
            (self.r * x).ln_1p() / self.r
        }
    }

    /// `G'(x) = 1/(1 + r·x)`.
    pub fn deriv(&self, x: f64) -> f64 {
        1.0 / (1.0 + self.r * x)
    }

    /// `G⁻¹(y)`, computed with a stable `exp(x) − 1`.
    pub fn inverse(&self, y: f64) -> f64 {
        debug_assert!(y >= 0.0);
        if self.r == 0.0 {
            y
        } else {
            (self.r * y).exp_m1() / self.r
        }
    }

    /// `exp(−G(u)) = (1 + r·u)^(−1/r)`, the marginal survival factor.
    pub fn survival_factor(&self, u: f64) -> f64 {
        (-self.apply(u)).exp()
    }

    /// `exp(−p·G(u)) = (1 + r·u)^(−p/r)`; the E-step needs powers `1 + r`.
    pub fn survival_factor_pow(&self, u: f64, p: f64) -> f64 {
        (-p * self.apply(u)).exp()
    }

    /// Builds a quadrature rule for expectations against the frailty
    /// density: `∫ g(η) f(η | r) dη ≈ Σ w_k g(η_k)`.
    ///
    /// Requires `r > 0`; at `r = 0` the frailty is a point mass at 1 and
    /// callers must use that degenerate path directly.
    pub fn frailty_quadrature(&self, order: usize) -> Result<QuadratureRule> {
        if self.r == 0.0 {
            return Err(Error::config("frailty quadrature is undefined at r = 0 (degenerate frailty)"));
        }
        if order < 2 {
            return Err(Error::config("quadrature order must be at least 2"));
        }
        QuadratureRule::generalized_laguerre(order, self.r)
    }
}

/// Generalized Gauss-Laguerre rule rescaled to the gamma frailty measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    r: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Golub-Welsch construction for the weight `x^(1/r − 1) e^(−x)`, then
    /// the change of variable `η = r·x` mapping to the Gamma(1/r, r)
    /// density. Weights are the squared first eigenvector components of the
    /// Jacobi matrix and therefore sum to 1 without any gamma-function
    /// normalization.
    fn generalized_laguerre(order: usize, r: f64) -> Result<Self> {
        let alpha = 1.0 / r - 1.0;
        let n = order;
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            jacobi[(i, i)] = 2.0 * i as f64 + alpha + 1.0;
            if i + 1 < n {
                let k = (i + 1) as f64;
                let off = (k * (k + alpha)).sqrt();
                jacobi[(i, i + 1)] = off;
                jacobi[(i + 1, i)] = off;
            }
        }
        let eigen = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let node = eigen.eigenvalues[i];
                let w = eigen.eigenvectors[(0, i)].powi(2);
                (r * node, w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if pairs.iter().any(|(x, w)| !x.is_finite() || !w.is_finite() || *x <= 0.0 || *w <= 0.0) {
            return Err(Error::numerical("Gauss-Laguerre node solver produced invalid nodes or weights"));
        }
        let rule = QuadratureRule {
            r,
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        };
        let mass: f64 = rule.weights.iter().sum();
        let mean = rule.integrate(|eta| eta);
        if (mass - 1.0).abs() > 1e-10 || (mean - 1.0).abs() > 1e-10 {
            return Err(Error::numerical(format!(
                "Gauss-Laguerre rule failed validation: mass {mass}, mean {mean}"
            )));
        }
        Ok(rule)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ g(η) f(η | r) dη`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }

    /// `∫ g(η) exp(−u·η) f(η | r) dη`, evaluated by absorbing the
    /// exponential into the gamma measure (node rescaling by `1 + u·r`).
    ///
    /// The plain rule loses all accuracy when `u·r` is large because the
    /// integrand decays much faster than the weight; the tilted form is
    /// exact for polynomial `g` at any `u ≥ 0`.
    pub fn integrate_damped<F: FnMut(f64) -> f64>(&self, u: f64, mut g: F) -> f64 {
        debug_assert!(u >= 0.0);
        let scale = 1.0 + u * self.r;
        // (1 + u·r)^(−1/r), the total tilted mass.
        let mass = (-(u * self.r).ln_1p() / self.r).exp();
        let sum: f64 = self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x / scale)).sum();
        mass * sum
    }
}
