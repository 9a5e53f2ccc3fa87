//! Monotone (integrated) spline bases.
//!
//! The cumulative baseline hazard is approximated by `Λ(t) = Σ γ_l M_l(t)`
//! where each basis function `M_l` is nondecreasing from 0 to 1 on the
//! boundary interval, so any nonnegative coefficient vector yields a
//! monotone hazard. Following Ramsay's construction, a basis of stated
//! degree `d` consists of the running integrals of normalized M-splines of
//! order `d`; with `p` interior knots this gives `p + d` basis functions.
//!
//! Integrals are evaluated through the classical identity
//! `I_l(x) = Σ_{m > l} N_m(x)` where `N_m` are the partition-of-unity
//! B-splines of degree `d` on the same knots with boundary multiplicity
//! `d + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interior-knot placement rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnotPlacement {
    /// Equally spaced empirical quantiles of the observation times (default).
    Quantile,
    /// Equally spaced points between the minimum and maximum times.
    Uniform,
}

/// A monotone spline basis on a closed time interval.
///
/// Immutable after construction; evaluation is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct SplineBasis {
    degree: usize,
    boundary: (f64, f64),
    interior: Vec<f64>,
    /// Padded knots for degree-`degree` B-splines: boundary multiplicity
    /// `degree + 1`, interior knots once, strictly increasing in between.
    bknots: Vec<f64>,
}

/// Serialized form: derived knot padding is rebuilt on load.
#[derive(Serialize, Deserialize)]
struct BasisRepr {
    degree: usize,
    boundary: (f64, f64),
    interior: Vec<f64>,
}

impl From<SplineBasis> for BasisRepr {
    fn from(b: SplineBasis) -> Self {
        BasisRepr { degree: b.degree, boundary: b.boundary, interior: b.interior }
    }
}

impl TryFrom<BasisRepr> for SplineBasis {
    type Error = Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        SplineBasis::from_knots(r.degree, r.boundary, r.interior)
    }
}

impl SplineBasis {
    /// Builds a basis of the given degree from observation times.
    ///
    /// The boundary is `(min, max)` of the finite times; interior knots are
    /// placed per `placement`. Knots collapsed by ties are nudged apart by
    /// `1e-9 · (b − a)` so the knot vector stays strictly increasing.
    pub fn from_times(
        degree: usize,
        times: &[f64],
        n_interior: usize,
        placement: KnotPlacement,
    ) -> Result<Self> {
        if degree < 1 {
            return Err(Error::config("spline degree must be at least 1"));
        }
        let mut finite: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
        finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let distinct = finite.windows(2).filter(|w| w[0] < w[1]).count() + usize::from(!finite.is_empty());
        if distinct < 2 {
            return Err(Error::config("need at least two distinct finite observation times"));
        }
        let a = finite[0];
        let b = finite[finite.len() - 1];
        let interior: Vec<f64> = match placement {
            KnotPlacement::Quantile => (1..=n_interior)
                .map(|i| quantile(&finite, i as f64 / (n_interior + 1) as f64))
                .collect(),
            KnotPlacement::Uniform => (1..=n_interior)
                .map(|i| a + (b - a) * i as f64 / (n_interior + 1) as f64)
                .collect(),
        };
        Self::from_knots(degree, (a, b), interior)
    }

    /// Builds a basis from an explicit boundary and interior knots.
    pub fn from_knots(degree: usize, boundary: (f64, f64), interior: Vec<f64>) -> Result<Self> {
        if degree < 1 {
            return Err(Error::config("spline degree must be at least 1"));
        }
        let (a, b) = boundary;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::config(format!("invalid boundary ({a}, {b})")));
        }
        let eps = 1e-9 * (b - a);
        if eps * (interior.len() + 1) as f64 >= b - a {
            return Err(Error::config("too many interior knots for the boundary interval"));
        }
        let mut knots = interior;
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::config("interior knot is not finite"));
        }
        // Upward pass: ties (with each other or with the lower boundary)
        // are nudged apart; downward pass: knots pushed onto or past the
        // upper boundary are pulled back inside.
        let mut prev = a;
        for k in knots.iter_mut() {
            if *k <= prev {
                *k = prev + eps;
            }
            prev = *k;
        }
        let mut next = b;
        for k in knots.iter_mut().rev() {
            if *k >= next {
                *k = next - eps;
            }
            next = *k;
        }
        if knots.first().is_some_and(|&k| k <= a) {
            return Err(Error::config(
                "interior knots do not fit strictly inside the boundary after de-duplication",
            ));
        }
        let mut bknots = Vec::with_capacity(2 * (degree + 1) + knots.len());
        bknots.extend(std::iter::repeat(a).take(degree + 1));
        bknots.extend_from_slice(&knots);
        bknots.extend(std::iter::repeat(b).take(degree + 1));
        Ok(SplineBasis { degree, boundary, interior: knots, bknots })
    }

    /// Number of monotone basis functions: interior knots plus degree.
    pub fn n_basis(&self) -> usize {
        self.interior.len() + self.degree
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Evaluates all monotone basis functions at `t`, each in `[0, 1]`.
    ///
    /// `t` is clamped to the boundary interval, so values below the lower
    /// boundary give zeros and values above the upper boundary (including
    /// `+∞`) give ones.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        self.eval_into(t, &mut out);
        out
    }

    /// Writes the basis values at `t` into `out` (length `n_basis`).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.n_basis();
        assert_eq!(out.len(), n, "output slice has wrong length");
        if t >= self.boundary.1 {
            out.fill(1.0);
            return;
        }
        // B-splines of degree `degree`: n + 1 of them.
        let mut bvals = vec![0.0; n + 1];
        bspline_values(&self.bknots, self.degree, t, &mut bvals);
        // I_l = suffix sum of the higher-order B-splines past index l.
        let mut acc = 0.0;
        for l in (0..n).rev() {
            acc += bvals[l + 1];
            out[l] = acc.clamp(0.0, 1.0);
        }
    }

    /// Evaluates the underlying normalized M-spline densities at `t`.
    ///
    /// Each density integrates to 1 over its support; the monotone basis
    /// functions returned by [`SplineBasis::eval`] are their running
    /// integrals. Zero outside the boundary interval.
    pub fn eval_density(&self, t: f64) -> Vec<f64> {
        let n = self.n_basis();
        let mut out = vec![0.0; n];
        if !(t >= self.boundary.0 && t <= self.boundary.1) {
            return out;
        }
        // Order-`degree` M-splines live on the same knots with boundary
        // multiplicity `degree`: strip one padding knot from each end.
        let mknots = &self.bknots[1..self.bknots.len() - 1];
        bspline_values(mknots, self.degree - 1, t, &mut out);
        let k = self.degree as f64;
        for (l, v) in out.iter_mut().enumerate() {
            let width = mknots[l + self.degree] - mknots[l];
            *v *= k / width;
        }
        out
    }

    /// Evaluates the spline cumulative hazard `Σ γ_l M_l(t)`.
    ///
    /// Nondecreasing in `t` for nonnegative coefficients; zero at and below
    /// the lower boundary.
    pub fn cumulative_hazard(&self, gamma: &[f64], t: f64) -> f64 {
        assert_eq!(gamma.len(), self.n_basis(), "coefficient length mismatch");
        debug_assert!(gamma.iter().all(|&g| g >= 0.0), "negative spline coefficient");
        self.eval(t).iter().zip(gamma).map(|(m, g)| m * g).sum()
    }
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Evaluates all partition-of-unity B-splines of the given degree at `x`,
/// clamped to the knot interval. `out` must hold `knots.len() - degree - 1`
/// entries; at most `degree + 1` of them are nonzero.
fn bspline_values(knots: &[f64], degree: usize, x: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), knots.len() - degree - 1);
    let lo = knots[degree];
    let hi = knots[knots.len() - 1 - degree];
    let x = x.clamp(lo, hi);

    // Knot span: last index j with knots[j] <= x, restricted to spans that
    // are nonempty by construction.
    let j = knots
        .partition_point(|&k| k <= x)
        .saturating_sub(1)
        .clamp(degree, knots.len() - degree - 2);

    let mut vals = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    vals[0] = 1.0;
    for k in 1..=degree {
        left[k] = x - knots[j + 1 - k];
        right[k] = knots[j + k] - x;
        let mut saved = 0.0;
        for t in 0..k {
            let tmp = vals[t] / (right[t + 1] + left[k - t]);
            vals[t] = saved + right[t + 1] * tmp;
            saved = left[k - t] * tmp;
        }
        vals[k] = saved;
    }
    out.fill(0.0);
    out[j - degree..=j].copy_from_slice(&vals);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn cubic_basis() -> SplineBasis {
        let times: Vec<f64> = (0..200).map(|i| i as f64 / 25.0).collect();
        SplineBasis::from_times(3, &times, 3, KnotPlacement::Quantile).unwrap()
    }

    #[test]
    fn basis_count_is_interior_plus_degree() {
        let b = cubic_basis();
        assert_eq!(b.n_basis(), 6);
        assert_eq!(b.interior_knots().len(), 3);
    }

    #[test]
    fn boundary_values_are_zero_and_one() {
        let b = cubic_basis();
        let (a, bb) = b.boundary();
        assert!(b.eval(a).iter().all(|&v| v == 0.0));
        assert!(b.eval(bb).iter().all(|&v| v == 1.0));
        assert!(b.eval(f64::INFINITY).iter().all(|&v| v == 1.0));
        assert!(b.eval(a - 1.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degree_one_without_interior_knots_is_linear() {
        let b = SplineBasis::from_knots(1, (0.0, 1.0), vec![]).unwrap();
        assert_eq!(b.n_basis(), 1);
        // The density is the constant 1 on [0, 1]; its running integral at
        // 0.5 is 0.5.
        assert_abs_diff_eq!(b.eval(0.5)[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(b.eval_density(0.5)[0], 1.0, epsilon = 1e-14);
        // Numerical integration of the density reproduces the same value.
        let n = 10_000;
        let mut acc = 0.0;
        let h = 0.5 / n as f64;
        for i in 0..n {
            let t0 = i as f64 * h;
            acc += 0.5 * h * (b.eval_density(t0)[0] + b.eval_density(t0 + h)[0]);
        }
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn basis_functions_integrate_their_densities() {
        // Each monotone basis function is the running integral of its
        // density; check against cumulative trapezoid quadrature.
        let b = cubic_basis();
        let (a, bb) = b.boundary();
        let n_grid = 200_000usize;
        let h = (bb - a) / n_grid as f64;
        let l = b.n_basis();
        let mut acc = vec![0.0; l];
        let mut prev = b.eval_density(a);
        for i in 1..=n_grid {
            let t = a + i as f64 * h;
            let cur = b.eval_density(t);
            for j in 0..l {
                acc[j] += 0.5 * h * (prev[j] + cur[j]);
            }
            prev = cur;
            if i % 20_000 == 0 || i == n_grid {
                let vals = b.eval(t);
                for j in 0..l {
                    assert_abs_diff_eq!(acc[j], vals[j], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        let b = cubic_basis();
        let (_a, bb) = b.boundary();
        let ones = b.eval(bb);
        for v in &ones {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cumulative_hazard_basics() {
        let b = cubic_basis();
        let (a, bb) = b.boundary();
        let l = b.n_basis();
        assert_eq!(b.cumulative_hazard(&vec![0.0; l], 3.0), 0.0);
        assert_abs_diff_eq!(b.cumulative_hazard(&vec![1.0; l], bb), l as f64, epsilon = 1e-12);
        assert_eq!(b.cumulative_hazard(&vec![0.3; l], a), 0.0);
    }

    #[test]
    fn monotone_for_random_nonnegative_coefficients() {
        let b = cubic_basis();
        let (a, bb) = b.boundary();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let gamma: Vec<f64> = (0..b.n_basis()).map(|_| rng.random::<f64>() * 3.0).collect();
        let mut prev = 0.0;
        for i in 0..=1000 {
            let t = a + (bb - a) * i as f64 / 1000.0;
            let v = b.cumulative_hazard(&gamma, t);
            assert!(v >= prev - 1e-12, "cumulative hazard decreased at t={t}");
            prev = v;
        }
    }

    #[test]
    fn quantile_placement_handles_ties() {
        // Heavily tied times collapse quantiles; interior knots must still
        // come out strictly increasing.
        let times = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0];
        let b = SplineBasis::from_times(2, &times, 3, KnotPlacement::Quantile).unwrap();
        let k = b.interior_knots();
        assert!(k.windows(2).all(|w| w[0] < w[1]));
        assert!(k.iter().all(|&x| x > 1.0 && x < 5.0));
    }

    #[test]
    fn deterministic_construction() {
        let times: Vec<f64> = (0..57).map(|i| (i as f64 * 0.37).sin().abs() * 4.0 + 0.1).collect();
        let b1 = SplineBasis::from_times(3, &times, 4, KnotPlacement::Quantile).unwrap();
        let b2 = SplineBasis::from_times(3, &times, 4, KnotPlacement::Quantile).unwrap();
        assert_eq!(b1.bknots, b2.bknots);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(SplineBasis::from_times(3, &[2.0, 2.0, 2.0], 3, KnotPlacement::Quantile).is_err());
        assert!(SplineBasis::from_times(3, &[], 0, KnotPlacement::Uniform).is_err());
        assert!(SplineBasis::from_times(0, &[0.0, 1.0], 0, KnotPlacement::Uniform).is_err());
        assert!(SplineBasis::from_times(3, &[f64::INFINITY, 1.0], 0, KnotPlacement::Uniform).is_err());
    }

    #[test]
    fn uniform_placement_spaces_knots_evenly() {
        let b = SplineBasis::from_times(2, &[0.0, 8.0], 3, KnotPlacement::Uniform).unwrap();
        assert_eq!(b.interior_knots(), &[2.0, 4.0, 6.0]);
    }

    proptest! {
        #[test]
        fn values_lie_in_unit_interval(t in 0.0f64..10.0) {
            let b = cubic_basis();
            for v in b.eval(t) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn componentwise_monotone(t1 in 0.0f64..10.0, t2 in 0.0f64..10.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let b = cubic_basis();
            let v1 = b.eval(lo);
            let v2 = b.eval(hi);
            for (a, c) in v1.iter().zip(v2.iter()) {
                prop_assert!(a <= &(c + 1e-12));
            }
        }
    }
}
