//! Clamped uniform cubic B-spline on `[a, b]`.
//!
//! The knot vector repeats each endpoint four times and places `G - 1`
//! uniformly spaced interior knots, giving `G + 3` basis functions. Outside
//! the domain the spline continues linearly with the value and slope of the
//! boundary polynomial piece, so it stays C1 everywhere and C2 inside.

use serde::{Deserialize, Serialize};

use super::NodeError;

const DEGREE: usize = 3;
const ORDER: usize = DEGREE + 1;

pub const DEFAULT_DOMAIN: [f64; 2] = [-1.0, 1.0];
pub const DEFAULT_GRID: usize = 8;

/// The four active basis functions at a point: coefficient indices
/// `first..first + 4`, their values and their x-derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalBasis {
    pub first: usize,
    pub values: [f64; ORDER],
    pub slopes: [f64; ORDER],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineRepr", into = "SplineRepr")]
pub struct SplineNode {
    domain: [f64; 2],
    grid_intervals: usize,
    coefficients: Vec<f64>,
    knots: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplineRepr {
    domain: [f64; 2],
    grid_intervals: usize,
    coefficients: Vec<f64>,
}

impl TryFrom<SplineRepr> for SplineNode {
    type Error = NodeError;

    fn try_from(r: SplineRepr) -> Result<Self, NodeError> {
        SplineNode::new(r.domain, r.grid_intervals, r.coefficients)
    }
}

impl From<SplineNode> for SplineRepr {
    fn from(s: SplineNode) -> Self {
        SplineRepr {
            domain: s.domain,
            grid_intervals: s.grid_intervals,
            coefficients: s.coefficients,
        }
    }
}

impl SplineNode {
    pub fn new(
        domain: [f64; 2],
        grid_intervals: usize,
        coefficients: Vec<f64>,
    ) -> Result<Self, NodeError> {
        let [a, b] = domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(NodeError::InvalidSpline(format!(
                "domain [{a}, {b}] must be finite with a < b"
            )));
        }
        if grid_intervals == 0 {
            return Err(NodeError::InvalidSpline(
                "grid_intervals must be positive".into(),
            ));
        }
        if coefficients.len() != grid_intervals + DEGREE {
            return Err(NodeError::InvalidSpline(format!(
                "expected {} coefficients for {grid_intervals} intervals, found {}",
                grid_intervals + DEGREE,
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(NodeError::InvalidSpline(
                "coefficients must be finite".into(),
            ));
        }
        let h = (b - a) / grid_intervals as f64;
        let knots = (0..grid_intervals + 2 * DEGREE + 1)
            .map(|j| {
                let interior = j.saturating_sub(DEGREE).min(grid_intervals);
                if interior == grid_intervals {
                    b
                } else {
                    a + h * interior as f64
                }
            })
            .collect();
        Ok(Self {
            domain,
            grid_intervals,
            coefficients,
            knots,
        })
    }

    /// Spline reproducing `f(x) = x` on the domain: coefficients at the
    /// Greville abscissae.
    pub fn identity(domain: [f64; 2], grid_intervals: usize) -> Result<Self, NodeError> {
        let probe = Self::new(domain, grid_intervals, vec![0.0; grid_intervals + DEGREE])?;
        let coefficients = (0..grid_intervals + DEGREE)
            .map(|i| (probe.knots[i + 1] + probe.knots[i + 2] + probe.knots[i + 3]) / 3.0)
            .collect();
        Self::new(domain, grid_intervals, coefficients)
    }

    pub fn constant(domain: [f64; 2], grid_intervals: usize, value: f64) -> Result<Self, NodeError> {
        Self::new(domain, grid_intervals, vec![value; grid_intervals + DEGREE])
    }

    pub fn domain(&self) -> [f64; 2] {
        self.domain
    }

    pub fn grid_intervals(&self) -> usize {
        self.grid_intervals
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Replaces the coefficients; the count must stay `G + 3`.
    pub fn set_coefficients(&mut self, coefficients: Vec<f64>) -> Result<(), NodeError> {
        if coefficients.len() != self.coefficients.len() {
            return Err(NodeError::InvalidSpline(format!(
                "expected {} coefficients, found {}",
                self.coefficients.len(),
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(NodeError::InvalidSpline(
                "coefficients must be finite".into(),
            ));
        }
        self.coefficients = coefficients;
        Ok(())
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Active basis at `x`, including the linear continuation outside the
    /// domain. `x` must not be NaN.
    pub fn local_basis(&self, x: f64) -> LocalBasis {
        let [a, b] = self.domain;
        let anchor = x.clamp(a, b);
        let mut local = self.interior_basis(anchor);
        let offset = x - anchor;
        if offset != 0.0 {
            for i in 0..ORDER {
                local.values[i] += local.slopes[i] * offset;
            }
        }
        local
    }

    /// Spline value at `x`.
    pub fn eval(&self, x: f64) -> Result<f64, NodeError> {
        if x.is_nan() {
            return Err(NodeError::NanInput);
        }
        Ok(self.eval_unchecked(x))
    }

    /// Value and input-derivative without the NaN guard, for hot loops.
    #[inline]
    pub fn eval_with_slope(&self, x: f64) -> (f64, f64) {
        let local = self.local_basis(x);
        let c = &self.coefficients[local.first..local.first + ORDER];
        let mut value = 0.0;
        let mut slope = 0.0;
        for i in 0..ORDER {
            value += c[i] * local.values[i];
            slope += c[i] * local.slopes[i];
        }
        (value, slope)
    }

    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        self.eval_with_slope(x).0
    }

    /// Derivative with respect to `x` and to every coefficient.
    pub fn grad(&self, x: f64) -> Result<(f64, Vec<f64>), NodeError> {
        if x.is_nan() {
            return Err(NodeError::NanInput);
        }
        let local = self.local_basis(x);
        let mut dcoeff = vec![0.0; self.coefficients.len()];
        let mut dx = 0.0;
        for i in 0..ORDER {
            dcoeff[local.first + i] = local.values[i];
            dx += self.coefficients[local.first + i] * local.slopes[i];
        }
        Ok((dx, dcoeff))
    }

    /// Knot span `k` with `t[k] <= x < t[k+1]`, clamped to the last
    /// nonempty span at `x = b`.
    fn span(&self, x: f64) -> usize {
        let [a, b] = self.domain;
        let g = self.grid_intervals;
        let h = (b - a) / g as f64;
        let mut s = (((x - a) / h).floor().max(0.0) as usize).min(g - 1);
        // Correct floating-point slop in the division.
        while s > 0 && x < self.knots[s + DEGREE] {
            s -= 1;
        }
        while s + 1 < g && x >= self.knots[s + DEGREE + 1] {
            s += 1;
        }
        s + DEGREE
    }

    /// Cox-de Boor triangle for `x` in `[a, b]`. The degree-2 row is kept to
    /// form the derivative of the degree-3 basis.
    fn interior_basis(&self, x: f64) -> LocalBasis {
        let t = &self.knots;
        let k = self.span(x);
        let mut n = [0.0; ORDER];
        let mut quad = [0.0; DEGREE];
        let mut left = [0.0; ORDER];
        let mut right = [0.0; ORDER];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            if j == DEGREE {
                quad.copy_from_slice(&n[..DEGREE]);
            }
            left[j] = x - t[k + 1 - j];
            right[j] = t[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = n[r] / denom;
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        // quad[r] is N_{k-2+r, 2}. dN_{i,3} = 3 N_{i,2}/(t_{i+3}-t_i)
        //                                    - 3 N_{i+1,2}/(t_{i+4}-t_{i+1}).
        let first = k - DEGREE;
        let quad_at = |i: usize| -> f64 {
            // i is a global basis index; only k-2..=k are nonzero.
            if i + 2 < k || i > k {
                0.0
            } else {
                quad[i + 2 - k]
            }
        };
        let mut slopes = [0.0; ORDER];
        for (r, slope) in slopes.iter_mut().enumerate() {
            let i = first + r;
            let mut d = 0.0;
            let span_lo = t[i + DEGREE] - t[i];
            if span_lo > 0.0 {
                d += quad_at(i) / span_lo;
            }
            let span_hi = t[i + DEGREE + 1] - t[i + 1];
            if span_hi > 0.0 {
                d -= quad_at(i + 1) / span_hi;
            }
            *slope = DEGREE as f64 * d;
        }
        LocalBasis {
            first,
            values: n,
            slopes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spline(seed: u64) -> SplineNode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..DEFAULT_GRID + 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SplineNode::new([-1.0, 1.0], DEFAULT_GRID, coeffs).unwrap()
    }

    fn near_knot(s: &SplineNode, x: f64, h: f64) -> bool {
        s.knots().iter().any(|&k| (x - k).abs() <= h)
    }

    #[test]
    fn partition_of_unity() {
        let s = SplineNode::constant([-2.0, 3.0], 7, 0.0).unwrap();
        for i in 0..=1000 {
            let x = -2.0 + 5.0 * i as f64 / 1000.0;
            let local = s.local_basis(x);
            let total: f64 = local.values.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "x={x} sum={total}");
            assert!(local.values.iter().all(|&v| v >= -1e-15));
        }
    }

    #[test]
    fn constant_coefficients_give_constant_spline() {
        let s = SplineNode::constant([-1.0, 1.0], 8, 2.5).unwrap();
        for i in 0..=50 {
            let x = -1.0 + 2.0 * i as f64 / 50.0;
            assert!((s.eval(x).unwrap() - 2.5).abs() < 1e-12);
            let (dx, _) = s.grad(x).unwrap();
            assert!(dx.abs() < 1e-12);
        }
        // Linear continuation of a constant is constant too.
        assert!((s.eval(4.0).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn least_squares_identity_fit_reproduces_midpoint() {
        // Oracle: fit coefficients to y = x on a dense grid by least squares.
        let probe = SplineNode::constant([0.0, 1.0], 8, 0.0).unwrap();
        let samples = 401;
        let basis = 11;
        let mut design = DMatrix::<f64>::zeros(samples, basis);
        let mut y = DVector::<f64>::zeros(samples);
        for r in 0..samples {
            let x = r as f64 / (samples - 1) as f64;
            let local = probe.local_basis(x);
            for i in 0..4 {
                design[(r, local.first + i)] = local.values[i];
            }
            y[r] = x;
        }
        let normal = design.transpose() * &design;
        let rhs = design.transpose() * &y;
        let coeffs = normal.cholesky().unwrap().solve(&rhs);
        let fitted = SplineNode::new([0.0, 1.0], 8, coeffs.iter().copied().collect()).unwrap();
        assert!((fitted.eval(0.5).unwrap() - 0.5).abs() < 1e-9);
        // The Greville construction agrees with the least-squares oracle.
        let ident = SplineNode::identity([0.0, 1.0], 8).unwrap();
        for (a, b) in ident.coefficients().iter().zip(coeffs.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn outside_domain_is_linear_continuation() {
        let s = random_spline(3);
        let eps = 1e-6;
        for &(edge, dir) in &[(-1.0, -1.0), (1.0, 1.0)] {
            // The boundary slope from the interior piece agrees with a one-sided
            // finite difference, and the exterior continues along it.
            let inside = edge - dir * eps;
            let fd_slope = (s.eval(edge).unwrap() - s.eval(inside).unwrap()) / (edge - inside);
            let slope = s.eval_with_slope(inside).1;
            assert!((slope - fd_slope).abs() < 1e-3 * (1.0 + slope.abs()));
            for &d in &[0.1, 0.5, 2.0] {
                let x = edge + dir * d;
                let expected = s.eval(edge).unwrap() + slope * (x - edge);
                assert!((s.eval(x).unwrap() - expected).abs() < 1e-4 * (1.0 + d));
            }
            // Value and slope are continuous across the boundary.
            let (fa, fb) = (s.eval(edge + dir * eps).unwrap(), s.eval(edge - dir * eps).unwrap());
            assert!((fa - fb).abs() < 1e-4);
        }
    }

    #[test]
    fn input_derivative_matches_central_differences() {
        let s = random_spline(11);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-6;
        for _ in 0..100 {
            let x: f64 = rng.gen_range(-1.3..1.3);
            let (dx, _) = s.grad(x).unwrap();
            let fd = (s.eval(x + h).unwrap() - s.eval(x - h).unwrap()) / (2.0 * h);
            let rel = (dx - fd).abs() / dx.abs().max(fd.abs()).max(1e-3);
            let tol = if near_knot(&s, x, h) { 1e-4 } else { 1e-6 };
            assert!(rel < tol, "x={x} analytic={dx} fd={fd}");
        }
    }

    #[test]
    fn coefficient_derivative_matches_finite_differences() {
        let s = random_spline(5);
        let h = 1e-6;
        for &x in &[-1.4, -0.93, -0.2, 0.0, 0.37, 0.99, 1.0, 1.7] {
            let (_, dc) = s.grad(x).unwrap();
            for i in 0..s.coefficients().len() {
                let mut plus = s.clone();
                let mut minus = s.clone();
                plus.coefficients_mut()[i] += h;
                minus.coefficients_mut()[i] -= h;
                let fd = (plus.eval(x).unwrap() - minus.eval(x).unwrap()) / (2.0 * h);
                let err = (fd - dc[i]).abs();
                assert!(err <= 1e-6 * dc[i].abs().max(1.0), "x={x} i={i}");
            }
        }
    }

    #[test]
    fn rejects_nan_and_bad_shapes() {
        let s = random_spline(1);
        assert_eq!(s.eval(f64::NAN), Err(NodeError::NanInput));
        assert!(s.grad(f64::NAN).is_err());
        assert!(SplineNode::new([1.0, 1.0], 4, vec![0.0; 7]).is_err());
        assert!(SplineNode::new([0.0, 1.0], 4, vec![0.0; 6]).is_err());
        assert!(SplineNode::new([0.0, 1.0], 0, vec![0.0; 3]).is_err());
        assert!(SplineNode::new([0.0, 1.0], 1, vec![0.0, f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let s = random_spline(42);
        let text = serde_json::to_string(&s).unwrap();
        let back: SplineNode = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
        assert!(serde_json::from_str::<SplineNode>(
            r#"{"domain":[0,1],"grid_intervals":1,"coefficients":[0,0,0,0],"extra":1}"#
        )
        .is_err());
    }
}
