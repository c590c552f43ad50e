//! Cubic B-spline basis over match time, varying-coefficient evaluation and
//! the second-order difference penalty used for P-spline smoothing.
//!
//! The basis uses equidistant knots spanning the match-minute range [1, 85],
//! extended by three extra knots with the same spacing on each side so that
//! exactly `K` cubic basis functions are supported on the range and they form
//! a partition of unity there.

use crate::error::{Error, Result};
use crate::MATCH_MINUTES;
use ndarray::Array2;

const DEGREE: usize = 3;
const T_MIN: f64 = 1.0;
const T_MAX: f64 = MATCH_MINUTES as f64;

/// A fixed cubic B-spline basis with `k` functions on [1, 85].
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    k: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Build a basis with `k >= 4` functions. Knot spacing is
    /// `(85 - 1) / (k - 3)`, with three replicated-spacing outer knots on
    /// each side.
    pub fn new(k: usize) -> Result<Self> {
        if k < DEGREE + 1 {
            return Err(Error::InvalidConfig(format!(
                "cubic B-spline basis needs K >= 4, got {k}"
            )));
        }
        let segments = (k - DEGREE) as f64;
        let spacing = (T_MAX - T_MIN) / segments;
        let knots = (0..=k + DEGREE)
            .map(|i| T_MIN + (i as f64 - DEGREE as f64) * spacing)
            .collect();
        Ok(Self { k, knots })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn span_index(&self, t: f64) -> usize {
        // Spans run from DEGREE to k-1; the right endpoint belongs to the
        // last span so the basis is defined on the closed interval.
        let segments = (self.k - DEGREE) as f64;
        let spacing = (T_MAX - T_MIN) / segments;
        let raw = ((t - T_MIN) / spacing).floor() as isize + DEGREE as isize;
        raw.clamp(DEGREE as isize, self.k as isize - 1) as usize
    }

    /// Evaluate all `k` basis functions at `t` in [1, 85].
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        if !(T_MIN..=T_MAX).contains(&t) {
            return Err(Error::Domain(format!(
                "spline evaluation requires t in [1, {T_MAX}], got {t}"
            )));
        }
        let span = self.span_index(t);
        let mut values = vec![0.0; self.k];
        let local = self.nonzero_basis(span, t);
        for (r, v) in local.iter().enumerate() {
            values[span - DEGREE + r] = *v;
        }
        Ok(values)
    }

    // The d+1 basis functions that are nonzero on the given span,
    // computed with the standard triangular recurrence.
    fn nonzero_basis(&self, span: usize, t: f64) -> [f64; DEGREE + 1] {
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }
}

/// Basis matrix with one row per requested minute and one column per basis
/// function. Rows sum to one and all entries are nonnegative.
pub fn basis_matrix(k: usize, t_values: &[usize]) -> Result<Array2<f64>> {
    let basis = SplineBasis::new(k)?;
    let mut out = Array2::zeros((t_values.len(), k));
    for (row, &t) in t_values.iter().enumerate() {
        let vals = basis.evaluate(t as f64)?;
        for (col, v) in vals.into_iter().enumerate() {
            out[(row, col)] = v;
        }
    }
    Ok(out)
}

/// A spline-coefficient vector together with its basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VaryingCoefficient {
    pub coeffs: Vec<f64>,
    pub basis: SplineBasis,
}

impl VaryingCoefficient {
    pub fn new(coeffs: Vec<f64>, basis: SplineBasis) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::InvalidConfig(format!(
                "coefficient vector length {} does not match basis size {}",
                coeffs.len(),
                basis.len()
            )));
        }
        Ok(Self { coeffs, basis })
    }
}

/// Evaluate a varying coefficient at integer minute `t` in 1..=85.
pub fn evaluate_coefficient(vc: &VaryingCoefficient, t: usize) -> Result<f64> {
    if t < 1 || t > MATCH_MINUTES {
        return Err(Error::Domain(format!(
            "minute {t} outside 1..={MATCH_MINUTES}"
        )));
    }
    let vals = vc.basis.evaluate(t as f64)?;
    Ok(vals
        .iter()
        .zip(&vc.coeffs)
        .map(|(b, c)| b * c)
        .sum())
}

/// Second-order difference penalty `(lambda/2) * sum_k (nu_k - 2 nu_{k-1} + nu_{k-2})^2`.
pub fn penalty(coeffs: &[f64], lambda: f64) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "smoothing parameter must be nonnegative, got {lambda}"
        )));
    }
    if coeffs.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "second-difference penalty needs at least 3 coefficients, got {}",
            coeffs.len()
        )));
    }
    let ssq: f64 = coeffs
        .windows(3)
        .map(|w| {
            let d2 = w[2] - 2.0 * w[1] + w[0];
            d2 * d2
        })
        .sum();
    Ok(0.5 * lambda * ssq)
}

/// The (K-2) x K second-difference matrix D with rows (1, -2, 1).
pub fn second_difference_matrix(k: usize) -> Result<Array2<f64>> {
    if k < 3 {
        return Err(Error::InvalidConfig(format!(
            "second-difference matrix needs K >= 3, got {k}"
        )));
    }
    let mut d = Array2::zeros((k - 2, k));
    for row in 0..k - 2 {
        d[(row, row)] = 1.0;
        d[(row, row + 1)] = -2.0;
        d[(row, row + 2)] = 1.0;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array1;
    use proptest::prelude::*;

    // Textbook Cox-de Boor recursion, kept independent of the span-based
    // evaluation above so it can serve as an oracle.
    fn de_boor_naive(knots: &[f64], i: usize, d: usize, t: f64) -> f64 {
        if d == 0 {
            // the domain's right endpoint belongs to the last interior span
            let last_span = knots.len() - 2 - DEGREE;
            if t == knots[last_span + 1] {
                return if i == last_span { 1.0 } else { 0.0 };
            }
            return if t >= knots[i] && t < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let left_den = knots[i + d] - knots[i];
        let right_den = knots[i + d + 1] - knots[i + 1];
        let mut v = 0.0;
        if left_den > 0.0 {
            v += (t - knots[i]) / left_den * de_boor_naive(knots, i, d - 1, t);
        }
        if right_den > 0.0 {
            v += (knots[i + d + 1] - t) / right_den * de_boor_naive(knots, i + 1, d - 1, t);
        }
        v
    }

    #[test]
    fn rejects_small_k() {
        assert!(SplineBasis::new(3).is_err());
        assert!(basis_matrix(2, &[1]).is_err());
    }

    #[test]
    fn partition_of_unity_and_nonnegative() {
        for k in [4, 7, 10, 23] {
            let ts: Vec<usize> = (1..=MATCH_MINUTES).collect();
            let m = basis_matrix(k, &ts).unwrap();
            assert_eq!(m.ncols(), k);
            assert_eq!(m.nrows(), MATCH_MINUTES);
            for row in m.rows() {
                let s: f64 = row.sum();
                assert_relative_eq!(s, 1.0, epsilon = 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn k10_has_ten_columns() {
        let m = basis_matrix(10, &[1, 40, 85]).unwrap();
        assert_eq!(m.ncols(), 10);
    }

    #[test]
    fn constant_coefficients_evaluate_to_constant() {
        let basis = SplineBasis::new(8).unwrap();
        let vc = VaryingCoefficient::new(vec![2.5; 8], basis).unwrap();
        for t in 1..=MATCH_MINUTES {
            assert_relative_eq!(evaluate_coefficient(&vc, t).unwrap(), 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_evaluate_to_zero() {
        let basis = SplineBasis::new(5).unwrap();
        let vc = VaryingCoefficient::new(vec![0.0; 5], basis).unwrap();
        for t in [1, 30, 85] {
            assert_eq!(evaluate_coefficient(&vc, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn evaluation_matches_naive_de_boor() {
        let k = 9;
        let basis = SplineBasis::new(k).unwrap();
        for t in (1..=MATCH_MINUTES).map(|t| t as f64) {
            let fast = basis.evaluate(t).unwrap();
            for (i, &v) in fast.iter().enumerate() {
                let slow = de_boor_naive(basis.knots(), i, DEGREE, t);
                assert_relative_eq!(v, slow, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn linear_coefficients_give_linear_function() {
        // With equidistant knots the Greville abscissae are equidistant, so
        // coefficients linear in k produce a function linear in t.
        let k = 10;
        let basis = SplineBasis::new(k).unwrap();
        let coeffs: Vec<f64> = (0..k).map(|i| 0.5 + 0.25 * i as f64).collect();
        let vc = VaryingCoefficient::new(coeffs, basis).unwrap();
        let f1 = evaluate_coefficient(&vc, 1).unwrap();
        let f85 = evaluate_coefficient(&vc, 85).unwrap();
        let slope = (f85 - f1) / 84.0;
        for t in 1..=MATCH_MINUTES {
            let expected = f1 + slope * (t as f64 - 1.0);
            assert_relative_eq!(
                evaluate_coefficient(&vc, t).unwrap(),
                expected,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn evaluate_out_of_range_fails() {
        let basis = SplineBasis::new(6).unwrap();
        let vc = VaryingCoefficient::new(vec![1.0; 6], basis).unwrap();
        assert!(evaluate_coefficient(&vc, 0).is_err());
        assert!(evaluate_coefficient(&vc, 86).is_err());
    }

    #[test]
    fn penalty_zero_on_constant_and_linear() {
        assert_eq!(penalty(&[3.0; 7], 10.0).unwrap(), 0.0);
        let lin: Vec<f64> = (0..7).map(|i| 2.0 - 0.3 * i as f64).collect();
        assert_relative_eq!(penalty(&lin, 10.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn penalty_hand_value() {
        // (2/2) * (3 - 2*1 + 0)^2 = 1
        assert_relative_eq!(penalty(&[0.0, 1.0, 3.0], 2.0).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn penalty_rejects_bad_config() {
        assert!(penalty(&[0.0, 1.0, 3.0], -1.0).is_err());
        assert!(penalty(&[0.0, 1.0], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn penalty_agrees_with_matrix_form(
            coeffs in prop::collection::vec(-10.0f64..10.0, 3..12),
            lambda in 0.0f64..100.0,
        ) {
            let k = coeffs.len();
            let d = second_difference_matrix(k).unwrap();
            let nu = Array1::from(coeffs.clone());
            let dn = d.dot(&nu);
            let via_matrix = 0.5 * lambda * dn.dot(&dn);
            let direct = penalty(&coeffs, lambda).unwrap();
            prop_assert!((via_matrix - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }

        #[test]
        fn penalty_invariant_under_affine_shift(
            coeffs in prop::collection::vec(-5.0f64..5.0, 4..10),
            intercept in -10.0f64..10.0,
            slope in -3.0f64..3.0,
        ) {
            let shifted: Vec<f64> = coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c + intercept + slope * i as f64)
                .collect();
            let a = penalty(&coeffs, 2.0).unwrap();
            let b = penalty(&shifted, 2.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
