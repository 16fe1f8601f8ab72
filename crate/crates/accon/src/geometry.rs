//! Angle geometry: ideal inter-embedding angles, compensation angles, and the
//! compensated cosine. All angles are radians.
//!
//! For labels y_a, y_n on a range of span R, the ideal angle is
//! (y_n - y_a)/R * pi and the compensation angle is pi * (1 - (y_n - y_a)/R);
//! the two always sum to pi. The compensated cosine rotates a measured cosine
//! c by phi on the sin >= 0 branch: c*cos(phi) - |sin(phi)|*sqrt(1 - c^2 + eps).

use thiserror::Error;

/// Cosines may overshoot [-1, 1] by this much (normalization roundoff) and
/// are clamped; anything further out is a domain error.
pub const COSINE_TOL: f64 = 1e-9;

/// Default smoothing inside the compensated-cosine square root.
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("label range requires y_min < y_max and finite bounds, got [{y_min}, {y_max}]")]
    InvalidRange { y_min: f64, y_max: f64 },
    #[error("label {label} outside range [{y_min}, {y_max}]")]
    LabelOutOfRange { label: f64, y_min: f64, y_max: f64 },
    #[error("cosine {cosine} outside [-1 - {COSINE_TOL}, 1 + {COSINE_TOL}]")]
    CosineOutOfRange { cosine: f64 },
    #[error("smoothing epsilon must be finite and >= 0, got {eps}")]
    InvalidEps { eps: f64 },
}

/// Closed label interval [y_min, y_max] with positive span.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelRange {
    y_min: f64,
    y_max: f64,
}

impl LabelRange {
    pub fn new(y_min: f64, y_max: f64) -> Result<Self, GeometryError> {
        if !(y_min.is_finite() && y_max.is_finite() && y_min < y_max) {
            return Err(GeometryError::InvalidRange { y_min, y_max });
        }
        Ok(Self { y_min, y_max })
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn span(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, y: f64) -> bool {
        y.is_finite() && y >= self.y_min && y <= self.y_max
    }

    pub fn check(&self, label: f64) -> Result<(), GeometryError> {
        if self.contains(label) {
            Ok(())
        } else {
            Err(GeometryError::LabelOutOfRange {
                label,
                y_min: self.y_min,
                y_max: self.y_max,
            })
        }
    }
}

/// Validated smoothing epsilon for the compensated cosine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingEps(f64);

impl SmoothingEps {
    pub fn new(eps: f64) -> Result<Self, GeometryError> {
        if !eps.is_finite() || eps < 0.0 {
            return Err(GeometryError::InvalidEps { eps });
        }
        Ok(Self(eps))
    }

    pub fn zero() -> Self {
        Self(0.0)
    }

    pub fn get(&self) -> f64 {
        self.0
    }
}

impl Default for SmoothingEps {
    fn default() -> Self {
        Self(DEFAULT_EPS)
    }
}

/// Ideal angle between anchor and negative embeddings:
/// (y_neg - y_anc) / span * pi, in [-pi, pi].
pub fn ideal_angle(y_anc: f64, y_neg: f64, range: &LabelRange) -> Result<f64, GeometryError> {
    range.check(y_anc)?;
    range.check(y_neg)?;
    Ok((y_neg - y_anc) / range.span() * std::f64::consts::PI)
}

/// Compensation angle pi * (1 - (y_neg - y_anc)/span), in [0, 2*pi].
/// Always complements `ideal_angle` to pi for the same pair.
pub fn compensation_angle(y_anc: f64, y_neg: f64, range: &LabelRange) -> Result<f64, GeometryError> {
    range.check(y_anc)?;
    range.check(y_neg)?;
    Ok(std::f64::consts::PI * (1.0 - (y_neg - y_anc) / range.span()))
}

/// Rotate a measured cosine by the compensation angle:
/// c*cos(phi) - |sin(phi)| * sqrt(1 - c^2 + eps).
///
/// The |sin| folding makes the result even in the label delta, so phi from
/// either delta sign lands on the same value. Cosines within `COSINE_TOL` of
/// [-1, 1] are clamped.
pub fn compensated_cosine(cosine: f64, phi: f64, eps: SmoothingEps) -> Result<f64, GeometryError> {
    if !cosine.is_finite() || cosine.abs() > 1.0 + COSINE_TOL {
        return Err(GeometryError::CosineOutOfRange { cosine });
    }
    let c = cosine.clamp(-1.0, 1.0);
    Ok(c * phi.cos() - phi.sin().abs() * (1.0 - c * c + eps.get()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn r(lo: f64, hi: f64) -> LabelRange {
        LabelRange::new(lo, hi).unwrap()
    }

    #[test]
    fn range_rejects_degenerate_bounds() {
        assert!(LabelRange::new(1.0, 1.0).is_err());
        assert!(LabelRange::new(2.0, 1.0).is_err());
        assert!(LabelRange::new(0.0, f64::NAN).is_err());
        assert!(LabelRange::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn ideal_angle_known_values() {
        let range = r(0.0, 100.0);
        // (3 - 21)/100 * pi = -0.18*pi
        assert_close(ideal_angle(21.0, 3.0, &range).unwrap(), -0.18 * PI, 1e-15);
        assert_close(ideal_angle(50.0, 50.0, &range).unwrap(), 0.0, 0.0);
        assert_close(ideal_angle(0.0, 100.0, &range).unwrap(), PI, 0.0);
        assert_close(ideal_angle(100.0, 0.0, &range).unwrap(), -PI, 0.0);
    }

    #[test]
    fn compensation_angle_known_values() {
        let range = r(0.0, 100.0);
        // 1 - (80 - 21)/100 = 0.41
        assert_close(
            compensation_angle(21.0, 80.0, &range).unwrap(),
            0.41 * PI,
            1e-15,
        );
        assert_close(compensation_angle(0.0, 100.0, &range).unwrap(), 0.0, 0.0);
        assert_close(
            compensation_angle(100.0, 0.0, &range).unwrap(),
            2.0 * PI,
            0.0,
        );
    }

    #[test]
    fn out_of_range_label_is_domain_error() {
        let range = r(0.0, 100.0);
        assert!(matches!(
            ideal_angle(-1.0, 3.0, &range),
            Err(GeometryError::LabelOutOfRange { .. })
        ));
        assert!(compensation_angle(0.0, 100.5, &range).is_err());
    }

    #[test]
    fn compensated_cosine_known_values() {
        let e0 = SmoothingEps::zero();
        // c=0.5, phi=pi/2: -sqrt(0.75)
        assert_close(
            compensated_cosine(0.5, PI / 2.0, e0).unwrap(),
            -0.75f64.sqrt(),
            1e-15,
        );
        // phi=pi flips the sign of c
        for c in [-0.9, -0.3, 0.0, 0.4, 1.0] {
            assert_close(compensated_cosine(c, PI, e0).unwrap(), -c, 1e-15);
        }
        // c=1 reduces to cos(phi) for any phi
        for phi in [0.0, 0.3, 1.0, 2.5, PI, 5.0] {
            assert_close(compensated_cosine(1.0, phi, e0).unwrap(), phi.cos(), 0.0);
        }
    }

    #[test]
    fn cosine_clamp_and_domain() {
        let e0 = SmoothingEps::zero();
        // Within tolerance: clamped to exactly 1, so sqrt sees 0.
        let v = compensated_cosine(1.0 + 0.5e-9, 1.0, e0).unwrap();
        assert_close(v, 1.0f64.cos(), 0.0);
        assert!(matches!(
            compensated_cosine(1.0 + 1e-8, 1.0, e0),
            Err(GeometryError::CosineOutOfRange { .. })
        ));
        assert!(compensated_cosine(f64::NAN, 1.0, e0).is_err());
    }

    #[test]
    fn eps_validation() {
        assert!(SmoothingEps::new(-1e-9).is_err());
        assert!(SmoothingEps::new(f64::NAN).is_err());
        assert_eq!(SmoothingEps::default().get(), DEFAULT_EPS);
    }

    #[test]
    fn trig_identity_on_positive_sin_branch() {
        // cos_comp(cos(t), phi, 0) == cos(t + phi) whenever sin(phi) >= 0.
        let e0 = SmoothingEps::zero();
        for i in 0..500 {
            let t = PI * (i as f64 + 0.5) / 500.0;
            for j in 0..50 {
                let phi = PI * j as f64 / 49.0;
                let got = compensated_cosine(t.cos(), phi, e0).unwrap();
                assert_close(got, (t + phi).cos(), 1e-9);
            }
        }
    }

    #[test]
    fn continuity_in_phi() {
        // |d cmp/d phi| <= |c| + sqrt(1 + eps) < 2.1; probe a 1e-4 grid.
        let eps = SmoothingEps::default();
        for c in [-0.99, -0.5, 0.0, 0.7, 0.999] {
            let mut prev = compensated_cosine(c, 0.0, eps).unwrap();
            let step = 1e-4;
            let mut phi = step;
            while phi <= 2.0 * PI {
                let cur = compensated_cosine(c, phi, eps).unwrap();
                assert!(
                    (cur - prev).abs() <= 3.0 * step,
                    "jump at phi={phi}: {prev} -> {cur}"
                );
                prev = cur;
                phi += step;
            }
        }
    }

    proptest! {
        #[test]
        fn angle_sum_is_pi(
            lo in -1e3f64..1e3,
            width in 1e-3f64..1e3,
            fa in 0.0f64..1.0,
            fn_ in 0.0f64..1.0,
        ) {
            let range = r(lo, lo + width);
            let ya = lo + fa * width;
            let yn = lo + fn_ * width;
            let theta = ideal_angle(ya, yn, &range).unwrap();
            let phi = compensation_angle(ya, yn, &range).unwrap();
            prop_assert!((theta + phi - PI).abs() <= 1e-12);
        }

        #[test]
        fn ideal_angle_antisymmetric(
            fa in 0.0f64..1.0,
            fn_ in 0.0f64..1.0,
        ) {
            let range = r(-5.0, 12.0);
            let ya = -5.0 + fa * 17.0;
            let yn = -5.0 + fn_ * 17.0;
            let ab = ideal_angle(ya, yn, &range).unwrap();
            let ba = ideal_angle(yn, ya, &range).unwrap();
            prop_assert!((ab + ba).abs() <= 1e-12);
        }

        #[test]
        fn compensated_cosine_bounded(
            c in -1.0f64..1.0,
            phi in 0.0f64..(2.0 * PI),
            eps in 0.0f64..0.1,
        ) {
            let e = SmoothingEps::new(eps).unwrap();
            let v = compensated_cosine(c, phi, e).unwrap();
            // Cauchy-Schwarz bound sqrt(1 + eps), plus an ulp of slack.
            prop_assert!(v.abs() <= (1.0 + eps).sqrt() + 1e-12);
        }

        #[test]
        fn delta_sign_symmetry(
            c in -1.0f64..1.0,
            frac in -1.0f64..1.0,
        ) {
            // phi built from +delta and -delta gives the same compensated
            // cosine: the |sin| folding makes it even in the delta.
            let e = SmoothingEps::default();
            let phi_pos = PI * (1.0 - frac);
            let phi_neg = PI * (1.0 + frac);
            let a = compensated_cosine(c, phi_pos, e).unwrap();
            let b = compensated_cosine(c, phi_neg, e).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
