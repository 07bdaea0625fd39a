//! Speed-assigned reference path: a natural cubic spline through knot points,
//! parameterized by cumulative chord length, plus a piecewise-linear speed profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub knots: Vec<[f64; 2]>,
    /// `(s, v_ref)` breakpoints, strictly increasing in `s`.
    pub speed_profile: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathSpec", into = "PathSpec")]
pub struct PathReference {
    spec: PathSpec,
    breaks: Vec<f64>,
    x: Spline,
    y: Spline,
}

#[derive(Debug, Clone, PartialEq)]
struct Spline {
    values: Vec<f64>,
    second: Vec<f64>,
}

impl Spline {
    fn natural(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second-derivative system.
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            let mut upper = vec![0.0; m];
            for i in 0..m {
                let h0 = t[i + 1] - t[i];
                let h1 = t[i + 2] - t[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..m {
                let lower = t[i + 1] - t[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            for i in (0..m).rev() {
                let next = if i + 1 < m { second[i + 2] } else { 0.0 };
                second[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        Self {
            values: y.to_vec(),
            second,
        }
    }

    fn eval(&self, t: &[f64], seg: usize, u: f64) -> (f64, f64) {
        let h = t[seg + 1] - t[seg];
        let a = (t[seg + 1] - u) / h;
        let b = (u - t[seg]) / h;
        let (y0, y1) = (self.values[seg], self.values[seg + 1]);
        let (m0, m1) = (self.second[seg], self.second[seg + 1]);
        let val = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let der = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        (val, der)
    }
}

impl TryFrom<PathSpec> for PathReference {
    type Error = Error;

    fn try_from(spec: PathSpec) -> Result<Self> {
        Self::new(spec.knots, spec.speed_profile)
    }
}

impl From<PathReference> for PathSpec {
    fn from(p: PathReference) -> Self {
        p.spec
    }
}

impl PathReference {
    pub fn new(knots: Vec<[f64; 2]>, speed_profile: Vec<[f64; 2]>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("path needs at least two knots".into()));
        }
        if knots.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("path knots must be finite".into()));
        }
        let mut breaks = vec![0.0];
        for w in knots.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if d < 1e-9 {
                return Err(Error::Config(
                    "consecutive path knots must be distinct".into(),
                ));
            }
            breaks.push(breaks.last().unwrap() + d);
        }
        if speed_profile.is_empty() {
            return Err(Error::Config(
                "speed profile needs at least one breakpoint".into(),
            ));
        }
        if speed_profile
            .iter()
            .any(|p| !p[0].is_finite() || !(p[1] >= 0.0) || !p[1].is_finite())
        {
            return Err(Error::Config(
                "speed profile entries must be finite with v_ref >= 0".into(),
            ));
        }
        if speed_profile.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::Config(
                "speed profile must be strictly increasing in s".into(),
            ));
        }
        let xs: Vec<f64> = knots.iter().map(|k| k[0]).collect();
        let ys: Vec<f64> = knots.iter().map(|k| k[1]).collect();
        Ok(Self {
            x: Spline::natural(&breaks, &xs),
            y: Spline::natural(&breaks, &ys),
            breaks,
            spec: PathSpec {
                knots,
                speed_profile,
            },
        })
    }

    /// Path through `knots` with a constant reference speed.
    pub fn with_constant_speed(knots: Vec<[f64; 2]>, v_ref: f64) -> Result<Self> {
        Self::new(knots, vec![[0.0, v_ref]])
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.spec.knots
    }

    pub fn speed_profile(&self) -> &[[f64; 2]] {
        &self.spec.speed_profile
    }

    /// Parameter value of the last knot.
    pub fn length(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    /// Position and tangent `dP/ds`. Beyond either end the curve continues along the end tangent.
    pub fn eval(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let t = &self.breaks;
        let last = t.len() - 2;
        let (seg, u) = if s <= 0.0 {
            (0, 0.0)
        } else if s >= self.length() {
            (last, self.length())
        } else {
            (
                t.partition_point(|&b| b <= s).saturating_sub(1).min(last),
                s,
            )
        };
        let (x, dx) = self.x.eval(t, seg, u);
        let (y, dy) = self.y.eval(t, seg, u);
        let extra = s - u;
        ([x + extra * dx, y + extra * dy], [dx, dy])
    }

    pub fn position(&self, s: f64) -> [f64; 2] {
        self.eval(s).0
    }

    /// Reference speed and its derivative with respect to `s`; constant beyond the breakpoints.
    pub fn v_ref(&self, s: f64) -> (f64, f64) {
        let p = &self.spec.speed_profile;
        if s <= p[0][0] {
            return (p[0][1], 0.0);
        }
        let last = p[p.len() - 1];
        if s >= last[0] {
            return (last[1], 0.0);
        }
        let i = p.partition_point(|b| b[0] <= s) - 1;
        let slope = (p[i + 1][1] - p[i][1]) / (p[i + 1][0] - p[i][0]);
        (p[i][1] + slope * (s - p[i][0]), slope)
    }

    /// Parameter of the point on the path nearest to `p`, searched over `[lo, hi]`.
    pub fn closest_parameter(&self, p: [f64; 2], lo: f64, hi: f64) -> f64 {
        let dist2 = |s: f64| {
            let q = self.position(s);
            (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)
        };
        let samples = (((hi - lo) / 0.5).ceil() as usize).clamp(1, 10_000);
        let step = (hi - lo) / samples as f64;
        let mut best = lo;
        let mut best_d = dist2(lo);
        for i in 1..=samples {
            let s = lo + step * i as f64;
            let d = dist2(s);
            if d < best_d {
                best = s;
                best_d = d;
            }
        }
        // Golden-section refinement inside the bracketing cell.
        let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if dist2(c) < dist2(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    /// Signed lateral offset of `p` (positive to the left of the direction of travel).
    pub fn lateral_error(&self, p: [f64; 2], lo: f64, hi: f64) -> f64 {
        let s = self.closest_parameter(p, lo, hi);
        let (q, t) = self.eval(s);
        let n = t[0].hypot(t[1]).max(1e-12);
        ((p[1] - q[1]) * t[0] - (p[0] - q[0]) * t[1]) / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curved() -> PathReference {
        let knots = (0..12)
            .map(|i| {
                let a = i as f64 * 0.15;
                [10.0 * a.cos(), 10.0 * a.sin()]
            })
            .collect();
        PathReference::new(knots, vec![[0.0, 5.0], [10.0, 8.0]]).unwrap()
    }

    #[test]
    fn interpolates_knots() {
        let p = curved();
        let mut s = 0.0;
        for w in p.knots().windows(2) {
            let q = p.position(s);
            assert!((q[0] - w[0][0]).abs() < 1e-12 && (q[1] - w[0][1]).abs() < 1e-12);
            s += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        }
        let end = p.position(p.length());
        let k = p.knots().last().unwrap();
        assert!((end[0] - k[0]).abs() < 1e-12 && (end[1] - k[1]).abs() < 1e-12);
    }

    #[test]
    fn tangent_is_continuous_and_matches_finite_differences() {
        let p = curved();
        let h = 1e-6;
        let mut s = -2.0;
        while s < p.length() + 2.0 {
            let (_, t) = p.eval(s);
            let (a, b) = (p.position(s - h), p.position(s + h));
            assert!(((b[0] - a[0]) / (2.0 * h) - t[0]).abs() < 1e-5);
            assert!(((b[1] - a[1]) / (2.0 * h) - t[1]).abs() < 1e-5);
            // Chord-length parameterization keeps |P'| close to one.
            assert!((t[0].hypot(t[1]) - 1.0).abs() < 0.01, "{s}");
            s += 0.137;
        }
    }

    #[test]
    fn straight_path_is_exactly_linear() {
        let p = PathReference::with_constant_speed(
            vec![[1.75, -30.0], [1.75, 0.0], [1.75, 30.0]],
            10.0,
        )
        .unwrap();
        for s in [-5.0, 0.0, 12.3, 30.0, 60.0, 70.0] {
            let (q, t) = p.eval(s);
            assert!((q[0] - 1.75).abs() < 1e-12 && (q[1] - (s - 30.0)).abs() < 1e-12);
            assert!((t[1] - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.v_ref(100.0), (10.0, 0.0));
    }

    #[test]
    fn speed_profile_interpolates_linearly() {
        let p = curved();
        assert_eq!(p.v_ref(-1.0), (5.0, 0.0));
        let (v, dv) = p.v_ref(5.0);
        assert!((v - 6.5).abs() < 1e-12 && (dv - 0.3).abs() < 1e-12);
        assert_eq!(p.v_ref(20.0).0, 8.0);
    }

    #[test]
    fn invalid_paths_are_rejected() {
        assert!(PathReference::with_constant_speed(vec![[0.0, 0.0]], 1.0).is_err());
        assert!(PathReference::with_constant_speed(vec![[0.0, 0.0], [0.0, 0.0]], 1.0).is_err());
        assert!(
            PathReference::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![[1.0, 1.0], [0.5, 2.0]]).is_err()
        );
    }

    #[test]
    fn projection_and_lateral_error() {
        let p = PathReference::with_constant_speed(vec![[0.0, 0.0], [0.0, 20.0]], 10.0).unwrap();
        let s = p.closest_parameter([0.3, 7.0], 0.0, 20.0);
        assert!((s - 7.0).abs() < 1e-6);
        assert!((p.lateral_error([0.3, 7.0], 0.0, 20.0) + 0.3).abs() < 1e-9);
    }

    #[test]
    fn serde_roundtrip() {
        let p = curved();
        let back: PathReference =
            serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
