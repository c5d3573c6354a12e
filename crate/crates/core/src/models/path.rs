use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Geometric curve in parameter space, parametrized by u in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PathShape {
    /// Piecewise-linear through the points, uniform in arc length.
    Waypoints { points: Vec<Vec<f64>> },
    Constant { point: Vec<f64> },
    /// Circle of latitude theta0 on the sphere |B| = radius, azimuth phi0 -> phi_f.
    SphereCircle {
        radius: f64,
        theta0: f64,
        phi_f: f64,
        #[serde(default)]
        phi0: f64,
    },
    /// R(phi) = center + u cos(phi) + v sin(phi), phi0 -> phi_f.
    Loop {
        center: Vec<f64>,
        u: Vec<f64>,
        v: Vec<f64>,
        phi_f: f64,
        #[serde(default)]
        phi0: f64,
    },
}

/// Monotone map from the path parameter s to the geometric parameter u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Easing {
    #[default]
    Linear,
    /// u = s - sin(2 pi s)/(2 pi): zero speed at both ends.
    Smooth,
    /// u = s + a sin(2 pi s)/(2 pi), |a| < 1.
    Warp(f64),
}

impl Easing {
    pub fn apply(&self, s: f64) -> f64 {
        match *self {
            Easing::Linear => s,
            Easing::Smooth => s - (2.0 * PI * s).sin() / (2.0 * PI),
            Easing::Warp(a) => s + a * (2.0 * PI * s).sin() / (2.0 * PI),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            Easing::Linear => 1.0,
            Easing::Smooth => 1.0 - (2.0 * PI * s).cos(),
            Easing::Warp(a) => 1.0 + a * (2.0 * PI * s).cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    #[serde(flatten)]
    pub shape: PathShape,
    #[serde(default)]
    pub easing: Easing,
}

impl PathSpec {
    pub fn new(shape: PathShape) -> Self {
        PathSpec { shape, easing: Easing::Linear }
    }

    pub fn constant(point: Vec<f64>) -> Self {
        Self::new(PathShape::Constant { point })
    }

    pub fn waypoints(points: Vec<Vec<f64>>) -> Self {
        Self::new(PathShape::Waypoints { points })
    }

    pub fn sphere_circle(radius: f64, theta0: f64, phi_f: f64) -> Self {
        Self::new(PathShape::SphereCircle { radius, theta0, phi_f, phi0: 0.0 })
    }

    pub fn ellipse(center: Vec<f64>, u: Vec<f64>, v: Vec<f64>, phi0: f64, phi_f: f64) -> Self {
        Self::new(PathShape::Loop { center, u, v, phi_f, phi0 })
    }

    /// Squeezing circle of the quadratic form: X = w(cosh r + sinh r cos phi),
    /// Y = w sinh r sin phi, Z = w(cosh r - sinh r cos phi). Frequency stays w.
    pub fn squeeze_loop(omega: f64, r: f64, phi0: f64, phi_f: f64) -> Self {
        let (c, s) = (omega * r.cosh(), omega * r.sinh());
        Self::ellipse(vec![c, 0.0, c], vec![s, 0.0, -s], vec![0.0, s, 0.0], phi0, phi_f)
    }

    pub fn with_easing(mut self, easing: Easing) -> Self {
        self.easing = easing;
        self
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.shape {
            PathShape::Constant { point } => {
                if point.is_empty() || !finite(point) {
                    return Err(Error::InvalidInput("constant path needs a finite, non-empty point".into()));
                }
            }
            PathShape::Waypoints { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidInput("waypoint path needs at least two points".into()));
                }
                let m = points[0].len();
                if m == 0 || points.iter().any(|p| p.len() != m || !finite(p)) {
                    return Err(Error::InvalidInput("waypoints must be finite and of equal dimension".into()));
                }
                if arc_lengths(points).last().copied().unwrap_or(0.0) == 0.0 {
                    return Err(Error::InvalidInput(
                        "degenerate path: waypoints have zero length (use a constant path)".into(),
                    ));
                }
            }
            PathShape::SphereCircle { radius, theta0, phi_f, phi0 } => {
                if !(radius.is_finite() && theta0.is_finite() && phi_f.is_finite() && phi0.is_finite()) {
                    return Err(Error::InvalidInput("non-finite circle parameters".into()));
                }
                if *radius <= 0.0 || phi_f == phi0 || theta0.sin() == 0.0 {
                    return Err(Error::InvalidInput(
                        "degenerate path: circle has zero length (use a constant path)".into(),
                    ));
                }
            }
            PathShape::Loop { center, u, v, phi_f, phi0 } => {
                let m = center.len();
                if m == 0 || u.len() != m || v.len() != m {
                    return Err(Error::InvalidInput("loop vectors must have equal, non-zero dimension".into()));
                }
                if !(finite(center) && finite(u) && finite(v) && phi_f.is_finite() && phi0.is_finite()) {
                    return Err(Error::InvalidInput("non-finite loop parameters".into()));
                }
                if phi_f == phi0 || (u.iter().all(|&x| x == 0.0) && v.iter().all(|&x| x == 0.0)) {
                    return Err(Error::InvalidInput(
                        "degenerate path: loop has zero length (use a constant path)".into(),
                    ));
                }
            }
        }
        if let Easing::Warp(a) = self.easing {
            if !(a.abs() < 1.0) {
                return Err(Error::InvalidInput(format!("warp easing needs |a| < 1, got {a}")));
            }
        }
        Ok(())
    }

    /// True when the curve returns exactly to its start.
    fn returns_to_start(&self) -> bool {
        let full_turns = |phi0: f64, phi_f: f64| {
            let turns = (phi_f - phi0) / (2.0 * PI);
            turns.round() != 0.0 && (turns - turns.round()).abs() < 1e-12
        };
        match &self.shape {
            PathShape::Constant { .. } => true,
            PathShape::Waypoints { points } => points.first() == points.last(),
            PathShape::SphereCircle { phi_f, phi0, .. } => full_turns(*phi0, *phi_f),
            PathShape::Loop { phi_f, phi0, .. } => full_turns(*phi0, *phi_f),
        }
    }

    fn shape_at(&self, u: f64) -> Vec<f64> {
        match &self.shape {
            PathShape::Constant { point } => point.clone(),
            PathShape::Waypoints { points } => {
                let cum = arc_lengths(points);
                let target = u.clamp(0.0, 1.0) * cum[cum.len() - 1];
                let seg = cum.partition_point(|&c| c <= target).saturating_sub(1).min(points.len() - 2);
                let len = cum[seg + 1] - cum[seg];
                let t = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
                points[seg].iter().zip(&points[seg + 1]).map(|(a, b)| a + t * (b - a)).collect()
            }
            PathShape::SphereCircle { radius, theta0, phi_f, phi0 } => {
                let phi = phi0 + u * (phi_f - phi0);
                let (st, ct) = theta0.sin_cos();
                vec![radius * st * phi.cos(), radius * st * phi.sin(), radius * ct]
            }
            PathShape::Loop { center, u: a, v: b, phi_f, phi0 } => {
                let phi = phi0 + u * (phi_f - phi0);
                let (sp, cp) = phi.sin_cos();
                center.iter().zip(a).zip(b).map(|((c, x), y)| c + x * cp + y * sp).collect()
            }
        }
    }

    /// dR/du of the geometric curve (analytic where available).
    fn shape_derivative(&self, u: f64) -> Vec<f64> {
        match &self.shape {
            PathShape::Constant { point } => vec![0.0; point.len()],
            PathShape::SphereCircle { radius, theta0, phi_f, phi0 } => {
                let span = phi_f - phi0;
                let phi = phi0 + u * span;
                let st = theta0.sin();
                vec![-radius * st * phi.sin() * span, radius * st * phi.cos() * span, 0.0]
            }
            PathShape::Loop { u: a, v: b, phi_f, phi0, .. } => {
                let span = phi_f - phi0;
                let phi = phi0 + u * span;
                let (sp, cp) = phi.sin_cos();
                a.iter().zip(b).map(|(x, y)| (-x * sp + y * cp) * span).collect()
            }
            PathShape::Waypoints { points } => {
                let cum = arc_lengths(points);
                let total = cum[cum.len() - 1];
                let target = u.clamp(0.0, 1.0) * total;
                let seg = cum.partition_point(|&c| c <= target).saturating_sub(1).min(points.len() - 2);
                let len = cum[seg + 1] - cum[seg];
                if len == 0.0 {
                    return vec![0.0; points[0].len()];
                }
                points[seg].iter().zip(&points[seg + 1]).map(|(a, b)| (b - a) / len * total).collect()
            }
        }
    }

    pub fn point_at(&self, s: f64) -> Vec<f64> {
        if s >= 1.0 && self.returns_to_start() {
            return self.shape_at(self.easing.apply(0.0));
        }
        self.shape_at(self.easing.apply(s))
    }

    pub fn velocity_at(&self, s: f64) -> Vec<f64> {
        let ds = self.easing.derivative(s);
        self.shape_derivative(self.easing.apply(s)).into_iter().map(|x| x * ds).collect()
    }
}

fn arc_lengths(points: &[Vec<f64>]) -> Vec<f64> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        let d: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        cum.push(cum.last().unwrap() + d);
    }
    cum
}

/// Sampled curve Gamma: K+1 samples at s_k = k/K.
#[derive(Debug, Clone)]
pub struct ParameterPath {
    s: Vec<f64>,
    points: Vec<Vec<f64>>,
    closed: bool,
    spec: Option<PathSpec>,
}

pub fn sample_path(spec: &PathSpec, k: usize) -> Result<ParameterPath> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need K >= 2 path intervals, got {k}")));
    }
    spec.validate()?;
    let s: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
    let points: Vec<Vec<f64>> = s.iter().map(|&x| spec.point_at(x)).collect();
    let closed = points[0] == points[k];
    Ok(ParameterPath { s, points, closed, spec: Some(spec.clone()) })
}

impl ParameterPath {
    /// Path from explicit samples; `s` must run strictly upward from 0 to 1.
    pub fn from_samples(s: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        if s.len() != points.len() || s.len() < 3 {
            return Err(Error::InvalidInput("need at least three matching samples".into()));
        }
        if s[0] != 0.0 || *s.last().unwrap() != 1.0 || s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("s must increase strictly from 0 to 1".into()));
        }
        let m = points[0].len();
        if m == 0 || points.iter().any(|p| p.len() != m || p.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("samples must be finite and of equal dimension".into()));
        }
        let closed = points[0] == *points.last().unwrap();
        Ok(ParameterPath { s, points, closed, spec: None })
    }

    pub fn intervals(&self) -> usize {
        self.s.len() - 1
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    pub fn spec(&self) -> Option<&PathSpec> {
        self.spec.as_ref()
    }

    /// Continuous R(s): the generating spec if known, else linear interpolation.
    pub fn point_at(&self, s: f64) -> Vec<f64> {
        if let Some(spec) = &self.spec {
            return spec.point_at(s);
        }
        let s = s.clamp(0.0, 1.0);
        let k = self.s.partition_point(|&x| x <= s).clamp(1, self.s.len() - 1);
        let t = (s - self.s[k - 1]) / (self.s[k] - self.s[k - 1]);
        self.points[k - 1].iter().zip(&self.points[k]).map(|(a, b)| a + t * (b - a)).collect()
    }

    /// dR/ds at sample k by finite differences (centered inside, one-sided at ends).
    pub fn derivative(&self, k: usize) -> Vec<f64> {
        let last = self.s.len() - 1;
        let (a, b) = if k == 0 {
            (0, 1)
        } else if k == last {
            (last - 1, last)
        } else {
            (k - 1, k + 1)
        };
        let ds = self.s[b] - self.s[a];
        self.points[a].iter().zip(&self.points[b]).map(|(x, y)| (y - x) / ds).collect()
    }

    /// Continuous dR/ds where the spec is known, else the sample derivative.
    pub fn velocity_at(&self, s: f64) -> Vec<f64> {
        match &self.spec {
            Some(spec) => spec.velocity_at(s),
            None => {
                let k = self.s.partition_point(|&x| x <= s).clamp(1, self.s.len() - 1);
                let ds = self.s[k] - self.s[k - 1];
                self.points[k - 1].iter().zip(&self.points[k]).map(|(a, b)| (b - a) / ds).collect()
            }
        }
    }

    /// Samples k0..=k1 with s rescaled to [0, 1].
    pub fn subpath(&self, k0: usize, k1: usize) -> Result<Self> {
        if k1 <= k0 + 1 || k1 >= self.s.len() {
            return Err(Error::InvalidInput(format!("bad subpath range {k0}..={k1}")));
        }
        let (a, b) = (self.s[k0], self.s[k1]);
        let mut s: Vec<f64> = self.s[k0..=k1].iter().map(|x| (x - a) / (b - a)).collect();
        s[0] = 0.0;
        *s.last_mut().unwrap() = 1.0;
        Self::from_samples(s, self.points[k0..=k1].to_vec())
    }

    /// The same samples run backwards.
    pub fn reversed(&self) -> Self {
        let mut s: Vec<f64> = self.s.iter().rev().map(|x| 1.0 - x).collect();
        s[0] = 0.0;
        *s.last_mut().unwrap() = 1.0;
        let points = self.points.iter().rev().cloned().collect();
        ParameterPath { s, points, closed: self.closed, spec: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_circle_is_closed() {
        let p = sample_path(&PathSpec::sphere_circle(1.0, PI / 3.0, 2.0 * PI), 1000).unwrap();
        assert!(p.closed());
        assert_eq!(p.len(), 1001);
        for r in p.points() {
            let norm: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn half_circle_is_open() {
        let p = sample_path(&PathSpec::sphere_circle(1.0, PI / 3.0, PI), 1000).unwrap();
        assert!(!p.closed());
    }

    #[test]
    fn constant_path() {
        let p = sample_path(&PathSpec::constant(vec![1.0, 0.0, 1.0]), 10).unwrap();
        assert!(p.closed());
        assert!(p.points().iter().all(|r| r == &vec![1.0, 0.0, 1.0]));
        assert!(p.derivative(3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn too_few_samples_and_degenerate_specs() {
        assert!(sample_path(&PathSpec::sphere_circle(1.0, 0.5, 1.0), 1).is_err());
        assert!(sample_path(&PathSpec::sphere_circle(1.0, 0.5, 0.0), 10).is_err());
        assert!(sample_path(&PathSpec::waypoints(vec![vec![1.0], vec![1.0]]), 10).is_err());
        let warp = PathSpec::sphere_circle(1.0, 0.5, 1.0).with_easing(Easing::Warp(1.5));
        assert!(sample_path(&warp, 10).is_err());
    }

    #[test]
    fn waypoints_by_arc_length() {
        let spec = PathSpec::waypoints(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 3.0]]);
        let p = sample_path(&spec, 4).unwrap();
        assert_eq!(p.point(1), &[1.0, 0.0]);
        assert_eq!(p.point(4), &[1.0, 3.0]);
        assert!(!p.closed());
    }

    #[test]
    fn squeeze_loop_keeps_frequency() {
        let p = sample_path(&PathSpec::squeeze_loop(1.3, 0.4, 0.0, 2.0 * PI), 64).unwrap();
        assert!(p.closed());
        for r in p.points() {
            assert!(((r[0] * r[2] - r[1] * r[1]).sqrt() - 1.3).abs() < 1e-12);
        }
    }

    #[test]
    fn easing_reparametrizes_same_curve() {
        let base = PathSpec::sphere_circle(1.0, 0.7, 2.0);
        let warped = base.clone().with_easing(Easing::Smooth);
        assert_eq!(base.point_at(0.0), warped.point_at(0.0));
        assert_eq!(base.point_at(1.0), warped.point_at(1.0));
        let v = warped.velocity_at(0.0);
        assert!(v.iter().all(|x| x.abs() < 1e-15));
        let h = 1e-6;
        let fd: Vec<f64> = base.point_at(0.3 + h).iter().zip(base.point_at(0.3 - h)).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        for (a, b) in fd.iter().zip(base.velocity_at(0.3)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn serde_shape() {
        let json = r#"{"type":"sphere_circle","radius":1.0,"theta0":1.0,"phi_f":3.0,"easing":{"warp":0.2}}"#;
        let spec: PathSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.easing, Easing::Warp(0.2));
        let plain: PathSpec = serde_json::from_str(r#"{"type":"constant","point":[1.0]}"#).unwrap();
        assert_eq!(plain.easing, Easing::Linear);
    }
}
