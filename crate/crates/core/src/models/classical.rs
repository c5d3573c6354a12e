use crate::error::{Error, Result};

/// Phase-space form h(q, p, R) of the oscillator models.
///
/// Both are quadratic, so the action-angle chart is an explicit linear
/// canonical map (q, p) -> (Q, P) with h = w (Q^2 + P^2)/2 + const and
/// Q = sqrt(2I) cos(theta), P = -sqrt(2I) sin(theta). The angle increases
/// at rate w.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassicalModel {
    /// h = (X q^2 + 2Y q p + Z p^2)/2, R = (X, Y, Z).
    GeneralizedOscillator,
    /// h = p^2/2 + w^2 q^2/2 - R1 q - R2 p.
    Displaced { omega: f64 },
}

/// Affine canonical chart (Q, P) = L (q, p) + c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chart {
    pub l: [[f64; 2]; 2],
    pub c: [f64; 2],
}

impl Chart {
    pub fn normal(&self, q: f64, p: f64) -> (f64, f64) {
        let l = &self.l;
        (l[0][0] * q + l[0][1] * p + self.c[0], l[1][0] * q + l[1][1] * p + self.c[1])
    }

    pub fn action_angle(&self, q: f64, p: f64) -> ActionAngle {
        let (qn, pn) = self.normal(q, p);
        ActionAngle { action: 0.5 * (qn * qn + pn * pn), angle: (-pn).atan2(qn) }
    }

    /// Rotation of the rotation-free part of the map from `initial`'s normal
    /// coordinates to this chart's, removed: the returned chart differs from
    /// `initial` by a pure (symmetric) squeeze plus a shift.
    pub fn aligned_to(&self, initial: &Chart) -> Chart {
        let a = &initial.l;
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
        let b = &self.l;
        let w = [
            [b[0][0] * inv[0][0] + b[0][1] * inv[1][0], b[0][0] * inv[0][1] + b[0][1] * inv[1][1]],
            [b[1][0] * inv[0][0] + b[1][1] * inv[1][0], b[1][0] * inv[0][1] + b[1][1] * inv[1][1]],
        ];
        let phi = (w[1][0] - w[0][1]).atan2(w[0][0] + w[1][1]);
        let (s, c) = phi.sin_cos();
        // Q^T = [[c, s], [-s, c]]
        let rot = |v: [f64; 2]| [c * v[0] + s * v[1], -s * v[0] + c * v[1]];
        let col0 = rot([b[0][0], b[1][0]]);
        let col1 = rot([b[0][1], b[1][1]]);
        Chart { l: [[col0[0], col1[0]], [col0[1], col1[1]]], c: rot(self.c) }
    }

    /// Angle by which this chart is rotated relative to `other` at equal squeeze.
    pub fn rotation_from(&self, other: &Chart) -> f64 {
        let aligned = self.aligned_to(other);
        // aligned = Q^T self, so the rotation is recovered from self vs aligned
        let (x0, y0) = (aligned.l[0][0], aligned.l[1][0]);
        let (x1, y1) = (self.l[0][0], self.l[1][0]);
        (x0 * y1 - y0 * x1).atan2(x0 * x1 + y0 * y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionAngle {
    pub action: f64,
    pub angle: f64,
}

impl ClassicalModel {
    pub fn param_dim(&self) -> usize {
        match self {
            ClassicalModel::GeneralizedOscillator => 3,
            ClassicalModel::Displaced { .. } => 2,
        }
    }

    pub fn check(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "classical model expects {} parameters, got {}",
                self.param_dim(),
                r.len()
            )));
        }
        if let ClassicalModel::GeneralizedOscillator = self {
            if r[0] * r[2] - r[1] * r[1] <= 0.0 || r[0] <= 0.0 {
                return Err(Error::IndefiniteForm(r.to_vec()));
            }
        }
        Ok(())
    }

    pub fn hamiltonian(&self, q: f64, p: f64, r: &[f64]) -> f64 {
        match *self {
            ClassicalModel::GeneralizedOscillator => 0.5 * (r[0] * q * q + 2.0 * r[1] * q * p + r[2] * p * p),
            ClassicalModel::Displaced { omega } => 0.5 * p * p + 0.5 * omega * omega * q * q - r[0] * q - r[1] * p,
        }
    }

    /// (dh/dq, dh/dp).
    pub fn gradient(&self, q: f64, p: f64, r: &[f64]) -> (f64, f64) {
        match *self {
            ClassicalModel::GeneralizedOscillator => (r[0] * q + r[1] * p, r[1] * q + r[2] * p),
            ClassicalModel::Displaced { omega } => (omega * omega * q - r[0], p - r[1]),
        }
    }

    /// Hamilton's equations: (dq/dt, dp/dt).
    pub fn flow(&self, q: f64, p: f64, r: &[f64]) -> (f64, f64) {
        let (hq, hp) = self.gradient(q, p, r);
        (hp, -hq)
    }

    pub fn frequency(&self, r: &[f64]) -> f64 {
        match *self {
            ClassicalModel::GeneralizedOscillator => (r[0] * r[2] - r[1] * r[1]).sqrt(),
            ClassicalModel::Displaced { omega } => omega,
        }
    }

    /// Energy of the torus with action I.
    pub fn energy(&self, action: f64, r: &[f64]) -> f64 {
        match *self {
            ClassicalModel::GeneralizedOscillator => self.frequency(r) * action,
            ClassicalModel::Displaced { omega } => {
                omega * action - r[0] * r[0] / (2.0 * omega * omega) - r[1] * r[1] / 2.0
            }
        }
    }

    /// Normal coordinates (Q, P) of the chart.
    pub fn normal_coordinates(&self, q: f64, p: f64, r: &[f64]) -> (f64, f64) {
        match *self {
            ClassicalModel::GeneralizedOscillator => {
                let w = self.frequency(r);
                let z = r[2];
                (q * (w / z).sqrt(), (p + r[1] * q / z) * (z / w).sqrt())
            }
            ClassicalModel::Displaced { omega } => {
                (omega.sqrt() * (q - r[0] / (omega * omega)), (p - r[1]) / omega.sqrt())
            }
        }
    }

    pub fn from_normal_coordinates(&self, qn: f64, pn: f64, r: &[f64]) -> (f64, f64) {
        match *self {
            ClassicalModel::GeneralizedOscillator => {
                let w = self.frequency(r);
                let z = r[2];
                let q = qn * (z / w).sqrt();
                (q, pn * (w / z).sqrt() - r[1] * q / z)
            }
            ClassicalModel::Displaced { omega } => {
                (qn / omega.sqrt() + r[0] / (omega * omega), pn * omega.sqrt() + r[1])
            }
        }
    }

    pub fn chart(&self, r: &[f64]) -> Chart {
        match *self {
            ClassicalModel::GeneralizedOscillator => {
                let w = self.frequency(r);
                let z = r[2];
                let a = (w / z).sqrt();
                let b = (z / w).sqrt();
                Chart { l: [[a, 0.0], [r[1] / z * b, b]], c: [0.0, 0.0] }
            }
            ClassicalModel::Displaced { omega } => {
                let a = omega.sqrt();
                Chart { l: [[a, 0.0], [0.0, 1.0 / a]], c: [-a * r[0] / (omega * omega), -r[1] / a] }
            }
        }
    }

    pub fn to_action_angle(&self, q: f64, p: f64, r: &[f64]) -> ActionAngle {
        let (qn, pn) = self.normal_coordinates(q, p, r);
        ActionAngle { action: 0.5 * (qn * qn + pn * pn), angle: (-pn).atan2(qn) }
    }

    pub fn from_action_angle(&self, action: f64, angle: f64, r: &[f64]) -> (f64, f64) {
        let rad = (2.0 * action).sqrt();
        self.from_normal_coordinates(rad * angle.cos(), -rad * angle.sin(), r)
    }
}
