//! WKB treatment of the generalized oscillator: branch actions, the X/Y
//! overlap functions, the semiclassical open-path phase and Hannay angle.
//!
//! For h = (X q^2 + 2Y q p + Z p^2)/2 and w^2 = XZ - Y^2 the two momentum
//! branches at fixed (q, I) are p = (-Y q +- w sqrt(u - q^2))/Z with
//! u = 2IZ/w the squared turning point. Actions are measured from the left
//! turning point, and the amplitude a^2 = 1/(2 pi sqrt(u - q^2)) is the same
//! on both branches.

use crate::berry::{trapezoid, ORTH_TOL};
use crate::error::{Error, Result};
use crate::linalg::{oscillator_wavefunctions, unwrap_phases, wrap_phase, StateVector, C64};
use crate::models::{ClassicalModel, ParameterPath};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::Write;

/// Exact-quantum probability excised next to the two turning points.
pub const CAUSTIC_MASS: f64 = 0.01;
/// Uniform angle grid of the torus averages.
pub const ANGLE_GRID: usize = 512;
/// Simpson intervals of the q quadratures.
const Q_NODES: usize = 4096;
const STENCIL_REL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }

    fn maslov(self) -> f64 {
        -self.sign() * FRAC_PI_4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchAction {
    pub branch: Branch,
    pub action: f64,
    pub amplitude: f64,
    pub turning_points: (f64, f64),
    pub near_caustic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XYPair {
    pub x: f64,
    pub y: f64,
}

impl XYPair {
    pub fn complex(&self) -> C64 {
        C64::new(self.x, self.y)
    }
}

pub fn bohr_sommerfeld_action(n: usize, hbar: f64) -> f64 {
    (n as f64 + 0.5) * hbar
}

#[derive(Debug, Clone, Copy)]
struct Form {
    x: f64,
    y: f64,
    z: f64,
    w: f64,
}

fn form(cm: ClassicalModel, r: &[f64]) -> Result<Form> {
    match cm {
        ClassicalModel::GeneralizedOscillator => {
            cm.check(r)?;
            Ok(Form { x: r[0], y: r[1], z: r[2], w: cm.frequency(r) })
        }
        ClassicalModel::Displaced { .. } => {
            Err(Error::Unsupported("semiclassical branches are implemented for the generalized oscillator".into()))
        }
    }
}

fn check_action(action: f64, hbar: f64) -> Result<()> {
    if !(action > 0.0 && action.is_finite()) {
        return Err(Error::InvalidInput(format!("action must be positive, got {action}")));
    }
    if !(hbar > 0.0 && hbar.is_finite()) {
        return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
    }
    Ok(())
}

impl Form {
    fn u(&self, action: f64) -> f64 {
        2.0 * action * self.z / self.w
    }

    /// Area function int_{-qt}^{q} sqrt(u - q'^2) dq'.
    fn area(u: f64, q: f64) -> f64 {
        let ratio = (q / u.sqrt()).clamp(-1.0, 1.0);
        0.5 * (q * (u - q * q).max(0.0).sqrt() + u * ratio.asin()) + 0.25 * PI * u
    }

    fn action(&self, action: f64, q: f64, sign: f64) -> f64 {
        let u = self.u(action);
        self.y / (2.0 * self.z) * (u - q * q) + sign * self.w / self.z * Self::area(u, q)
    }

    /// dS/dR at fixed (q, I).
    fn action_gradient(&self, action: f64, q: f64, sign: f64) -> [f64; 3] {
        let Form { x, y, z, w } = *self;
        let u = self.u(action);
        let dw = [z / (2.0 * w), -y / w, x / (2.0 * w)];
        let c = 2.0 * action * z / (w * w);
        let du = [-c * dw[0], -c * dw[1], 2.0 * action / w - c * dw[2]];
        let dyz = [0.0, 1.0 / (2.0 * z), -y / (2.0 * z * z)];
        let dwz = [dw[0] / z, dw[1] / z, dw[2] / z - w / (z * z)];
        let area = Self::area(u, q);
        let g = 0.5 * ((q / u.sqrt()).clamp(-1.0, 1.0).asin() + FRAC_PI_2);
        std::array::from_fn(|i| {
            dyz[i] * (u - q * q) + y / (2.0 * z) * du[i] + sign * (dwz[i] * area + w / z * g * du[i])
        })
    }
}

/// Both branches at q. Outside the allowed region the amplitude is zero,
/// or an error in `strict` mode.
pub fn branch_data(cm: ClassicalModel, action: f64, r: &[f64], q: f64, strict: bool) -> Result<[BranchAction; 2]> {
    check_action(action, 1.0)?;
    let f = form(cm, r)?;
    let u = f.u(action);
    let qt = u.sqrt();
    if q.abs() > qt && strict {
        return Err(Error::InvalidInput(format!("q = {q} outside the allowed region |q| <= {qt}")));
    }
    let amplitude = if q.abs() < qt { (2.0 * PI).powf(-0.5) * (u - q * q).powf(-0.25) } else { 0.0 };
    let delta = qt * (1.0 - caustic_cut(action, 1.0).sin());
    let near_caustic = (qt - q.abs()).abs() < delta;
    Ok([Branch::Plus, Branch::Minus].map(|branch| BranchAction {
        branch,
        action: f.action(action, q.clamp(-qt, qt), branch.sign()),
        amplitude,
        turning_points: (-qt, qt),
        near_caustic,
    }))
}

pub fn action_gradient(cm: ClassicalModel, action: f64, r: &[f64], q: f64, branch: Branch) -> Result<Vec<f64>> {
    let f = form(cm, r)?;
    Ok(f.action_gradient(action, q, branch.sign()).to_vec())
}

/// Torus average <grad S> on a uniform angle grid.
pub fn mean_action_gradient(cm: ClassicalModel, action: f64, r: &[f64]) -> Result<Vec<f64>> {
    let f = form(cm, r)?;
    let mut acc = [0.0; 3];
    for j in 0..ANGLE_GRID {
        let theta = 2.0 * PI * (j as f64 + 0.5) / ANGLE_GRID as f64;
        let (q, p) = cm.from_action_angle(action, theta, r);
        let sign = if f.y * q + f.z * p >= 0.0 { 1.0 } else { -1.0 };
        let g = f.action_gradient(action, q, sign);
        for i in 0..3 {
            acc[i] += g[i];
        }
    }
    Ok(acc.iter().map(|v| v / ANGLE_GRID as f64).collect())
}

/// Cut angle phi_c of the substitution q = qt sin(phi): the band
/// qt sin(phi_c) < |q| < qt holds exact-quantum probability CAUSTIC_MASS for
/// the level nearest to I/hbar - 1/2. In units of qt the band depends only
/// on that level, since eigenfunctions along the family are rescaled copies.
pub fn caustic_cut(action: f64, hbar: f64) -> f64 {
    let n = (action / hbar - 0.5).round().max(0.0) as usize;
    let qt = (2.0 * (n as f64 + 0.5)).sqrt();
    let band_mass = |phi_c: f64| {
        let m = 400;
        let (a, b) = (qt * phi_c.sin(), qt);
        let h = (b - a) / m as f64;
        let mut acc = 0.0;
        for j in 0..=m {
            let w = if j == 0 || j == m { 0.5 } else { 1.0 };
            acc += w * oscillator_wavefunctions(n, a + j as f64 * h, 1.0)[n].powi(2);
        }
        2.0 * acc * h
    };
    let (mut lo, mut hi) = (0.0, FRAC_PI_2);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if band_mass(mid) > CAUSTIC_MASS {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Simpson weights on [-phi_c, phi_c].
fn simpson_nodes(c: f64) -> Vec<(f64, f64)> {
    let h = 2.0 * c / Q_NODES as f64;
    (0..=Q_NODES)
        .map(|j| {
            let w = if j == 0 || j == Q_NODES {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (-c + j as f64 * h, w * h / 3.0)
        })
        .collect()
}

/// Same-branch (and optionally cross-branch) overlap integrals between the
/// tori at R0 and R, over the common allowed interval with the caustic cut.
fn overlap_sums(cm: ClassicalModel, hbar: f64, action: f64, cut: f64, r0: &[f64], r: &[f64]) -> Result<(C64, C64)> {
    check_action(action, hbar)?;
    let f0 = form(cm, r0)?;
    let f1 = form(cm, r)?;
    let (u0, u1) = (f0.u(action), f1.u(action));
    let um = u0.min(u1);
    let ub = u0.max(u1);
    let qm = um.sqrt();
    if !(qm > 0.0) {
        return Err(Error::Orthogonal { sample: 0, magnitude: 0.0, tol: ORTH_TOL });
    }
    let mut same = C64::new(0.0, 0.0);
    let mut cross = C64::new(0.0, 0.0);
    for (phi, w) in simpson_nodes(cut) {
        let q = qm * phi.sin();
        let weight = w / (2.0 * PI) * (qm * phi.cos()).sqrt() * (ub - q * q).powf(-0.25);
        let s0 = [f0.action(action, q, 1.0), f0.action(action, q, -1.0)];
        let s1 = [f1.action(action, q, 1.0), f1.action(action, q, -1.0)];
        let m = [Branch::Plus.maslov(), Branch::Minus.maslov()];
        for a in 0..2 {
            same += C64::from_polar(weight, (s1[a] - s0[a]) / hbar);
            let b = 1 - a;
            cross += C64::from_polar(weight, (s1[b] - s0[a]) / hbar + m[b] - m[a]);
        }
    }
    let norm = 2.0 * cut / PI;
    Ok((same / norm, cross / norm))
}

pub fn xy_functions(cm: ClassicalModel, hbar: f64, action: f64, r0: &[f64], r: &[f64]) -> Result<XYPair> {
    xy_with_cut(cm, hbar, action, caustic_cut(action, hbar), r0, r)
}

fn xy_with_cut(cm: ClassicalModel, hbar: f64, action: f64, cut: f64, r0: &[f64], r: &[f64]) -> Result<XYPair> {
    let (z, _) = overlap_sums(cm, hbar, action, cut, r0, r)?;
    Ok(XYPair { x: z.re, y: z.im })
}

/// |cross-branch| / |same-branch| contribution to X + iY.
pub fn cross_branch_ratio(cm: ClassicalModel, hbar: f64, action: f64, r0: &[f64], r: &[f64]) -> Result<f64> {
    let (same, cross) = overlap_sums(cm, hbar, action, caustic_cut(action, hbar), r0, r)?;
    Ok(cross.norm() / same.norm())
}

/// P(R) = -(X grad Y - Y grad X)/(X^2 + Y^2) at sample k, by centered
/// differences in each parameter.
pub fn semiclassical_p_potential(
    cm: ClassicalModel,
    hbar: f64,
    action: f64,
    path: &ParameterPath,
    k: usize,
) -> Result<Vec<f64>> {
    p_with_cut(cm, hbar, action, caustic_cut(action, hbar), path, k)
}

fn p_with_cut(cm: ClassicalModel, hbar: f64, action: f64, cut: f64, path: &ParameterPath, k: usize) -> Result<Vec<f64>> {
    let r0 = path.point(0);
    let r = path.point(k);
    let xy = xy_with_cut(cm, hbar, action, cut, r0, r)?;
    let mag2 = xy.x * xy.x + xy.y * xy.y;
    if mag2 <= ORTH_TOL * ORTH_TOL {
        return Err(Error::Orthogonal { sample: k, magnitude: mag2.sqrt(), tol: ORTH_TOL });
    }
    let h = STENCIL_REL * r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    (0..r.len())
        .map(|i| {
            let mut rp = r.to_vec();
            let mut rm = r.to_vec();
            rp[i] += h;
            rm[i] -= h;
            let p = xy_with_cut(cm, hbar, action, cut, r0, &rp)?;
            let m = xy_with_cut(cm, hbar, action, cut, r0, &rm)?;
            let (dx, dy) = ((p.x - m.x) / (2.0 * h), (p.y - m.y) / (2.0 * h));
            Ok(-(xy.x * dy - xy.y * dx) / mag2)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalPhase {
    /// Phase in (-pi, pi].
    pub gamma: f64,
    pub unwrapped: f64,
    /// -(1/hbar) int <grad S>.dR.
    pub action_term: f64,
    /// Continuous lift of arg(X_f + i Y_f).
    pub xy_term: f64,
    /// Trapezoid line integral of the semiclassical P.
    pub p_line_integral: f64,
    pub action: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XYSample {
    pub s: f64,
    pub r: Vec<f64>,
    pub x: f64,
    pub y: f64,
    pub p: Vec<f64>,
}

fn velocity(path: &ParameterPath, k: usize) -> Vec<f64> {
    path.velocity_at(path.s()[k])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// int <grad S>.dR along the path.
fn action_integral(cm: ClassicalModel, action: f64, path: &ParameterPath) -> Result<f64> {
    let g: Vec<f64> = (0..path.len())
        .into_par_iter()
        .map(|k| Ok(dot(&mean_action_gradient(cm, action, path.point(k))?, &velocity(path, k))))
        .collect::<Result<_>>()?;
    Ok(trapezoid(path.s(), &g))
}

/// Lifted arg(X + iY) at every sample.
fn xy_lift(cm: ClassicalModel, hbar: f64, action: f64, path: &ParameterPath) -> Result<Vec<f64>> {
    let r0 = path.point(0);
    let cut = caustic_cut(action, hbar);
    let args: Vec<f64> = (0..path.len())
        .into_par_iter()
        .map(|k| {
            let xy = xy_with_cut(cm, hbar, action, cut, r0, path.point(k))?;
            if xy.x.hypot(xy.y) <= ORTH_TOL {
                return Err(Error::Orthogonal { sample: k, magnitude: xy.x.hypot(xy.y), tol: ORTH_TOL });
            }
            Ok(xy.y.atan2(xy.x))
        })
        .collect::<Result<_>>()?;
    Ok(unwrap_phases(&args))
}

/// (R, X, Y, P) at every sample.
pub fn xy_table(cm: ClassicalModel, hbar: f64, action: f64, path: &ParameterPath) -> Result<Vec<XYSample>> {
    let r0 = path.point(0);
    let cut = caustic_cut(action, hbar);
    (0..path.len())
        .into_par_iter()
        .map(|k| {
            let xy = xy_with_cut(cm, hbar, action, cut, r0, path.point(k))?;
            Ok(XYSample {
                s: path.s()[k],
                r: path.point(k).to_vec(),
                x: xy.x,
                y: xy.y,
                p: p_with_cut(cm, hbar, action, cut, path, k)?,
            })
        })
        .collect()
}

/// gamma = -(1/hbar) int <grad S>.dR - int P.dR with the X/Y potential P.
pub fn semiclassical_phase(cm: ClassicalModel, hbar: f64, action: f64, path: &ParameterPath) -> Result<SemiclassicalPhase> {
    check_action(action, hbar)?;
    let action_term = -action_integral(cm, action, path)? / hbar;
    let lift = xy_lift(cm, hbar, action, path)?;
    let table = xy_table(cm, hbar, action, path)?;
    let pv: Vec<f64> = table.iter().enumerate().map(|(k, row)| dot(&row.p, &velocity(path, k))).collect();
    let xy_term = lift[lift.len() - 1];
    let unwrapped = action_term + xy_term;
    Ok(SemiclassicalPhase {
        gamma: wrap_phase(unwrapped),
        unwrapped,
        action_term,
        xy_term,
        p_line_integral: trapezoid(path.s(), &pv),
        action,
        k: path.intervals(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalHannay {
    pub theta: f64,
    /// d/dI int <grad S>.dR.
    pub action_term: f64,
    /// -hbar d/dI arg(X_f + i Y_f).
    pub endpoint_term: f64,
    pub action: f64,
}

/// theta = -hbar d gamma / dI with centered steps of hbar in I.
pub fn semiclassical_hannay(cm: ClassicalModel, hbar: f64, action: f64, path: &ParameterPath) -> Result<SemiclassicalHannay> {
    check_action(action, hbar)?;
    if action <= hbar {
        return Err(Error::InvalidInput(format!("action {action} must exceed hbar for the centered step")));
    }
    let (ip, im) = (action + hbar, action - hbar);
    let action_term = (action_integral(cm, ip, path)? - action_integral(cm, im, path)?) / (2.0 * hbar);
    let lp = *xy_lift(cm, hbar, ip, path)?.last().unwrap();
    let lm = *xy_lift(cm, hbar, im, path)?.last().unwrap();
    let endpoint_term = -wrap_phase(lp - lm) / 2.0;
    Ok(SemiclassicalHannay { theta: action_term + endpoint_term, action_term, endpoint_term, action })
}

/// Primitive WKB wavefunction summed over both branches; zero outside the
/// allowed region.
pub fn wkb_wavefunction(cm: ClassicalModel, hbar: f64, action: f64, r: &[f64], q: f64) -> Result<C64> {
    let b = branch_data(cm, action, r, q, false)?;
    Ok(b.iter().map(|x| C64::from_polar(x.amplitude, x.action / hbar + x.branch.maslov())).sum())
}

/// <psi_wkb|psi> for a Fock-basis state of an oscillator model, over the
/// caustic-cut allowed region, with psi_wkb normalized there.
pub fn wkb_overlap(cm: ClassicalModel, hbar: f64, action: f64, r: &[f64], state: &StateVector) -> Result<C64> {
    check_action(action, hbar)?;
    let f = form(cm, r)?;
    let qt = f.u(action).sqrt();
    let nmax = state.len() - 1;
    let mut ov = C64::new(0.0, 0.0);
    let mut norm = 0.0;
    for (phi, w) in simpson_nodes(caustic_cut(action, hbar)) {
        let q = qt * phi.sin();
        let jac = qt * phi.cos();
        let psi_w = wkb_wavefunction(cm, hbar, action, r, q)?;
        let h = oscillator_wavefunctions(nmax, q, hbar);
        let psi: C64 = state.iter().zip(&h).map(|(c, hv)| c * *hv).sum();
        ov += psi_w.conj() * psi * (w * jac);
        norm += psi_w.norm_sqr() * w * jac;
    }
    Ok(ov / norm.sqrt())
}

pub fn write_xy_csv<W: Write>(rows: &[XYSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let m = rows.first().map(|r| r.r.len()).unwrap_or(0);
    let mut header = vec!["s".to_string()];
    header.extend((1..=m).map(|i| format!("R{i}")));
    header.push("X".into());
    header.push("Y".into());
    header.extend((1..=m).map(|i| format!("P{i}_rad_per_unit")));
    out.write_record(&header)?;
    for row in rows {
        let mut rec = vec![format!("{:.12e}", row.s)];
        rec.extend(row.r.iter().map(|v| format!("{v:.12e}")));
        rec.push(format!("{:.12e}", row.x));
        rec.push(format!("{:.12e}", row.y));
        rec.extend(row.p.iter().map(|v| format!("{v:.12e}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
