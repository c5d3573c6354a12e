//! Phase-space side of the projector one-form: Wigner functions on a grid,
//! Poisson brackets, microcanonical torus averages and the classical limit
//! of the open-path phase.
//!
//! Wigner functions use W = (1/2 pi hbar) int dy psi*(q + y/2) psi(q - y/2) e^{ipy/hbar},
//! so that int W dq dp = 1. The Weyl symbol of the projector |psi><psi| is
//! 2 pi hbar W.

use crate::berry::{trapezoid, ORTH_TOL};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, inner, oscillator_wavefunctions, StateVector, C64};
use crate::models::{ClassicalModel, Model, ParameterPath};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

/// Largest probability allowed outside the q range.
pub const TAIL_TOL: f64 = 1e-4;
const STENCIL_REL: f64 = 1e-4;
const CONTOUR_POINTS: usize = 512;

/// Square N x N grid. The p spacing is tied to the q spacing by the
/// antidiagonal transform: dp = pi hbar / (N dq).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    pub n: usize,
    pub q_max: f64,
    pub hbar: f64,
}

impl PhaseSpaceGrid {
    pub fn new(q_max: f64, n: usize, hbar: f64) -> Result<Self> {
        if !n.is_power_of_two() || n < 8 {
            return Err(Error::InvalidInput(format!("grid size must be a power of two >= 8, got {n}")));
        }
        if !(q_max > 0.0 && hbar > 0.0) {
            return Err(Error::InvalidInput(format!("grid needs q_max > 0 and hbar > 0, got {q_max}, {hbar}")));
        }
        Ok(PhaseSpaceGrid { n, q_max, hbar })
    }

    /// Grid covering the action-I orbits at all `points` with three
    /// de Broglie margins, oversampled twice beyond the transform's Nyquist
    /// requirement.
    pub fn covering(cm: ClassicalModel, action: f64, points: &[&[f64]], hbar: f64) -> Result<Self> {
        let (mut qx, mut px) = (0.0f64, 0.0f64);
        for r in points {
            cm.check(r)?;
            for j in 0..64 {
                let (q, p) = cm.from_action_angle(action, 2.0 * PI * j as f64 / 64.0, r);
                qx = qx.max(q.abs());
                px = px.max(p.abs());
            }
        }
        let margin = 3.0 * (2.0 * PI * hbar).sqrt();
        let (lq, lp) = (qx + margin, px + margin);
        let need = 2.0 * 4.0 * lq * lp / (PI * hbar);
        let n = (need.ceil() as usize).next_power_of_two().max(64);
        Self::new(lq, n, hbar)
    }

    pub fn dq(&self) -> f64 {
        2.0 * self.q_max / self.n as f64
    }

    pub fn dp(&self) -> f64 {
        PI * self.hbar / (self.n as f64 * self.dq())
    }

    pub fn p_max(&self) -> f64 {
        0.5 * self.n as f64 * self.dp()
    }

    pub fn q(&self, j: usize) -> f64 {
        -self.q_max + j as f64 * self.dq()
    }

    pub fn p(&self, k: usize) -> f64 {
        (k as f64 - 0.5 * self.n as f64) * self.dp()
    }

    pub fn cell(&self) -> f64 {
        self.dq() * self.dp()
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Field f(q, p) sampled at the nodes, row-major in q.
    pub fn field(&self, f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
        (0..self.len()).into_par_iter().map(|i| f(self.q(i / self.n), self.p(i % self.n))).collect()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WignerSource {
    PureState,
    Projector,
    Microcanonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerFunction {
    pub grid: PhaseSpaceGrid,
    pub values: Vec<f64>,
    pub source: WignerSource,
    /// Largest imaginary part dropped by the transform.
    pub max_imag: f64,
}

impl WignerFunction {
    pub fn at(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.grid.n + k]
    }

    pub fn norm(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Weyl symbol of the projector: 2 pi hbar W.
    pub fn weyl_symbol(&self) -> Vec<f64> {
        let s = 2.0 * PI * self.grid.hbar;
        self.values.iter().map(|v| v * s).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_field_csv(&self.grid, &self.values, "W_per_action", w)
    }
}

pub fn write_field_csv<W: Write>(grid: &PhaseSpaceGrid, f: &[f64], name: &str, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["q", "p", name])?;
    for j in 0..grid.n {
        for k in 0..grid.n {
            out.write_record(&[format!("{:.10e}", grid.q(j)), format!("{:.10e}", grid.p(k)), format!("{:.12e}", f[j * grid.n + k])])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Position wavefunction of a Fock-basis state at the q nodes.
pub fn fock_to_grid(state: &StateVector, grid: &PhaseSpaceGrid) -> Vec<C64> {
    let nmax = state.len() - 1;
    (0..grid.n)
        .into_par_iter()
        .map(|j| {
            let h = oscillator_wavefunctions(nmax, grid.q(j), grid.hbar);
            state.iter().zip(&h).map(|(c, v)| c * *v).sum()
        })
        .collect()
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// Wigner transform of a normalized wavefunction sampled at the q nodes.
/// The y integral uses steps of 2 dq so that q +- y/2 stay on the nodes.
pub fn wigner_transform(psi: &[C64], grid: &PhaseSpaceGrid, source: WignerSource) -> Result<WignerFunction> {
    let n = grid.n;
    if psi.len() != n {
        return Err(Error::DimensionMismatch(format!("wavefunction has {} samples, grid has {n}", psi.len())));
    }
    let mass: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * grid.dq();
    if 1.0 - mass > TAIL_TOL {
        return Err(Error::GridTooSmall { tail: 1.0 - mass, tol: TAIL_TOL });
    }
    let fft = plan(n, true);
    let pref = grid.dq() / (PI * grid.hbar);
    let half = n as i64 / 2;
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut buf = vec![C64::new(0.0, 0.0); n];
            for m in -half..half {
                let (a, b) = (j as i64 + m, j as i64 - m);
                if a < 0 || b < 0 || a >= n as i64 || b >= n as i64 {
                    continue;
                }
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                buf[m.rem_euclid(n as i64) as usize] = psi[a as usize].conj() * psi[b as usize] * sign;
            }
            fft.process(&mut buf);
            let imag = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max) * pref;
            (buf.iter().map(|c| c.re * pref).collect(), imag)
        })
        .collect();
    let max_imag = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(WignerFunction { grid: *grid, values: rows.into_iter().flat_map(|r| r.0).collect(), source, max_imag })
}

/// Wigner function of level n of an oscillator model at R.
pub fn eigen_wigner(model: &Model, r: &[f64], n: usize, grid: &PhaseSpaceGrid) -> Result<WignerFunction> {
    model.check_level(n)?;
    let eig = hermitian_eigen(model.hamiltonian_at(r)?.matrix());
    wigner_transform(&fock_to_grid(&eig.vectors[n], grid), grid, WignerSource::Projector)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    /// Second-order centered differences, one-sided at the edges.
    #[default]
    Centered,
    /// FFT derivatives; for fields that vanish at the grid edges.
    Spectral,
}

/// d/dq (axis 0) or d/dp (axis 1).
pub fn derivative(f: &[f64], grid: &PhaseSpaceGrid, axis: usize, scheme: DerivativeScheme) -> Vec<f64> {
    let n = grid.n;
    let (h, idx): (f64, Box<dyn Fn(usize, usize) -> usize + Sync>) = if axis == 0 {
        (grid.dq(), Box::new(move |line, i| i * n + line))
    } else {
        (grid.dp(), Box::new(move |line, i| line * n + i))
    };
    let fft = (scheme == DerivativeScheme::Spectral).then(|| (plan(n, false), plan(n, true)));
    let lines: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|line| {
            let v: Vec<f64> = (0..n).map(|i| f[idx(line, i)]).collect();
            match &fft {
                None => (0..n)
                    .map(|i| match i {
                        0 => (v[1] - v[0]) / h,
                        _ if i == n - 1 => (v[n - 1] - v[n - 2]) / h,
                        _ => (v[i + 1] - v[i - 1]) / (2.0 * h),
                    })
                    .collect(),
                Some((fwd, inv)) => {
                    let mut buf: Vec<C64> = v.iter().map(|x| C64::new(*x, 0.0)).collect();
                    fwd.process(&mut buf);
                    for (m, c) in buf.iter_mut().enumerate() {
                        let km = if m < n / 2 {
                            m as f64
                        } else if m == n / 2 {
                            0.0
                        } else {
                            m as f64 - n as f64
                        };
                        *c *= C64::new(0.0, 2.0 * PI * km / (n as f64 * h));
                    }
                    inv.process(&mut buf);
                    buf.iter().map(|c| c.re / n as f64).collect()
                }
            }
        })
        .collect();
    let mut out = vec![0.0; f.len()];
    for (line, vals) in lines.iter().enumerate() {
        for (i, v) in vals.iter().enumerate() {
            out[idx(line, i)] = *v;
        }
    }
    out
}

/// {f, g} = f_q g_p - f_p g_q.
pub fn poisson_bracket(f: &[f64], g: &[f64], grid: &PhaseSpaceGrid, scheme: DerivativeScheme) -> Vec<f64> {
    let (fq, fp) = (derivative(f, grid, 0, scheme), derivative(f, grid, 1, scheme));
    let (gq, gp) = (derivative(g, grid, 0, scheme), derivative(g, grid, 1, scheme));
    (0..f.len()).map(|i| fq[i] * gp[i] - fp[i] * gq[i]).collect()
}

/// Catmull-Rom interpolation of a grid field; exact on quadratics.
pub fn interpolate(f: &[f64], grid: &PhaseSpaceGrid, q: f64, p: f64) -> Option<f64> {
    let n = grid.n;
    let x = (q + grid.q_max) / grid.dq();
    let y = p / grid.dp() + 0.5 * n as f64;
    let (j, k) = (x.floor() as i64, y.floor() as i64);
    if j < 1 || k < 1 || j + 2 >= n as i64 || k + 2 >= n as i64 {
        return None;
    }
    let weights = |t: f64| {
        [
            0.5 * (-t * t * t + 2.0 * t * t - t),
            0.5 * (3.0 * t * t * t - 5.0 * t * t + 2.0),
            0.5 * (-3.0 * t * t * t + 4.0 * t * t + t),
            0.5 * (t * t * t - t * t),
        ]
    };
    let (wx, wy) = (weights(x - j as f64), weights(y - k as f64));
    let mut acc = 0.0;
    for (a, wa) in wx.iter().enumerate() {
        for (b, wb) in wy.iter().enumerate() {
            acc += wa * wb * f[(j - 1 + a as i64) as usize * n + (k - 1 + b as i64) as usize];
        }
    }
    Some(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delta {
    /// Gaussian in the action of the given width (None: two grid cells).
    Mollified { width: Option<f64> },
    /// Uniform angle average along the contour I(q, p) = I.
    Contour,
}

impl Default for Delta {
    fn default() -> Self {
        Delta::Mollified { width: None }
    }
}

/// Action field I(q, p) of the torus family at R.
pub fn action_field(cm: ClassicalModel, r: &[f64], grid: &PhaseSpaceGrid) -> Result<Vec<f64>> {
    cm.check(r)?;
    let chart = cm.chart(r);
    Ok(grid.field(|q, p| chart.action_angle(q, p).action))
}

/// Default mollifier width: two grid cells crossed at the torus.
pub fn default_width(action: f64, grid: &PhaseSpaceGrid) -> f64 {
    2.0 * grid.dq().max(grid.dp()) * (2.0 * action).sqrt()
}

/// Mollified delta (1/2 pi) delta(I(q,p) - I) on the grid, scaled to unit
/// integral (the Gaussian is clipped at I = 0).
pub fn mollified_delta(cm: ClassicalModel, action: f64, r: &[f64], grid: &PhaseSpaceGrid, width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0) {
        return Err(Error::InvalidInput(format!("mollifier width must be positive, got {width}")));
    }
    let g: Vec<f64> = action_field(cm, r, grid)?.iter().map(|i| (-0.5 * ((i - action) / width).powi(2)).exp()).collect();
    let total = grid.integrate(&g);
    Ok(g.into_iter().map(|v| v / total).collect())
}

/// Mollified microcanonical density as a Wigner-like field of unit norm.
pub fn microcanonical_wigner(
    cm: ClassicalModel,
    action: f64,
    r: &[f64],
    grid: &PhaseSpaceGrid,
    width: Option<f64>,
) -> Result<WignerFunction> {
    let values = mollified_delta(cm, action, r, grid, width.unwrap_or_else(|| default_width(action, grid)))?;
    Ok(WignerFunction { grid: *grid, values, source: WignerSource::Microcanonical, max_imag: 0.0 })
}

/// Torus average <f>_I at R.
pub fn microcanonical_average(
    f: &[f64],
    grid: &PhaseSpaceGrid,
    cm: ClassicalModel,
    action: f64,
    r: &[f64],
    delta: Delta,
) -> Result<f64> {
    match delta {
        Delta::Mollified { width } => {
            let d = mollified_delta(cm, action, r, grid, width.unwrap_or_else(|| default_width(action, grid)))?;
            Ok(grid.integrate(&f.iter().zip(&d).map(|(a, b)| a * b).collect::<Vec<_>>()))
        }
        Delta::Contour => {
            cm.check(r)?;
            let mut acc = 0.0;
            for j in 0..CONTOUR_POINTS {
                let theta = 2.0 * PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64;
                let (q, p) = cm.from_action_angle(action, theta, r);
                acc += interpolate(f, grid, q, p)
                    .ok_or_else(|| Error::InvalidInput(format!("contour I = {action} leaves the grid at ({q}, {p})")))?;
            }
            Ok(acc / CONTOUR_POINTS as f64)
        }
    }
}

/// Projector Wigner fields at R and R +- h e_i for the one-form.
struct ProjectorFields {
    weyl: Vec<f64>,
    gradient: Vec<Vec<f64>>,
}

fn stencil_step(r: &[f64]) -> f64 {
    STENCIL_REL * r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)
}

fn projector_fields(model: &Model, r: &[f64], n: usize, grid: &PhaseSpaceGrid) -> Result<ProjectorFields> {
    let h = stencil_step(r);
    let weyl = eigen_wigner(model, r, n, grid)?.weyl_symbol();
    let gradient = (0..r.len())
        .map(|i| {
            let mut rp = r.to_vec();
            let mut rm = r.to_vec();
            rp[i] += h;
            rm[i] -= h;
            let p = eigen_wigner(model, &rp, n, grid)?.weyl_symbol();
            let m = eigen_wigner(model, &rm, n, grid)?.weyl_symbol();
            Ok(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(ProjectorFields { weyl, gradient })
}

fn level_of(action: f64, hbar: f64) -> usize {
    (action / hbar - 0.5).round().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoyalComparison {
    /// <u|[P, grad P]|u>/i from matrices.
    pub quantum: Vec<f64>,
    /// hbar int W_u {P_W, grad P_W} dq dp.
    pub classical: Vec<f64>,
    pub deviation: f64,
    pub n: usize,
    pub k: usize,
}

/// Commutator expectation at sample k against its lowest-order Moyal term,
/// with u the level-n state at the path start.
pub fn moyal_vs_commutator(
    model: &Model,
    path: &ParameterPath,
    n: usize,
    k: usize,
    grid: &PhaseSpaceGrid,
    scheme: DerivativeScheme,
) -> Result<MoyalComparison> {
    model.classical()?;
    let r0 = path.point(0);
    let r = path.point(k);
    let eig = |x: &[f64]| -> Result<StateVector> { Ok(hermitian_eigen(model.hamiltonian_at(x)?.matrix()).vectors[n].clone()) };
    let u = eig(r0)?;
    let psi = eig(r)?;
    let h = stencil_step(r);
    let mut quantum = Vec::with_capacity(r.len());
    for i in 0..r.len() {
        let mut rp = r.to_vec();
        let mut rm = r.to_vec();
        rp[i] += h;
        rm[i] -= h;
        let (a, b) = (eig(&rp)?, eig(&rm)?);
        let dp_u = (&a * inner(&a, &u) - &b * inner(&b, &u)) / C64::new(2.0 * h, 0.0);
        quantum.push(2.0 * (inner(&u, &psi) * inner(&psi, &dp_u)).im);
    }
    let w0 = wigner_transform(&fock_to_grid(&u, grid), grid, WignerSource::PureState)?;
    let fields = projector_fields(model, r, n, grid)?;
    let classical: Vec<f64> = fields
        .gradient
        .iter()
        .map(|g| {
            let pb = poisson_bracket(&fields.weyl, g, grid, scheme);
            grid.hbar * grid.integrate(&pb.iter().zip(&w0.values).map(|(a, b)| a * b).collect::<Vec<_>>())
        })
        .collect();
    let diff = quantum.iter().zip(&classical).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = quantum.iter().map(|a| a * a).sum::<f64>().sqrt();
    let deviation = if scale > 1e-12 { diff / scale } else { diff };
    Ok(MoyalComparison { quantum, classical, deviation, n, k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalOptions {
    pub delta: Delta,
    pub scheme: DerivativeScheme,
}

impl Default for ClassicalOptions {
    fn default() -> Self {
        ClassicalOptions { delta: Delta::default(), scheme: DerivativeScheme::Spectral }
    }
}

/// Omega_c = -(hbar/2) <{P_W, grad P_W}>_I / <P_W>_I, torus averages at the
/// path start and P_W the level-n projector symbol at sample k.
pub fn classical_one_form(
    model: &Model,
    action: f64,
    path: &ParameterPath,
    k: usize,
    grid: &PhaseSpaceGrid,
    opts: &ClassicalOptions,
) -> Result<Vec<f64>> {
    let cm = model.classical()?;
    let hbar = model.hbar();
    let n = level_of(action, hbar);
    let r0 = path.point(0);
    let fields = projector_fields(model, path.point(k), n, grid)?;
    let den = microcanonical_average(&fields.weyl, grid, cm, action, r0, opts.delta)?;
    if den.abs() <= ORTH_TOL * ORTH_TOL {
        return Err(Error::Orthogonal { sample: k, magnitude: den.abs().sqrt(), tol: ORTH_TOL });
    }
    fields
        .gradient
        .iter()
        .map(|g| {
            let pb = poisson_bracket(&fields.weyl, g, grid, opts.scheme);
            Ok(-0.5 * hbar * microcanonical_average(&pb, grid, cm, action, r0, opts.delta)? / den)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalHolonomy {
    pub theta: f64,
    pub action: f64,
    pub n: usize,
    pub omega: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: usize,
    pub grid: PhaseSpaceGrid,
}

/// Line integral of Omega_c along the sampled path.
pub fn classical_angle_holonomy(
    model: &Model,
    action: f64,
    path: &ParameterPath,
    grid: &PhaseSpaceGrid,
    opts: &ClassicalOptions,
) -> Result<ClassicalHolonomy> {
    let omega: Vec<Vec<f64>> =
        (0..path.len()).map(|k| classical_one_form(model, action, path, k, grid, opts)).collect::<Result<_>>()?;
    let f: Vec<f64> = (0..path.len())
        .map(|k| omega[k].iter().zip(path.velocity_at(path.s()[k])).map(|(a, b)| a * b).sum())
        .collect();
    Ok(ClassicalHolonomy {
        theta: trapezoid(path.s(), &f),
        action,
        n: level_of(action, model.hbar()),
        omega,
        k: path.intervals(),
        grid: *grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, sample_path, ModelSpec, PathSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GO: ClassicalModel = ClassicalModel::GeneralizedOscillator;

    fn fock(n: usize, d: usize) -> StateVector {
        let mut v = StateVector::zeros(d);
        v[n] = C64::new(1.0, 0.0);
        v
    }

    #[test]
    fn ground_state_is_the_gaussian() {
        for hbar in [1.0, 0.5] {
            let grid = PhaseSpaceGrid::new(8.0, 128, hbar).unwrap();
            let w = wigner_transform(&fock_to_grid(&fock(0, 4), &grid), &grid, WignerSource::PureState).unwrap();
            let exact = grid.field(|q, p| (-(q * q + p * p) / hbar).exp() / (PI * hbar));
            let err = w.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
            assert!(w.values.iter().all(|v| *v > -1e-14));
        }
    }

    #[test]
    fn first_excited_state_is_negative_at_the_origin() {
        let grid = PhaseSpaceGrid::new(8.0, 128, 1.0).unwrap();
        let w = wigner_transform(&fock_to_grid(&fock(1, 4), &grid), &grid, WignerSource::PureState).unwrap();
        assert!((w.at(64, 64) + 1.0 / PI).abs() < 1e-12, "{}", w.at(64, 64));
    }

    #[test]
    fn eigenstate_wigner_functions_are_real_and_normalized() {
        let model = build_model(ModelSpec::generalized_oscillator(60)).unwrap();
        let r = [1.2, 0.3, 0.9];
        let grid = PhaseSpaceGrid::covering(GO, 20.5, &[&r], 1.0).unwrap();
        for n in [0, 3, 10, 20] {
            let w = eigen_wigner(&model, &r, n, &grid).unwrap();
            assert!((w.norm() - 1.0).abs() < 1e-3, "{n}: {}", w.norm());
            assert!(w.max_imag < 1e-10);
        }
    }

    #[test]
    fn small_grid_rejected() {
        let grid = PhaseSpaceGrid::new(2.0, 64, 1.0).unwrap();
        assert!(wigner_transform(&fock_to_grid(&fock(10, 12), &grid), &grid, WignerSource::PureState).is_err());
        assert!(PhaseSpaceGrid::new(2.0, 100, 1.0).is_err());
    }

    #[test]
    fn canonical_brackets() {
        let grid = PhaseSpaceGrid::new(4.0, 64, 1.0).unwrap();
        let q = grid.field(|q, _| q);
        let p = grid.field(|_, p| p);
        let h = grid.field(|q, p| 0.5 * (q * q + p * p));
        assert!(poisson_bracket(&q, &p, &grid, DerivativeScheme::Centered).iter().all(|v| (v - 1.0).abs() < 1e-12));
        let hq = poisson_bracket(&h, &q, &grid, DerivativeScheme::Centered);
        for j in 1..63 {
            for k in 1..63 {
                assert!((hq[j * 64 + k] + grid.p(k)).abs() < 1e-10);
            }
        }
        let f = grid.field(|q, p| (-(q - 0.3).powi(2) - p * p).exp());
        for s in [DerivativeScheme::Centered, DerivativeScheme::Spectral] {
            assert!(poisson_bracket(&f, &f, &grid, s).iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn bracket_is_bilinear_and_leibniz() {
        let grid = PhaseSpaceGrid::new(7.0, 128, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut bump = || {
            let (a, b, c): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..1.5));
            grid.field(move |q, p| c * (-((q - a).powi(2) + (p - b).powi(2)) / 2.0).exp())
        };
        let (f, g, h) = (bump(), bump(), bump());
        let s = DerivativeScheme::Spectral;
        let pb = |x: &[f64], y: &[f64]| poisson_bracket(x, y, &grid, s);
        let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let lhs = pb(&fg, &h);
        let (a, b) = (pb(&f, &h), pb(&g, &h));
        assert!((0..lhs.len()).all(|i| (lhs[i] - 2.0 * a[i] + 3.0 * b[i]).abs() < 1e-10));
        let prod: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a * b).collect();
        let lhs = pb(&prod, &h);
        assert!((0..lhs.len()).all(|i| (lhs[i] - f[i] * b[i] - g[i] * a[i]).abs() < 1e-8));
    }

    #[test]
    fn torus_averages() {
        let r = [1.3, 0.2, 0.8];
        let i = 3.0;
        let grid = PhaseSpaceGrid::covering(GO, i, &[&r], 1.0).unwrap();
        let one = vec![1.0; grid.len()];
        let h = grid.field(|q, p| GO.hamiltonian(q, p, &r));
        for d in [Delta::Contour, Delta::default()] {
            assert!((microcanonical_average(&one, &grid, GO, i, &r, d).unwrap() - 1.0).abs() < 1e-6);
        }
        let e = microcanonical_average(&h, &grid, GO, i, &r, Delta::Contour).unwrap();
        assert!((e - GO.frequency(&r) * i).abs() < 1e-4, "{e}");
        let f = grid.field(|q, p| (0.3 * q).cos() + 0.1 * q * p);
        let a = microcanonical_average(&f, &grid, GO, i, &r, Delta::Contour).unwrap();
        let b = microcanonical_average(&f, &grid, GO, i, &r, Delta::default()).unwrap();
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        let far = PhaseSpaceGrid::new(2.0, 64, 1.0).unwrap();
        assert!(microcanonical_average(&vec![1.0; far.len()], &far, GO, i, &r, Delta::Contour).is_err());
        let w = microcanonical_wigner(GO, i, &r, &grid, None).unwrap();
        assert!((w.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn torus_quotient_ignores_delta_normalization() {
        let r = [1.0, 0.0, 1.0];
        let grid = PhaseSpaceGrid::covering(GO, 5.5, &[&r], 1.0).unwrap();
        let d = mollified_delta(GO, 5.5, &r, &grid, default_width(5.5, &grid)).unwrap();
        let f = grid.field(|q, _| 1.0 + q * q);
        let g = grid.field(|q, _| 2.0 + q);
        let quotient = |scale: f64| {
            let num: f64 = grid.integrate(&f.iter().zip(&d).map(|(a, b)| a * b * scale).collect::<Vec<_>>());
            let den: f64 = grid.integrate(&g.iter().zip(&d).map(|(a, b)| a * b * scale).collect::<Vec<_>>());
            num / den
        };
        assert!((quotient(1.0) - quotient(7.3)).abs() < 1e-10 * quotient(1.0).abs());
    }

    #[test]
    fn first_order_bracket_is_exact_for_quadratic_generators() {
        let model = build_model(ModelSpec::generalized_oscillator(90)).unwrap();
        let (r0, r) = ([1.0, 0.0, 1.0], [1.1, 0.2, 0.95]);
        let n = 10;
        let grid = PhaseSpaceGrid::covering(GO, 10.5, &[&r0, &r], 1.0).unwrap();
        let eig = |x: &[f64]| hermitian_eigen(model.hamiltonian_at(x).unwrap().matrix()).vectors[n].clone();
        let (u, psi) = (eig(&r0), eig(&r));
        let q = model.position_operator().unwrap();
        let g = q * q * C64::new(0.5, 0.0);
        let quantum = 2.0 * (inner(&u, &(&g * &psi)) * inner(&psi, &u)).im;
        let w0 = wigner_transform(&fock_to_grid(&u, &grid), &grid, WignerSource::PureState).unwrap();
        let pw = eigen_wigner(&model, &r, n, &grid).unwrap().weyl_symbol();
        let pb = poisson_bracket(&grid.field(|q, _| 0.5 * q * q), &pw, &grid, DerivativeScheme::Spectral);
        let classical = grid.integrate(&pb.iter().zip(&w0.values).map(|(a, b)| a * b).collect::<Vec<_>>());
        assert!((quantum - classical).abs() < 1e-8 * quantum.abs(), "{quantum} vs {classical}");
        let overlap = grid.integrate(&pw.iter().zip(&w0.values).map(|(a, b)| a * b).collect::<Vec<_>>());
        assert!((overlap - inner(&u, &psi).norm_sqr()).abs() < 1e-10);
    }

    #[test]
    fn constant_path_gives_zero() {
        let model = build_model(ModelSpec::generalized_oscillator(50)).unwrap();
        let path = sample_path(&PathSpec::constant(vec![1.0, 0.0, 1.0]), 4).unwrap();
        let grid = PhaseSpaceGrid::covering(GO, 5.5, &[path.point(0)], 1.0).unwrap();
        let m = moyal_vs_commutator(&model, &path, 5, 2, &grid, DerivativeScheme::Spectral).unwrap();
        assert!(m.quantum.iter().chain(&m.classical).all(|v| v.abs() < 1e-8), "{m:?}");
        let omega = classical_one_form(&model, 5.5, &path, 2, &grid, &ClassicalOptions::default()).unwrap();
        assert!(omega.iter().all(|v| v.abs() < 1e-8), "{omega:?}");
        let h = classical_angle_holonomy(&model, 5.5, &path, &grid, &ClassicalOptions::default()).unwrap();
        assert!(h.theta.abs() < 1e-12);
    }

    #[test]
    fn spin_model_rejected() {
        let model = build_model(ModelSpec::spin(0.5)).unwrap();
        let path = sample_path(&PathSpec::sphere_circle(1.0, 0.5, 1.0), 4).unwrap();
        let grid = PhaseSpaceGrid::new(4.0, 64, 1.0).unwrap();
        assert!(moyal_vs_commutator(&model, &path, 0, 1, &grid, DerivativeScheme::Spectral).is_err());
    }
}
