//! Hannay angles: from the n-dependence of quantum phases, from coherent
//! packets, from classical ensembles and from a driven packet that revives.

use crate::berry::open_path_phase;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, inner, linear_fit, unwrap_phases, wrap_phase, ComplexMatrix, StateVector, C64, I};
use crate::models::{Chart, ClassicalModel, Model, ParameterPath};
use crate::spectral::{track_frames, FrameTrack, GaugeMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

/// Largest rms residual (rad) of a linear fit of phases against n.
pub const FIT_TOL: f64 = 0.05;
pub const ACTION_DRIFT_TOL: f64 = 0.05;
/// Largest accepted angular spread of a revived packet (rad).
pub const DISPERSION_TOL: f64 = 0.25;
/// Classical RK4 step as a fraction of one radian of the fastest motion.
const CLASSICAL_STEP: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HannayMethod {
    DgammaDn,
    CoherentState,
    ClassicalEnsemble,
    Operational,
    Revival,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HannayResult {
    /// Geometric angle shift (rad).
    pub theta: f64,
    pub n_center: usize,
    pub method: HannayMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamical_shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_shift: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl HannayResult {
    fn new(theta: f64, n_center: usize, method: HannayMethod) -> Self {
        HannayResult { theta, n_center, method, dynamical_shift: None, total_shift: None, diagnostics: BTreeMap::new() }
    }

    fn diag(mut self, key: &str, v: f64) -> Self {
        self.diagnostics.insert(key.to_string(), v);
        self
    }
}

/// Continuous lift of the open-path phase of level `n` along the track.
fn lifted_phase(track: &FrameTrack, n: usize) -> Result<f64> {
    let r = open_path_phase(track, n)?;
    Ok(r.unwrapped.unwrap_or(r.gamma))
}

/// theta = -(gamma_{n+1} - gamma_{n-1})/2 by centered difference.
pub fn hannay_from_phase(model: &Model, path: &ParameterPath, n_center: usize) -> Result<HannayResult> {
    if n_center == 0 {
        return Err(Error::InvalidInput("dgamma_dn needs n_center >= 1".into()));
    }
    model.check_level(n_center + 1)?;
    let track = track_frames(model, path, &[n_center - 1, n_center, n_center + 1], GaugeMode::ParallelTransport)?;
    hannay_from_track(&track, n_center)
}

pub fn hannay_from_track(track: &FrameTrack, n_center: usize) -> Result<HannayResult> {
    if n_center == 0 {
        return Err(Error::InvalidInput("dgamma_dn needs n_center >= 1".into()));
    }
    let lo = lifted_phase(track, n_center - 1)?;
    let mid = lifted_phase(track, n_center)?;
    let hi = lifted_phase(track, n_center + 1)?;
    // lifts of different levels may differ by whole turns
    let up = wrap_phase(hi - mid);
    let down = wrap_phase(mid - lo);
    Ok(HannayResult::new(-(up + down) / 2.0, n_center, HannayMethod::DgammaDn)
        .diag("gamma_n", mid)
        .diag("second_difference", up - down))
}

/// C + iS = <psi_n(R0)|psi_n(Rf)> in the track's gauge; theta = atan2(S, C).
pub fn operational_angle(track: &FrameTrack, n: usize) -> Result<HannayResult> {
    let slot = track.slot(n)?;
    let z = inner(track.state(0, slot), track.state(track.len() - 1, slot));
    Ok(HannayResult::new(z.im.atan2(z.re), n, HannayMethod::Operational).diag("magnitude", z.norm()))
}

/// Per-level record of the coherent-state construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPhase {
    pub n: usize,
    pub weight: f64,
    pub geometric: f64,
    pub dynamical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherentReport {
    pub result: HannayResult,
    pub levels: Vec<LevelPhase>,
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// |c_n| of the Poisson packet with mean occupation `mean`.
fn poisson_amplitude(mean: f64, n: usize) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-0.5 * mean + 0.5 * n as f64 * mean.ln() - 0.5 * ln_factorial(n)).exp()
}

/// Lowering operator (Q + iP)/sqrt(2 hbar) of a chart.
fn chart_lowering(model: &Model, chart: &Chart) -> Result<ComplexMatrix> {
    let q = model.position_operator().ok_or_else(|| Error::Unsupported("model has no phase space".into()))?;
    let p = model.momentum_operator().unwrap();
    let d = model.dim();
    let id = ComplexMatrix::identity(d, d);
    let l = &chart.l;
    let re = C64::new(1.0, 0.0);
    let big_q = q * (re * l[0][0]) + p * (re * l[0][1]) + &id * (re * chart.c[0]);
    let big_p = q * (re * l[1][0]) + p * (re * l[1][1]) + &id * (re * chart.c[1]);
    Ok((big_q + big_p * I) * C64::new(1.0 / (2.0 * model.hbar()).sqrt(), 0.0))
}

/// Phases e^{i phi_n} making <n|a|n+1> real positive along a ladder of states.
fn ladder_phases(states: &[&StateVector], a: &ComplexMatrix) -> Vec<f64> {
    let mut phases = vec![0.0; states.len()];
    for k in 1..states.len() {
        let m = inner(states[k - 1], &(a * states[k]));
        phases[k] = phases[k - 1] - m.arg();
    }
    phases
}

/// Mean occupation and angle theta of alpha = sqrt(I/hbar) e^{-i theta}.
fn packet_numbers(alpha: C64) -> (f64, f64) {
    (alpha.norm_sqr(), -alpha.arg())
}

/// Coherent packet over the window N +- ceil(3 sqrt N): each level carries its
/// dynamical phase and open-path phase, whose least-squares slopes in n give
/// the dynamical and geometric angle shifts. For oscillator models the full
/// double sum <a> in the reference-aligned final chart is also evaluated and
/// its departure from the slope prediction reported as `rpa_residual`.
pub fn coherent_angle_shift(model: &Model, path: &ParameterPath, alpha: C64, t_total: f64) -> Result<CoherentReport> {
    if !(t_total > 0.0 && t_total.is_finite()) {
        return Err(Error::InvalidInput(format!("T must be positive, got {t_total}")));
    }
    let (mean, theta0) = packet_numbers(alpha);
    if mean < 1.0 {
        return Err(Error::InvalidInput(format!("|alpha|^2 = {mean} too small for a packet")));
    }
    let center = mean.round() as usize;
    let half = (3.0 * mean.sqrt()).ceil() as usize;
    let lo = center.saturating_sub(half);
    let hi = center + half;
    model.check_level(hi)?;
    let levels: Vec<usize> = (lo..=hi).collect();
    let track = track_frames(model, path, &levels, GaugeMode::ParallelTransport)?;
    let hbar = model.hbar();
    let s = path.s();
    let mut rows = Vec::with_capacity(levels.len());
    let mut berry_terms = Vec::with_capacity(levels.len());
    for &n in &levels {
        let slot = track.slot(n)?;
        let ph = open_path_phase(&track, n)?;
        let energies: Vec<f64> = (0..track.len()).map(|k| track.energy(k, slot)).collect();
        let dynamical = -t_total / hbar * crate::berry::trapezoid(s, &energies);
        rows.push(LevelPhase {
            n,
            weight: poisson_amplitude(mean, n).powi(2),
            geometric: ph.unwrapped.unwrap_or(ph.gamma),
            dynamical,
        });
        berry_terms.push(ph.berry_term);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let g = unwrap_phases(&rows.iter().map(|r| r.geometric).collect::<Vec<_>>());
    for (row, v) in rows.iter_mut().zip(&g) {
        row.geometric = *v;
    }
    let dy: Vec<f64> = rows.iter().map(|r| r.dynamical).collect();
    let (sg, _, rms_g) = linear_fit(&x, &g);
    let (sd, _, rms_d) = linear_fit(&x, &dy);
    if rms_g > FIT_TOL {
        return Err(Error::PoorFit { residual: rms_g, tol: FIT_TOL });
    }
    let geometric = -sg;
    let dynamical = -sd;
    let mut result = HannayResult::new(geometric, center, HannayMethod::CoherentState)
        .diag("fit_residual", rms_g)
        .diag("dynamical_fit_residual", rms_d)
        .diag("window_mass", rows.iter().map(|r| r.weight).sum())
        .diag("T", t_total);
    result.dynamical_shift = Some(dynamical);
    result.total_shift = Some(geometric + dynamical);

    if let Ok(cm) = model.classical() {
        let last = track.len() - 1;
        let chart0 = cm.chart(path.point(0));
        let chart_f = cm.chart(path.point(last)).aligned_to(&chart0);
        let a0 = chart_lowering(model, &chart0)?;
        let af = chart_lowering(model, &chart_f)?;
        let initial: Vec<&StateVector> = levels.iter().map(|&n| track.state(0, track.slot(n).unwrap())).collect();
        let phi = ladder_phases(&initial, &a0);
        let mut psi_f = StateVector::zeros(model.dim());
        for (j, row) in rows.iter().enumerate() {
            let slot = track.slot(row.n)?;
            let c = poisson_amplitude(mean, row.n) * C64::from_polar(1.0, -(row.n as f64) * theta0);
            let phase = phi[j] + row.dynamical + berry_terms[j];
            psi_f += track.state(last, slot) * (c * C64::from_polar(1.0, phase));
        }
        let expect = inner(&psi_f, &(&af * &psi_f)) / psi_f.norm_squared();
        let theta_full = -expect.arg();
        let residual = wrap_phase(theta_full - theta0 - geometric - dynamical);
        result = result.diag("rpa_residual", residual).diag("full_sum_angle", wrap_phase(theta_full));
    }
    Ok(CoherentReport { result, levels: rows })
}

pub fn write_levels_csv<W: Write>(rows: &[LevelPhase], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "weight", "geometric_rad", "dynamical_rad"])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            format!("{:.12e}", r.weight),
            format!("{:.12e}", r.geometric),
            format!("{:.12e}", r.dynamical),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One driven classical orbit: angle shift beyond int w dt and action drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub theta0: f64,
    pub shift: f64,
    pub dynamical: f64,
    pub action_drift: f64,
}

/// RK4 on Hamilton's equations under R(t/T), with int w(R(t)) dt carried as
/// an extra component. The chart angle is unwrapped step by step.
pub fn classical_trajectory(
    cm: ClassicalModel,
    path: &ParameterPath,
    action: f64,
    theta0: f64,
    t_total: f64,
) -> Result<Trajectory> {
    let w_max = path.points().iter().map(|r| cm.frequency(r)).fold(0.0, f64::max);
    let steps = ((t_total * w_max / CLASSICAL_STEP).ceil() as usize).max(1);
    let dt = t_total / steps as f64;
    let at = |t: f64| path.point_at((t / t_total).clamp(0.0, 1.0));
    let f = |t: f64, y: [f64; 3]| -> [f64; 3] {
        let r = at(t);
        let (dq, dp) = cm.flow(y[0], y[1], &r);
        [dq, dp, cm.frequency(&r)]
    };
    let r0 = path.point(0);
    let (q, p) = cm.from_action_angle(action, theta0, r0);
    let mut y = [q, p, 0.0];
    let mut angle = theta0;
    let mut lifted = theta0;
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * dt, std::array::from_fn(|i| y[i] + 0.5 * dt * k1[i]));
        let k3 = f(t + 0.5 * dt, std::array::from_fn(|i| y[i] + 0.5 * dt * k2[i]));
        let k4 = f(t + dt, std::array::from_fn(|i| y[i] + dt * k3[i]));
        for i in 0..3 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let r = if k + 1 == steps { path.point(path.len() - 1).to_vec() } else { at(t + dt) };
        let aa = cm.to_action_angle(y[0], y[1], &r);
        lifted += wrap_phase(aa.angle - angle);
        angle = aa.angle;
    }
    let last = path.point(path.len() - 1);
    let fin = cm.to_action_angle(y[0], y[1], last);
    Ok(Trajectory {
        theta0,
        shift: lifted - theta0 - y[2],
        dynamical: y[2],
        action_drift: ((fin.action - action) / action).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    #[serde(rename = "T")]
    pub t_total: f64,
    pub mean_shift: f64,
    pub max_action_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub result: HannayResult,
    pub ladder: Vec<LadderRung>,
    pub members: Vec<Trajectory>,
}

/// Ensemble-averaged angle shift on a closed loop at fixed action, for each
/// T of `ladder`. With two or more rungs the reported angle is the Richardson
/// estimate from the two largest T assuming a 1/T correction; with one it is
/// the raw mean.
pub fn classical_angle_shift(
    cm: ClassicalModel,
    path: &ParameterPath,
    action: f64,
    ladder: &[f64],
    members: usize,
) -> Result<EnsembleReport> {
    if !path.closed() {
        return Err(Error::Unsupported("the classical angle shift needs a closed path".into()));
    }
    if !(action > 0.0 && action.is_finite()) {
        return Err(Error::InvalidInput(format!("action must be positive, got {action}")));
    }
    if members == 0 || ladder.is_empty() {
        return Err(Error::InvalidInput("need at least one member and one T".into()));
    }
    for r in path.points() {
        cm.check(r)?;
    }
    let mut ts = ladder.to_vec();
    if ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidInput("T ladder entries must be positive".into()));
    }
    ts.sort_by(f64::total_cmp);
    let mut rungs = Vec::with_capacity(ts.len());
    let mut last_members = Vec::new();
    for &t in &ts {
        let runs: Vec<Trajectory> = (0..members)
            .into_par_iter()
            .map(|j| classical_trajectory(cm, path, action, 2.0 * PI * (j as f64 + 0.5) / members as f64, t))
            .collect::<Result<_>>()?;
        let mean_shift = runs.iter().map(|r| r.shift).sum::<f64>() / members as f64;
        let max_action_drift = runs.iter().map(|r| r.action_drift).fold(0.0, f64::max);
        rungs.push(LadderRung { t_total: t, mean_shift, max_action_drift });
        last_members = runs;
    }
    let top = rungs.last().unwrap();
    if top.max_action_drift > ACTION_DRIFT_TOL {
        return Err(Error::ActionDrift { drift: top.max_action_drift, tol: ACTION_DRIFT_TOL });
    }
    let mut result = HannayResult::new(top.mean_shift, action.round() as usize, HannayMethod::ClassicalEnsemble)
        .diag("action", action)
        .diag("max_action_drift", top.max_action_drift)
        .diag("raw_mean", top.mean_shift);
    if rungs.len() >= 2 {
        let a = &rungs[rungs.len() - 2];
        result.theta = (top.t_total * top.mean_shift - a.t_total * a.mean_shift) / (top.t_total - a.t_total);
        result = result.diag("ladder_spread", (top.mean_shift - a.mean_shift).abs());
    }
    result.dynamical_shift = Some(last_members.iter().map(|r| r.dynamical).sum::<f64>() / members as f64);
    Ok(EnsembleReport { result, ladder: rungs, members: last_members })
}

pub fn write_ensemble_csv<W: Write>(report: &EnsembleReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["theta0_rad", "shift_rad", "dynamical_rad", "action_drift"])?;
    for m in &report.members {
        out.write_record([m.theta0, m.shift, m.dynamical, m.action_drift].map(|x| format!("{x:.12e}")))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevivalReport {
    pub result: HannayResult,
    /// Drive time rounded to whole periods of the final frequency.
    #[serde(rename = "T")]
    pub t_total: f64,
    pub periods: usize,
    pub final_angle: f64,
    pub reference_angle: f64,
    pub dispersion: f64,
    pub steps: usize,
}

struct PacketMoments {
    angle: f64,
    action: f64,
    spread: f64,
}

fn packet_moments(model: &Model, chart: &Chart, psi: &StateVector) -> PacketMoments {
    let q = model.position_operator().unwrap();
    let p = model.momentum_operator().unwrap();
    let n2 = psi.norm_squared();
    let ev = |m: &ComplexMatrix| inner(psi, &(m * psi)).re / n2;
    let (mq, mp) = (ev(q), ev(p));
    let qq = ev(&(q * q));
    let pp = ev(&(p * p));
    let qp = ev(&((q * p + p * q) * C64::new(0.5, 0.0)));
    let (vq, vp, cqp) = (qq - mq * mq, pp - mp * mp, qp - mq * mp);
    let l = &chart.l;
    let var = |a: f64, b: f64| a * a * vq + b * b * vp + 2.0 * a * b * cqp;
    let total_var = var(l[0][0], l[0][1]) + var(l[1][0], l[1][1]);
    let aa = chart.action_angle(mq, mp);
    PacketMoments { angle: aa.angle, action: aa.action, spread: (0.5 * total_var).sqrt() / (2.0 * aa.action).sqrt() }
}

/// Drives a coherent packet along `path` for a whole number of final periods
/// near `t_request` and reads its angle in the final chart aligned to the
/// initial one. The shift beyond int w dt is the geometric displacement.
pub fn revival_shift(model: &Model, path: &ParameterPath, alpha: C64, t_request: f64) -> Result<RevivalReport> {
    let cm = model.classical()?;
    model.check_path(path)?;
    if !(t_request > 0.0 && t_request.is_finite()) {
        return Err(Error::InvalidInput(format!("T must be positive, got {t_request}")));
    }
    let (mean, theta0) = packet_numbers(alpha);
    let hbar = model.hbar();
    let r0 = path.point(0);
    let rf = path.point(path.len() - 1);
    let w_f = cm.frequency(rf);
    let periods = ((t_request * w_f / (2.0 * PI)).round() as usize).max(1);
    let t_total = 2.0 * PI * periods as f64 / w_f;

    let top = model.max_valid_level();
    let eig = hermitian_eigen(model.hamiltonian_at(r0)?.matrix());
    let chart0 = cm.chart(r0);
    let a0 = chart_lowering(model, &chart0)?;
    let states: Vec<&StateVector> = eig.vectors.iter().take(top + 1).collect();
    let phi = ladder_phases(&states, &a0);
    let mut psi0 = StateVector::zeros(model.dim());
    let mut reference = StateVector::zeros(model.dim());
    let mut mass = 0.0;
    for (n, st) in states.iter().enumerate() {
        let c = poisson_amplitude(mean, n) * C64::from_polar(1.0, phi[n] - n as f64 * theta0);
        mass += c.norm_sqr();
        psi0 += *st * c;
        reference += *st * (c * C64::from_polar(1.0, -eig.values[n] * t_total / hbar));
    }
    if 1.0 - mass > 1e-10 {
        return Err(Error::Truncation { level: (mean + 8.0 * mean.sqrt()).ceil() as usize, max_valid: top });
    }
    psi0 /= C64::new(mass.sqrt(), 0.0);
    reference /= C64::new(mass.sqrt(), 0.0);

    let steps = crate::adiabatic::auto_steps(model, path, t_total, &psi0);
    let run = crate::adiabatic::propagate_state(model, path, t_total, steps, &psi0, 0, None)?;
    let chart_f = cm.chart(rf).aligned_to(&chart0);
    let fin = packet_moments(model, &chart_f, &run.psi_final);
    let refm = packet_moments(model, &chart0, &reference);
    if fin.spread > DISPERSION_TOL {
        return Err(Error::Dispersion { dispersion: fin.spread, tol: DISPERSION_TOL });
    }
    // int w dt on a fine grid of the path
    let fine = 4096;
    let w: Vec<f64> = (0..=fine).map(|k| cm.frequency(&path.point_at(k as f64 / fine as f64))).collect();
    let grid: Vec<f64> = (0..=fine).map(|k| k as f64 / fine as f64).collect();
    let dynamical = t_total * crate::berry::trapezoid(&grid, &w);
    let shift = wrap_phase(fin.angle - theta0 - dynamical);
    let mut result = HannayResult::new(shift, mean.round() as usize, HannayMethod::Revival)
        .diag("final_action", fin.action)
        .diag("reference_offset", wrap_phase(refm.angle - theta0 - cm.frequency(r0) * t_total))
        .diag("norm_drift", run.norm_drift);
    result.dynamical_shift = Some(dynamical);
    Ok(RevivalReport {
        result,
        t_total,
        periods,
        final_angle: fin.angle,
        reference_angle: refm.angle,
        dispersion: fin.spread,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, sample_path, Easing, ModelSpec, PathSpec};

    fn squeeze(r: f64, phi_f: f64, k: usize) -> ParameterPath {
        sample_path(&PathSpec::squeeze_loop(1.0, r, 0.0, phi_f).with_easing(Easing::Smooth), k).unwrap()
    }

    #[test]
    fn dgamma_dn_matches_squeeze_solid_angle() {
        let model = build_model(ModelSpec::generalized_oscillator(60)).unwrap();
        let r: f64 = 0.2;
        let expect = PI * (r.cosh() - 1.0);
        let err = |k| (hannay_from_phase(&model, &squeeze(r, 2.0 * PI, k), 10).unwrap().theta - expect).abs();
        let (coarse, fine) = (err(400), err(1200));
        assert!(fine < 3e-5 * expect.abs(), "{fine}");
        assert!(coarse / fine > 7.0);
        let h = hannay_from_phase(&model, &squeeze(r, 2.0 * PI, 400), 10).unwrap();
        assert!(h.diagnostics["second_difference"].abs() < 1e-9);
    }

    #[test]
    fn displaced_loop_has_no_angle() {
        let model = build_model(ModelSpec::displaced_oscillator(60, 1.0)).unwrap();
        let path = sample_path(&PathSpec::ellipse(vec![0.0, 0.0], vec![0.8, 0.0], vec![0.0, 0.8], 0.0, 2.0 * PI), 400)
            .unwrap();
        let h = hannay_from_phase(&model, &path, 8).unwrap();
        assert!(h.theta.abs() < 1e-8, "{}", h.theta);
        let e = classical_angle_shift(model.classical().unwrap(), &path, 2.0, &[200.0], 8).unwrap();
        assert!(e.result.theta.abs() < 1e-3, "{}", e.result.theta);
    }

    #[test]
    fn operational_angle_on_closed_loop_is_the_phase() {
        let model = build_model(ModelSpec::generalized_oscillator(40)).unwrap();
        let path = squeeze(0.1, 2.0 * PI, 300);
        let track = track_frames(&model, &path, &[3], GaugeMode::ParallelTransport).unwrap();
        let op = operational_angle(&track, 3).unwrap();
        let g = open_path_phase(&track, 3).unwrap();
        assert!((op.theta - g.gamma).abs() < 1e-10);
    }

    #[test]
    fn classical_shift_is_action_independent() {
        let cm = ClassicalModel::GeneralizedOscillator;
        let r = 0.1;
        let path = squeeze(r, 2.0 * PI, 64);
        let expect = PI * (r.cosh() - 1.0);
        let vals: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&i| classical_angle_shift(cm, &path, i, &[200.0, 400.0], 16).unwrap().result.theta)
            .collect();
        for v in &vals {
            assert!((v - vals[1]).abs() < 0.01 * vals[1].abs());
            assert!((v - expect).abs() < 0.02 * expect.abs(), "{v} vs {expect}");
        }
    }

    #[test]
    fn open_path_rejected_classically() {
        let path = squeeze(0.1, PI, 64);
        assert!(matches!(
            classical_angle_shift(ClassicalModel::GeneralizedOscillator, &path, 1.0, &[100.0], 4),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn fast_drive_drifts_action() {
        let cm = ClassicalModel::GeneralizedOscillator;
        let path = squeeze(0.8, 2.0 * PI, 64).reversed();
        let err = classical_angle_shift(cm, &path, 1.0, &[1.0], 8).unwrap_err();
        assert!(matches!(err, Error::ActionDrift { .. }), "{err:?}");
    }

    #[test]
    fn coherent_matches_dgamma_dn() {
        let model = build_model(ModelSpec::generalized_oscillator(70)).unwrap();
        let path = squeeze(0.02, 2.0 * PI, 200);
        let c = coherent_angle_shift(&model, &path, C64::new(5.0, 0.0), 100.0).unwrap();
        let d = hannay_from_phase(&model, &path, 25).unwrap();
        assert!((c.result.theta - d.theta).abs() < 0.02 * d.theta.abs());
        assert!((c.result.dynamical_shift.unwrap() - 100.0).abs() < 1e-8);
        assert!(c.result.diagnostics["rpa_residual"].abs() < 1e-3, "{:?}", c.result.diagnostics);
    }

    #[test]
    fn revival_matches_coherent_on_open_arc() {
        let model = build_model(ModelSpec::generalized_oscillator(60)).unwrap();
        let path = squeeze(0.05, PI, 400);
        let alpha = C64::new(4.0, 0.0);
        let c = coherent_angle_shift(&model, &path, alpha, 100.0).unwrap();
        let rv = revival_shift(&model, &path, alpha, 200.0).unwrap();
        assert!((rv.result.theta - c.result.theta).abs() < 0.02 * c.result.theta.abs());
        assert!((rv.dispersion - 0.125).abs() < 1e-3);
        assert!(rv.result.diagnostics["reference_offset"].abs() < 1e-10);
    }
}
