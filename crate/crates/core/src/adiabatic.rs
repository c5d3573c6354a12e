//! Time-dependent propagation under H(R(t/T)).

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, inner, wrap_phase, StateVector, C64};
use crate::models::{Model, ParameterPath};
use crate::spectral::FrameTrack;
use serde::{Deserialize, Serialize};
use std::io::Write;

pub const NORM_TOL: f64 = 1e-6;
pub const LEAKAGE_TOL: f64 = 0.01;
/// Step bound dt <= DT_FACTOR * hbar / ||H - E_ref||.
pub const DT_FACTOR: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionResult {
    #[serde(skip)]
    pub psi0: StateVector,
    #[serde(skip)]
    pub psi_final: StateVector,
    /// arg<psi0|psi_final> in (-pi, pi].
    pub total_phase: f64,
    /// -(1/hbar) int <psi|H|psi> dt, accumulated without wrapping.
    pub dynamical_phase: f64,
    pub leakage: f64,
    #[serde(rename = "T")]
    pub t_total: f64,
    pub dt: f64,
    pub steps: usize,
    pub norm_drift: f64,
    pub level: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimeSample {
    pub t: f64,
    pub energy: f64,
    pub leakage: f64,
    pub dynamical_phase: f64,
    pub total_phase: f64,
}

/// Raw propagation output, before any reference to a level.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub psi0: StateVector,
    pub psi_final: StateVector,
    pub total_phase: f64,
    pub dynamical_phase: f64,
    pub dt: f64,
    pub steps: usize,
    pub norm_drift: f64,
    pub series: Vec<TimeSample>,
}

/// Step count meeting the dt bound along the whole path.
pub fn auto_steps(model: &Model, path: &ParameterPath, t_total: f64, psi0: &StateVector) -> usize {
    let e_ref = reference_energy(model, path, psi0);
    let bound = max_shifted_norm(model, path, e_ref);
    ((t_total * bound / (DT_FACTOR * model.hbar())).ceil() as usize).max(1)
}

fn reference_energy(model: &Model, path: &ParameterPath, psi0: &StateVector) -> f64 {
    inner(psi0, &model.apply_hamiltonian(path.point(0), psi0)).re / psi0.norm_squared()
}

/// Bound on ||H(R) - e_ref|| over the path samples (Gershgorin on the shift).
fn max_shifted_norm(model: &Model, path: &ParameterPath, e_ref: f64) -> f64 {
    path.points().iter().map(|r| model.norm_bound(r) + e_ref.abs()).fold(0.0, f64::max).max(1e-12)
}

/// Fixed-step RK4 on i hbar psi' = H(R(t/T)) psi. The constant reference
/// energy <psi0|H(R0)|psi0> is stripped during stepping and restored
/// analytically in the reported phases; `record` > 0 stores that many time samples
/// (leakage measured against `level` when given).
pub fn propagate_state(
    model: &Model,
    path: &ParameterPath,
    t_total: f64,
    steps: usize,
    psi0: &StateVector,
    record: usize,
    level: Option<usize>,
) -> Result<Propagation> {
    if !(t_total > 0.0 && t_total.is_finite()) {
        return Err(Error::InvalidInput(format!("T must be positive, got {t_total}")));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be positive".into()));
    }
    if psi0.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!("psi0 has {} entries, model has {}", psi0.len(), model.dim())));
    }
    if (psi0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!("psi0 not normalized: |psi0| = {}", psi0.norm())));
    }
    model.check_path(path)?;
    let hbar = model.hbar();
    let e_ref = reference_energy(model, path, psi0);
    let dt = t_total / steps as f64;
    let bound = max_shifted_norm(model, path, e_ref);
    if dt * bound / hbar > 2.5 {
        // far outside the RK4 stability region; the norm check would fail anyway
        return Err(Error::NormDrift { drift: f64::INFINITY, tol: NORM_TOL });
    }
    let rhs = |t: f64, psi: &StateVector| -> (StateVector, f64) {
        let r = path.point_at((t / t_total).clamp(0.0, 1.0));
        let h_psi = model.apply_hamiltonian(&r, psi) - psi * C64::new(e_ref, 0.0);
        let e = inner(psi, &h_psi).re / psi.norm_squared();
        (h_psi * C64::new(0.0, -1.0 / hbar), -e / hbar)
    };
    let mut psi = psi0.clone();
    let mut phi = 0.0;
    let mut series = Vec::new();
    let record_every = if record > 0 { (steps / record).max(1) } else { usize::MAX };
    let sample = |step: usize, psi: &StateVector, phi: f64| -> Result<TimeSample> {
        let t = step as f64 * dt;
        let r = path.point_at((t / t_total).clamp(0.0, 1.0));
        let h_psi = model.apply_hamiltonian(&r, psi);
        let energy = inner(psi, &h_psi).re / psi.norm_squared();
        let leakage = match level {
            Some(n) => {
                let eig = hermitian_eigen(model.hamiltonian_at(&r)?.matrix());
                (1.0 - inner(&eig.vectors[n], psi).norm_sqr() / psi.norm_squared()).clamp(0.0, 1.0)
            }
            None => 0.0,
        };
        Ok(TimeSample {
            t,
            energy,
            leakage,
            dynamical_phase: phi - e_ref * t / hbar,
            total_phase: wrap_phase(inner(psi0, psi).arg() - e_ref * t / hbar),
        })
    };
    if record > 0 {
        series.push(sample(0, &psi, phi)?);
    }
    for step in 0..steps {
        let t = step as f64 * dt;
        let (k1, f1) = rhs(t, &psi);
        let y2 = &psi + &k1 * C64::new(0.5 * dt, 0.0);
        let (k2, f2) = rhs(t + 0.5 * dt, &y2);
        let y3 = &psi + &k2 * C64::new(0.5 * dt, 0.0);
        let (k3, f3) = rhs(t + 0.5 * dt, &y3);
        let y4 = &psi + &k3 * C64::new(dt, 0.0);
        let (k4, f4) = rhs(t + dt, &y4);
        psi += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0);
        phi += dt / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
        if record > 0 && ((step + 1) % record_every == 0 || step + 1 == steps) {
            series.push(sample(step + 1, &psi, phi)?);
        }
    }
    let norm_drift = (psi.norm() - 1.0).abs();
    if !(norm_drift <= NORM_TOL) {
        return Err(Error::NormDrift { drift: norm_drift, tol: NORM_TOL });
    }
    // restore the stripped reference energy: psi_true = e^{-i e_ref T/hbar} psi
    let shift = -e_ref * t_total / hbar;
    let psi_final = &psi * C64::from_polar(1.0, shift);
    let ov = inner(psi0, &psi_final);
    if ov.norm() < 1e-12 {
        return Err(Error::Orthogonal { sample: steps, magnitude: ov.norm(), tol: 1e-12 });
    }
    Ok(Propagation {
        psi0: psi0.clone(),
        psi_final,
        total_phase: ov.arg(),
        dynamical_phase: phi + shift,
        dt,
        steps,
        norm_drift,
        series,
    })
}

/// Propagates `psi0` and measures leakage out of level `level` at the end.
pub fn propagate(
    model: &Model,
    path: &ParameterPath,
    t_total: f64,
    steps: usize,
    psi0: &StateVector,
    level: usize,
) -> Result<EvolutionResult> {
    if level >= model.dim() {
        return Err(Error::InvalidInput(format!("level {level} outside dimension {}", model.dim())));
    }
    let run = propagate_state(model, path, t_total, steps, psi0, 0, None)?;
    let last = path.point(path.len() - 1);
    let eig = hermitian_eigen(model.hamiltonian_at(last)?.matrix());
    let pop = inner(&eig.vectors[level], &run.psi_final).norm_sqr();
    Ok(EvolutionResult {
        psi0: run.psi0,
        psi_final: run.psi_final,
        total_phase: run.total_phase,
        dynamical_phase: run.dynamical_phase,
        leakage: (1.0 - pop).clamp(0.0, 1.0),
        t_total,
        dt: run.dt,
        steps: run.steps,
        norm_drift: run.norm_drift,
        level,
    })
}

/// Geometric part arg<psi0|P_f psi_f> - dynamical phase, P_f the projector
/// on the tracked final eigenstate.
pub fn extract_geometric(evo: &EvolutionResult, track: &FrameTrack, n: usize) -> Result<f64> {
    if !(evo.leakage < LEAKAGE_TOL) {
        return Err(Error::Leakage { leakage: evo.leakage, tol: LEAKAGE_TOL });
    }
    let slot = track.slot(n)?;
    let fin = track.state(track.len() - 1, slot);
    let projected = inner(&evo.psi0, fin) * inner(fin, &evo.psi_final);
    if projected.norm() < crate::berry::ORTH_TOL {
        return Err(Error::Orthogonal { sample: track.len() - 1, magnitude: projected.norm(), tol: crate::berry::ORTH_TOL });
    }
    Ok(wrap_phase(projected.arg() - evo.dynamical_phase))
}

pub fn write_series_csv<W: Write>(series: &[TimeSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "energy", "leakage", "dynamical_phase_rad", "total_phase_rad"])?;
    for s in series {
        out.write_record([s.t, s.energy, s.leakage, s.dynamical_phase, s.total_phase].map(|x| format!("{x:.12e}")))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::berry::open_path_phase_direct;
    use crate::models::{build_model, sample_path, Easing, ModelSpec, PathSpec};
    use crate::spectral::{track_frames, GaugeMode};
    use std::f64::consts::PI;

    #[test]
    fn stationary_state() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let p = sample_path(&PathSpec::constant(vec![0.0, 0.0, 1.0]), 4).unwrap();
        let t = track_frames(&m, &p, &[0], GaugeMode::ParallelTransport).unwrap();
        let psi0 = t.state(0, 0).clone();
        let steps = auto_steps(&m, &p, 10.0, &psi0);
        let evo = propagate(&m, &p, 10.0, steps, &psi0, 0).unwrap();
        assert!(wrap_phase(evo.total_phase - 0.5 * 10.0).abs() < 1e-9);
        assert!(evo.leakage < 1e-14);
        assert!(extract_geometric(&evo, &t, 0).unwrap().abs() < 1e-6);
    }

    #[test]
    fn too_few_steps_is_rejected() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let p = sample_path(&PathSpec::sphere_circle(1.0, 1.0, PI), 100).unwrap();
        let t = track_frames(&m, &p, &[0], GaugeMode::ParallelTransport).unwrap();
        let err = propagate(&m, &p, 50.0, 20, t.state(0, 0), 0).unwrap_err();
        assert!(matches!(err, Error::NormDrift { .. }), "{err}");
    }

    #[test]
    fn adiabatic_trend_and_convergence() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let spec = PathSpec::sphere_circle(1.0, PI / 3.0, PI).with_easing(Easing::Smooth);
        let p = sample_path(&spec, 2000).unwrap();
        let t = track_frames(&m, &p, &[0], GaugeMode::ParallelTransport).unwrap();
        let gamma = open_path_phase_direct(&t, 0).unwrap().gamma;
        let psi0 = t.state(0, 0).clone();
        let mut last_err = f64::INFINITY;
        let mut last_leak = f64::INFINITY;
        let mut last_dyn: Option<f64> = None;
        for tt in [50.0, 100.0, 200.0, 400.0, 800.0] {
            let evo = propagate(&m, &p, tt, auto_steps(&m, &p, tt, &psi0), &psi0, 0).unwrap();
            assert!(evo.norm_drift < 1e-8);
            let err = wrap_phase(extract_geometric(&evo, &t, 0).unwrap() - gamma).abs();
            assert!(err < last_err && evo.leakage <= last_leak);
            if let Some(d) = last_dyn {
                assert!((evo.dynamical_phase / d - 2.0).abs() < 1e-2, "{} {}", evo.dynamical_phase, d);
            }
            last_dyn = Some(evo.dynamical_phase);
            last_err = err;
            last_leak = evo.leakage;
        }
        assert!(last_err < 1e-2);
    }

    #[test]
    fn series_recording() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let p = sample_path(&PathSpec::sphere_circle(1.0, 1.0, 1.0), 100).unwrap();
        let t = track_frames(&m, &p, &[0], GaugeMode::ParallelTransport).unwrap();
        let run = propagate_state(&m, &p, 20.0, 2000, t.state(0, 0), 10, Some(0)).unwrap();
        assert_eq!(run.series.len(), 11);
        let mut buf = Vec::new();
        write_series_csv(&run.series, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,energy,leakage"));
    }
}
