use super::{ExperimentConfig, Output, Row, RunReport, SweepParameter};
use crate::adiabatic::{auto_steps, extract_geometric, propagate, propagate_state, write_series_csv};
use crate::berry::{
    open_path_phase, open_path_phase_direct, PhaseResult, open_path_phase_projector, open_path_phase_sos, pancharatnam_product,
    potential_table, write_potentials_csv,
};
use crate::error::{Error, Result};
use crate::hannay::{
    classical_angle_shift, coherent_angle_shift, hannay_from_phase, operational_angle, revival_shift, write_ensemble_csv,
    write_levels_csv,
};
use crate::linalg::{inner, wrap_phase, StateVector, C64};
use crate::models::{build_model, sample_path, Model, ModelKind, ParameterPath, PathShape, PathSpec};
use crate::semiclassical::semiclassical_hannay;
use crate::spectral::{track_frames, FrameTrack, GaugeMode};
use crate::wigner::{classical_angle_holonomy, eigen_wigner, moyal_vs_commutator, ClassicalOptions, DerivativeScheme, PhaseSpaceGrid};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::Write;

pub(crate) fn setup(cfg: &ExperimentConfig) -> Result<(Model, ParameterPath)> {
    let model = build_model(cfg.model.clone())?;
    let path = sample_path(cfg.path_spec()?, cfg.k)?;
    model.check_path(&path)?;
    Ok((model, path))
}

pub(crate) fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-9)
}

/// gamma = -m (phi_f - phi0)(1 - cos theta0) for level n of a spin on a
/// closed circle of latitude, m = n - j.
pub(crate) fn spin_oracle(cfg: &ExperimentConfig, n: usize) -> Option<f64> {
    if cfg.model.kind != ModelKind::SpinJ {
        return None;
    }
    let j = cfg.model.spin.unwrap_or((cfg.model.dimension as f64 - 1.0) / 2.0);
    match cfg.path.as_ref()?.shape {
        PathShape::SphereCircle { theta0, phi_f, phi0, .. } => {
            let turns = (phi_f - phi0) / (2.0 * PI);
            if (turns - turns.round()).abs() > 1e-12 || turns.round() == 0.0 {
                return None;
            }
            Some(wrap_phase(-(n as f64 - j) * (phi_f - phi0) * (1.0 - theta0.cos())))
        }
        _ => None,
    }
}

fn track(model: &Model, path: &ParameterPath, levels: &[usize]) -> Result<FrameTrack> {
    track_frames(model, path, levels, GaugeMode::ParallelTransport)
}

/// Loop integral of P in the single-valued gauge that rephases the track
/// linearly in arc length so that its last state equals its first.
pub(crate) fn single_valued_p_loop(t: &FrameTrack, li: &PhaseResult, slot: usize) -> f64 {
    let close = inner(t.state(0, slot), t.state(t.len() - 1, slot)).arg();
    wrap_phase(-li.endpoint_term + close)
}

fn phase_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

pub fn run_phase(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let (model, path) = setup(cfg)?;
    let mut report = RunReport::new(super::Command::Phase, cfg);
    let t = track(&model, &path, &cfg.levels)?;
    let tol = &cfg.tolerances;
    let k = cfg.k;
    for &n in &cfg.levels {
        let di = open_path_phase_direct(&t, n)?;
        let li = open_path_phase(&t, n)?;
        let so = open_path_phase_sos(&t, n)?;
        let pr = open_path_phase_projector(&t, n)?;
        report.push(Row::new("gamma", "direct", di.gamma).level(n).k(k));
        report.push(
            Row::new("gamma", "line_integral", li.gamma)
                .level(n)
                .k(k)
                .check(di.gamma, "direct", phase_distance(li.gamma, di.gamma), tol.route_direct),
        );
        report.push(
            Row::new("gamma", "sum_over_states", so.gamma)
                .level(n)
                .k(k)
                .check(di.gamma, "direct", phase_distance(so.gamma, di.gamma), tol.route_sos),
        );
        report.push(
            Row::new("gamma", "projector", pr.gamma)
                .level(n)
                .k(k)
                .check(di.gamma, "direct", phase_distance(pr.gamma, di.gamma), tol.route_projector),
        );
        if path.closed() {
            let slot = t.slot(n)?;
            let states: Vec<StateVector> = (0..t.len() - 1).map(|i| t.state(i, slot).clone()).collect();
            let pc = pancharatnam_product(&states);
            report.push(
                Row::new("gamma", "pancharatnam", pc)
                    .level(n)
                    .k(k)
                    .check(li.gamma, "line_integral", phase_distance(pc, li.gamma), tol.closed_loop),
            );
            let p_loop = single_valued_p_loop(&t, &li, slot);
            report.push(
                Row::new("p_loop_integral", "line_integral", p_loop)
                    .level(n)
                    .k(k)
                    .check(0.0, "zero_mod_2pi", phase_distance(p_loop, 0.0), tol.identity),
            );
        }
        if let Some(g) = spin_oracle(cfg, n) {
            report.push(
                Row::new("gamma", "solid_angle", g)
                    .level(n)
                    .check(li.gamma, "line_integral", phase_distance(g, li.gamma), tol.closed_loop),
            );
        }
        let stride = (k / 200).max(1);
        let rows = potential_table(&t, n, stride)?;
        out.csv(&format!("potentials_n{n}.csv"), |w| write_potentials_csv(&rows, w))?;
    }
    out.csv("frames.csv", |w| t.write_csv(w))?;
    Ok(report)
}

fn alpha_for(cfg: &ExperimentConfig, n: usize) -> C64 {
    C64::new(cfg.hannay.alpha.unwrap_or((n as f64).sqrt()), 0.0)
}

fn action_for(cfg: &ExperimentConfig, n: usize) -> f64 {
    cfg.hannay.action.unwrap_or((n as f64 + 0.5) * cfg.model.hbar)
}

pub fn run_hannay(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let (model, path) = setup(cfg)?;
    let mut report = RunReport::new(super::Command::Hannay, cfg);
    let n = cfg.levels[0];
    let h = &cfg.hannay;
    let tol = &cfg.tolerances;
    let k = cfg.k;
    let dg = hannay_from_phase(&model, &path, n)?;
    report.push(Row::new("theta_H", "dgamma_dn", dg.theta).level(n).k(k));
    let t = track(&model, &path, &[n])?;
    let op = operational_angle(&t, n)?;
    report.push(Row::new("theta_H", "operational", op.theta).level(n).k(k).note("single-level phase, not an angle"));
    if cfg.model.kind == ModelKind::SpinJ {
        report.notes.push("spin model: only the level-derivative route applies".into());
        return Ok(report);
    }
    let alpha = alpha_for(cfg, n);
    let co = coherent_angle_shift(&model, &path, alpha, h.coherent_t)?;
    report.push(
        Row::new("theta_H", "coherent_state", co.result.theta)
            .level(co.result.n_center)
            .k(k)
            .t(h.coherent_t)
            .check(dg.theta, "dgamma_dn", rel(co.result.theta, dg.theta), tol.hannay_rel),
    );
    out.csv("coherent_levels.csv", |w| write_levels_csv(&co.levels, w))?;
    let cm = model.classical()?;
    let action = action_for(cfg, n);
    if path.closed() {
        let ens = classical_angle_shift(cm, &path, action, &h.ladder, h.members)?;
        report.push(
            Row::new("theta_H", "classical_ensemble", ens.result.theta)
                .level(n)
                .k(k)
                .t(h.ladder.iter().cloned().fold(0.0, f64::max))
                .check(dg.theta, "dgamma_dn", rel(ens.result.theta, dg.theta), tol.hannay_rel)
                .note(format!("action {action}, Richardson over the T ladder")),
        );
        out.csv("ensemble.csv", |w| write_ensemble_csv(&ens, w))?;
    } else {
        report.notes.push("open path: no classical oracle, two-method comparison only".into());
    }
    if h.semiclassical {
        if cfg.model.kind != ModelKind::GeneralizedOscillator {
            return Err(Error::Unsupported("semiclassical Hannay angle needs the generalized oscillator".into()));
        }
        let sc = semiclassical_hannay(cm, cfg.model.hbar, action, &path)?;
        report.push(
            Row::new("theta_H", "semiclassical", sc.theta)
                .level(n)
                .k(k)
                .check(dg.theta, "dgamma_dn", rel(sc.theta, dg.theta), tol.semiclassical_rel),
        );
    }
    if h.revival {
        let rv = revival_shift(&model, &path, alpha, h.revival_t)?;
        report.push(
            Row::new("theta_H", "revival", rv.result.theta)
                .level(n)
                .k(k)
                .t(rv.t_total)
                .check(co.result.theta, "coherent_state", rel(rv.result.theta, co.result.theta), tol.hannay_rel),
        );
    }
    Ok(report)
}

pub fn run_revival(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let (model, path) = setup(cfg)?;
    let mut report = RunReport::new(super::Command::Revival, cfg);
    let n = cfg.levels[0];
    let h = &cfg.hannay;
    let alpha = alpha_for(cfg, n);
    let co = coherent_angle_shift(&model, &path, alpha, h.coherent_t)?;
    report.push(Row::new("theta_H", "coherent_state", co.result.theta).level(co.result.n_center).k(cfg.k));
    let rv = revival_shift(&model, &path, alpha, h.revival_t)?;
    report.push(
        Row::new("theta_H", "revival", rv.result.theta)
            .level(n)
            .k(cfg.k)
            .t(rv.t_total)
            .check(co.result.theta, "coherent_state", rel(rv.result.theta, co.result.theta), cfg.tolerances.hannay_rel),
    );
    report.push(Row::new("dispersion", "revival", rv.dispersion).t(rv.t_total));
    report.push(Row::new("final_angle", "revival", rv.final_angle).t(rv.t_total));
    out.csv("coherent_levels.csv", |w| write_levels_csv(&co.levels, w))?;
    Ok(report)
}

pub fn run_evolve(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let (model, path) = setup(cfg)?;
    let mut report = RunReport::new(super::Command::Evolve, cfg);
    let n = cfg.levels[0];
    let t = track(&model, &path, &[n])?;
    let gamma = open_path_phase_direct(&t, n)?.gamma;
    report.push(Row::new("gamma", "direct", gamma).level(n).k(cfg.k));
    let psi0 = t.state(0, t.slot(n)?).clone();
    let mut errors = Vec::new();
    let last = cfg.t_ladder.len() - 1;
    for (i, &tt) in cfg.t_ladder.iter().enumerate() {
        let evo = propagate(&model, &path, tt, auto_steps(&model, &path, tt, &psi0), &psi0, n)?;
        let g = extract_geometric(&evo, &t, n)?;
        let err = phase_distance(g, gamma);
        errors.push(err);
        let row = Row::new("gamma", "dynamical", g).level(n).t(tt);
        report.push(if i == last {
            row.check(gamma, "direct", err, cfg.tolerances.evolve)
        } else {
            row.note(format!("error {err:.3e}"))
        });
        report.push(Row::new("leakage", "dynamical", evo.leakage).level(n).t(tt));
    }
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    report.push(Row::new("error_monotone", "dynamical", if monotone { 1.0 } else { 0.0 }).flag(monotone));
    let tt = cfg.t_ladder[last];
    let run = propagate_state(&model, &path, tt, auto_steps(&model, &path, tt, &psi0), &psi0, 200, Some(n))?;
    out.csv("series.csv", |w| write_series_csv(&run.series, w))?;
    Ok(report)
}

pub fn run_wigner(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let (model, path) = setup(cfg)?;
    let cm = model.classical()?;
    let hbar = model.hbar();
    let mut report = RunReport::new(super::Command::Wigner, cfg);
    let w = &cfg.wigner;
    if w.levels.is_empty() {
        return Err(Error::InvalidInput("wigner.levels must not be empty".into()));
    }
    let seg = w.segment.unwrap_or(cfg.k / 4).min(cfg.k);
    let pts: Vec<&[f64]> = path.points().iter().map(|v| v.as_slice()).collect();
    let grid_for = |n: usize| PhaseSpaceGrid::covering(cm, (n as f64 + 0.5) * hbar, &pts, hbar);
    let mut devs = Vec::new();
    for &n in &w.levels {
        let grid = grid_for(n)?;
        let m = moyal_vs_commutator(&model, &path, n, seg, &grid, DerivativeScheme::Spectral)?;
        for (i, (q, c)) in m.quantum.iter().zip(&m.classical).enumerate() {
            report.push(Row::new(&format!("commutator_{}", i + 1), "matrix", *q).level(n).k(seg));
            report.push(Row::new(&format!("commutator_{}", i + 1), "poisson_bracket", *c).level(n).k(seg));
        }
        report.push(Row::new("moyal_deviation", "first_order_moyal", m.deviation).level(n).k(seg).note(format!("grid {}", grid.n)));
        devs.push(m.deviation);
    }
    let decreasing = devs.windows(2).all(|d| d[1] < d[0]);
    report.push(Row::new("moyal_ladder", "first_order_moyal", if decreasing { 1.0 } else { 0.0 }).flag(decreasing));
    if w.dump {
        let n = w.levels[0];
        let grid = grid_for(n)?;
        let wf = eigen_wigner(&model, path.point(0), n, &grid)?;
        out.csv(&format!("wigner_n{n}.csv"), |wr| wf.write_csv(wr))?;
    }
    if w.holonomy {
        let n = *w.levels.iter().max().unwrap();
        let grid = grid_for(n)?;
        let hol = classical_angle_holonomy(&model, (n as f64 + 0.5) * hbar, &path, &grid, &ClassicalOptions::default())?;
        let q = open_path_phase(&track(&model, &path, &[n])?, n)?.gamma;
        report.push(
            Row::new("gamma", "classical_holonomy", hol.theta)
                .level(n)
                .k(cfg.k)
                .check(q, "line_integral", phase_distance(hol.theta, q) / q.abs().max(1e-9), cfg.tolerances.classical_rel),
        );
        out.csv("classical_one_form.csv", |wr| write_one_form_csv(&path, &hol.omega, wr))?;
    }
    Ok(report)
}

fn write_one_form_csv(path: &ParameterPath, omega: &[Vec<f64>], w: &mut dyn Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let m = path.dim();
    let mut header = vec!["s".to_string()];
    header.extend((1..=m).map(|i| format!("R{i}")));
    header.extend((1..=m).map(|i| format!("Omega{i}_rad_per_unit")));
    out.write_record(&header)?;
    for (k, om) in omega.iter().enumerate() {
        let mut rec = vec![format!("{:.12e}", path.s()[k])];
        rec.extend(path.point(k).iter().map(|v| format!("{v:.12e}")));
        rec.extend(om.iter().map(|v| format!("{v:.12e}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

struct SweepPoint {
    value: f64,
    gamma: f64,
    reference: Option<f64>,
}

fn with_theta0(spec: &PathSpec, v: f64) -> Result<PathSpec> {
    let mut s = spec.clone();
    match &mut s.shape {
        PathShape::SphereCircle { theta0, .. } => *theta0 = v,
        _ => return Err(Error::InvalidInput("theta0 sweep needs a sphere_circle path".into())),
    }
    Ok(s)
}

pub fn run_sweep(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let sw = cfg.sweep.as_ref().ok_or_else(|| Error::InvalidInput("config field `sweep` is required".into()))?;
    if sw.values.is_empty() {
        return Err(Error::InvalidInput("config field `sweep.values`: empty sweep list".into()));
    }
    let mut report = RunReport::new(super::Command::Sweep, cfg);
    let n = cfg.levels[0];
    let point = |v: f64| -> Result<SweepPoint> {
        let mut c = cfg.clone();
        match sw.parameter {
            SweepParameter::Theta0 => c.path = Some(with_theta0(cfg.path_spec()?, v)?),
            SweepParameter::N => c.levels = vec![v.round() as usize],
            SweepParameter::K => c.k = v.round() as usize,
            SweepParameter::Hbar => c.model.hbar = v,
            SweepParameter::T => {}
        }
        c.validate()?;
        let level = c.levels[0];
        let (model, path) = setup(&c)?;
        let t = track(&model, &path, &[level])?;
        let gamma = open_path_phase_direct(&t, level)?.gamma;
        if sw.parameter == SweepParameter::T {
            let psi0 = t.state(0, t.slot(level)?).clone();
            let evo = propagate(&model, &path, v, auto_steps(&model, &path, v, &psi0), &psi0, level)?;
            return Ok(SweepPoint { value: v, gamma: extract_geometric(&evo, &t, level)?, reference: Some(gamma) });
        }
        Ok(SweepPoint { value: v, gamma, reference: spin_oracle(&c, level) })
    };
    let points: Vec<SweepPoint> = sw.values.par_iter().map(|&v| point(v)).collect::<Result<_>>()?;
    let name = format!("{:?}", sw.parameter).to_lowercase();
    let finest = points.last().map(|p| p.gamma).unwrap_or(0.0);
    let mut errors: Vec<Option<f64>> = points
        .iter()
        .map(|p| match sw.parameter {
            SweepParameter::K => Some(phase_distance(p.gamma, finest)),
            _ => p.reference.map(|r| phase_distance(p.gamma, r)),
        })
        .collect();
    if sw.parameter == SweepParameter::K {
        errors.pop();
        errors.push(None);
    }
    let orders: Vec<Option<f64>> = (0..points.len())
        .map(|i| match (sw.parameter, errors.get(i).copied().flatten(), errors.get(i + 1).copied().flatten()) {
            (SweepParameter::K, Some(a), Some(b)) if b > 0.0 => Some((a / b).ln() / (points[i + 1].value / points[i].value).ln()),
            _ => None,
        })
        .collect();
    for (i, p) in points.iter().enumerate() {
        let method = if sw.parameter == SweepParameter::T { "dynamical" } else { "direct" };
        let mut row = Row::new("gamma", method, p.gamma).note(format!("{name}={}", p.value));
        row = match sw.parameter {
            SweepParameter::K => row.k(p.value.round() as usize),
            SweepParameter::T => row.t(p.value),
            SweepParameter::N => row.level(p.value.round() as usize),
            _ => row.level(n),
        };
        if let (Some(r), Some(e)) = (p.reference, errors[i]) {
            let tol = match sw.parameter {
                SweepParameter::T => cfg.tolerances.evolve,
                _ => cfg.tolerances.closed_loop,
            };
            row = if sw.parameter == SweepParameter::T && i + 1 < points.len() {
                row.note(format!("{name}={} error {e:.3e}", p.value))
            } else {
                let method = if sw.parameter == SweepParameter::T { "direct" } else { "solid_angle" };
                row.check(r, method, e, tol)
            };
        }
        report.push(row);
    }
    out.csv("sweep.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([name.as_str(), "gamma_rad", "reference_rad", "error_rad", "observed_order"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for (i, p) in points.iter().enumerate() {
            wr.write_record(&[format!("{}", p.value), format!("{:.12e}", p.gamma), opt(p.reference), opt(errors[i]), opt(orders[i])])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    Ok(report)
}
