use super::commands::{setup, single_valued_p_loop};
use super::{Command, ExperimentConfig, Output, Row, RunReport};
use crate::berry::{
    apply_gauge, open_path_phase, open_path_phase_direct, open_path_phase_projector, open_path_phase_sos, pancharatnam_product,
    random_smooth_field, random_smooth_gauge,
};
use crate::error::Result;
use crate::linalg::{wrap_phase, StateVector};
use crate::models::{build_model, sample_path, ModelSpec, PathSpec};
use crate::spectral::{track_frames, GaugeMode};
use crate::wigner::{moyal_vs_commutator, DerivativeScheme, PhaseSpaceGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const GAUGE_SAMPLES: usize = 20;
const MOYAL_LEVELS: [usize; 3] = [5, 10, 20];
const MOYAL_SEGMENTS: [usize; 2] = [5, 10];

/// Spin-1/2 upper level on an open half circle at theta0 = pi/3.
pub fn default_verify_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ModelSpec::spin(0.5), Some(PathSpec::sphere_circle(1.0, PI / 3.0, PI)));
    cfg.levels = vec![1];
    cfg
}

fn dist(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

pub fn run_verify(cfg: &ExperimentConfig, out: &mut Output) -> Result<RunReport> {
    let mut report = RunReport::new(Command::Verify, cfg);
    let tol = &cfg.tolerances;
    let n = cfg.levels[0];

    // closed-loop reduction of the spin-1/2 circle
    let spin = build_model(ModelSpec::spin(0.5))?;
    for th in [PI / 6.0, PI / 3.0, PI / 2.0] {
        let path = sample_path(&PathSpec::sphere_circle(1.0, th, 2.0 * PI), 1000)?;
        let t = track_frames(&spin, &path, &[1], GaugeMode::ParallelTransport)?;
        let g = open_path_phase(&t, 1)?;
        let states: Vec<StateVector> = (0..t.len() - 1).map(|k| t.state(k, 0).clone()).collect();
        let pc = pancharatnam_product(&states);
        let exact = -PI * (1.0 - th.cos());
        let label = format!("theta0={th:.6}");
        report.push(Row::new("closed_loop", "line_integral", g.gamma).k(1000).check(pc, "pancharatnam", dist(g.gamma, pc), tol.closed_loop).note(label.clone()));
        report.push(Row::new("closed_loop", "line_integral", g.gamma).k(1000).check(exact, "solid_angle", dist(g.gamma, exact), tol.closed_loop).note(label));
    }

    // the reference potential integrates to 0 mod 2pi on closed loops
    let loops = [
        (ModelSpec::spin(0.5), PathSpec::sphere_circle(1.0, 1.0, 2.0 * PI), 1),
        (ModelSpec::generalized_oscillator(40), PathSpec::squeeze_loop(1.0, 0.2, 0.0, 2.0 * PI), 2),
        (ModelSpec::displaced_oscillator(40, 1.0), PathSpec::ellipse(vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5], 0.0, 2.0 * PI), 1),
    ];
    for (spec, path_spec, level) in loops {
        let kind = format!("{:?}", spec.kind).to_lowercase();
        let model = build_model(spec)?;
        let path = sample_path(&path_spec, 400)?;
        let t = track_frames(&model, &path, &[level], GaugeMode::ParallelTransport)?;
        let p_loop = single_valued_p_loop(&t, &open_path_phase(&t, level)?, 0);
        report.push(Row::new("p_loop_integral", "line_integral", p_loop).level(level).k(400).check(0.0, "zero_mod_2pi", dist(p_loop, 0.0), tol.identity).note(kind));
    }

    // gauge randomization and route equivalence on the configured path
    let (model, path) = setup(cfg)?;
    let t = track_frames(&model, &path, &[n], GaugeMode::ParallelTransport)?;
    let base = open_path_phase(&t, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..GAUGE_SAMPLES {
        let m = path.dim();
        let g = apply_gauge(&t, Some(random_smooth_gauge(&mut rng, m)), Some(random_smooth_field(&mut rng, m)));
        worst = worst.max(dist(open_path_phase(&g, n)?.gamma, base.gamma));
    }
    report.push(
        Row::new("gauge_max_deviation", "line_integral", worst)
            .level(n)
            .k(cfg.k)
            .check(0.0, "unrandomized", worst, tol.gauge)
            .note(format!("{GAUGE_SAMPLES} seeded gauges")),
    );
    let di = open_path_phase_direct(&t, n)?.gamma;
    let so = open_path_phase_sos(&t, n)?.gamma;
    let pr = open_path_phase_projector(&t, n)?.gamma;
    report.push(Row::new("gamma", "direct", di).level(n).k(cfg.k).check(base.gamma, "line_integral", dist(di, base.gamma), tol.route_direct));
    report.push(Row::new("gamma", "sum_over_states", so).level(n).k(cfg.k).check(base.gamma, "line_integral", dist(so, base.gamma), tol.route_sos));
    report.push(Row::new("gamma", "projector", pr).level(n).k(cfg.k).check(base.gamma, "line_integral", dist(pr, base.gamma), tol.route_projector));

    // quadrature ladder K, 2K, 4K
    let spec = cfg.path_spec()?;
    let ladder: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|m| {
            let p = sample_path(spec, cfg.k * m)?;
            open_path_phase(&track_frames(&model, &p, &[n], GaugeMode::ParallelTransport)?, n).map(|r| r.gamma)
        })
        .collect::<Result<_>>()?;
    let (e1, e2) = (dist(ladder[0], ladder[1]), dist(ladder[1], ladder[2]));
    let converged = e1 < 1e-12;
    let order = if converged { f64::INFINITY } else { (e1 / e2.max(1e-300)).log2() };
    let row = Row::new("quadrature_order", "line_integral", if converged { 0.0 } else { order }).level(n).k(cfg.k);
    report.push(if converged {
        row.note("converged below 1e-12 at K").flag(true)
    } else {
        row.flag(order >= tol.quadrature_order).note(format!("minimum order {}", tol.quadrature_order))
    });

    // Moyal-to-Poisson ladder on a squeezing arc
    let osc = build_model(ModelSpec::generalized_oscillator(90))?;
    let arc = sample_path(&PathSpec::squeeze_loop(1.0, 0.2, 0.0, PI), 40)?;
    let cm = osc.classical()?;
    let pts: Vec<&[f64]> = arc.points().iter().map(|v| v.as_slice()).collect();
    for seg in MOYAL_SEGMENTS {
        let mut devs = Vec::new();
        for lv in MOYAL_LEVELS {
            let grid = PhaseSpaceGrid::covering(cm, lv as f64 + 0.5, &pts, 1.0)?;
            let d = moyal_vs_commutator(&osc, &arc, lv, seg, &grid, DerivativeScheme::Spectral)?.deviation;
            report.push(Row::new("moyal_deviation", "first_order_moyal", d).level(lv).k(seg));
            devs.push(d);
        }
        let ok = devs.windows(2).all(|w| w[1] < w[0]);
        report.push(
            Row::new("moyal_ladder", "first_order_moyal", if ok { 1.0 } else { 0.0 })
                .k(seg)
                .flag(ok)
                .note(format!("levels {MOYAL_LEVELS:?} decreasing; last/first {:.3}", devs[2] / devs[0])),
        );
    }
    let _ = out;
    Ok(report)
}
