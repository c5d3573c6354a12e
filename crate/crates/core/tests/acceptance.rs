//! One line per acceptance criterion. Exits non-zero if any criterion fails.

use holonomy::adiabatic::{auto_steps, extract_geometric, propagate};
use holonomy::berry::{
    apply_gauge, gauge_potentials, open_path_phase, open_path_phase_direct, open_path_phase_projector, open_path_phase_sos,
    pancharatnam_product, random_smooth_gauge, random_smooth_field,
};
use holonomy::hannay::{classical_angle_shift, coherent_angle_shift, hannay_from_phase, revival_shift};
use holonomy::linalg::{inner, wrap_phase, StateVector, C64};
use holonomy::models::{build_model, sample_path, Model, ModelSpec, ParameterPath, PathSpec};
use holonomy::semiclassical::semiclassical_phase;
use holonomy::spectral::{track_frames, FrameTrack, GaugeMode};
use holonomy::wigner::{classical_angle_holonomy, moyal_vs_commutator, ClassicalOptions, DerivativeScheme, PhaseSpaceGrid};
use holonomy::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn dist(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

fn rel(a: f64, b: f64) -> f64 {
    dist(a, b) / b.abs()
}

fn track(model: &Model, path: &ParameterPath, levels: &[usize]) -> Result<FrameTrack> {
    track_frames(model, path, levels, GaugeMode::ParallelTransport)
}

fn squeeze(r: f64, phi_f: f64) -> PathSpec {
    PathSpec::squeeze_loop(1.0, r, 0.0, phi_f)
}

fn p_loop(t: &FrameTrack, n: usize) -> Result<f64> {
    let slot = t.slot(n)?;
    let li = open_path_phase(t, n)?;
    Ok(wrap_phase(-li.endpoint_term + inner(t.state(0, slot), t.state(t.len() - 1, slot)).arg()))
}

struct Case {
    spec: ModelSpec,
    open: PathSpec,
    closed: PathSpec,
    levels: [usize; 2],
}

fn matrix() -> Vec<Case> {
    let disc = |phi_f| PathSpec::ellipse(vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5], 0.0, phi_f);
    vec![
        Case {
            spec: ModelSpec::spin(0.5),
            open: PathSpec::sphere_circle(1.0, PI / 3.0, PI),
            closed: PathSpec::sphere_circle(1.0, PI / 3.0, 2.0 * PI),
            levels: [0, 1],
        },
        Case { spec: ModelSpec::generalized_oscillator(60), open: squeeze(0.2, PI), closed: squeeze(0.2, 2.0 * PI), levels: [1, 2] },
        Case { spec: ModelSpec::displaced_oscillator(40, 1.0), open: disc(PI), closed: disc(2.0 * PI), levels: [0, 1] },
    ]
}

fn closed_loop_reduction() -> Result<Outcome> {
    let model = build_model(ModelSpec::spin(0.5))?;
    let mut worst: f64 = 0.0;
    for th in [PI / 6.0, PI / 3.0, PI / 2.0] {
        let path = sample_path(&PathSpec::sphere_circle(1.0, th, 2.0 * PI), 4000)?;
        let t = track(&model, &path, &[1])?;
        let g = open_path_phase(&t, 1)?.gamma;
        let states: Vec<StateVector> = (0..t.len() - 1).map(|k| t.state(k, 0).clone()).collect();
        worst = worst.max(dist(g, pancharatnam_product(&states))).max(dist(g, -PI * (1.0 - th.cos())));
    }
    Ok(Outcome { pass: worst <= 1e-4, detail: format!("max deviation {worst:.2e} (tol 1e-4)") })
}

fn p_loop_identity() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for c in matrix() {
        let model = build_model(c.spec.clone())?;
        let path = sample_path(&c.closed, 400)?;
        let t = track(&model, &path, &c.levels)?;
        for n in c.levels {
            worst = worst.max(dist(p_loop(&t, n)?, 0.0));
        }
    }
    Ok(Outcome { pass: worst <= 1e-4, detail: format!("max |loop P mod 2pi| {worst:.2e} over 6 loops (tol 1e-4)") })
}

fn gradient(f: &dyn Fn(&[f64]) -> f64, r: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    (0..r.len())
        .map(|i| {
            let (mut a, mut b) = (r.to_vec(), r.to_vec());
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn gauge_invariance() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut dg, mut dpot): (f64, f64) = (0.0, 0.0);
    for c in matrix() {
        let model = build_model(c.spec.clone())?;
        for spec in [&c.open, &c.closed] {
            let path = sample_path(spec, 200)?;
            let n = c.levels[1];
            let t = track(&model, &path, &[n])?;
            let base = open_path_phase(&t, n)?.gamma;
            let probes = [path.len() / 3, 2 * path.len() / 3];
            let before: Vec<_> = probes.iter().map(|&k| gauge_potentials(&t, n, k)).collect::<Result<_>>()?;
            for _ in 0..20 {
                let m = path.dim();
                let alpha = random_smooth_gauge(&mut rng, m);
                let g = apply_gauge(&t, Some(alpha.clone()), Some(random_smooth_field(&mut rng, m)));
                dg = dg.max(dist(open_path_phase(&g, n)?.gamma, base));
                let scalar = apply_gauge(&t, Some(alpha.clone()), None);
                for (&k, b) in probes.iter().zip(&before) {
                    let a = gauge_potentials(&scalar, n, k)?;
                    let grad = gradient(&*alpha, path.point(k));
                    for i in 0..m {
                        dpot = dpot.max((a.a[i] - b.a[i] + grad[i]).abs()).max((a.p[i] - b.p[i] + grad[i]).abs());
                    }
                }
            }
        }
    }
    Ok(Outcome {
        pass: dg <= 1e-8 && dpot <= 1e-8,
        detail: format!("max |dgamma| {dg:.2e}, max |dA + grad alpha|, |dP + grad alpha| {dpot:.2e} (tol 1e-8)"),
    })
}

fn route_equivalence() -> Result<Outcome> {
    let (mut d, mut s, mut p): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for c in matrix() {
        let model = build_model(c.spec.clone())?;
        for spec in [&c.open, &c.closed] {
            let path = sample_path(spec, 1600)?;
            let t = track(&model, &path, &c.levels)?;
            for n in c.levels {
                let li = open_path_phase(&t, n)?.gamma;
                d = d.max(dist(li, open_path_phase_direct(&t, n)?.gamma));
                s = s.max(dist(li, open_path_phase_sos(&t, n)?.gamma));
                p = p.max(dist(li, open_path_phase_projector(&t, n)?.gamma));
            }
        }
    }
    Ok(Outcome {
        pass: d <= 1e-8 && s <= 1e-5 && p <= 1e-5,
        detail: format!("12 cases: direct {d:.2e} (1e-8), sum over states {s:.2e} (1e-5), projector {p:.2e} (1e-5)"),
    })
}

fn dynamical_validation() -> Result<Outcome> {
    let model = build_model(ModelSpec::spin(0.5))?;
    let path = sample_path(&PathSpec::sphere_circle(1.0, PI / 3.0, PI), 400)?;
    let t = track(&model, &path, &[0, 1])?;
    let gamma = open_path_phase(&t, 1)?.gamma;
    let gap = t.energy(0, 1) - t.energy(0, 0);
    let mut errors = Vec::new();
    for tt in [50.0, 100.0, 200.0, 400.0, 800.0] {
        let total = tt / gap;
        let psi0 = t.state(0, 1).clone();
        let evo = propagate(&model, &path, total, auto_steps(&model, &path, total, &psi0), &psi0, 1)?;
        errors.push(dist(extract_geometric(&evo, &t, 1)?, gamma));
    }
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    let last = *errors.last().unwrap();
    Ok(Outcome {
        pass: monotone && last <= 1e-2,
        detail: format!("gap {gap:.3}, errors {} rad, monotone {monotone}", fmt_list(&errors)),
    })
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ")
}

fn hannay_cross_method() -> Result<Outcome> {
    let model = build_model(ModelSpec::generalized_oscillator(80))?;
    let n = 25;
    let alpha = C64::new(5.0, 0.0);
    let closed = sample_path(&squeeze(0.2, 2.0 * PI), 400)?;
    let dg = hannay_from_phase(&model, &closed, n)?.theta;
    let co = coherent_angle_shift(&model, &closed, alpha, 100.0)?.result.theta;
    let cl = classical_angle_shift(model.classical()?, &closed, n as f64 + 0.5, &[800.0, 1600.0], 16)?.result.theta;
    let pair = [rel(co, dg), rel(cl, dg), rel(cl, co)];
    let open = sample_path(&squeeze(0.05, PI), 400)?;
    let dgo = hannay_from_phase(&model, &open, n)?.theta;
    let coo = coherent_angle_shift(&model, &open, alpha, 100.0)?.result.theta;
    let ro = rel(coo, dgo);
    let worst = pair.iter().cloned().fold(ro, f64::max);
    Ok(Outcome {
        pass: worst <= 0.02,
        detail: format!(
            "closed dgamma {dg:.6} coherent {co:.6} classical {cl:.6}; open dgamma {dgo:.6} coherent {coo:.6}; worst rel {worst:.2e} (tol 0.02)"
        ),
    })
}

fn semiclassical_accuracy() -> Result<Outcome> {
    let model = build_model(ModelSpec::generalized_oscillator(90))?;
    let cm = model.classical()?;
    let n = 20;
    let action = n as f64 + 0.5;
    let mut parts = Vec::new();
    let mut pass = true;
    for (label, spec, k) in [
        ("closed r=0.2", squeeze(0.2, 2.0 * PI), 200),
        ("half arc r=0.1", squeeze(0.1, PI), 200),
        ("quarter arc r=0.1", squeeze(0.1, PI / 2.0), 200),
    ] {
        let path = sample_path(&spec, k)?;
        let q = open_path_phase(&track(&model, &path, &[n])?, n)?.gamma;
        let sc = semiclassical_phase(cm, 1.0, action, &path)?;
        let e = rel(sc.gamma, q);
        pass &= e <= 0.05;
        if path.closed() {
            let pl = dist(sc.p_line_integral, 0.0);
            pass &= pl <= 0.05;
            parts.push(format!("{label}: rel {e:.2e}, loop P {pl:.2e}"));
        } else {
            parts.push(format!("{label}: rel {e:.2e} (sc {:.5} vs {q:.5})", sc.gamma));
        }
    }
    Ok(Outcome { pass, detail: parts.join("; ") })
}

fn classical_limit() -> Result<Outcome> {
    let model = build_model(ModelSpec::generalized_oscillator(90))?;
    let cm = model.classical()?;
    let path = sample_path(&squeeze(0.2, PI), 40)?;
    let pts: Vec<&[f64]> = path.points().iter().map(|v| v.as_slice()).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    let grids: Vec<PhaseSpaceGrid> =
        [5usize, 10, 20].iter().map(|&n| PhaseSpaceGrid::covering(cm, n as f64 + 0.5, &pts, 1.0)).collect::<Result<_>>()?;
    for seg in [2, 5, 10, 20] {
        let devs: Vec<f64> = [5usize, 10, 20]
            .iter()
            .zip(&grids)
            .map(|(&n, g)| moyal_vs_commutator(&model, &path, n, seg, g, DerivativeScheme::Spectral).map(|m| m.deviation))
            .collect::<Result<_>>()?;
        let ok = devs.windows(2).all(|w| w[1] < w[0]);
        pass &= ok;
        parts.push(format!("k={seg}: {}", fmt_list(&devs)));
    }
    let n = 20;
    let hol = classical_angle_holonomy(&model, n as f64 + 0.5, &path, &grids[2], &ClassicalOptions::default())?;
    let q = open_path_phase(&track(&model, &path, &[n])?, n)?.gamma;
    let e = rel(hol.theta, q);
    pass &= e <= 0.1;
    parts.push(format!("holonomy {:.4} vs {q:.4}, rel {e:.2e}", hol.theta));
    Ok(Outcome { pass, detail: parts.join("; ") })
}

fn revival() -> Result<Outcome> {
    let model = build_model(ModelSpec::generalized_oscillator(80))?;
    let alpha = C64::new(5.0, 0.0);
    let path = sample_path(&squeeze(0.05, PI), 400)?;
    let co = coherent_angle_shift(&model, &path, alpha, 100.0)?.result.theta;
    let rv = revival_shift(&model, &path, alpha, 400.0)?;
    let e = rel(rv.result.theta, co);
    Ok(Outcome {
        pass: e <= 0.02,
        detail: format!("revival {:.6e} vs geometric {co:.6e} at T={:.1}, rel {e:.2e} (tol 0.02)", rv.result.theta, rv.t_total),
    })
}

fn determinism() -> Result<Outcome> {
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    let reports: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_holonomy"))
                .args(["verify", "--seed", "11", "--format", "csv", "--out"])
                .arg(d.path())
                .stdout(std::process::Stdio::null())
                .status()?;
            assert!(status.code().is_some());
            std::fs::read(d.path().join("report.json"))
        })
        .collect::<std::io::Result<_>>()?;
    Ok(Outcome { pass: reports[0] == reports[1], detail: format!("two verify runs, {} bytes each", reports[0].len()) })
}

type Criterion = (&'static str, fn() -> Result<Outcome>, Duration);

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 10] = [
        ("closed-loop reduction", closed_loop_reduction, Duration::from_secs(10)),
        ("loop integral of P", p_loop_identity, Duration::from_secs(10)),
        ("gauge invariance", gauge_invariance, Duration::from_secs(30)),
        ("route equivalence", route_equivalence, min(2)),
        ("dynamical validation", dynamical_validation, min(2)),
        ("Hannay cross-method", hannay_cross_method, min(5)),
        ("semiclassical accuracy", semiclassical_accuracy, min(2)),
        ("classical limit", classical_limit, min(5)),
        ("revival", revival, min(5)),
        ("determinism", determinism, min(5)),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = f();
        let dt = start.elapsed();
        let (pass, detail) = match res {
            Ok(o) => (o.pass && dt <= *budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<24} {}  [{:.1}s of {}s] {detail}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
