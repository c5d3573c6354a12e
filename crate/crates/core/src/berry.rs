//! Gauge potentials and the open-path Berry phase.
//!
//! Tangential quantities along a track are built from discrete links:
//! a_{k,k+1} = -arg<psi_k|psi_{k+1}> for the connection A and
//! p_{k,k+1} = -[arg<psi_0|psi_{k+1}> - arg<psi_0|psi_k>] for the reference
//! potential P. Nodal values average neighbouring links, which makes the
//! trapezoid rule telescope onto the link sums for any sample spacing.
//!
//! Full m-vectors need derivatives off the path. Those come from a small
//! stencil of neighbouring eigenstates, each aligned by parallel transport
//! to the track state, so the off-path extension of the gauge is the
//! transverse parallel-transport one plus whatever gauge layers were pushed
//! onto the track.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, inner, wrap_phase, StateVector, C64};
use crate::spectral::{check_gap, FieldGauge, FrameTrack, GaugeLayer, ScalarGauge, RESOLUTION_FLOOR};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::sync::Arc;

pub const ORTH_TOL: f64 = 1e-6;
/// Relative step of the off-path stencil.
pub const STENCIL_REL: f64 = 1e-4;
/// Relative step handed to `grad_hamiltonian`.
pub const GRAD_REL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    LineIntegral,
    Direct,
    SumOverStates,
    Projector,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhaseResult {
    /// Open-path phase in (-pi, pi].
    pub gamma: f64,
    /// Branch-free accumulated value of the line integral.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unwrapped: Option<f64>,
    /// int A.dR alone; gauge dependent.
    pub berry_term: f64,
    /// -int P.dR.
    pub endpoint_term: f64,
    pub route: Route,
    #[serde(rename = "K")]
    pub k: usize,
    pub endpoint_overlap_mag: f64,
    /// |gamma(K) - gamma(K/2)| from the same track at half resolution.
    pub convergence_estimate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GaugePotentialSample {
    pub r: Vec<f64>,
    pub a: Vec<f64>,
    pub p: Vec<f64>,
    pub omega: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn slot_of(track: &FrameTrack, n: usize) -> Result<usize> {
    track.slot(n)
}

fn reference_overlap(track: &FrameTrack, slot: usize, k: usize) -> C64 {
    inner(track.state(0, slot), track.state(k, slot))
}

fn check_reference(track: &FrameTrack, slot: usize, k: usize) -> Result<C64> {
    let ov = reference_overlap(track, slot, k);
    if ov.norm() <= ORTH_TOL {
        return Err(Error::Orthogonal { sample: k, magnitude: ov.norm(), tol: ORTH_TOL });
    }
    Ok(ov)
}

/// Sample indices 0, stride, 2 stride, ..., K (K must be a multiple of stride).
fn strided(len: usize, stride: usize) -> Option<Vec<usize>> {
    let last = len - 1;
    if stride == 0 || last % stride != 0 || last / stride < 1 {
        return None;
    }
    Some((0..=last).step_by(stride).collect())
}

fn connection_links(track: &FrameTrack, slot: usize, idx: &[usize]) -> Vec<f64> {
    idx.windows(2).map(|w| -inner(track.state(w[0], slot), track.state(w[1], slot)).arg()).collect()
}

fn reference_links(track: &FrameTrack, slot: usize, idx: &[usize]) -> Vec<f64> {
    idx.windows(2)
        .map(|w| -wrap_phase(reference_overlap(track, slot, w[1]).arg() - reference_overlap(track, slot, w[0]).arg()))
        .collect()
}

/// Nodal derivative values whose trapezoid sum equals the sum of links.
fn nodal_from_links(s: &[f64], links: &[f64]) -> Vec<f64> {
    let last = s.len() - 1;
    (0..=last)
        .map(|k| {
            if k == 0 {
                links[0] / (s[1] - s[0])
            } else if k == last {
                links[last - 1] / (s[last] - s[last - 1])
            } else {
                (links[k - 1] + links[k]) / (s[k + 1] - s[k - 1])
            }
        })
        .collect()
}

/// Composite trapezoid rule on a non-uniform grid.
pub fn trapezoid(s: &[f64], f: &[f64]) -> f64 {
    s.windows(2).zip(f.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Tangential A.dR/ds and P.dR/ds at every sample.
pub fn tangential_potentials(track: &FrameTrack, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let slot = slot_of(track, n)?;
    let idx: Vec<usize> = (0..track.len()).collect();
    let s = track.path().s();
    let a = nodal_from_links(s, &connection_links(track, slot, &idx));
    let p = nodal_from_links(s, &reference_links(track, slot, &idx));
    Ok((a, p))
}

struct Stencil {
    h: f64,
    plus: Vec<StateVector>,
    minus: Vec<StateVector>,
}

fn stencil(track: &FrameTrack, slot: usize, k: usize) -> Result<Stencil> {
    let model = track.model();
    let r = &track.frames[k].r;
    let h = STENCIL_REL * norm(r).max(1.0);
    let psi = track.state(k, slot);
    let mut out = Stencil { h, plus: Vec::new(), minus: Vec::new() };
    for i in 0..r.len() {
        for sign in [1.0, -1.0] {
            let mut rr = r.clone();
            rr[i] += sign * h;
            let eig = hermitian_eigen(model.hamiltonian_at(&rr)?.matrix());
            let (j, ov) = eig
                .vectors
                .iter()
                .enumerate()
                .map(|(j, v)| (j, inner(psi, v)))
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap();
            if ov.norm() <= RESOLUTION_FLOOR {
                return Err(Error::Resolution { sample: k, overlap: ov.norm(), floor: RESOLUTION_FLOOR });
            }
            check_gap(&eig.values, &[j], track.gap_tol())?;
            let v = &eig.vectors[j] * (ov.conj() / ov.norm());
            if sign > 0.0 {
                out.plus.push(v);
            } else {
                out.minus.push(v);
            }
        }
    }
    Ok(out)
}

/// m-vector connection from the track's base links plus the gradient of
/// the pushed gauge layers.
fn connection_vector(track: &FrameTrack, slot: usize, k: usize, h: f64) -> Vec<f64> {
    let path = track.path();
    let last = track.len() - 1;
    let s = path.s();
    let base_link = |a: usize, b: usize| -inner(track.base_state(a, slot), track.base_state(b, slot)).arg();
    let tangential = if last == 0 {
        0.0
    } else if k == 0 {
        base_link(0, 1) / (s[1] - s[0])
    } else if k == last {
        base_link(last - 1, last) / (s[last] - s[last - 1])
    } else {
        (base_link(k - 1, k) + base_link(k, k + 1)) / (s[k + 1] - s[k - 1])
    };
    let t = path.derivative(k);
    let t2 = dot(&t, &t);
    let r = &track.frames[k].r;
    (0..r.len())
        .map(|i| {
            let along = if t2 > 0.0 { tangential * t[i] / t2 } else { 0.0 };
            let grad = if track.layers().is_empty() {
                0.0
            } else {
                let central = |h: f64| {
                    let mut rp = r.clone();
                    let mut rm = r.clone();
                    rp[i] += h;
                    rm[i] -= h;
                    (track.layer_phase_near(k, &rp) - track.layer_phase_near(k, &rm)) / (2.0 * h)
                };
                (4.0 * central(h / 2.0) - central(h)) / 3.0
            };
            along - grad
        })
        .collect()
}

/// A_n(R_k) = -Im<psi_n|grad psi_n>.
pub fn berry_connection(track: &FrameTrack, n: usize, k: usize) -> Result<Vec<f64>> {
    let slot = slot_of(track, n)?;
    let h = STENCIL_REL * norm(&track.frames[k].r).max(1.0);
    Ok(connection_vector(track, slot, k, h))
}

/// A, P and Omega = A - P at sample k.
pub fn gauge_potentials(track: &FrameTrack, n: usize, k: usize) -> Result<GaugePotentialSample> {
    let slot = slot_of(track, n)?;
    check_reference(track, slot, k)?;
    let st = stencil(track, slot, k)?;
    let a = connection_vector(track, slot, k, st.h);
    let psi0 = track.state(0, slot);
    let p: Vec<f64> = (0..a.len())
        .map(|i| {
            let transported =
                -wrap_phase(inner(psi0, &st.plus[i]).arg() - inner(psi0, &st.minus[i]).arg()) / (2.0 * st.h);
            a[i] + transported
        })
        .collect();
    let omega = a.iter().zip(&p).map(|(x, y)| x - y).collect();
    Ok(GaugePotentialSample { r: track.frames[k].r.clone(), a, p, omega })
}

/// P_n(R_k) = -Im <psi_n(R_0)|grad psi_n(R)> / <psi_n(R_0)|psi_n(R)>.
pub fn p_potential(track: &FrameTrack, n: usize, k: usize) -> Result<Vec<f64>> {
    Ok(gauge_potentials(track, n, k)?.p)
}

/// Full spectrum at sample k, with the tracked level's index located by overlap.
fn spectrum_at(track: &FrameTrack, slot: usize, k: usize) -> Result<(Vec<f64>, Vec<StateVector>, usize)> {
    let r = &track.frames[k].r;
    let eig = hermitian_eigen(track.model().hamiltonian_at(r)?.matrix());
    let psi = track.state(k, slot);
    let j = (0..eig.vectors.len())
        .max_by(|&a, &b| inner(psi, &eig.vectors[a]).norm().total_cmp(&inner(psi, &eig.vectors[b]).norm()))
        .unwrap();
    check_gap(&eig.values, &[j], track.gap_tol())?;
    Ok((eig.values, eig.vectors, j))
}

/// Im sum_{m != n} [<psi_0|psi_m>/<psi_0|psi_n>] <psi_m|G|psi_n>/(E_n - E_m) for
/// each operator application `g_psi = G|psi_n>`.
fn sos_sum(
    psi0: &StateVector,
    psi: &StateVector,
    values: &[f64],
    vectors: &[StateVector],
    j: usize,
    g_psi: &StateVector,
) -> f64 {
    let denom = inner(psi0, psi);
    let mut acc = C64::new(0.0, 0.0);
    for (m, v) in vectors.iter().enumerate() {
        if m == j {
            continue;
        }
        acc += inner(psi0, v) * inner(v, g_psi) / (values[j] - values[m]);
    }
    (acc / denom).im
}

/// P_n through the sum over states with dH/dR from `grad_hamiltonian`.
pub fn p_potential_sos(track: &FrameTrack, n: usize, k: usize) -> Result<Vec<f64>> {
    let slot = slot_of(track, n)?;
    check_reference(track, slot, k)?;
    let (values, vectors, j) = spectrum_at(track, slot, k)?;
    let r = &track.frames[k].r;
    let grads = track.model().grad_hamiltonian(r, GRAD_REL)?;
    let a = berry_connection(track, n, k)?;
    let psi0 = track.state(0, slot);
    let psi = track.state(k, slot);
    Ok(grads
        .iter()
        .zip(&a)
        .map(|(g, ai)| ai - sos_sum(psi0, psi, &values, &vectors, j, &g.apply(psi)))
        .collect())
}

/// Omega_n from the projector commutator, with grad P from the stencil.
pub fn projector_one_form(track: &FrameTrack, n: usize, k: usize) -> Result<Vec<f64>> {
    let slot = slot_of(track, n)?;
    let psi0 = track.state(0, slot);
    let psi = track.state(k, slot);
    let c = inner(psi, psi0);
    if c.norm_sqr() <= ORTH_TOL * ORTH_TOL {
        return Err(Error::Orthogonal { sample: k, magnitude: c.norm(), tol: ORTH_TOL });
    }
    let st = stencil(track, slot, k)?;
    Ok((0..st.plus.len())
        .map(|i| {
            let derivative = [(&st.plus[i], 1.0 / (2.0 * st.h)), (&st.minus[i], -1.0 / (2.0 * st.h))];
            projector_form_value(psi0, psi, &derivative)
        })
        .collect())
}

/// (i/2)<u|[P, dP]|u>/<u|P|u> with P = |psi><psi| and dP = sum_j w_j |v_j><v_j|.
fn projector_form_value(u: &StateVector, psi: &StateVector, dp: &[(&StateVector, f64)]) -> f64 {
    let apply_dp = |x: &StateVector| {
        let mut out = StateVector::zeros(x.len());
        for (v, w) in dp {
            out += *v * (inner(v, x) * *w);
        }
        out
    };
    let c = inner(psi, u);
    let p_u = psi * c;
    let dp_u = apply_dp(u);
    let comm = psi * inner(psi, &dp_u) - apply_dp(&p_u);
    let val = inner(u, &comm);
    debug_assert!(val.re.abs() <= 1e-8 * val.norm().max(1.0));
    -0.5 * val.im / c.norm_sqr()
}

/// Lagrange derivative weights at node k from the (up to) five nearest
/// nodes of a non-uniform grid.
fn derivative_weights(s: &[f64], k: usize) -> Vec<(usize, f64)> {
    let m = s.len().min(5);
    let lo = k.saturating_sub(m / 2).min(s.len() - m);
    let nodes: Vec<usize> = (lo..lo + m).collect();
    let x = s[k];
    nodes
        .iter()
        .map(|&j| {
            let w = if j == k {
                nodes.iter().filter(|&&i| i != k).map(|&i| 1.0 / (x - s[i])).sum()
            } else {
                let num: f64 = nodes.iter().filter(|&&i| i != j && i != k).map(|&i| x - s[i]).product();
                let den: f64 = nodes.iter().filter(|&&i| i != j).map(|&i| s[j] - s[i]).product();
                num / den
            };
            (j, w)
        })
        .collect()
}

fn endpoint_overlap(track: &FrameTrack, slot: usize) -> Result<C64> {
    check_reference(track, slot, track.len() - 1)
}

/// gamma from links at a given stride: (wrapped gamma, sum of a-links, sum of p-links).
fn link_phase(track: &FrameTrack, slot: usize, stride: usize) -> Option<(f64, f64, f64)> {
    let idx = strided(track.len(), stride)?;
    let a: f64 = connection_links(track, slot, &idx).iter().sum();
    let p: f64 = reference_links(track, slot, &idx).iter().sum();
    Some((wrap_phase(a - p), a, p))
}

/// Trapezoid line integral of Omega = A - P over the sampled track.
pub fn open_path_phase(track: &FrameTrack, n: usize) -> Result<PhaseResult> {
    let slot = slot_of(track, n)?;
    let end = endpoint_overlap(track, slot)?;
    let (a, p) = tangential_potentials(track, n)?;
    let s = track.path().s();
    let berry_term = trapezoid(s, &a);
    let endpoint_term = -trapezoid(s, &p);
    let total = berry_term + endpoint_term;
    let convergence_estimate = link_phase(track, slot, 2).map(|(g, _, _)| wrap_phase(total - g).abs());
    Ok(PhaseResult {
        gamma: wrap_phase(total),
        unwrapped: Some(total),
        berry_term,
        endpoint_term,
        route: Route::LineIntegral,
        k: track.len() - 1,
        endpoint_overlap_mag: end.norm(),
        convergence_estimate,
    })
}

/// gamma = arg<psi_0|psi_K> - sum_k arg<psi_k|psi_{k+1}>.
pub fn open_path_phase_direct(track: &FrameTrack, n: usize) -> Result<PhaseResult> {
    let slot = slot_of(track, n)?;
    let end = endpoint_overlap(track, slot)?;
    let idx: Vec<usize> = (0..track.len()).collect();
    let berry_term: f64 = connection_links(track, slot, &idx).iter().sum();
    let endpoint_term = end.arg();
    let gamma = wrap_phase(endpoint_term + berry_term);
    let convergence_estimate = strided(track.len(), 2).map(|half| {
        let b: f64 = connection_links(track, slot, &half).iter().sum();
        wrap_phase(gamma - (endpoint_term + b)).abs()
    });
    Ok(PhaseResult {
        gamma,
        unwrapped: None,
        berry_term,
        endpoint_term,
        route: Route::Direct,
        k: track.len() - 1,
        endpoint_overlap_mag: end.norm(),
        convergence_estimate,
    })
}

/// Every reference overlap must be non-zero, and no node of <psi_0|psi(R)>
/// may fall between two samples: a phase step above pi/2 marks one.
fn check_all_references(track: &FrameTrack, slot: usize) -> Result<()> {
    let ov: Vec<C64> = (0..track.len()).map(|k| check_reference(track, slot, k)).collect::<Result<_>>()?;
    for (k, w) in ov.windows(2).enumerate() {
        let step = wrap_phase(w[1].arg() - w[0].arg());
        if step.abs() > FRAC_PI_2 {
            return Err(Error::ReferenceNode { sample: k, step });
        }
    }
    Ok(())
}

fn finish_integrand_route(track: &FrameTrack, slot: usize, omega: &[f64], route: Route) -> Result<PhaseResult> {
    let end = endpoint_overlap(track, slot)?;
    let s = track.path().s();
    let total = trapezoid(s, omega);
    let idx: Vec<usize> = (0..track.len()).collect();
    let berry_term: f64 = connection_links(track, slot, &idx).iter().sum();
    let convergence_estimate = strided(track.len(), 2).map(|half| {
        let hs: Vec<f64> = half.iter().map(|&k| s[k]).collect();
        let hf: Vec<f64> = half.iter().map(|&k| omega[k]).collect();
        wrap_phase(total - trapezoid(&hs, &hf)).abs()
    });
    Ok(PhaseResult {
        gamma: wrap_phase(total),
        unwrapped: Some(total),
        berry_term,
        endpoint_term: total - berry_term,
        route,
        k: track.len() - 1,
        endpoint_overlap_mag: end.norm(),
        convergence_estimate,
    })
}

/// Tangential Omega.dR/ds at every sample through the sum over states.
pub fn sos_integrand(track: &FrameTrack, n: usize) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let slot = slot_of(track, n)?;
    check_all_references(track, slot)?;
    let path = track.path();
    (0..track.len())
        .into_par_iter()
        .map(|k| {
            let (values, vectors, j) = spectrum_at(track, slot, k)?;
            let r = &track.frames[k].r;
            let v = path.velocity_at(path.s()[k]);
            if v.iter().all(|&x| x == 0.0) {
                return Ok(0.0);
            }
            let grads = track.model().grad_hamiltonian(r, GRAD_REL)?;
            let psi = track.state(k, slot);
            let mut dh_psi = StateVector::zeros(psi.len());
            for (g, vi) in grads.iter().zip(&v) {
                dh_psi += g.apply(psi) * C64::new(*vi, 0.0);
            }
            Ok(sos_sum(track.state(0, slot), psi, &values, &vectors, j, &dh_psi))
        })
        .collect()
}

/// Line integral of the sum-over-states expression for Omega.
pub fn open_path_phase_sos(track: &FrameTrack, n: usize) -> Result<PhaseResult> {
    let slot = slot_of(track, n)?;
    let omega = sos_integrand(track, n)?;
    finish_integrand_route(track, slot, &omega, Route::SumOverStates)
}

/// Tangential Omega.dR/ds from projectors along the track.
pub fn projector_integrand(track: &FrameTrack, n: usize) -> Result<Vec<f64>> {
    let slot = slot_of(track, n)?;
    check_all_references(track, slot)?;
    let s = track.path().s();
    let psi0 = track.state(0, slot);
    if track.len() < 3 {
        return Err(Error::InvalidInput("projector route needs at least three samples".into()));
    }
    Ok((0..track.len())
        .map(|k| {
            let w = derivative_weights(s, k);
            let dp: Vec<(&StateVector, f64)> = w.iter().map(|&(j, wj)| (track.state(j, slot), wj)).collect();
            projector_form_value(psi0, track.state(k, slot), &dp)
        })
        .collect())
}

/// Line integral of the projector-commutator one-form.
pub fn open_path_phase_projector(track: &FrameTrack, n: usize) -> Result<PhaseResult> {
    let slot = slot_of(track, n)?;
    let omega = projector_integrand(track, n)?;
    finish_integrand_route(track, slot, &omega, Route::Projector)
}

/// Rephases the track by e^{i alpha(R)} and/or exp(i int K.dR) along the path.
pub fn apply_gauge(track: &FrameTrack, alpha: Option<ScalarGauge>, k_field: Option<FieldGauge>) -> FrameTrack {
    let mut out = track.clone();
    if let Some(a) = alpha {
        out.push_layer(GaugeLayer::Scalar(a));
    }
    if let Some(field) = k_field {
        let pts = track.path().points();
        let mut integral = vec![0.0];
        for w in pts.windows(2) {
            let mid: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect();
            let kv = field(&mid);
            let step: f64 = kv.iter().zip(w[0].iter().zip(&w[1])).map(|(c, (a, b))| c * (b - a)).sum();
            integral.push(integral.last().unwrap() + step);
        }
        out.push_layer(GaugeLayer::Field { field, integral });
    }
    out
}

/// A random smooth gauge alpha(R) = c0 + c.R + sum_j a_j sin(k_j.R + phi_j).
pub fn random_smooth_gauge<R: Rng>(rng: &mut R, m: usize) -> ScalarGauge {
    let c0 = rng.gen_range(-3.0..3.0);
    let c: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let modes: Vec<(f64, Vec<f64>, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    Arc::new(move |r: &[f64]| {
        c0 + dot(&c, r) + modes.iter().map(|(a, k, ph)| a * (dot(k, r) + ph).sin()).sum::<f64>()
    })
}

/// A random smooth field K(R) for the path-integrated redefinition.
pub fn random_smooth_field<R: Rng>(rng: &mut R, m: usize) -> FieldGauge {
    let coeffs: Vec<(f64, Vec<f64>, f64)> = (0..m)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                (0..m).map(|_| rng.gen_range(-1.5..1.5)).collect(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    Arc::new(move |r: &[f64]| coeffs.iter().map(|(a, k, ph)| a * (dot(k, r) + ph).cos()).collect())
}

/// First-order increment Delta gamma = (A - P).dR at sample k.
pub fn infinitesimal_phase(track: &FrameTrack, n: usize, k: usize, dr: &[f64]) -> Result<f64> {
    if dr.len() != track.path().dim() {
        return Err(Error::DimensionMismatch(format!("dR has {} components, path has {}", dr.len(), track.path().dim())));
    }
    if dr.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    Ok(dot(&gauge_potentials(track, n, k)?.omega, dr))
}

/// Per-sample A, P, Omega every `stride` samples (the last sample always included).
pub fn potential_table(track: &FrameTrack, n: usize, stride: usize) -> Result<Vec<GaugePotentialSample>> {
    use rayon::prelude::*;
    let last = track.len() - 1;
    let mut ks: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if *ks.last().unwrap() != last {
        ks.push(last);
    }
    ks.into_par_iter().map(|k| gauge_potentials(track, n, k)).collect()
}

pub fn write_potentials_csv<W: Write>(rows: &[GaugePotentialSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let m = rows.first().map(|r| r.r.len()).unwrap_or(0);
    let mut header = Vec::new();
    for prefix in ["R", "A", "P", "Omega"] {
        header.extend((1..=m).map(|i| format!("{prefix}{i}")));
    }
    out.write_record(&header)?;
    for row in rows {
        let rec: Vec<String> =
            row.r.iter().chain(&row.a).chain(&row.p).chain(&row.omega).map(|x| format!("{x:.12e}")).collect();
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Closed-loop phase -arg prod_k <psi_k|psi_{k+1}> from the discrete
/// Pancharatnam product around a sampled loop (gauge invariant, last state
/// joined back to the first). Independent of any potential.
pub fn pancharatnam_product(states: &[StateVector]) -> f64 {
    let mut prod = C64::new(1.0, 0.0);
    for w in states.windows(2) {
        prod *= inner(&w[0], &w[1]);
        prod /= prod.norm();
    }
    prod *= inner(states.last().unwrap(), &states[0]);
    -prod.arg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, sample_path, Model, ModelSpec, PathSpec};
    use crate::spectral::{track_frames, GaugeMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn spin() -> Model {
        build_model(ModelSpec::spin(0.5)).unwrap()
    }

    #[test]
    fn reference_node_is_reported_by_local_routes() {
        // <1|D(beta)|1> = e^{-|beta|^2/2}(1 - |beta|^2) changes sign at |beta| = 1
        let model = build_model(ModelSpec::displaced_oscillator(40, 1.0)).unwrap();
        let arc = PathSpec::ellipse(vec![0.0, 0.0], vec![0.8, 0.0], vec![0.0, 0.8], 0.0, PI);
        let t = track_frames(&model, &sample_path(&arc, 400).unwrap(), &[0, 1], GaugeMode::ParallelTransport).unwrap();
        assert!(matches!(open_path_phase_sos(&t, 1), Err(Error::ReferenceNode { .. })));
        assert!(matches!(open_path_phase_projector(&t, 1), Err(Error::ReferenceNode { .. })));
        let g0 = open_path_phase_direct(&t, 0).unwrap().gamma;
        let g1 = open_path_phase_direct(&t, 1).unwrap().gamma;
        assert!((wrap_phase(g1 - g0).abs() - PI).abs() < 1e-4, "{g0} {g1}");
        assert!((wrap_phase(open_path_phase(&t, 1).unwrap().gamma - g1)).abs() < 1e-8);
    }

    #[test]
    fn derivative_weights_are_exact_for_quartics() {
        let s: Vec<f64> = (0..9).map(|i| (i as f64 * 0.3).powf(1.3)).collect();
        let f = |x: f64| 2.0 - x + 0.5 * x * x - x.powi(3) + 0.25 * x.powi(4);
        let df = |x: f64| -1.0 + x - 3.0 * x * x + x.powi(3);
        for k in 0..s.len() {
            let d: f64 = derivative_weights(&s, k).iter().map(|&(j, w)| w * f(s[j])).sum();
            assert!((d - df(s[k])).abs() < 1e-9, "k={k}: {d} vs {}", df(s[k]));
        }
        let short = [0.0, 0.4, 1.0];
        let d: f64 = derivative_weights(&short, 1).iter().map(|&(j, w)| w * short[j] * short[j]).sum();
        assert!((d - 0.8).abs() < 1e-12);
    }

    fn circle(theta0: f64, phi_f: f64, k: usize) -> crate::models::ParameterPath {
        sample_path(&PathSpec::sphere_circle(1.0, theta0, phi_f), k).unwrap()
    }

    fn close(a: f64, b: f64) -> f64 {
        wrap_phase(a - b).abs()
    }

    #[test]
    fn constant_path_everything_zero() {
        let m = spin();
        let p = sample_path(&PathSpec::constant(vec![0.3, 0.1, 0.9]), 8).unwrap();
        let t = track_frames(&m, &p, &[0], GaugeMode::ParallelTransport).unwrap();
        for v in [berry_connection(&t, 0, 3).unwrap(), p_potential(&t, 0, 3).unwrap(), p_potential_sos(&t, 0, 3).unwrap(), projector_one_form(&t, 0, 3).unwrap()] {
            assert!(v.iter().all(|x| x.abs() < 1e-9), "{v:?}");
        }
        assert!(open_path_phase(&t, 0).unwrap().gamma.abs() < 1e-14);
        assert!(open_path_phase_direct(&t, 0).unwrap().gamma.abs() < 1e-14);
        assert!(open_path_phase_sos(&t, 0).unwrap().gamma.abs() < 1e-14);
        assert!(open_path_phase_projector(&t, 0).unwrap().gamma.abs() < 1e-14);
    }

    #[test]
    fn closed_loop_solid_angle() {
        let m = spin();
        let th = PI / 3.0;
        let t = track_frames(&m, &circle(th, 2.0 * PI, 2000), &[0, 1], GaugeMode::ParallelTransport).unwrap();
        let expect = -PI * (1.0 - th.cos());
        // the field-aligned level is the upper one
        let g = open_path_phase(&t, 1).unwrap();
        assert!(close(g.gamma, expect) < 1e-5, "{}", g.gamma);
        assert!(close(open_path_phase(&t, 0).unwrap().gamma, -expect) < 1e-5);
        let states: Vec<StateVector> = (0..t.len() - 1).map(|k| t.state(k, 1).clone()).collect();
        assert!(close(pancharatnam_product(&states), g.gamma) < 1e-10);
        assert!(close(open_path_phase_sos(&t, 1).unwrap().gamma, expect) < 1e-5);
    }

    #[test]
    fn routes_agree_on_open_arc() {
        let m = spin();
        let t = track_frames(&m, &circle(PI / 3.0, PI, 2000), &[1], GaugeMode::Raw).unwrap();
        let li = open_path_phase(&t, 1).unwrap();
        let di = open_path_phase_direct(&t, 1).unwrap();
        let so = open_path_phase_sos(&t, 1).unwrap();
        let pr = open_path_phase_projector(&t, 1).unwrap();
        assert!(close(li.gamma, di.gamma) < 1e-10);
        assert!(close(so.gamma, di.gamma) < 1e-6, "{} {}", so.gamma, di.gamma);
        assert!(close(pr.gamma, di.gamma) < 1e-6, "{} {}", pr.gamma, di.gamma);
    }

    #[test]
    fn reference_potential_at_start_equals_connection() {
        let m = spin();
        let t = track_frames(&m, &circle(0.8, 1.5, 400), &[0], GaugeMode::Raw).unwrap();
        let g = gauge_potentials(&t, 0, 0).unwrap();
        for (a, p) in g.a.iter().zip(&g.p) {
            assert!((a - p).abs() < 1e-12);
        }
    }

    #[test]
    fn potential_routes_agree() {
        let m = spin();
        let t = track_frames(&m, &circle(PI / 3.0, PI, 500), &[0], GaugeMode::ParallelTransport).unwrap();
        for k in [37, 250, 500] {
            let g = gauge_potentials(&t, 0, k).unwrap();
            let sos = p_potential_sos(&t, 0, k).unwrap();
            let proj = projector_one_form(&t, 0, k).unwrap();
            for i in 0..3 {
                assert!((g.p[i] - sos[i]).abs() < 1e-6);
                assert!((g.omega[i] - proj[i]).abs() < 1e-6);
                assert!((g.omega[i] - (g.a[i] - g.p[i])).abs() <= 1e-12);
            }
            // parallel transport: no tangential connection
            let tangent = t.path().derivative(k);
            assert!(dot(&g.a, &tangent).abs() < 1e-8);
        }
    }

    #[test]
    fn antipodal_endpoint_is_orthogonal() {
        let m = spin();
        let p = sample_path(&PathSpec::waypoints(vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, -1.0]]), 400).unwrap();
        let t = track_frames(&m, &p, &[0], GaugeMode::ParallelTransport).unwrap();
        assert!(matches!(p_potential(&t, 0, 400), Err(Error::Orthogonal { .. })));
        assert!(matches!(open_path_phase(&t, 0), Err(Error::Orthogonal { .. })));
    }

    #[test]
    fn linear_gauge_shifts_potentials() {
        let m = spin();
        let t = track_frames(&m, &circle(PI / 3.0, 2.0, 300), &[0], GaugeMode::ParallelTransport).unwrap();
        let c = [0.7, -0.4, 1.3];
        let g = apply_gauge(&t, Some(Arc::new(move |r: &[f64]| dot(&c, r))), None);
        for k in [0, 100, 300] {
            let before = gauge_potentials(&t, 0, k).unwrap();
            let after = gauge_potentials(&g, 0, k).unwrap();
            for i in 0..3 {
                assert!((after.a[i] - before.a[i] + c[i]).abs() < 1e-8);
                assert!((after.p[i] - before.p[i] + c[i]).abs() < 1e-8);
                assert!((after.omega[i] - before.omega[i]).abs() < 1e-9);
            }
            let pr0 = projector_one_form(&t, 0, k).unwrap();
            let pr1 = projector_one_form(&g, 0, k).unwrap();
            for i in 0..3 {
                assert!((pr0[i] - pr1[i]).abs() < 1e-10);
            }
        }
        let zero = apply_gauge(&t, Some(Arc::new(|_: &[f64]| 0.0)), None);
        assert_eq!(zero.state(17, 0), t.state(17, 0));
    }

    #[test]
    fn azimuthal_gauge_shift() {
        let m = spin();
        let t = track_frames(&m, &circle(PI / 3.0, 2.0, 300), &[0], GaugeMode::ParallelTransport).unwrap();
        let g = apply_gauge(&t, Some(Arc::new(|r: &[f64]| r[1].atan2(r[0]))), None);
        let k = 150;
        let r = &t.frames[k].r;
        let rho2 = r[0] * r[0] + r[1] * r[1];
        let grad = [-r[1] / rho2, r[0] / rho2, 0.0];
        let before = berry_connection(&t, 0, k).unwrap();
        let after = berry_connection(&g, 0, k).unwrap();
        for i in 0..3 {
            assert!((after[i] - before[i] + grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn random_gauges_leave_phase_invariant() {
        let m = spin();
        let t = track_frames(&m, &circle(PI / 4.0, 2.5, 800), &[0], GaugeMode::Raw).unwrap();
        let base = open_path_phase_direct(&t, 0).unwrap().gamma;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let a = random_smooth_gauge(&mut rng, 3);
            let kf = random_smooth_field(&mut rng, 3);
            let g = apply_gauge(&t, Some(a), Some(kf));
            assert!(close(open_path_phase(&g, 0).unwrap().gamma, base) < 1e-9);
            assert!(close(open_path_phase_direct(&g, 0).unwrap().gamma, base) < 1e-9);
            assert!(close(open_path_phase_projector(&g, 0).unwrap().gamma, open_path_phase_projector(&t, 0).unwrap().gamma) < 1e-9);
        }
    }

    #[test]
    fn infinitesimal_increment_is_second_order() {
        let m = spin();
        let spec = PathSpec::sphere_circle(1.0, PI / 3.0, 2.0);
        let kmax = 4000;
        let t = track_frames(&m, &sample_path(&spec, kmax).unwrap(), &[0], GaugeMode::ParallelTransport).unwrap();
        let k = 1000;
        let mut errs = Vec::new();
        for step in [80usize, 40, 20] {
            let sub_a = t.path().subpath(0, k).unwrap();
            let sub_b = t.path().subpath(0, k + step).unwrap();
            let ga = open_path_phase_direct(&track_frames(&m, &sub_a, &[0], GaugeMode::ParallelTransport).unwrap(), 0).unwrap().unwrapped_or_gamma();
            let gb = open_path_phase_direct(&track_frames(&m, &sub_b, &[0], GaugeMode::ParallelTransport).unwrap(), 0).unwrap().unwrapped_or_gamma();
            let dr: Vec<f64> = t.path().point(k + step).iter().zip(t.path().point(k)).map(|(a, b)| a - b).collect();
            let inc = infinitesimal_phase(&t, 0, k, &dr).unwrap();
            errs.push((inc - wrap_phase(gb - ga)).abs());
        }
        assert!(errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0, "{errs:?}");
        assert_eq!(infinitesimal_phase(&t, 0, k, &[0.0; 3]).unwrap(), 0.0);
        let g = gauge_potentials(&t, 0, k).unwrap();
        let a = &g.a;
        let p = &g.p;
        let perp = [a[1] * p[2] - a[2] * p[1], a[2] * p[0] - a[0] * p[2], a[0] * p[1] - a[1] * p[0]];
        let scale = norm(&perp).max(1e-300);
        let dr: Vec<f64> = perp.iter().map(|x| 1e-3 * x / scale).collect();
        assert!(infinitesimal_phase(&t, 0, k, &dr).unwrap().abs() < 1e-12);
    }

    impl PhaseResult {
        fn unwrapped_or_gamma(&self) -> f64 {
            self.unwrapped.unwrap_or(self.gamma)
        }
    }

    #[test]
    fn reparametrization_independence() {
        let m = spin();
        let spec = PathSpec::sphere_circle(1.0, PI / 3.0, PI);
        let a = track_frames(&m, &sample_path(&spec, 2000).unwrap(), &[0], GaugeMode::ParallelTransport).unwrap();
        let warped = spec.with_easing(crate::models::Easing::Warp(0.5));
        let b = track_frames(&m, &sample_path(&warped, 2000).unwrap(), &[0], GaugeMode::ParallelTransport).unwrap();
        let ga = open_path_phase(&a, 0).unwrap().gamma;
        let gb = open_path_phase(&b, 0).unwrap().gamma;
        assert!(close(ga, gb) < 1e-6);
        let sa = open_path_phase_sos(&a, 0).unwrap().gamma;
        let sb = open_path_phase_sos(&b, 0).unwrap().gamma;
        assert!(close(sa, sb) < 1e-6);
    }

    #[test]
    fn quadrature_converges_at_second_order() {
        let m = spin();
        let spec = PathSpec::sphere_circle(1.0, PI / 3.0, PI);
        let g: Vec<f64> = [100, 200, 400, 800]
            .iter()
            .map(|&k| open_path_phase(&track_frames(&m, &sample_path(&spec, k).unwrap(), &[0], GaugeMode::ParallelTransport).unwrap(), 0).unwrap().gamma)
            .collect();
        let d: Vec<f64> = g.windows(2).map(|w| close(w[0], w[1])).collect();
        assert!(d[0] / d[1] > 3.5 && d[1] / d[2] > 3.5, "{d:?}");
    }

    #[test]
    fn oscillator_sos_matches_stencil() {
        let m = build_model(ModelSpec::generalized_oscillator(80)).unwrap();
        let spec = PathSpec::ellipse(vec![1.0, 0.0, 1.0], vec![0.05, 0.0, -0.05], vec![0.0, 0.05, 0.0], 0.0, 2.0);
        let t = track_frames(&m, &sample_path(&spec, 200).unwrap(), &[3], GaugeMode::ParallelTransport).unwrap();
        for k in [50, 200] {
            let p = p_potential(&t, 3, k).unwrap();
            let sos = p_potential_sos(&t, 3, k).unwrap();
            for i in 0..3 {
                assert!((p[i] - sos[i]).abs() < 1e-5, "{p:?} {sos:?}");
            }
        }
    }

    #[test]
    fn phase_result_json_fields() {
        let m = spin();
        let t = track_frames(&m, &circle(1.0, 1.0, 100), &[0], GaugeMode::Raw).unwrap();
        let v = serde_json::to_value(open_path_phase(&t, 0).unwrap()).unwrap();
        for key in ["gamma", "berry_term", "endpoint_term", "route", "K", "convergence_estimate"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["route"], "line_integral");
        let rows = potential_table(&t, 0, 25).unwrap();
        let mut buf = Vec::new();
        write_potentials_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rows.len() + 1);
    }
}
