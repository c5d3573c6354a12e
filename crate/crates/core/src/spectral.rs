//! Instantaneous eigensystems along a path and discrete gauge management.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, inner, StateVector, C64};
use crate::models::{HermitianOperator, Model, ParameterPath};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

pub const DEFAULT_GAP_TOL: f64 = 1e-8;
pub const RESOLUTION_FLOOR: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct EigenFrame {
    pub r: Vec<f64>,
    /// Full ascending spectrum at `r`.
    pub energies: Vec<f64>,
    /// Stored states; for a full eigensystem all of them, inside a track
    /// only the tracked levels.
    pub states: Vec<StateVector>,
    /// Energy-order index of each stored state.
    pub indices: Vec<usize>,
    pub gap_min: f64,
}

impl EigenFrame {
    /// `H|psi> - E|psi>` norm for stored state `slot`.
    pub fn residual(&self, h: &HermitianOperator, slot: usize) -> f64 {
        let v = &self.states[slot];
        (h.apply(v) - v * C64::new(self.energies[self.indices[slot]], 0.0)).norm()
    }
}

fn spectral_range(values: &[f64]) -> f64 {
    let range = values.last().unwrap() - values.first().unwrap();
    if range > 0.0 {
        range
    } else {
        values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0)
    }
}

/// Smallest gap adjacent to any of `levels`, with the offending pair.
fn min_gap_near(values: &[f64], levels: &[usize]) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for &n in levels {
        if n > 0 && values[n] - values[n - 1] < best.0 {
            best = (values[n] - values[n - 1], n - 1, n);
        }
        if n + 1 < values.len() && values[n + 1] - values[n] < best.0 {
            best = (values[n + 1] - values[n], n, n + 1);
        }
    }
    best
}

pub(crate) fn check_gap(values: &[f64], levels: &[usize], gap_tol: f64) -> Result<f64> {
    let (gap, lower, upper) = min_gap_near(values, levels);
    let tol = gap_tol * spectral_range(values);
    if gap < tol {
        return Err(Error::Degenerate { gap, tol, lower, upper });
    }
    Ok(gap)
}

/// Full eigensystem; every adjacent gap must exceed `gap_tol` times the
/// spectral range.
pub fn eigensystem(h: &HermitianOperator, gap_tol: f64) -> Result<EigenFrame> {
    let all: Vec<usize> = (0..h.dim()).collect();
    eigensystem_for(h, gap_tol, &all, Vec::new())
}

/// Eigensystem whose gap check only covers `levels`.
pub fn eigensystem_for(h: &HermitianOperator, gap_tol: f64, levels: &[usize], r: Vec<f64>) -> Result<EigenFrame> {
    if !(gap_tol > 0.0) {
        return Err(Error::InvalidInput(format!("gap_tol must be positive, got {gap_tol}")));
    }
    let eig = hermitian_eigen(h.matrix());
    let gap_min = check_gap(&eig.values, levels, gap_tol)?;
    let n = eig.values.len();
    Ok(EigenFrame { r, energies: eig.values, states: eig.vectors, indices: (0..n).collect(), gap_min })
}

/// `<a|b>`, conjugate-linear in `a`.
pub fn overlap(a: &StateVector, b: &StateVector) -> Result<C64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("overlap of {} and {} vectors", a.len(), b.len())));
    }
    Ok(inner(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GaugeMode {
    Raw,
    #[default]
    ParallelTransport,
}

pub type ScalarGauge = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type FieldGauge = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A phase redefinition applied on top of the track's own gauge.
#[derive(Clone)]
pub enum GaugeLayer {
    /// e^{i alpha(R)}.
    Scalar(ScalarGauge),
    /// exp(i int_{R0}^{R} K.dR) integrated along the path; `integral[k]` is
    /// the accumulated phase at sample k.
    Field { field: FieldGauge, integral: Vec<f64> },
}

impl std::fmt::Debug for GaugeLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GaugeLayer::Scalar(_) => write!(f, "Scalar"),
            GaugeLayer::Field { .. } => write!(f, "Field"),
        }
    }
}

impl GaugeLayer {
    fn at_sample(&self, k: usize, r: &[f64]) -> f64 {
        match self {
            GaugeLayer::Scalar(a) => a(r),
            GaugeLayer::Field { integral, .. } => integral[k],
        }
    }

    /// Phase at a point `r` near sample `k`, extending a field layer along
    /// the straight segment from R_k (midpoint rule).
    fn near_sample(&self, k: usize, rk: &[f64], r: &[f64]) -> f64 {
        match self {
            GaugeLayer::Scalar(a) => a(r),
            GaugeLayer::Field { field, integral } => {
                let mid: Vec<f64> = rk.iter().zip(r).map(|(a, b)| 0.5 * (a + b)).collect();
                let kv = field(&mid);
                integral[k] + kv.iter().zip(rk.iter().zip(r)).map(|(c, (a, b))| c * (b - a)).sum::<f64>()
            }
        }
    }
}

/// Eigenframes for a set of levels at every path sample.
#[derive(Debug, Clone)]
pub struct FrameTrack {
    model: Arc<Model>,
    path: ParameterPath,
    levels: Vec<usize>,
    gauge_mode: GaugeMode,
    gap_tol: f64,
    pub frames: Vec<EigenFrame>,
    base: Vec<Vec<StateVector>>,
    layers: Vec<GaugeLayer>,
    overlap_mags: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrackOptions {
    pub gap_tol: f64,
    pub resolution_floor: f64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions { gap_tol: DEFAULT_GAP_TOL, resolution_floor: RESOLUTION_FLOOR }
    }
}

pub fn track_frames(model: &Model, path: &ParameterPath, levels: &[usize], mode: GaugeMode) -> Result<FrameTrack> {
    track_frames_with(model, path, levels, mode, &TrackOptions::default())
}

pub fn track_frames_with(
    model: &Model,
    path: &ParameterPath,
    levels: &[usize],
    mode: GaugeMode,
    opts: &TrackOptions,
) -> Result<FrameTrack> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("no levels to track".into()));
    }
    for &n in levels {
        if n >= model.dim() {
            return Err(Error::InvalidInput(format!("level {n} outside dimension {}", model.dim())));
        }
        model.check_level(n)?;
    }
    model.check_path(path)?;
    let chunk = 64;
    let mut frames: Vec<EigenFrame> = Vec::with_capacity(path.len());
    let mut overlap_mags = vec![Vec::with_capacity(path.len()); levels.len()];
    let mut current: Vec<usize> = levels.to_vec();
    for start in (0..path.len()).step_by(chunk) {
        let end = (start + chunk).min(path.len());
        let full: Vec<(Vec<f64>, Vec<StateVector>)> = (start..end)
            .into_par_iter()
            .map(|k| {
                let h = model.hamiltonian_at(path.point(k))?;
                let eig = hermitian_eigen(h.matrix());
                Ok((eig.values, eig.vectors))
            })
            .collect::<Result<_>>()?;
        for (offset, (values, vectors)) in full.into_iter().enumerate() {
            let k = start + offset;
            let mut states = Vec::with_capacity(levels.len());
            if k > 0 {
                let prev = frames.last().unwrap();
                for (slot, idx) in current.iter_mut().enumerate() {
                    let reference = &prev.states[slot];
                    let (best, ov) = vectors
                        .iter()
                        .enumerate()
                        .map(|(j, v)| (j, inner(reference, v)))
                        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                        .unwrap();
                    let mag = ov.norm();
                    if mag <= opts.resolution_floor {
                        return Err(Error::Resolution { sample: k, overlap: mag, floor: opts.resolution_floor });
                    }
                    *idx = best;
                    overlap_mags[slot].push(mag);
                    let mut v = vectors[best].clone();
                    if mode == GaugeMode::ParallelTransport {
                        v *= ov.conj() / mag;
                    }
                    states.push(v);
                }
            } else {
                for &idx in &current {
                    states.push(vectors[idx].clone());
                }
            }
            let gap_min = check_gap(&values, &current, opts.gap_tol)?;
            frames.push(EigenFrame {
                r: path.point(k).to_vec(),
                energies: values,
                states,
                indices: current.clone(),
                gap_min,
            });
        }
    }
    let base = frames.iter().map(|f| f.states.clone()).collect();
    Ok(FrameTrack {
        model: Arc::new(model.clone()),
        path: path.clone(),
        levels: levels.to_vec(),
        gauge_mode: mode,
        gap_tol: opts.gap_tol,
        frames,
        base,
        layers: Vec::new(),
        overlap_mags,
    })
}

impl FrameTrack {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn path(&self) -> &ParameterPath {
        &self.path
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn gauge_mode(&self) -> GaugeMode {
        self.gauge_mode
    }

    pub fn gap_tol(&self) -> f64 {
        self.gap_tol
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slot(&self, n: usize) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| l == n)
            .ok_or_else(|| Error::InvalidInput(format!("level {n} is not tracked")))
    }

    pub fn state(&self, k: usize, slot: usize) -> &StateVector {
        &self.frames[k].states[slot]
    }

    pub fn energy(&self, k: usize, slot: usize) -> f64 {
        let f = &self.frames[k];
        f.energies[f.indices[slot]]
    }

    /// Energy-order index of tracked level `slot` at sample `k`.
    pub fn index(&self, k: usize, slot: usize) -> usize {
        self.frames[k].indices[slot]
    }

    /// State before any gauge layer was applied.
    pub fn base_state(&self, k: usize, slot: usize) -> &StateVector {
        &self.base[k][slot]
    }

    pub fn layers(&self) -> &[GaugeLayer] {
        &self.layers
    }

    /// Total layer phase at sample k.
    pub fn layer_phase(&self, k: usize) -> f64 {
        self.layers.iter().map(|l| l.at_sample(k, &self.frames[k].r)).sum()
    }

    /// Total layer phase at a point near sample k.
    pub fn layer_phase_near(&self, k: usize, r: &[f64]) -> f64 {
        self.layers.iter().map(|l| l.near_sample(k, &self.frames[k].r, r)).sum()
    }

    /// Pushes a gauge layer and rephases every stored state by it.
    pub fn push_layer(&mut self, layer: GaugeLayer) {
        self.layers.push(layer);
        for k in 0..self.frames.len() {
            let phase = C64::from_polar(1.0, self.layer_phase(k));
            for slot in 0..self.levels.len() {
                self.frames[k].states[slot] = &self.base[k][slot] * phase;
            }
        }
    }

    /// Multiplies every stored state by an arbitrary unit phase per sample
    /// and level; `f(k, slot)` gives the angle. Becomes part of the base gauge.
    pub fn rephase_base(&mut self, f: impl Fn(usize, usize) -> f64) {
        for k in 0..self.frames.len() {
            for slot in 0..self.levels.len() {
                let ph = C64::from_polar(1.0, f(k, slot));
                self.base[k][slot] *= ph;
                self.frames[k].states[slot] *= ph;
            }
        }
    }

    /// |<psi_n(R_k)|psi_n(R_{k+1})>| for each k.
    pub fn consecutive_overlaps(&self, slot: usize) -> &[f64] {
        &self.overlap_mags[slot]
    }

    pub fn min_overlap(&self) -> f64 {
        self.overlap_mags.iter().flatten().copied().fold(1.0, f64::min)
    }

    /// Diagnostics table: s, R, per-level energy and consecutive overlap, gap.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["s".to_string()];
        header.extend((0..self.path.dim()).map(|i| format!("R{}", i + 1)));
        for &n in &self.levels {
            header.push(format!("E_{n}"));
            header.push(format!("overlap_{n}"));
        }
        header.push("gap_min".into());
        out.write_record(&header)?;
        for (k, f) in self.frames.iter().enumerate() {
            let mut row = vec![format!("{:.12e}", self.path.s()[k])];
            row.extend(f.r.iter().map(|x| format!("{x:.12e}")));
            for slot in 0..self.levels.len() {
                row.push(format!("{:.12e}", self.energy(k, slot)));
                let ov = if k == 0 { 1.0 } else { self.overlap_mags[slot][k - 1] };
                row.push(format!("{ov:.12e}"));
            }
            row.push(format!("{:.12e}", f.gap_min));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ComplexMatrix;
    use crate::models::{build_model, sample_path, ModelSpec, PathSpec};
    use std::f64::consts::PI;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn diag_matrix_eigensystem() {
        let h = HermitianOperator::new(ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(-1.0), c(1.0)]))).unwrap();
        let f = eigensystem(&h, DEFAULT_GAP_TOL).unwrap();
        assert_eq!(f.energies, vec![-1.0, 1.0]);
        assert!((f.states[0][0].norm() - 1.0).abs() < 1e-15);
        assert!((f.gap_min - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spin_half_along_x() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let h = m.hamiltonian_at(&[1.0, 0.0, 0.0]).unwrap();
        let f = eigensystem(&h, DEFAULT_GAP_TOL).unwrap();
        assert!((f.energies[0] + 0.5).abs() < 1e-14 && (f.energies[1] - 0.5).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lower = StateVector::from_vec(vec![c(s), c(-s)]);
        let upper = StateVector::from_vec(vec![c(s), c(s)]);
        assert!((inner(&lower, &f.states[0]).norm() - 1.0).abs() < 1e-12);
        assert!((inner(&upper, &f.states[1]).norm() - 1.0).abs() < 1e-12);
        for slot in 0..2 {
            assert!(f.residual(&h, slot) < 1e-12);
        }
    }

    #[test]
    fn zero_field_spin_one_is_degenerate() {
        let m = build_model(ModelSpec::spin(1.0)).unwrap();
        let h = m.hamiltonian_at(&[0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(eigensystem(&h, DEFAULT_GAP_TOL), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn overlap_properties() {
        let a = StateVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        let b = StateVector::from_vec(vec![C64::new(0.0, 0.6), C64::new(0.8, 0.0)]);
        assert!((overlap(&a, &a).unwrap() - c(1.0)).norm() < 1e-15);
        assert_eq!(overlap(&a, &b).unwrap(), overlap(&b, &a).unwrap().conj());
        let e0 = StateVector::from_vec(vec![c(1.0), c(0.0)]);
        let e1 = StateVector::from_vec(vec![c(0.0), c(1.0)]);
        assert_eq!(overlap(&e0, &e1).unwrap(), c(0.0));
        assert!(overlap(&e0, &StateVector::zeros(3)).is_err());
    }

    #[test]
    fn constant_track() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let p = sample_path(&PathSpec::constant(vec![0.2, 0.3, 1.0]), 10).unwrap();
        let t = track_frames(&m, &p, &[0, 1], GaugeMode::ParallelTransport).unwrap();
        for k in 1..t.len() {
            assert_eq!(t.state(k, 0), t.state(0, 0));
        }
        assert!((t.min_overlap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn parallel_transport_circle() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let p = sample_path(&PathSpec::sphere_circle(1.0, PI / 3.0, 2.0 * PI), 1000).unwrap();
        let t = track_frames(&m, &p, &[0], GaugeMode::ParallelTransport).unwrap();
        assert!(t.min_overlap() >= 0.999);
        for k in 0..t.len() - 1 {
            let ov = inner(t.state(k, 0), t.state(k + 1, 0));
            assert!(ov.im.abs() <= 1e-12 && ov.re > 0.0);
            let h = m.hamiltonian_at(p.point(k)).unwrap();
            assert!(t.frames[k].residual(&h, 0) < 1e-9);
        }
    }

    #[test]
    fn coarse_circle_fails_resolution() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let p = sample_path(&PathSpec::sphere_circle(1.0, PI / 3.0, 2.0 * PI), 3).unwrap();
        assert!(matches!(track_frames(&m, &p, &[0], GaugeMode::ParallelTransport), Err(Error::Resolution { .. })));
    }

    #[test]
    fn truncation_margin_enforced() {
        let m = build_model(ModelSpec::generalized_oscillator(30)).unwrap();
        let p = sample_path(&PathSpec::constant(vec![1.0, 0.0, 1.0]), 4).unwrap();
        assert!(matches!(track_frames(&m, &p, &[25], GaugeMode::Raw), Err(Error::Truncation { .. })));
    }

    #[test]
    fn csv_export_has_header() {
        let m = build_model(ModelSpec::spin(0.5)).unwrap();
        let p = sample_path(&PathSpec::sphere_circle(1.0, 1.0, 1.0), 20).unwrap();
        let t = track_frames(&m, &p, &[0], GaugeMode::Raw).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,R1,R2,R3,E_0,overlap_0,gap_min"));
        assert_eq!(text.lines().count(), 22);
    }
}
