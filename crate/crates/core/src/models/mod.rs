//! Parametrized Hamiltonians and their parameter paths.

mod classical;
mod path;

pub use classical::{ActionAngle, Chart, ClassicalModel};
pub use path::{sample_path, Easing, ParameterPath, PathShape, PathSpec};

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_defect, symmetrize, ComplexMatrix, StateVector, C64, I};
use serde::{Deserialize, Serialize};

pub type ParameterPoint = Vec<f64>;

pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SpinJ,
    GeneralizedOscillator,
    DisplacedOscillator,
}

fn default_hbar() -> f64 {
    1.0
}
fn default_margin() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dimension: usize,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    /// Spin quantum number for `spin_j`; inferred from `dimension` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin: Option<f64>,
    /// Frequency of the `displaced_oscillator`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: usize,
}

impl ModelSpec {
    pub fn spin(j: f64) -> Self {
        ModelSpec {
            kind: ModelKind::SpinJ,
            dimension: (2.0 * j).round() as usize + 1,
            hbar: 1.0,
            spin: Some(j),
            omega: None,
            margin: default_margin(),
        }
    }

    pub fn generalized_oscillator(dimension: usize) -> Self {
        ModelSpec {
            kind: ModelKind::GeneralizedOscillator,
            dimension,
            hbar: 1.0,
            spin: None,
            omega: None,
            margin: default_margin(),
        }
    }

    pub fn displaced_oscillator(dimension: usize, omega: f64) -> Self {
        ModelSpec {
            kind: ModelKind::DisplacedOscillator,
            dimension,
            hbar: 1.0,
            spin: None,
            omega: Some(omega),
            margin: default_margin(),
        }
    }

    pub fn with_hbar(mut self, hbar: f64) -> Self {
        self.hbar = hbar;
        self
    }
}

/// Self-adjoint matrix H(R) in the model's finite basis.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
}

impl HermitianOperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let defect = hermiticity_defect(&matrix);
        if defect > HERMITICITY_TOL {
            return Err(Error::InvalidInput(format!("matrix not Hermitian: defect {defect:e}")));
        }
        Ok(HermitianOperator { matrix })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &StateVector) -> StateVector {
        &self.matrix * v
    }

    /// `<a|H|b>`.
    pub fn element(&self, a: &StateVector, b: &StateVector) -> C64 {
        a.dotc(&(&self.matrix * b))
    }
}

/// Row-compressed matrix used for fast matrix-vector products.
#[derive(Debug, Clone)]
struct Sparse {
    rows: Vec<Vec<(usize, C64)>>,
}

impl Sparse {
    fn from_dense(m: &ComplexMatrix) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != C64::new(0.0, 0.0))
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Sparse { rows }
    }

    fn add_apply(&self, scale: f64, v: &StateVector, out: &mut StateVector) {
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &(j, x) in row {
                acc += x * v[j];
            }
            out[i] += acc * scale;
        }
    }

    fn abs_row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|(_, x)| x.norm()).sum()).collect()
    }
}

/// A model of kind `spec.kind`. Internally H(R) = H0 + sum_i c_i(R) G_i is
/// assembled from fixed operator pieces; algorithms only ever see
/// `hamiltonian_at` and `apply_hamiltonian`.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    offset: Option<ComplexMatrix>,
    pieces: Vec<ComplexMatrix>,
    sparse_offset: Option<Sparse>,
    sparse_pieces: Vec<Sparse>,
    q: Option<ComplexMatrix>,
    p: Option<ComplexMatrix>,
}

pub fn build_model(spec: ModelSpec) -> Result<Model> {
    if !(spec.hbar > 0.0 && spec.hbar.is_finite()) {
        return Err(Error::InvalidInput(format!("hbar must be positive, got {}", spec.hbar)));
    }
    if spec.dimension < 2 {
        return Err(Error::InvalidInput(format!("dimension must be at least 2, got {}", spec.dimension)));
    }
    let d = spec.dimension;
    let hbar = spec.hbar;
    let (offset, pieces, q, p) = match spec.kind {
        ModelKind::SpinJ => {
            let j = spec.spin.unwrap_or((d as f64 - 1.0) / 2.0);
            let twice = 2.0 * j;
            if j <= 0.0 || (twice - twice.round()).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("spin must be a positive half-integer, got {j}")));
            }
            if twice.round() as usize + 1 != d {
                return Err(Error::DimensionMismatch(format!(
                    "spin j={j} requires D={}, got D={d}",
                    twice.round() as usize + 1
                )));
            }
            let [jx, jy, jz] = spin_matrices(j, hbar);
            (None, vec![jx, jy, jz], None, None)
        }
        ModelKind::GeneralizedOscillator => {
            if spec.omega.is_some() || spec.spin.is_some() {
                return Err(Error::InvalidInput("generalized_oscillator takes no omega or spin".into()));
            }
            let (q2, qp, p2, q, p) = quadratic_pieces(d, hbar);
            let half = C64::new(0.5, 0.0);
            (None, vec![q2 * half, qp * half, p2 * half], Some(q), Some(p))
        }
        ModelKind::DisplacedOscillator => {
            let omega = spec
                .omega
                .ok_or_else(|| Error::InvalidInput("displaced_oscillator requires omega".into()))?;
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(Error::InvalidInput(format!("omega must be positive, got {omega}")));
            }
            let (q2, _, p2, q, p) = quadratic_pieces(d, hbar);
            let h0 = (p2 + q2 * C64::new(omega * omega, 0.0)) * C64::new(0.5, 0.0);
            let neg = C64::new(-1.0, 0.0);
            (Some(h0), vec![&q * neg, &p * neg], Some(q), Some(p))
        }
    };
    Ok(Model {
        sparse_offset: offset.as_ref().map(Sparse::from_dense),
        sparse_pieces: pieces.iter().map(Sparse::from_dense).collect(),
        offset,
        pieces,
        q,
        p,
        spec,
    })
}

/// Spin generators hbar*S in the basis m = j, j-1, ..., -j.
fn spin_matrices(j: f64, hbar: f64) -> [ComplexMatrix; 3] {
    let d = (2.0 * j).round() as usize + 1;
    let m = |k: usize| j - k as f64;
    let mut jp = ComplexMatrix::zeros(d, d);
    for k in 1..d {
        let mk = m(k);
        jp[(k - 1, k)] = C64::new(hbar * (j * (j + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
    }
    let jm = jp.adjoint();
    let jx = (&jp + &jm) * C64::new(0.5, 0.0);
    let jy = (&jp - &jm) * (-I * 0.5);
    let jz = ComplexMatrix::from_fn(d, d, |a, b| if a == b { C64::new(hbar * m(a), 0.0) } else { C64::new(0.0, 0.0) });
    [jx, jy, jz]
}

/// Fock-basis q^2, qp+pq, p^2, q, p. Products are formed two levels larger
/// and then cropped so every retained entry is exact.
fn quadratic_pieces(d: usize, hbar: f64) -> (ComplexMatrix, ComplexMatrix, ComplexMatrix, ComplexMatrix, ComplexMatrix) {
    let big = d + 2;
    let mut a = ComplexMatrix::zeros(big, big);
    for n in 1..big {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let ad = a.adjoint();
    let s = (hbar / 2.0).sqrt();
    let q = (&a + &ad) * C64::new(s, 0.0);
    let p = (&ad - &a) * (I * s);
    let crop = |m: ComplexMatrix| symmetrize(&m.view((0, 0), (d, d)).into_owned());
    let q2 = crop(&q * &q);
    let qp = crop(&q * &p + &p * &q);
    let p2 = crop(&p * &p);
    (q2, qp, p2, crop(q), crop(p))
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn dim(&self) -> usize {
        self.spec.dimension
    }

    pub fn hbar(&self) -> f64 {
        self.spec.hbar
    }

    /// Number of external parameters m.
    pub fn param_dim(&self) -> usize {
        self.pieces.len()
    }

    /// Highest level index that is safe from truncation artefacts.
    pub fn max_valid_level(&self) -> usize {
        match self.spec.kind {
            ModelKind::SpinJ => self.dim() - 1,
            _ => self.dim().saturating_sub(self.spec.margin + 1),
        }
    }

    pub fn check_level(&self, n: usize) -> Result<()> {
        if n > self.max_valid_level() {
            return Err(Error::Truncation { level: n, max_valid: self.max_valid_level() });
        }
        Ok(())
    }

    pub fn check_point(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "parameter point has {} coordinates, model expects {}",
                r.len(),
                self.param_dim()
            )));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite parameter point {r:?}")));
        }
        if self.spec.kind == ModelKind::GeneralizedOscillator && r[0] * r[2] - r[1] * r[1] <= 0.0 {
            return Err(Error::IndefiniteForm(r.to_vec()));
        }
        if self.spec.kind == ModelKind::GeneralizedOscillator && r[0] <= 0.0 {
            return Err(Error::IndefiniteForm(r.to_vec()));
        }
        Ok(())
    }

    /// Checks every sample of a path against the model.
    pub fn check_path(&self, path: &ParameterPath) -> Result<()> {
        path.points().iter().try_for_each(|r| self.check_point(r))
    }

    pub fn hamiltonian_at(&self, r: &[f64]) -> Result<HermitianOperator> {
        self.check_point(r)?;
        let d = self.dim();
        let mut h = self.offset.clone().unwrap_or_else(|| ComplexMatrix::zeros(d, d));
        for (c, g) in r.iter().zip(&self.pieces) {
            h += g * C64::new(*c, 0.0);
        }
        HermitianOperator::new(h)
    }

    /// H(R) psi without forming the dense matrix.
    pub fn apply_hamiltonian(&self, r: &[f64], psi: &StateVector) -> StateVector {
        let mut out = StateVector::zeros(psi.len());
        if let Some(h0) = &self.sparse_offset {
            h0.add_apply(1.0, psi, &mut out);
        }
        for (c, g) in r.iter().zip(&self.sparse_pieces) {
            g.add_apply(*c, psi, &mut out);
        }
        out
    }

    /// Gershgorin bound on the spectral radius of H(R).
    pub fn norm_bound(&self, r: &[f64]) -> f64 {
        let mut sums = self
            .sparse_offset
            .as_ref()
            .map(|s| s.abs_row_sums())
            .unwrap_or_else(|| vec![0.0; self.dim()]);
        for (c, g) in r.iter().zip(&self.sparse_pieces) {
            for (acc, x) in sums.iter_mut().zip(g.abs_row_sums()) {
                *acc += c.abs() * x;
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Central-difference dH/dR_i, re-symmetrized.
    pub fn grad_hamiltonian(&self, r: &[f64], h_rel: f64) -> Result<Vec<HermitianOperator>> {
        if !(h_rel > 0.0 && h_rel.is_finite()) {
            return Err(Error::StepUnderflow(format!("relative step must be positive, got {h_rel}")));
        }
        self.check_point(r)?;
        (0..r.len())
            .map(|i| {
                let h = (h_rel * r[i].abs()).max(1e-8);
                let mut plus = r.to_vec();
                let mut minus = r.to_vec();
                plus[i] += h;
                minus[i] -= h;
                if plus[i] == minus[i] {
                    return Err(Error::StepUnderflow(format!("step {h:e} lost at R_{i}={}", r[i])));
                }
                let hp = self.hamiltonian_at(&plus)?;
                let hm = self.hamiltonian_at(&minus)?;
                let g = (hp.matrix() - hm.matrix()) * C64::new(1.0 / (plus[i] - minus[i]), 0.0);
                HermitianOperator::new(symmetrize(&g))
            })
            .collect()
    }

    /// Exact dH/dR_i for the catalogue models (all linear in R).
    pub fn analytic_gradient(&self, i: usize) -> &ComplexMatrix {
        &self.pieces[i]
    }

    /// Fock-basis position operator for oscillator kinds.
    pub fn position_operator(&self) -> Option<&ComplexMatrix> {
        self.q.as_ref()
    }

    pub fn momentum_operator(&self) -> Option<&ComplexMatrix> {
        self.p.as_ref()
    }

    pub fn classical(&self) -> Result<ClassicalModel> {
        match self.spec.kind {
            ModelKind::SpinJ => Err(Error::Unsupported("spin_j has no classical phase-space form".into())),
            ModelKind::GeneralizedOscillator => Ok(ClassicalModel::GeneralizedOscillator),
            ModelKind::DisplacedOscillator => Ok(ClassicalModel::Displaced { omega: self.spec.omega.unwrap() }),
        }
    }
}
