//! Small dense complex linear algebra layer.
//!
//! Hermitian diagonalization splits the matrix into its coupled blocks
//! first. Blocks that are tridiagonal in their natural index order (every
//! catalogue model is, block by block) are rephased to a real symmetric
//! tridiagonal matrix and solved with implicit QL; anything else goes to
//! nalgebra's dense Hermitian solver.

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;

pub type StateVector = DVector<C64>;
pub type ComplexMatrix = DMatrix<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// `<a|b>`, conjugate-linear in `a`.
pub fn inner(a: &StateVector, b: &StateVector) -> C64 {
    a.dotc(b)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Smallest signed distance between two angles, in (-pi, pi].
pub fn phase_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b)
}

/// Max-norm of `m - m^dagger`.
pub fn hermiticity_defect(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(m + m^dagger)/2`.
pub fn symmetrize(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigenvalues ascending with orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<StateVector>,
}

pub fn hermitian_eigen(m: &ComplexMatrix) -> HermitianEigen {
    let n = m.nrows();
    let blocks = coupled_blocks(m);
    let mut pairs: Vec<(f64, StateVector)> = Vec::with_capacity(n);
    for block in &blocks {
        let local = extract_block(m, block);
        let (vals, vecs) = if is_tridiagonal(&local) {
            tridiagonal_eigen(&local)
        } else {
            dense_eigen(&local)
        };
        for (val, v) in vals.into_iter().zip(vecs) {
            let mut full = StateVector::zeros(n);
            for (a, &idx) in block.iter().enumerate() {
                full[idx] = v[a];
            }
            pairs.push((val, full));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (values, vectors) = pairs.into_iter().unzip();
    HermitianEigen { values, vectors }
}

/// Connected components of the nonzero pattern, each sorted ascending.
fn coupled_blocks(m: &ComplexMatrix) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)] != C64::new(0.0, 0.0) || m[(j, i)] != C64::new(0.0, 0.0) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

fn extract_block(m: &ComplexMatrix, idx: &[usize]) -> ComplexMatrix {
    ComplexMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

fn is_tridiagonal(m: &ComplexMatrix) -> bool {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            if i.abs_diff(j) > 1 && m[(i, j)] != C64::new(0.0, 0.0) {
                return false;
            }
        }
    }
    true
}

fn dense_eigen(m: &ComplexMatrix) -> (Vec<f64>, Vec<StateVector>) {
    let eig = symmetrize(m).symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let vecs = (0..vals.len()).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
    (vals, vecs)
}

/// Hermitian tridiagonal: conjugate by a diagonal unitary into a real
/// symmetric tridiagonal matrix, diagonalize, then undo the phases.
fn tridiagonal_eigen(m: &ComplexMatrix) -> (Vec<f64>, Vec<StateVector>) {
    let n = m.nrows();
    let mut diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    let mut off = vec![0.0; n];
    let mut phase = vec![C64::new(1.0, 0.0); n];
    for k in 0..n.saturating_sub(1) {
        let upper = 0.5 * (m[(k, k + 1)] + m[(k + 1, k)].conj());
        let mag = upper.norm();
        off[k] = mag;
        phase[k + 1] = if mag > 0.0 { phase[k] * (upper / mag).conj() } else { phase[k] };
    }
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    tql2(&mut diag, &mut off, &mut z, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
    let vals = order.iter().map(|&k| diag[k]).collect();
    let vecs = order
        .iter()
        .map(|&k| StateVector::from_fn(n, |i, _| phase[i] * z[i * n + k]))
        .collect();
    (vals, vecs)
}

/// Implicit QL with Wilkinson-style shifts on a symmetric tridiagonal
/// matrix. `d` is the diagonal, `e[i]` couples rows `i` and `i+1`
/// (`e[n-1]` ignored). `z` (row-major, n x n) accumulates eigenvectors as
/// columns.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize) {
    if n == 0 {
        return;
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                assert!(iter < 200, "tridiagonal QL failed to converge");
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let row = k * n;
                        h = z[row + i + 1];
                        z[row + i + 1] = s * z[row + i] + c * h;
                        z[row + i] = c * z[row + i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

/// Least-squares line through (x, y); returns (slope, intercept, rms residual).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

/// Harmonic-oscillator eigenfunctions psi_0..psi_nmax at q (unit mass and
/// frequency), by the stable three-term recursion.
pub fn oscillator_wavefunctions(nmax: usize, q: f64, hbar: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(nmax + 1);
    let x = q / hbar.sqrt();
    out.push((std::f64::consts::PI * hbar).powf(-0.25) * (-0.5 * x * x).exp());
    if nmax >= 1 {
        out.push(std::f64::consts::SQRT_2 * x * out[0]);
    }
    for n in 1..nmax {
        let next = (2.0 / (n + 1) as f64).sqrt() * x * out[n] - (n as f64 / (n + 1) as f64).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// Continuous lift of a sequence of wrapped angles.
pub fn unwrap_phases(wrapped: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(wrapped.len());
    let mut acc = 0.0;
    let mut prev: Option<f64> = None;
    for &w in wrapped {
        match prev {
            None => acc = w,
            Some(p) => acc += wrap_phase(w - p),
        }
        out.push(acc);
        prev = Some(w);
    }
    out
}
