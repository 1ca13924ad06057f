//! Symmetric eigensolvers: Householder tridiagonalisation followed by
//! implicit QL for dense matrices, and Lanczos with full reorthogonalisation
//! and locking for large sparse operators.

use super::SpectralError;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eigenpairs sorted by ascending eigenvalue; column `j` of `vectors` pairs
/// with `values[j]`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

const QL_MAX_SWEEPS: usize = 60;

/// Reduces the symmetric `a` (row-major `n × n`) to tridiagonal form.
/// On return `a` holds the orthogonal transform, `d` the diagonal and `e`
/// the sub-diagonal in `e[1..]`.
fn tridiagonalize(a: &mut [f64], n: usize, d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = a[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for v in &d[..i] {
            scale += v.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = a[at(i - 1, j)];
                a[at(i, j)] = 0.0;
                a[at(j, i)] = 0.0;
            }
        } else {
            for v in &mut d[..i] {
                *v /= scale;
                h += *v * *v;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);
            for j in 0..i {
                f = d[j];
                a[at(j, i)] = f;
                g = e[j] + a[at(j, j)] * f;
                for k in j + 1..i {
                    g += a[at(k, j)] * d[k];
                    e[k] += a[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    a[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = a[at(i - 1, j)];
                a[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        a[at(n - 1, i)] = a[at(i, i)];
        a[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = a[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += a[at(k, i + 1)] * a[at(k, j)];
                }
                for k in 0..=i {
                    a[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            a[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = a[at(n - 1, j)];
        a[at(n - 1, j)] = 0.0;
    }
    a[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on a tridiagonal matrix. `z` holds one vector per row
/// (`n × n`, row `i` is the `i`-th basis vector) and is rotated in place so
/// that row `i` ends up as the eigenvector of `d[i]`. `e[1..]` is the
/// sub-diagonal on entry.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], z: &mut [f64], n: usize) -> Result<(), SpectralError> {
    if n == 0 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > QL_MAX_SWEEPS {
                    return Err(SpectralError::NoConvergence(format!(
                        "QL iteration did not converge for eigenvalue {l} of {n} after {QL_MAX_SWEEPS} sweeps"
                    )));
                }
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
                for v in &mut d[l + 2..n] {
                    *v -= h;
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
                    let (lo, hi) = z.split_at_mut((i + 1) * n);
                    let zi = &mut lo[i * n..];
                    let zi1 = &mut hi[..n];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let t = *b;
                        *b = s * *a + c * t;
                        *a = c * *a - s * t;
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
    Ok(())
}

fn sorted_ascending(values: Vec<f64>, rows: &[f64], n: usize, take: usize) -> Eigen {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order.truncate(take);
    let mut vectors = Array2::zeros((n, order.len()));
    for (col, &j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[[i, col]] = rows[j * n + i];
        }
    }
    Eigen {
        values: order.iter().map(|&j| values[j]).collect(),
        vectors,
    }
}

/// The `take` smallest eigenpairs of a dense symmetric matrix.
pub fn symmetric_eigen(matrix: &Array2<f64>, take: usize) -> Result<Eigen, SpectralError> {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "square matrix required");
    let mut a: Vec<f64> = matrix.iter().copied().collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n > 0 {
        tridiagonalize(&mut a, n, &mut d, &mut e);
    }
    // Transpose so each eigenvector is a contiguous row during QL.
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            z[j * n + i] = a[i * n + j];
        }
    }
    tridiagonal_ql(&mut d, &mut e, &mut z, n)?;
    Ok(sorted_ascending(d, &z, n, take.min(n)))
}

/// Eigenpairs of the symmetric tridiagonal matrix with diagonal `alpha` and
/// off-diagonal `beta` (`beta[i]` couples `i` and `i + 1`).
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> Result<Eigen, SpectralError> {
    let n = alpha.len();
    let mut d = alpha.to_vec();
    let mut e = vec![0.0; n];
    e[1..n].copy_from_slice(&beta[..n - 1]);
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    tridiagonal_ql(&mut d, &mut e, &mut z, n)?;
    Ok(sorted_ascending(d, &z, n, n))
}

/// A symmetric linear operator on `R^n`.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthogonalize(v: &mut [f64], locked: &[Vec<f64>], basis: &[Vec<f64>]) {
    // Two full passes keep orthogonality at rounding level; both sets go in
    // each pass, or components along one leak back in via the other.
    for _ in 0..2 {
        for q in locked.iter().chain(basis) {
            let c = dot(v, q);
            for (x, y) in v.iter_mut().zip(q) {
                *x -= c * y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Residual tolerance relative to the operator's spectral bound.
    pub tolerance: f64,
    /// Bound on `‖op‖` used to scale the tolerance.
    pub norm_bound: f64,
    pub seed: u64,
    pub max_restarts: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            norm_bound: 2.0,
            seed: 0x5eed,
            max_restarts: 64,
        }
    }
}

struct Ritz {
    value: f64,
    vector: Vec<f64>,
    residual: f64,
}

/// One Lanczos run of at most `steps` steps in the complement of `locked`,
/// returning Ritz pairs by descending value.
fn lanczos_run(
    op: &dyn SymmetricOperator,
    locked: &[Vec<f64>],
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Ritz>, SpectralError> {
    let n = op.dim();
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, locked, &[]);
    let norm = dot(&v, &v).sqrt();
    if norm < 1e-12 {
        return Ok(Vec::new());
    }
    v.iter_mut().for_each(|x| *x /= norm);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut w = vec![0.0; n];
    for _ in 0..steps {
        op.apply(&v, &mut w);
        let a = dot(&w, &v);
        basis.push(std::mem::take(&mut v));
        alpha.push(a);
        orthogonalize(&mut w, locked, &basis);
        let b = dot(&w, &w).sqrt();
        if b < 1e-10 {
            // Invariant subspace found: the Ritz pairs are exact.
            break;
        }
        beta.push(b);
        v = w.iter().map(|x| x / b).collect();
    }
    let m = alpha.len();
    beta.resize(m, 0.0);
    let small = tridiagonal_eigen(&alpha, &beta)?;
    let mut out = Vec::with_capacity(m);
    let mut image = vec![0.0; n];
    for j in (0..m).rev() {
        let mut y = vec![0.0; n];
        for (i, q) in basis.iter().enumerate() {
            let c = small.vectors[[i, j]];
            for (t, x) in y.iter_mut().zip(q) {
                *t += c * x;
            }
        }
        let len = dot(&y, &y).sqrt();
        y.iter_mut().for_each(|x| *x /= len);
        op.apply(&y, &mut image);
        let theta = small.values[j];
        let residual = image
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - theta * b).powi(2))
            .sum::<f64>()
            .sqrt();
        out.push(Ritz {
            value: theta,
            vector: y,
            residual,
        });
    }
    Ok(out)
}

/// The `k` largest eigenpairs of `op`, by Lanczos with locking: converged
/// Ritz pairs are locked and later runs start orthogonal to them, which also
/// uncovers further copies of repeated eigenvalues. Returned ascending.
pub fn lanczos_largest(
    op: &dyn SymmetricOperator,
    k: usize,
    options: LanczosOptions,
) -> Result<Eigen, SpectralError> {
    let n = op.dim();
    let k = k.min(n);
    let tol = options.tolerance * options.norm_bound;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut locked_values: Vec<f64> = Vec::new();
    let mut steps = (2 * k + 20).min(n);
    let mut restarts = 0;

    loop {
        let free = n - locked.len();
        if free == 0 {
            break;
        }
        restarts += 1;
        if restarts > options.max_restarts {
            return Err(SpectralError::NoConvergence(format!(
                "Lanczos: {} of {k} eigenpairs converged after {} restarts (last run {steps} steps)",
                locked.len(),
                options.max_restarts
            )));
        }
        let ritz = lanczos_run(op, &locked, steps.min(free), &mut rng)?;
        let kth = if locked_values.len() >= k {
            let mut sorted = locked_values.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            Some(sorted[k - 1])
        } else {
            None
        };
        let exhausted = ritz.len() < steps.min(free);
        // Done once the largest converged value left in the complement no
        // longer beats the current k-th value.
        let mut done = ritz.is_empty();
        let mut fresh = 0;
        for r in ritz {
            if r.residual > tol {
                break;
            }
            if kth.is_some_and(|kth| r.value <= kth + tol) {
                done = true;
                break;
            }
            locked.push(r.vector);
            locked_values.push(r.value);
            fresh += 1;
        }
        if done && locked_values.len() >= k {
            break;
        }
        if fresh == 0 && !exhausted {
            steps = (steps * 2).min(n);
        }
        log::trace!(
            "lanczos restart {restarts}: {} locked, {fresh} new, {steps} steps",
            locked.len()
        );
    }

    let mut order: Vec<usize> = (0..locked_values.len()).collect();
    order.sort_by(|&a, &b| locked_values[b].total_cmp(&locked_values[a]));
    order.truncate(k);
    order.reverse();
    let mut vectors = Array2::zeros((n, order.len()));
    for (col, &j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[[i, col]] = locked[j][i];
        }
    }
    Ok(Eigen {
        values: order.iter().map(|&j| locked_values[j]).collect(),
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-1.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    fn check_pairs(a: &Array2<f64>, eig: &Eigen, tol: f64) {
        for (j, &lambda) in eig.values.iter().enumerate() {
            let v = eig.vectors.column(j);
            let r = a.dot(&v) - &v * lambda;
            assert!(r.iter().all(|x| x.abs() < tol), "pair {j} residual");
            assert_abs_diff_eq!(v.dot(&v), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dense_matches_nalgebra() {
        for (n, seed) in [(1, 1), (2, 2), (7, 3), (40, 4)] {
            let a = random_symmetric(n, seed);
            let ours = symmetric_eigen(&a, n).unwrap();
            let reference = nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]]).symmetric_eigen();
            let mut expected: Vec<f64> = reference.eigenvalues.iter().copied().collect();
            expected.sort_by(f64::total_cmp);
            for (x, y) in ours.values.iter().zip(&expected) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-10);
            }
            check_pairs(&a, &ours, 1e-9);
        }
    }

    #[test]
    fn dense_handles_repeated_and_diagonal() {
        let a = Array2::from_diag(&ndarray::array![3.0, 1.0, 3.0, 0.0, 1.0]);
        let eig = symmetric_eigen(&a, 5).unwrap();
        assert_eq!(eig.values, vec![0.0, 1.0, 1.0, 3.0, 3.0]);
        check_pairs(&a, &eig, 1e-12);
        let partial = symmetric_eigen(&a, 2).unwrap();
        assert_eq!(partial.vectors.ncols(), 2);
    }

    struct Dense(Array2<f64>);

    impl SymmetricOperator for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for (i, row) in self.0.rows().into_iter().enumerate() {
                y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
    }

    #[test]
    fn lanczos_finds_largest_including_repeats() {
        // Spectrum with a triple top eigenvalue, rotated by a random orthogonal basis.
        let n = 60;
        let q = symmetric_eigen(&random_symmetric(n, 9), n).unwrap().vectors;
        let diag: Vec<f64> = (0..n)
            .map(|i| if i >= n - 3 { 2.0 } else { i as f64 / n as f64 })
            .collect();
        let a = q.dot(&Array2::from_diag(&ndarray::Array1::from(diag))).dot(&q.t());
        let eig = lanczos_largest(&Dense(a.clone()), 5, LanczosOptions::default()).unwrap();
        let expected = [(n - 5) as f64 / n as f64, (n - 4) as f64 / n as f64, 2.0, 2.0, 2.0];
        for (x, y) in eig.values.iter().zip(expected) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-8);
        }
        check_pairs(&a, &eig, 1e-7);
    }
}
