//! Compressed-row matrices, a banded LU factorization with partial pivoting,
//! and inverse power iteration for the principal eigenpair.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets; duplicates are summed and
    /// columns are sorted within each row.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidParameter(format!(
                    "entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            counts[r + 1] += 1;
        }
        for r in 0..n_rows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut raw = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            raw[next[r]] = (c, v);
            next[r] += 1;
        }

        let mut offsets = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        offsets.push(0);
        for r in 0..n_rows {
            let row = &mut raw[counts[r]..counts[r + 1]];
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                cols.push(c);
                values.push(v);
            }
            offsets.push(cols.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            offsets,
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.cols[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|r| self.get(r, r))
            .collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *out = cols.iter().zip(vals).map(|(&c, v)| v * x[c]).sum();
        }
    }

    pub fn transpose(&self) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                trip.push((c, r, v));
            }
        }
        Self::from_triplets(self.n_cols, self.n_rows, &trip).expect("transpose of a valid matrix")
    }

    /// `self + s * I`.
    pub fn shifted(&self, s: f64) -> Self {
        let mut trip = Vec::with_capacity(self.nnz() + self.n_rows);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                trip.push((r, c, v));
            }
            trip.push((r, r, s));
        }
        Self::from_triplets(self.n_rows, self.n_cols, &trip).expect("shift of a valid matrix")
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for r in 0..self.n_rows {
            let (cols, _) = self.row(r);
            if let (Some(&first), Some(&last)) = (cols.first(), cols.last()) {
                kl = kl.max(r.saturating_sub(first));
                ku = ku.max(last.saturating_sub(r));
            }
        }
        (kl, ku)
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Banded LU factors in LAPACK `gbtrf` layout: column-major band storage
/// with `2 kl + ku + 1` rows and one row interchange per column.
#[derive(Clone, Debug)]
pub struct LuFactor {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

/// A diagonal pivot is kept as long as it is at least this fraction of the
/// largest candidate in its column.
const PIVOT_THRESHOLD: f64 = 0.1;

impl LuFactor {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::InvalidParameter(format!(
                "LU needs a square matrix, got {}x{}",
                a.n_rows(),
                a.n_cols()
            )));
        }
        let n = a.n_rows();
        let (kl, ku) = a.bandwidths();
        let kv = kl + ku;
        let ld = 2 * kl + ku + 1;
        let mut band = vec![0.0; ld * n];
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                band[kv + r - c + c * ld] = v;
            }
        }
        let small = (n.max(1) as f64) * f64::EPSILON * a.norm_inf();
        let mut pivots = vec![0; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld;
            let mut best = 0;
            let mut best_abs = 0.0;
            for i in 0..=km {
                let v = band[col + kv + i].abs();
                if v > best_abs {
                    best_abs = v;
                    best = i;
                }
            }
            if band[col + kv].abs() >= PIVOT_THRESHOLD * best_abs {
                best = 0;
            }
            let piv = band[col + kv + best];
            if !(piv.abs() > small) || !piv.is_finite() {
                return Err(Error::SingularMatrix {
                    pivot: j,
                    value: piv,
                });
            }
            pivots[j] = j + best;
            ju = ju.max((j + ku + best).min(n - 1));
            if best != 0 {
                for c in j..=ju {
                    let base = c * ld + kv;
                    band.swap(base + j - c, base + j + best - c);
                }
            }
            let inv = 1.0 / band[col + kv];
            for i in 1..=km {
                band[col + kv + i] *= inv;
            }
            for c in (j + 1)..=ju {
                let base = c * ld + kv;
                let ujc = band[base + j - c];
                if ujc != 0.0 {
                    for i in 1..=km {
                        let l = band[col + kv + i];
                        band[base + j + i - c] -= l * ujc;
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            ld,
            band,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        let (n, kl, ld) = (self.n, self.kl, self.ld);
        let kv = self.kl + self.ku;
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                x.swap(j, p);
            }
            let xj = x[j];
            if xj != 0.0 {
                let km = kl.min(n - 1 - j);
                let col = j * ld + kv;
                for i in 1..=km {
                    x[j + i] -= self.band[col + i] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let base = j * ld + kv;
            x[j] /= self.band[base];
            let xj = x[j];
            if xj != 0.0 {
                let top = j.saturating_sub(kv);
                for i in top..j {
                    x[i] -= self.band[base + i - j] * xj;
                }
            }
        }
        Ok(())
    }
}

/// Factor and solve in one call.
pub fn lu_solve(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != a.n_rows() {
        return Err(Error::LengthMismatch {
            expected: a.n_rows(),
            found: rhs.len(),
        });
    }
    LuFactor::new(a)?.solve(rhs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenOptions {
    pub shift: f64,
    /// Negative shift tried when the first factorization is singular.
    pub fallback_shift: f64,
    /// Relative eigen-residual target `|Av - lambda v|_inf / |v|_inf`,
    /// raised to `eps * |A|_inf` when that is larger.
    pub tol: f64,
    pub max_iters: usize,
    /// Weight `w` in the normalization `w * sum(v) = 1`.
    pub weight: f64,
    /// Negative entries down to `-sign_tol * max(v)` are set to zero.
    pub sign_tol: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            shift: 0.0,
            fallback_shift: -1e-3,
            tol: 1e-10,
            max_iters: 500,
            weight: 1.0,
            sign_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    /// `eps * |A|_inf`, the smallest residual a rounded vector can reach.
    pub roundoff_floor: f64,
    pub iterations: usize,
}

/// Relative residual `|Av - lambda v|_inf / |v|_inf`. Row sums are
/// accumulated in compensated arithmetic, so the value is the residual of
/// the stored vector rather than of its evaluation.
pub fn eigen_residual(a: &CsrMatrix, lambda: f64, v: &[f64]) -> f64 {
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if vmax == 0.0 {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for (r, &vr) in v.iter().enumerate() {
        let (cols, vals) = a.row(r);
        let mut acc = CompensatedSum::default();
        acc.add_product(-lambda, vr);
        for (&c, &val) in cols.iter().zip(vals) {
            acc.add_product(val, v[c]);
        }
        worst = worst.max(acc.value().abs());
    }
    worst / vmax
}

#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    err: f64,
}

impl CompensatedSum {
    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let s = self.sum + p;
        let z = s - self.sum;
        let s_err = (self.sum - (s - z)) + (p - z);
        self.sum = s;
        self.err += s_err + p_err;
    }

    fn value(&self) -> f64 {
        self.sum + self.err
    }
}

/// Eigenvalue of smallest real part (assumed real and simple with a
/// sign-definite eigenvector) by shifted inverse iteration.
pub fn principal_eigenpair(a: &CsrMatrix, opts: &EigenOptions) -> Result<EigenPair> {
    let n = a.n_rows();
    let lu = match LuFactor::new(&a.shifted(-opts.shift)) {
        Ok(lu) => lu,
        Err(Error::SingularMatrix { .. }) => {
            log::warn!(
                "factorization at shift {} failed, retrying at {}",
                opts.shift,
                opts.fallback_shift
            );
            LuFactor::new(&a.shifted(-opts.fallback_shift))?
        }
        Err(e) => return Err(e),
    };

    let roundoff_floor = f64::EPSILON * a.norm_inf();
    let target = opts.tol.max(roundoff_floor);
    if target > opts.tol {
        log::debug!(
            "eigen residual target {:e} raised to the roundoff floor {target:e}",
            opts.tol
        );
    }
    let mut v = vec![1.0 / (opts.weight * n as f64); n];
    let mut lambda = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let w = lu.solve(&v)?;
        let sw: f64 = w.iter().sum();
        if sw == 0.0 || !sw.is_finite() {
            return Err(Error::StructureViolation(
                "inverse iterate has zero sum".into(),
            ));
        }
        let scale = 1.0 / (opts.weight * sw);
        v = w.iter().map(|x| x * scale).collect();
        lambda = least_squares_quotient(a, &v);
        residual = eigen_residual(a, lambda, &v);
        if residual <= target {
            let vector = fix_signs(v, opts)?;
            let residual = eigen_residual(a, lambda, &vector);
            return Ok(EigenPair {
                lambda,
                vector,
                residual,
                roundoff_floor,
                iterations: it,
            });
        }
    }
    log::debug!("eigen iteration stalled at lambda={lambda}, residual={residual:e}");
    Err(Error::EigenNoConvergence {
        iterations: opts.max_iters,
        residual,
    })
}

/// `v.Av / v.v`, the `lambda` minimizing `|Av - lambda v|_2`.
fn least_squares_quotient(a: &CsrMatrix, v: &[f64]) -> f64 {
    let av = a.matvec(v);
    let num: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
    let den: f64 = v.iter().map(|x| x * x).sum();
    num / den
}

fn fix_signs(mut v: Vec<f64>, opts: &EigenOptions) -> Result<Vec<f64>> {
    let sum: f64 = v.iter().sum();
    if sum < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let vmax = v.iter().cloned().fold(0.0f64, f64::max);
    let vmin = v.iter().cloned().fold(0.0f64, f64::min);
    if vmin < -opts.sign_tol * vmax {
        return Err(Error::StructureViolation(format!(
            "principal eigenvector changes sign (min {vmin:e}, max {vmax:e})"
        )));
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = v.iter().sum();
    let scale = 1.0 / (opts.weight * s);
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Dirichlet `-d^2/dx^2` on the interior of `cells` uniform cells of (0, 1).
    fn neg_laplacian(cells: usize) -> CsrMatrix {
        let n = cells - 1;
        let h2 = 1.0 / (cells * cells) as f64;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 / h2));
            if i > 0 {
                t.push((i, i - 1, -1.0 / h2));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / h2));
            }
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 2);
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn identity_solve() {
        let rhs = vec![1.0, -2.0, 3.5];
        assert_eq!(lu_solve(&CsrMatrix::identity(3), &rhs).unwrap(), rhs);
    }

    #[test]
    fn two_by_two_hand_solve() {
        let a = CsrMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0)],
        )
        .unwrap();
        let x = lu_solve(&a, &[1.0, 1.0]).unwrap();
        assert!(max_abs_diff(&x, &[1.0, 1.0]) < 1e-15);
    }

    #[test]
    fn poisson_second_order() {
        let err = |cells: usize| {
            let a = neg_laplacian(cells);
            let h = 1.0 / cells as f64;
            let rhs: Vec<f64> = (1..cells)
                .map(|i| PI * PI * (PI * i as f64 * h).sin())
                .collect();
            let exact: Vec<f64> = (1..cells).map(|i| (PI * i as f64 * h).sin()).collect();
            max_abs_diff(&lu_solve(&a, &rhs).unwrap(), &exact)
        };
        let (e1, e2) = (err(40), err(80));
        assert!(e1 < 1e-3);
        assert!((e1 / e2).log2() > 1.9);
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 1, 1.0),
                (1, 0, 2.0),
                (1, 1, 1.0),
                (1, 2, 1.0),
                (2, 1, 3.0),
                (2, 2, 1.0),
            ],
        )
        .unwrap();
        let x = vec![1.0, -1.0, 2.0];
        let b = a.matvec(&x);
        assert!(max_abs_diff(&lu_solve(&a, &b).unwrap(), &x) < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let a =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)])
                .unwrap();
        assert!(matches!(
            lu_solve(&a, &[1.0, 1.0]),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn diagonal_eigenpair() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 3.0)]).unwrap();
        let e = principal_eigenpair(&a, &EigenOptions::default()).unwrap();
        assert!((e.lambda - 1.0).abs() < 1e-12, "{e:?}");
        assert!((e.vector[0] - 1.0).abs() < 1e-10);
        assert!(e.vector[1].abs() < 1e-10 && e.vector[2].abs() < 1e-10);
    }

    #[test]
    fn dirichlet_eigenvalue_converges() {
        let sigma2 = 0.64;
        let cells = 200;
        let h = 1.0 / cells as f64;
        let a = neg_laplacian(cells);
        let scaled = CsrMatrix::from_triplets(
            a.n_rows(),
            a.n_cols(),
            &(0..a.n_rows())
                .flat_map(|r| {
                    let (c, v) = a.row(r);
                    c.iter()
                        .zip(v)
                        .map(move |(&c, &v)| (r, c, 0.5 * sigma2 * v))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let opts = EigenOptions {
            weight: h,
            ..Default::default()
        };
        let e = principal_eigenpair(&scaled, &opts).unwrap();
        // Exact discrete eigenvalue of the three-point stencil.
        let exact = 0.5 * sigma2 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((e.lambda - exact).abs() < 1e-9 * exact);
        assert!(e.vector.iter().all(|&v| v >= 0.0));
        assert!((h * e.vector.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transpose_shares_principal_eigenvalue() {
        let n = 30;
        let h = 1.0 / (n + 1) as f64;
        let mut t = Vec::new();
        for i in 0..n {
            let b = 3.0 * (i as f64 * 0.3).sin();
            t.push((i, i, 2.0 / (h * h) + b.abs() / h));
            if i > 0 {
                t.push((i, i - 1, -1.0 / (h * h) - b.max(0.0) / h));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / (h * h) + b.min(0.0) / h));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let e1 = principal_eigenpair(&a, &EigenOptions::default()).unwrap();
        let e2 = principal_eigenpair(&a.transpose(), &EigenOptions::default()).unwrap();
        assert!((e1.lambda - e2.lambda).abs() < 1e-8 * e1.lambda);
        assert!(max_abs_diff(&e1.vector, &e2.vector) > 1e-6);
    }
}
