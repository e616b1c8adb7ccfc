//! Householder QR with column pivoting.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Columns whose pivot magnitude falls below this fraction of the largest are treated as dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// `A P = Q R` for a tall matrix `A`, kept in factored form so it can be reused
/// for any number of right-hand sides.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    // Upper triangle holds R; Householder vectors are kept separately.
    r: DMatrix<f64>,
    reflectors: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

impl PivotedQr {
    /// Factors `a` (`n × p`, `n ≥ p`), failing if it is numerically rank deficient.
    pub fn factor(mut a: DMatrix<f64>) -> Result<Self> {
        let (n, p) = a.shape();
        if n < p {
            return Err(Error::Unidentifiable { rows: n, columns: p });
        }
        let mut perm: Vec<usize> = (0..p).collect();
        let mut reflectors = Vec::with_capacity(p);
        let mut lead = 0.0f64;

        for k in 0..p {
            // Pick the remaining column with the largest trailing norm; ties keep the lowest index.
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..p {
                let nrm = a.view((k, j), (n - k, 1)).norm_squared();
                if nrm > best_norm {
                    best = j;
                    best_norm = nrm;
                }
            }
            let best_norm = best_norm.sqrt();
            if k == 0 {
                lead = best_norm;
            }
            if best_norm == 0.0 || best_norm < RANK_TOLERANCE * lead {
                let mut cols = perm[k..].to_vec();
                cols.sort_unstable();
                return Err(Error::Singular { columns: cols });
            }
            if best != k {
                a.swap_columns(k, best);
                perm.swap(k, best);
            }

            let mut v: Vec<f64> = a.view((k, k), (n - k, 1)).iter().copied().collect();
            let alpha = if v[0] >= 0.0 { -best_norm } else { best_norm };
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                for j in k..p {
                    apply_reflector(&v, vnorm2, &mut a, k, j);
                }
            }
            a[(k, k)] = alpha;
            for i in k + 1..n {
                a[(i, k)] = 0.0;
            }
            reflectors.push(if vnorm2 > 0.0 { v } else { Vec::new() });
        }

        Ok(PivotedQr {
            r: a.rows(0, p).into_owned(),
            reflectors,
            perm,
        })
    }

    pub fn ncols(&self) -> usize {
        self.perm.len()
    }

    /// Least-squares solution `argmin ‖A x - b‖` for every column of `b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.ncols();
        let mut qtb = b.clone();
        for (k, v) in self.reflectors.iter().enumerate() {
            if v.is_empty() {
                continue;
            }
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            for j in 0..qtb.ncols() {
                apply_reflector(v, vnorm2, &mut qtb, k, j);
            }
        }
        let mut x = DMatrix::zeros(p, b.ncols());
        for t in 0..b.ncols() {
            let mut y = vec![0.0; p];
            for i in (0..p).rev() {
                let acc = qtb[(i, t)] - (i + 1..p).map(|j| self.r[(i, j)] * y[j]).sum::<f64>();
                y[i] = acc / self.r[(i, i)];
            }
            for (i, &col) in self.perm.iter().enumerate() {
                x[(col, t)] = y[i];
            }
        }
        x
    }
}

/// Applies `I - 2 v vᵀ / (vᵀv)` to rows `k..` of column `j`.
fn apply_reflector(v: &[f64], vnorm2: f64, m: &mut DMatrix<f64>, k: usize, j: usize) {
    let mut col = m.view_mut((k, j), (v.len(), 1));
    let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
    let scale = 2.0 * dot / vnorm2;
    for (c, vi) in col.iter_mut().zip(v) {
        *c -= scale * vi;
    }
}
