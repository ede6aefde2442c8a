//! Symmetric sparse matrices and a direct envelope (skyline) LDL^T
//! factorization with reverse Cuthill-McKee ordering and iterative
//! refinement. Problem sizes in this crate stay below ~20k unknowns,
//! well inside envelope-solver territory.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> CsrMatrix {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows = Vec::with_capacity(triplets.len());
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            debug_assert!(r < n && c < n);
            if rows.last() == Some(&r) && col_idx.last() == Some(&c) {
                *values.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                col_idx.push(c);
                values.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A - A^T| entry, for the symmetry invariant.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// Reverse Cuthill-McKee ordering; returns perm with perm[new] = old.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let degree = |v: usize| a.row_ptr[v + 1] - a.row_ptr[v];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree(v), v));
        let Some(start) = start else { break };
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = (a.row_ptr[v]..a.row_ptr[v + 1])
                .map(|k| a.col_idx[k])
                .filter(|&u| u != v && !visited[u])
                .collect();
            nbrs.sort_by_key(|&u| (degree(u), u));
            nbrs.dedup();
            for u in nbrs {
                if !visited[u] {
                    visited[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Envelope LDL^T factorization of a symmetric positive definite matrix.
pub struct EnvelopeLdlt {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl EnvelopeLdlt {
    pub fn factor(a: &CsrMatrix) -> Result<EnvelopeLdlt> {
        let n = a.n;
        let perm = reverse_cuthill_mckee(a);
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // Envelope profile.
        let mut first: Vec<usize> = (0..n).collect();
        for old_r in 0..n {
            let i = iperm[old_r];
            for k in a.row_ptr[old_r]..a.row_ptr[old_r + 1] {
                let j = iperm[a.col_idx[k]];
                if j < i {
                    first[i] = first[i].min(j);
                } else if i < j {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        let mut lower = vec![0.0f64; start[n]];
        let mut diag = vec![0.0f64; n];
        for old_r in 0..n {
            let i = iperm[old_r];
            for k in a.row_ptr[old_r]..a.row_ptr[old_r + 1] {
                let j = iperm[a.col_idx[k]];
                if j == i {
                    diag[i] = a.values[k];
                } else if j < i {
                    lower[start[i] + (j - first[i])] = a.values[k];
                }
            }
        }
        // In-place factorization: lower holds L (unit diagonal implied),
        // diag holds D.
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut sum = lower[start[i] + (j - fi)];
                for k in lo..j {
                    sum -= lower[start[i] + (k - fi)] * diag[k] * lower[start[j] + (k - fj)];
                }
                lower[start[i] + (j - fi)] = sum / diag[j];
            }
            let mut d = diag[i];
            for k in fi..i {
                let l = lower[start[i] + (k - fi)];
                d -= l * l * diag[k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::PenaltyTooSmall {
                    row: perm[i],
                    pivot: d,
                });
            }
            diag[i] = d;
        }
        Ok(EnvelopeLdlt {
            n,
            perm,
            first,
            start,
            lower,
            diag,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let mut acc = z[i];
            for k in fi..i {
                acc -= self.lower[self.start[i] + (k - fi)] * z[k];
            }
            z[i] = acc;
        }
        for i in 0..n {
            z[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let xi = z[i];
            let fi = self.first[i];
            for k in fi..i {
                z[k] -= self.lower[self.start[i] + (k - fi)] * xi;
            }
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }

    /// Direct solve followed by iterative refinement until the normwise
    /// backward error drops below `tol` (or `max_rounds` is hit).
    pub fn solve_refined(
        &self,
        a: &CsrMatrix,
        b: &[f64],
        tol: f64,
        max_rounds: usize,
    ) -> Result<(Vec<f64>, f64)> {
        let mut x = self.solve(b);
        let mut residual = vec![0.0; self.n];
        let a_max = a.max_abs();
        for _ in 0..=max_rounds {
            a.matvec(&x, &mut residual);
            for i in 0..self.n {
                residual[i] = b[i] - residual[i];
            }
            let r_inf = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let b_inf = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let x_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = (b_inf + a_max * x_inf).max(f64::MIN_POSITIVE);
            let backward = r_inf / scale;
            if backward <= tol {
                return Ok((x, backward));
            }
            let correction = self.solve(&residual);
            for i in 0..self.n {
                x[i] += correction[i];
            }
        }
        // Report the final achieved error.
        a.matvec(&x, &mut residual);
        for i in 0..self.n {
            residual[i] = b[i] - residual[i];
        }
        let r_inf = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b_inf = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let x_inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let backward = r_inf / (b_inf + a_max * x_inf).max(f64::MIN_POSITIVE);
        if backward <= tol {
            Ok((x, backward))
        } else {
            Err(Error::SingularSystem(format!(
                "iterative refinement stalled at backward error {backward:.3e} (tolerance {tol:.1e})"
            )))
        }
    }
}
