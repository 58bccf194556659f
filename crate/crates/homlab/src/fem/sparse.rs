//! Compressed-row sparse matrices and a Jacobi-preconditioned conjugate
//! gradient solver.
//!
//! Assembly goes through [`Triplets`]; duplicates are summed in a fixed
//! (row, col, insertion) order so that repeated builds are bit-identical.

use crate::error::HomlabError;

#[derive(Debug, Clone)]
pub struct Triplets {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i as u32, j as u32, v));
    }

    /// Compress into CSR, summing duplicates in insertion order per (i, j).
    pub fn to_csr(mut self) -> CsrMatrix {
        // stable sort keeps insertion order among equal keys, so the
        // accumulation order below is deterministic
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let n = self.n;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_ix = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0usize);
        let mut row = 0u32;
        for &(i, j, v) in &self.entries {
            while row < i {
                row_ptr.push(col_ix.len());
                row += 1;
            }
            if col_ix.len() > row_ptr[row as usize] && *col_ix.last().unwrap() == j as usize {
                *vals.last_mut().unwrap() += v;
            } else {
                col_ix.push(j as usize);
                vals.push(v);
            }
        }
        while (row_ptr.len() as u32) <= n as u32 {
            row_ptr.push(col_ix.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            col_ix,
            vals,
        }
    }
}

/// Square sparse matrix in compressed-row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_ix: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_ix[k]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_ix[k] == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_ix[k] == j {
                return self.vals[k];
            }
        }
        0.0
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = Triplets::new(self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                t.push(self.col_ix[k], i, self.vals[k]);
            }
        }
        t.to_csr()
    }

    /// Largest relative asymmetry |a_ij - a_ji| / max|a|.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let scale = self
            .vals
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_ix[k];
                worst = worst.max((self.vals[k] - t.get(i, j)).abs());
            }
        }
        worst / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of a conjugate gradient run.
#[derive(Debug, Clone)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned CG for symmetric positive definite systems.
///
/// Deterministic for a fixed matrix and right-hand side: the iteration is a
/// fixed sequence of dot products in index order.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    rtol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, CgStats), HomlabError> {
    pcg_from(a, b, None, rtol, max_iters)
}

/// [`pcg`] with an optional warm-start iterate.
pub fn pcg_from(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    rtol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, CgStats), HomlabError> {
    let n = a.n;
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let diag = a.diagonal();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(v) => {
            assert_eq!(v.len(), n);
            v.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = b.to_vec();
    if x0.is_some() {
        let mut ax = vec![0.0; n];
        a.mul_vec(&x, &mut ax);
        for i in 0..n {
            r[i] -= ax[i];
        }
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = Vec::new();

    for it in 0..max_iters {
        let rel = norm(&r) / bnorm;
        history.push(rel);
        if rel <= rtol {
            return Ok((
                x,
                CgStats {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(HomlabError::NoConvergence {
                message: format!("CG breakdown: p^T A p = {pap} at iteration {it} (matrix not SPD?)"),
                residuals: tail(&history),
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = norm(&r) / bnorm;
    history.push(rel);
    if rel <= rtol {
        return Ok((
            x,
            CgStats {
                iterations: max_iters,
                relative_residual: rel,
            },
        ));
    }
    Err(HomlabError::NoConvergence {
        message: format!(
            "CG did not reach rtol {rtol:.2e} in {max_iters} iterations (residual {rel:.2e})"
        ),
        residuals: tail(&history),
    })
}

fn tail(v: &[f64]) -> Vec<f64> {
    let start = v.len().saturating_sub(20);
    v[start..].to_vec()
}
