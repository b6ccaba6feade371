//! Column access to `Psi` for the coordinate-wise updates shared by the
//! sampler and the variational solvers.

use crate::error::Result;
use crate::measurement::{dot, SensingKind, SensingOperator};
use crate::transform::Basis;

/// `Psi` either stored densely by columns, or kept implicit when it is an
/// orthonormal basis (identity sensing), in which case the coordinate
/// updates decouple and are done with one analysis and one synthesis.
#[derive(Clone, Debug)]
pub enum Design {
    Dense {
        m: usize,
        n: usize,
        /// Column-major `m x n`.
        columns: Vec<f64>,
        norms: Vec<f64>,
    },
    Orthonormal {
        basis: Basis,
    },
}

impl Design {
    pub fn new(op: &SensingOperator) -> Result<Self> {
        let basis = op.basis();
        if op.kind() == SensingKind::Identity {
            return Ok(Design::Orthonormal {
                basis: basis.clone(),
            });
        }
        let (m, n) = (op.m(), op.n());
        // row i of Psi is T^T h_i
        let mut columns = vec![0.0; m * n];
        let mut h = vec![0.0; n];
        for i in 0..m {
            match op.kind() {
                SensingKind::DenseGaussian => h.copy_from_slice(&op.matrix()[i * n..(i + 1) * n]),
                _ => {
                    h.iter_mut().for_each(|v| *v = 0.0);
                    h[op.mask()[i]] = 1.0;
                }
            }
            let row = basis.analyze_vec(&h)?;
            for (k, v) in row.into_iter().enumerate() {
                columns[k * m + i] = v;
            }
        }
        let norms = columns.chunks_exact(m).map(|c| dot(c, c)).collect();
        Ok(Design::Dense {
            m,
            n,
            columns,
            norms,
        })
    }

    pub fn m(&self) -> usize {
        match self {
            Design::Dense { m, .. } => *m,
            Design::Orthonormal { basis } => basis.dim(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Design::Dense { n, .. } => *n,
            Design::Orthonormal { basis } => basis.dim(),
        }
    }

    pub fn is_orthonormal(&self) -> bool {
        matches!(self, Design::Orthonormal { .. })
    }

    /// `||Psi_k||^2`.
    pub fn norm_sq(&self, k: usize) -> f64 {
        match self {
            Design::Dense { norms, .. } => norms[k],
            Design::Orthonormal { .. } => 1.0,
        }
    }

    /// Column `k` of a dense design.
    pub fn column(&self, k: usize) -> Option<&[f64]> {
        match self {
            Design::Dense { m, columns, .. } => Some(&columns[k * m..(k + 1) * m]),
            Design::Orthonormal { .. } => None,
        }
    }

    /// `Psi x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Design::Dense { m, columns, .. } => {
                let mut out = vec![0.0; *m];
                for (col, &xk) in columns.chunks_exact(*m).zip(x) {
                    if xk != 0.0 {
                        crate::measurement::axpy(xk, col, &mut out);
                    }
                }
                Ok(out)
            }
            Design::Orthonormal { basis } => basis.synthesize_vec(x),
        }
    }

    /// `Psi^T r`.
    pub fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        match self {
            Design::Dense { m, columns, .. } => {
                Ok(columns.chunks_exact(*m).map(|c| dot(c, r)).collect())
            }
            Design::Orthonormal { basis } => basis.analyze_vec(r),
        }
    }

    /// `sum_k ||Psi_k||^2`.
    pub fn total_norm_sq(&self) -> f64 {
        (0..self.n()).map(|k| self.norm_sq(k)).sum()
    }
}
