//! Complex tridiagonal and cyclic-tridiagonal solves for Crank-Nicolson.

use num_complex::Complex64 as C64;
use thiserror::Error;

/// Relative residual a solve must reach, after at most one refinement pass.
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("zero pivot at row {0}")]
    SingularPivot(usize),
    #[error("relative residual {0:e} above tolerance")]
    Residual(f64),
}

/// `lower[k]` is `(k, k-1)` (entry 0 unused), `upper[k]` is `(k, k+1)`
/// (entry n-1 unused). `wrap = (top_right, bottom_left)` for the cyclic case.
#[derive(Clone, Debug, Default)]
pub struct Tridiagonal {
    pub lower: Vec<C64>,
    pub diag: Vec<C64>,
    pub upper: Vec<C64>,
    pub wrap: Option<(C64, C64)>,
}

#[derive(Clone, Debug, Default)]
pub struct Workspace {
    c: Vec<C64>,
    d: Vec<C64>,
    y: Vec<C64>,
    z: Vec<C64>,
    u: Vec<C64>,
    r: Vec<C64>,
}

impl Workspace {
    fn ensure(&mut self, n: usize) {
        for buf in [&mut self.c, &mut self.d, &mut self.y, &mut self.z, &mut self.u, &mut self.r] {
            if buf.len() != n {
                buf.resize(n, C64::new(0.0, 0.0));
            }
        }
    }
}

impl Tridiagonal {
    pub fn with_size(n: usize) -> Self {
        let zero = C64::new(0.0, 0.0);
        Self { lower: vec![zero; n], diag: vec![zero; n], upper: vec![zero; n], wrap: None }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        let n = self.len();
        for k in 0..n {
            let mut acc = self.diag[k] * x[k];
            if k > 0 {
                acc += self.lower[k] * x[k - 1];
            }
            if k + 1 < n {
                acc += self.upper[k] * x[k + 1];
            }
            out[k] = acc;
        }
        if let Some((top_right, bottom_left)) = self.wrap {
            out[0] += top_right * x[n - 1];
            out[n - 1] += bottom_left * x[0];
        }
    }

    // Thomas elimination with a replaced first/last diagonal entry.
    fn thomas(&self, d0: C64, dn: C64, rhs: &[C64], out: &mut [C64], cp: &mut [C64], dp: &mut [C64]) -> Result<(), LinalgError> {
        let n = self.len();
        let diag = |k: usize| {
            if k == 0 {
                d0
            } else if k == n - 1 {
                dn
            } else {
                self.diag[k]
            }
        };
        let mut m = diag(0);
        if m.norm() == 0.0 {
            return Err(LinalgError::SingularPivot(0));
        }
        cp[0] = self.upper[0] / m;
        dp[0] = rhs[0] / m;
        for k in 1..n {
            m = diag(k) - self.lower[k] * cp[k - 1];
            if m.norm() == 0.0 || !m.is_finite() {
                return Err(LinalgError::SingularPivot(k));
            }
            cp[k] = if k + 1 < n { self.upper[k] / m } else { C64::new(0.0, 0.0) };
            dp[k] = (rhs[k] - self.lower[k] * dp[k - 1]) / m;
        }
        out[n - 1] = dp[n - 1];
        for k in (0..n - 1).rev() {
            out[k] = dp[k] - cp[k] * out[k + 1];
        }
        Ok(())
    }

    fn solve_raw(&self, rhs: &[C64], out: &mut [C64], ws: &mut Workspace) -> Result<(), LinalgError> {
        let n = self.len();
        let Workspace { c, d, z, u, .. } = ws;
        match self.wrap {
            None => self.thomas(self.diag[0], self.diag[n - 1], rhs, out, c, d),
            Some((top_right, bottom_left)) => {
                // Sherman-Morrison: M = T + u v^T with u = (g, 0.., bottom_left),
                // v = (1, 0.., top_right / g).
                let g = -self.diag[0];
                let d0 = self.diag[0] - g;
                let dn = self.diag[n - 1] - bottom_left * top_right / g;
                self.thomas(d0, dn, rhs, out, c, d)?;
                u.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                u[0] = g;
                u[n - 1] = bottom_left;
                self.thomas(d0, dn, u, z, c, d)?;
                let vy = out[0] + top_right / g * out[n - 1];
                let vz = z[0] + top_right / g * z[n - 1];
                let denom = C64::new(1.0, 0.0) + vz;
                if denom.norm() == 0.0 {
                    return Err(LinalgError::SingularPivot(n - 1));
                }
                let factor = vy / denom;
                for k in 0..n {
                    out[k] -= factor * z[k];
                }
                Ok(())
            }
        }
    }

    fn relative_residual(&self, x: &[C64], rhs: &[C64], r: &mut [C64]) -> f64 {
        self.apply_into(x, r);
        let mut num = 0.0;
        let mut den = 0.0;
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
            num += ri.norm_sqr();
            den += bi.norm_sqr();
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Solve `M x = rhs`, verifying the residual. One step of iterative
    /// refinement is attempted before giving up.
    pub fn solve_into(&self, rhs: &[C64], out: &mut [C64], ws: &mut Workspace) -> Result<(), LinalgError> {
        let n = self.len();
        ws.ensure(n);
        self.solve_raw(rhs, out, ws)?;
        let mut r = std::mem::take(&mut ws.r);
        let res = self.relative_residual(out, rhs, &mut r);
        if res < RESIDUAL_TOL {
            ws.r = r;
            return Ok(());
        }
        let mut delta = std::mem::take(&mut ws.y);
        self.solve_raw(&r, &mut delta, ws)?;
        for (o, dlt) in out.iter_mut().zip(&delta) {
            *o += dlt;
        }
        let res = self.relative_residual(out, rhs, &mut r);
        ws.r = r;
        ws.y = delta;
        if res < RESIDUAL_TOL {
            Ok(())
        } else {
            Err(LinalgError::Residual(res))
        }
    }
}
