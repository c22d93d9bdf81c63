//! Entropically regularized optimal transport over the polytope `U(r, c)`
//! by Sinkhorn-Knopp matrix scaling.
//!
//! The solved problem is `min_{Q in U(r,c)} <Q, -log P> + KL(Q || r c^T) / lambda`,
//! whose optimum has the scaling form `Q = diag(u) exp(lambda log P) diag(v)`.
//! Two numerical modes are offered: linear-domain scaling with per-column
//! kernel stabilization (fast; the stabilization is absorbed by the column
//! scaling and does not change the fixed point), and log-domain scaling via
//! log-sum-exp, immune to kernel underflow at large `lambda`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{logsumexp_unchecked, LogPosterior, Matrix};
use crate::marginals::MarginalVector;
use crate::metrics::Labeling;

/// Solver knobs. `tol` bounds the L1 violation of either marginal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            lambda: 20.0,
            max_iters: 1000,
            tol: 1e-3,
            log_domain: true,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Joint-probability plan on the transportation polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    q: Matrix,
}

impl TransportPlan {
    pub fn new(q: Matrix) -> Result<Self> {
        if !q.data().iter().all(|v| *v >= 0.0) {
            return Err(Error::invalid("transport plan entries must be non-negative"));
        }
        let mass: f64 = q.data().iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("transport plan mass {mass} is not 1")));
        }
        Ok(TransportPlan { q })
    }

    pub fn k(&self) -> usize {
        self.q.rows()
    }

    pub fn n(&self) -> usize {
        self.q.cols()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.k()).map(|y| self.q.row(y).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n()];
        for y in 0..self.k() {
            for (s, &v) in sums.iter_mut().zip(self.q.row(y)) {
                *s += v;
            }
        }
        sums
    }
}

/// Scaling vectors are reported in log space regardless of solver mode, so
/// `Q = exp(lambda log_p + log_row_scaling + log_col_scaling)` entrywise.
#[derive(Debug, Clone, Serialize)]
pub struct SinkhornDiagnostics {
    pub iterations_used: usize,
    pub final_marginal_violation: f64,
    pub converged: bool,
    pub objective: f64,
    #[serde(skip)]
    pub log_row_scaling: Vec<f64>,
    #[serde(skip)]
    pub log_col_scaling: Vec<f64>,
}

fn validate_solve_inputs(
    log_p: &LogPosterior,
    r: &MarginalVector,
    c: &MarginalVector,
    cfg: &SinkhornConfig,
) -> Result<()> {
    cfg.validate()?;
    if r.k() != log_p.k() {
        return Err(Error::shape(format!(
            "row marginal has {} entries, expected k={}",
            r.k(),
            log_p.k()
        )));
    }
    if c.k() != log_p.n() {
        return Err(Error::shape(format!(
            "column marginal has {} entries, expected n={}",
            c.k(),
            log_p.n()
        )));
    }
    for (name, m) in [("row", r), ("column", c)] {
        let total: f64 = m.values().iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMarginal(format!("{name} marginal sums to {total}")));
        }
        if !m.values().iter().all(|v| *v > 0.0) {
            return Err(Error::InvalidMarginal(format!(
                "{name} marginal has a non-positive entry"
            )));
        }
    }
    Ok(())
}

/// Solve for the plan `Q = diag(u) exp(lambda log_p) diag(v)` whose marginals
/// match `(r, c)` within `cfg.tol` (L1). After convergence columns are
/// renormalized to `c` exactly, with the correction folded into the column
/// scaling, so hard assignment sees exact per-item distributions.
pub fn sinkhorn_solve(
    log_p: &LogPosterior,
    r: &MarginalVector,
    c: &MarginalVector,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, SinkhornDiagnostics)> {
    validate_solve_inputs(log_p, r, c, cfg)?;
    if cfg.log_domain {
        solve_log_domain(log_p, r, c, cfg)
    } else {
        solve_linear_domain(log_p, r, c, cfg)
    }
}

fn solve_linear_domain(
    log_p: &LogPosterior,
    r: &MarginalVector,
    c: &MarginalVector,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, SinkhornDiagnostics)> {
    let (k, n) = (log_p.k(), log_p.n());
    let lam = cfg.lambda;

    // Column-stabilized kernel: subtracting the per-column max of log_p is a
    // diagonal rescaling and is absorbed by the column scaling vector.
    let mut col_max = vec![f64::NEG_INFINITY; n];
    for y in 0..k {
        for (m, &v) in col_max.iter_mut().zip(log_p.values().row(y)) {
            *m = m.max(v);
        }
    }
    let mut kernel = Matrix::zeros(k, n);
    for y in 0..k {
        let src = log_p.values().row(y);
        let dst = kernel.row_mut(y);
        for i in 0..n {
            dst[i] = (lam * (src[i] - col_max[i])).exp();
        }
    }

    let underflow = |axis: &str, idx: usize| {
        Error::NumericalUnderflow(format!(
            "kernel {axis} {idx} scaled to zero in linear mode; retry with log_domain"
        ))
    };

    let mut u = vec![1.0f64; k];
    let mut v = vec![1.0f64; n];
    // mv[y] = (K v)_y, refreshed at the end of each iteration for both the
    // violation check and the next row update.
    let mut mv = vec![0.0f64; k];
    for y in 0..k {
        mv[y] = kernel.row(y).iter().sum();
    }
    let mut mtu = vec![0.0f64; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        for y in 0..k {
            if !(mv[y] > 0.0) || !mv[y].is_finite() {
                return Err(underflow("row", y));
            }
            u[y] = r.values()[y] / mv[y];
        }
        mtu.iter_mut().for_each(|x| *x = 0.0);
        for y in 0..k {
            let row = kernel.row(y);
            let uy = u[y];
            for (acc, &m) in mtu.iter_mut().zip(row) {
                *acc += m * uy;
            }
        }
        for i in 0..n {
            if !(mtu[i] > 0.0) || !mtu[i].is_finite() {
                return Err(underflow("column", i));
            }
            v[i] = c.values()[i] / mtu[i];
        }
        let mut row_violation = 0.0;
        for y in 0..k {
            let row = kernel.row(y);
            let mut acc = 0.0;
            for (&m, &vi) in row.iter().zip(&v) {
                acc += m * vi;
            }
            mv[y] = acc;
            row_violation += (u[y] * acc - r.values()[y]).abs();
        }
        // columns match c exactly by construction after the v update
        if row_violation <= cfg.tol {
            converged = true;
            break;
        }
    }

    let mut q = Matrix::zeros(k, n);
    for y in 0..k {
        let src = kernel.row(y);
        let uy = u[y];
        let dst = q.row_mut(y);
        for i in 0..n {
            dst[i] = uy * src[i] * v[i];
        }
    }
    let mut log_u: Vec<f64> = u.iter().map(|x| x.ln()).collect();
    let mut log_v: Vec<f64> = v
        .iter()
        .zip(&col_max)
        .map(|(x, m)| x.ln() - lam * m)
        .collect();
    finalize(log_p, r, c, cfg, q, &mut log_u, &mut log_v, iterations, converged)
}

fn solve_log_domain(
    log_p: &LogPosterior,
    r: &MarginalVector,
    c: &MarginalVector,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, SinkhornDiagnostics)> {
    let (k, n) = (log_p.k(), log_p.n());
    let lam = cfg.lambda;

    let mut lam_logp = Matrix::zeros(k, n);
    for y in 0..k {
        let src = log_p.values().row(y);
        let dst = lam_logp.row_mut(y);
        for i in 0..n {
            dst[i] = lam * src[i];
        }
    }
    let log_r: Vec<f64> = r.values().iter().map(|x| x.ln()).collect();
    let log_c: Vec<f64> = c.values().iter().map(|x| x.ln()).collect();

    let mut log_u = vec![0.0f64; k];
    let mut log_v = vec![0.0f64; n];
    // row_lse[y] = logsumexp_i(lam_logp[y][i] + log_v[i])
    let mut row_lse = vec![0.0f64; k];
    let mut row_buf = vec![0.0f64; n];
    let mut col_buf = vec![0.0f64; k];
    for y in 0..k {
        row_lse[y] = logsumexp_unchecked(lam_logp.row(y));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        for y in 0..k {
            log_u[y] = log_r[y] - row_lse[y];
        }
        for i in 0..n {
            for y in 0..k {
                col_buf[y] = lam_logp.get(y, i) + log_u[y];
            }
            log_v[i] = log_c[i] - logsumexp_unchecked(&col_buf);
        }
        let mut row_violation = 0.0;
        for y in 0..k {
            let row = lam_logp.row(y);
            for i in 0..n {
                row_buf[i] = row[i] + log_v[i];
            }
            row_lse[y] = logsumexp_unchecked(&row_buf);
            row_violation += ((log_u[y] + row_lse[y]).exp() - r.values()[y]).abs();
        }
        if row_violation <= cfg.tol {
            converged = true;
            break;
        }
    }

    let mut q = Matrix::zeros(k, n);
    for y in 0..k {
        let src = lam_logp.row(y);
        let lu = log_u[y];
        let dst = q.row_mut(y);
        for i in 0..n {
            dst[i] = (src[i] + lu + log_v[i]).exp();
        }
    }
    finalize(log_p, r, c, cfg, q, &mut log_u, &mut log_v, iterations, converged)
}

/// Exact column renormalization (folded into the column scaling), final
/// violation measurement and diagnostics.
#[allow(clippy::too_many_arguments)]
fn finalize(
    log_p: &LogPosterior,
    r: &MarginalVector,
    c: &MarginalVector,
    cfg: &SinkhornConfig,
    mut q: Matrix,
    log_u: &mut [f64],
    log_v: &mut [f64],
    iterations: usize,
    converged_in_loop: bool,
) -> Result<(TransportPlan, SinkhornDiagnostics)> {
    let (k, n) = (q.rows(), q.cols());
    let mut col_sums = vec![0.0f64; n];
    for y in 0..k {
        for (s, &v) in col_sums.iter_mut().zip(q.row(y)) {
            *s += v;
        }
    }
    let mut scale = vec![1.0f64; n];
    for i in 0..n {
        if col_sums[i] > 0.0 {
            scale[i] = c.values()[i] / col_sums[i];
            log_v[i] += scale[i].ln();
        }
    }
    for y in 0..k {
        for (v, s) in q.row_mut(y).iter_mut().zip(&scale) {
            *v *= s;
        }
    }

    let mut row_violation = 0.0;
    for y in 0..k {
        let sum: f64 = q.row(y).iter().sum();
        row_violation += (sum - r.values()[y]).abs();
    }
    let mut col_violation = 0.0;
    let mut col_check = vec![0.0f64; n];
    for y in 0..k {
        for (s, &v) in col_check.iter_mut().zip(q.row(y)) {
            *s += v;
        }
    }
    for (s, &ci) in col_check.iter().zip(c.values()) {
        col_violation += (s - ci).abs();
    }
    let violation = row_violation.max(col_violation);

    let plan = TransportPlan::new(q)?;
    let objective = transport_objective(&plan, log_p, r, c, cfg.lambda)?;
    let diagnostics = SinkhornDiagnostics {
        iterations_used: iterations,
        final_marginal_violation: violation,
        converged: converged_in_loop && violation <= cfg.tol,
        objective,
        log_row_scaling: log_u.to_vec(),
        log_col_scaling: log_v.to_vec(),
    };
    Ok((plan, diagnostics))
}

/// Per-item argmax assignment; ties break to the lowest cluster index.
pub fn hard_assign(q: &TransportPlan) -> Labeling {
    let (k, n) = (q.k(), q.n());
    let mut labels = vec![0usize; n];
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best_y = 0;
        let mut best = q.q().get(0, i);
        for y in 1..k {
            let v = q.q().get(y, i);
            if v > best {
                best = v;
                best_y = y;
            }
        }
        *label = best_y;
    }
    Labeling::new(labels, k).expect("plan dimensions give a valid labeling")
}

/// The scalar energy `<Q, -log P> + KL(Q || r c^T) / lambda` with the
/// `0 log 0 = 0` convention.
pub fn transport_objective(
    q: &TransportPlan,
    log_p: &LogPosterior,
    r: &MarginalVector,
    c: &MarginalVector,
    lambda: f64,
) -> Result<f64> {
    if q.k() != log_p.k() || q.n() != log_p.n() {
        return Err(Error::shape(format!(
            "plan is {}x{}, log posterior is {}x{}",
            q.k(),
            q.n(),
            log_p.k(),
            log_p.n()
        )));
    }
    if r.k() != q.k() || c.k() != q.n() {
        return Err(Error::shape("marginals do not match plan shape".to_string()));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let mut linear = 0.0;
    let mut kl = 0.0;
    for y in 0..q.k() {
        let qrow = q.q().row(y);
        let prow = log_p.values().row(y);
        let ry = r.values()[y];
        for i in 0..q.n() {
            let qv = qrow[i];
            if qv > 0.0 {
                linear += qv * -prow[i];
                kl += qv * (qv / (ry * c.values()[i])).ln();
            }
        }
    }
    Ok(linear + kl / lambda)
}
