//! Dense bounded-variable primal simplex.
//!
//! Solves small problems in equality form
//!
//! ```text
//! minimize    c^T x
//! subject to  A x = b
//!             lo <= x <= hi      (hi may be +inf, lo must be finite)
//! ```
//!
//! Bounds are handled implicitly (nonbasic variables sit at either bound), so
//! the tableau has one row per equality constraint only. Phase 1 starts from
//! an all-artificial basis unless the caller supplies a feasible crash basis.
//! After the final pivot the basic values are recomputed from the original
//! data with a fresh factorization, so the reported point does not carry the
//! round-off accumulated over the pivots.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-8;
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(vars: usize, rows: usize) -> Self {
        LinearProgram {
            cost: Vec::with_capacity(vars),
            lower: Vec::with_capacity(vars),
            upper: Vec::with_capacity(vars),
            rows: Vec::with_capacity(rows),
            rhs: Vec::with_capacity(rows),
        }
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    /// Adds `sum(coef * x[var]) = rhs`. Repeated variables are summed.
    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        self.rows.push(terms.to_vec());
        self.rhs.push(rhs);
        self.rows.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.validate()?;
        let mut tab = Tableau::new(self);
        tab.run_phase1()?;
        tab.run_phase2()?;
        Ok(tab.extract(self))
    }

    /// Like [`solve`](Self::solve), but first tries `basis` (one column per
    /// row) as the starting basis with every other variable at its lower
    /// bound. If that point is not primal feasible the solve falls back to an
    /// artificial start.
    pub fn solve_with_basis(&self, basis: &[usize]) -> Result<LpSolution, LpError> {
        self.validate()?;
        if basis.len() == self.n_rows() && basis.iter().all(|&j| j < self.n_vars()) {
            let mut tab = Tableau::new(self);
            if tab.crash(basis) {
                tab.run_phase2()?;
                return Ok(tab.extract(self));
            }
        }
        self.solve()
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if !lo.is_finite() || hi.is_nan() || hi < lo || !self.cost[j].is_finite() {
                return Err(LpError::InvalidModel(format!(
                    "variable {j}: bounds [{lo}, {hi}], cost {}",
                    self.cost[j]
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !self.rhs[i].is_finite() {
                return Err(LpError::InvalidModel(format!("row {i}: non-finite rhs")));
            }
            if let Some(&(j, a)) = row.iter().find(|(j, a)| *j >= n || !a.is_finite()) {
                return Err(LpError::InvalidModel(format!("row {i}: bad term ({j}, {a})")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

/// Working state in shifted coordinates `x' = x - lo`, so every variable has
/// lower bound zero. Columns `n..n+m` are the artificials.
struct Tableau {
    m: usize,
    n: usize,
    width: usize,
    /// Columns touched by pivots: all columns in phase 1, structural only after.
    active: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    ub: Vec<f64>,
    d: Vec<f64>,
    row_sign: Vec<f64>,
    /// Phase-2 costs, zero on the artificials.
    cost: Vec<f64>,
    iterations: usize,
}

impl Tableau {
    fn new(lp: &LinearProgram) -> Self {
        let m = lp.n_rows();
        let n = lp.n_vars();
        let width = n + m;
        let mut t = vec![0.0; m * width];
        let mut beta = vec![0.0; m];
        let mut row_sign = vec![1.0; m];
        for (i, row) in lp.rows.iter().enumerate() {
            let mut b = lp.rhs[i];
            for &(j, a) in row {
                t[i * width + j] += a;
                b -= a * lp.lower[j];
            }
            if b < 0.0 {
                row_sign[i] = -1.0;
                b = -b;
                for v in &mut t[i * width..i * width + n] {
                    *v = -*v;
                }
            }
            t[i * width + n + i] = 1.0;
            beta[i] = b;
        }
        let mut ub: Vec<f64> = (0..n).map(|j| lp.upper[j] - lp.lower[j]).collect();
        ub.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut state = vec![VarState::AtLower; width];
        for s in &mut state[n..] {
            *s = VarState::Basic;
        }
        let mut cost = vec![0.0; width];
        cost[..n].copy_from_slice(&lp.cost);
        Tableau {
            m,
            n,
            width,
            active: width,
            t,
            beta,
            basis: (n..n + m).collect(),
            state,
            ub,
            d: vec![0.0; width],
            row_sign,
            cost,
            iterations: 0,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    /// Gauss-Jordan pivot on (r, j) over the active columns and the
    /// reduced-cost row. Callers update `beta` themselves.
    fn pivot(&mut self, r: usize, j: usize) {
        let w = self.width;
        let act = self.active;
        let piv = self.t[r * w + j];
        let inv = 1.0 / piv;
        for v in &mut self.t[r * w..r * w + act] {
            *v *= inv;
        }
        self.t[r * w + j] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let prow = &prow[..act];
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[j];
            if f != 0.0 {
                for (v, p) in row[..act].iter_mut().zip(prow) {
                    *v -= f * p;
                }
                row[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (v, p) in self.d[..act].iter_mut().zip(prow) {
                *v -= f * p;
            }
            self.d[j] = 0.0;
        }
        let leaving = self.basis[r];
        self.basis[r] = j;
        self.state[j] = VarState::Basic;
        if self.state[leaving] == VarState::Basic {
            self.state[leaving] = VarState::AtLower;
        }
    }

    /// Pivots the crash columns into the basis with every nonbasic at zero.
    /// Returns false if the resulting basis is incomplete or infeasible.
    fn crash(&mut self, cols: &[usize]) -> bool {
        self.active = self.n;
        for &j in cols {
            if self.state[j] == VarState::Basic {
                return false;
            }
            // choose the artificial-held row with the largest entry
            let mut best = None;
            let mut best_abs = PIVOT_TOL;
            for i in 0..self.m {
                if self.basis[i] >= self.n {
                    let a = self.at(i, j).abs();
                    if a > best_abs {
                        best_abs = a;
                        best = Some(i);
                    }
                }
            }
            let Some(r) = best else { return false };
            let piv = self.at(r, j);
            let br = self.beta[r] / piv;
            for i in 0..self.m {
                if i != r {
                    let f = self.at(i, j);
                    if f != 0.0 {
                        self.beta[i] -= f * br;
                    }
                }
            }
            self.beta[r] = br;
            self.pivot(r, j);
        }
        for i in 0..self.m {
            let k = self.basis[i];
            if k >= self.n {
                return false;
            }
            let v = self.beta[i];
            if v < -PIVOT_TOL || v > self.ub[k] + PIVOT_TOL {
                return false;
            }
            self.beta[i] = v.clamp(0.0, self.ub[k]);
        }
        for a in self.n..self.width {
            self.ub[a] = 0.0;
            self.state[a] = VarState::AtLower;
        }
        true
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let act = self.active;
        self.d[..act].copy_from_slice(&cost[..act]);
        for v in &mut self.d[act..] {
            *v = 0.0;
        }
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.width..i * self.width + act];
                for (dv, a) in self.d[..act].iter_mut().zip(row) {
                    *dv -= cb * a;
                }
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = 0.0;
        }
    }

    fn run_phase1(&mut self) -> Result<(), LpError> {
        if self.basis.iter().all(|&k| k < self.n) {
            return Ok(());
        }
        let mut cost = vec![0.0; self.width];
        for c in &mut cost[self.n..] {
            *c = 1.0;
        }
        self.active = self.width;
        self.set_costs(&cost);
        self.iterate()?;
        let infeas: f64 = (0..self.m)
            .filter(|&i| self.basis[i] >= self.n)
            .map(|i| self.beta[i])
            .sum();
        let scale = 1.0 + self.beta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if infeas > PHASE1_TOL * scale {
            return Err(LpError::Infeasible);
        }
        // Artificials are pinned at zero from here on. Drive basic ones out
        // where a structural column can replace them; rows where none can are
        // redundant and keep their (zero-valued) artificial.
        for a in self.n..self.width {
            self.ub[a] = 0.0;
        }
        for r in 0..self.m {
            if self.basis[r] >= self.n {
                let mut best = None;
                let mut best_abs = 1e-7;
                for j in 0..self.n {
                    if self.state[j] != VarState::Basic {
                        let a = self.at(r, j).abs();
                        if a > best_abs {
                            best_abs = a;
                            best = Some(j);
                        }
                    }
                }
                if let Some(j) = best {
                    // degenerate exchange: the entering variable keeps its
                    // current bound value, so only the basis labels move
                    let val = match self.state[j] {
                        VarState::AtUpper => self.ub[j],
                        _ => 0.0,
                    };
                    self.pivot(r, j);
                    self.beta[r] = val;
                }
            }
        }
        Ok(())
    }

    fn run_phase2(&mut self) -> Result<(), LpError> {
        self.active = self.n;
        let cost = std::mem::take(&mut self.cost);
        self.set_costs(&cost);
        self.cost = cost;
        self.iterate()
    }

    fn iteration_limit(&self) -> usize {
        50 * (self.m + self.width) + 1000
    }

    /// Primal simplex on the current cost row until optimal. Dantzig pricing,
    /// switching to Bland's rule after a long run of degenerate steps.
    fn iterate(&mut self) -> Result<(), LpError> {
        let limit = self.iterations + self.iteration_limit();
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate > DEGENERATE_RUN;
            let Some((j, dir)) = self.choose_entering(bland) else {
                return Ok(());
            };
            self.iterations += 1;
            if self.iterations > limit {
                return Err(LpError::IterationLimit);
            }

            // ratio test; the entering variable's own range is the flip bound
            let mut theta = self.ub[j];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_abs = 0.0;
            for i in 0..self.m {
                let alpha = dir * self.at(i, j);
                let k = self.basis[i];
                let (lim, to_upper) = if alpha > PIVOT_TOL {
                    (self.beta[i].max(0.0) / alpha, false)
                } else if alpha < -PIVOT_TOL && self.ub[k].is_finite() {
                    ((self.ub[k] - self.beta[i]).max(0.0) / -alpha, true)
                } else {
                    continue;
                };
                let better = if bland {
                    lim < theta - 1e-12 || (lim <= theta + 1e-12 && leave.is_none_or(|(r, _)| k < self.basis[r]))
                } else {
                    lim < theta - 1e-12 || (lim <= theta + 1e-12 && alpha.abs() > leave_abs)
                };
                if better {
                    theta = theta.min(lim);
                    leave = Some((i, to_upper));
                    leave_abs = alpha.abs();
                }
            }
            if theta.is_infinite() {
                return Err(LpError::Unbounded);
            }

            if theta > 1e-12 {
                degenerate = 0;
            } else {
                degenerate += 1;
            }

            for i in 0..self.m {
                let a = self.at(i, j);
                if a != 0.0 {
                    self.beta[i] -= theta * dir * a;
                }
            }
            match leave {
                None => {
                    self.state[j] = if dir > 0.0 {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                }
                Some((r, to_upper)) => {
                    let k = self.basis[r];
                    let entering_value = if dir > 0.0 { theta } else { self.ub[j] - theta };
                    self.pivot(r, j);
                    self.beta[r] = entering_value;
                    self.state[k] = if to_upper { VarState::AtUpper } else { VarState::AtLower };
                }
            }
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best = None;
        let mut best_score = OPT_TOL;
        for j in 0..self.active {
            if self.ub[j] <= 0.0 {
                continue;
            }
            let dj = self.d[j];
            let (score, dir) = match self.state[j] {
                VarState::Basic => continue,
                VarState::AtLower => (-dj, 1.0),
                VarState::AtUpper => (dj, -1.0),
            };
            if score > best_score {
                if bland {
                    return Some((j, dir));
                }
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    /// Reads off the solution in original coordinates. Basic values are
    /// re-solved from the original rows; if that system is singular the
    /// tableau values are kept.
    fn extract(&self, lp: &LinearProgram) -> LpSolution {
        let n = self.n;
        let m = self.m;
        let mut x = vec![0.0; n];
        for j in 0..n {
            x[j] = lp.lower[j]
                + match self.state[j] {
                    VarState::AtUpper => self.ub[j],
                    _ => 0.0,
                };
        }
        let tableau_basic = self.beta[..m].to_vec();

        // B x_B = b - N x_N, all in original (unshifted, unflipped) rows
        let mut col_of = vec![usize::MAX; n + m];
        for (i, &k) in self.basis.iter().enumerate() {
            col_of[k] = i;
        }
        let mut bmat = vec![0.0; m * m];
        let mut rhs = lp.rhs.clone();
        for (i, row) in lp.rows.iter().enumerate() {
            for &(j, a) in row {
                if col_of[j] != usize::MAX {
                    bmat[i * m + col_of[j]] += a;
                } else {
                    rhs[i] -= a * x[j];
                }
            }
            let art = n + i;
            if col_of[art] != usize::MAX {
                bmat[i * m + col_of[art]] += self.row_sign[i];
            }
        }
        let resolved = solve_dense(&mut bmat, &mut rhs, m);
        for (i, &k) in self.basis.iter().enumerate() {
            if k < n {
                x[k] = if resolved {
                    rhs[i]
                } else {
                    lp.lower[k] + tableau_basic[i]
                };
            }
        }
        let objective = lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpSolution {
            x,
            objective,
            iterations: self.iterations,
        }
    }
}

/// Gaussian elimination with partial pivoting; solution left in `b`.
/// Returns false on a (numerically) singular matrix.
fn solve_dense(a: &mut [f64], b: &mut [f64], m: usize) -> bool {
    for c in 0..m {
        let (p, pv) = (c..m)
            .map(|r| (r, a[r * m + c].abs()))
            .fold((c, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if pv < 1e-12 {
            return false;
        }
        if p != c {
            for k in 0..m {
                a.swap(p * m + k, c * m + k);
            }
            b.swap(p, c);
        }
        let inv = 1.0 / a[c * m + c];
        for r in c + 1..m {
            let f = a[r * m + c] * inv;
            if f != 0.0 {
                for k in c..m {
                    a[r * m + k] -= f * a[c * m + k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    for c in (0..m).rev() {
        let mut s = b[c];
        for k in c + 1..m {
            s -= a[c * m + k] * b[k];
        }
        b[c] = s / a[c * m + c];
    }
    true
}
