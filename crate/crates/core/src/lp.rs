//! Dense revised simplex for equality-form linear programs
//! `max c'x  s.t.  Ax = b, x >= 0`.
//!
//! Two phases with one artificial per row. The basis inverse is kept
//! explicitly and updated with an elementary row transformation on every
//! pivot, with a fresh Gauss-Jordan inversion at a fixed interval and once
//! more before the solution is read off.
//!
//! Entering variables are priced by Dantzig's rule and ratio-test ties are
//! broken lexicographically, which cannot cycle in exact arithmetic. Once a
//! phase exceeds a pivot budget the solver switches to Bland's rule for the
//! rest of that phase, so termination does not rest on the lexicographic
//! comparisons surviving round-off.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// `max objective'x  s.t.  A x = rhs, x >= 0`, with `A` stored by column.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProgram {
    rows: usize,
    columns: Vec<Vec<(usize, f64)>>,
    objective: Vec<f64>,
    rhs: Vec<f64>,
}

impl LpProgram {
    pub fn new(rhs: Vec<f64>) -> Self {
        Self {
            rows: rhs.len(),
            columns: Vec::new(),
            objective: Vec::new(),
            rhs,
        }
    }

    /// Appends a variable and returns its index. Entries with the same row
    /// are summed; zeros are dropped.
    pub fn add_column(&mut self, objective: f64, entries: &[(usize, f64)]) -> usize {
        let mut col: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        let mut sorted = entries.to_vec();
        sorted.sort_by_key(|&(r, _)| r);
        for (r, v) in sorted {
            match col.last_mut() {
                Some((lr, lv)) if *lr == r => *lv += v,
                _ => col.push((r, v)),
            }
        }
        col.retain(|&(_, v)| v != 0.0);
        self.columns.push(col);
        self.objective.push(objective);
        self.columns.len() - 1
    }

    pub fn from_dense(matrix: &[Vec<f64>], rhs: Vec<f64>, objective: Vec<f64>) -> Result<Self> {
        if matrix.len() != rhs.len() {
            return Err(Error::MalformedLp(format!(
                "{} matrix rows but {} right-hand sides",
                matrix.len(),
                rhs.len()
            )));
        }
        let n = objective.len();
        if let Some(bad) = matrix.iter().position(|row| row.len() != n) {
            return Err(Error::MalformedLp(format!(
                "row {bad} does not have {n} entries"
            )));
        }
        let mut p = Self::new(rhs);
        for (j, &c) in objective.iter().enumerate() {
            let entries: Vec<(usize, f64)> = matrix
                .iter()
                .enumerate()
                .filter(|(_, row)| row[j] != 0.0)
                .map(|(i, row)| (i, row[j]))
                .collect();
            p.add_column(c, &entries);
        }
        Ok(p)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rhs.iter().position(|v| !v.is_finite()) {
            return Err(Error::MalformedLp(format!("rhs[{r}] is not finite")));
        }
        if let Some(j) = self.objective.iter().position(|v| !v.is_finite()) {
            return Err(Error::MalformedLp(format!("objective[{j}] is not finite")));
        }
        for (j, col) in self.columns.iter().enumerate() {
            for &(r, v) in col {
                if r >= self.rows {
                    return Err(Error::MalformedLp(format!("column {j} touches row {r}")));
                }
                if !v.is_finite() {
                    return Err(Error::MalformedLp(format!("A[{r},{j}] is not finite")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// `max_i |(A x - b)_i|`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.rows];
        for (col, &v) in self.columns.iter().zip(x) {
            for &(r, a) in col {
                ax[r] += a * v;
            }
        }
        ax.iter()
            .zip(&self.rhs)
            .map(|(l, r)| (l - r).abs())
            .fold(0.0, f64::max)
    }

    pub fn rhs_norm(&self) -> f64 {
        self.rhs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the program in a fixed-layout text format:
    ///
    /// ```text
    /// NAME <name>
    /// SENSE MAX
    /// ROWS <m>
    /// COLS <n>
    /// OBJ            followed by n lines "<j> <c_j>"
    /// RHS            followed by m lines "<i> <b_i>"
    /// MATRIX <nnz>   followed by nnz lines "<i> <j> <a_ij>", column-major
    /// END
    /// ```
    ///
    /// Indices are 0-based; numbers use Rust's shortest round-trip formatting.
    pub fn write_text<W: Write>(&self, name: &str, mut out: W) -> std::io::Result<()> {
        writeln!(out, "NAME {name}")?;
        writeln!(out, "SENSE MAX")?;
        writeln!(out, "ROWS {}", self.rows)?;
        writeln!(out, "COLS {}", self.cols())?;
        writeln!(out, "OBJ")?;
        for (j, c) in self.objective.iter().enumerate() {
            writeln!(out, "{j} {c:?}")?;
        }
        writeln!(out, "RHS")?;
        for (i, b) in self.rhs.iter().enumerate() {
            writeln!(out, "{i} {b:?}")?;
        }
        let nnz: usize = self.columns.iter().map(Vec::len).sum();
        writeln!(out, "MATRIX {nnz}")?;
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, a) in col {
                writeln!(out, "{i} {j} {a:?}")?;
            }
        }
        writeln!(out, "END")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row duals `π` from the final basis, in the sign convention of the
    /// original rows: `c_j - π'A_j <= 0` for every column at optimality.
    pub duals: Vec<f64>,
    pub iterations: usize,
    /// Whether Bland's rule had to take over in some phase.
    pub used_bland: bool,
}

impl LpSolution {
    /// `b'π`, an upper bound on any feasible objective when `π` is dual feasible.
    pub fn dual_bound(&self, program: &LpProgram) -> f64 {
        program
            .rhs
            .iter()
            .zip(&self.duals)
            .map(|(b, y)| b * y)
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// Pivots per phase after which Bland's rule takes over for the rest of
    /// the phase; `None` means `20 * (rows + cols)`.
    pub bland_after: Option<usize>,
    /// Pivots between fresh inversions of the basis; `None` means `max(rows, 50)`.
    pub refactor_every: Option<usize>,
    pub max_iterations: usize,
    /// Start in Bland mode.
    pub bland_only: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            bland_after: None,
            refactor_every: None,
            max_iterations: 1_000_000,
            bland_only: false,
        }
    }
}

pub fn solve(program: &LpProgram) -> Result<LpSolution> {
    solve_with(program, &SolverOptions::default())
}

pub fn solve_with(program: &LpProgram, options: &SolverOptions) -> Result<LpSolution> {
    program.validate()?;
    Ok(Simplex::new(program, options).run())
}

enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationLimit,
}

struct Simplex<'a> {
    opts: &'a SolverOptions,
    m: usize,
    n: usize,
    /// Structural columns with rows already sign-normalised so that b >= 0.
    columns: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    flipped: Vec<bool>,
    objective: &'a [f64],
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    refactor_every: usize,
    used_bland: bool,
}

impl<'a> Simplex<'a> {
    fn new(p: &'a LpProgram, opts: &'a SolverOptions) -> Self {
        let m = p.rows;
        let n = p.cols();
        let flipped: Vec<bool> = p.rhs.iter().map(|&v| v < 0.0).collect();
        let b: Vec<f64> = p.rhs.iter().map(|v| v.abs()).collect();
        let columns = p
            .columns
            .iter()
            .map(|col| {
                col.iter()
                    .map(|&(r, v)| (r, if flipped[r] { -v } else { v }))
                    .collect()
            })
            .collect();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut is_basic = vec![false; n + m];
        for flag in &mut is_basic[n..] {
            *flag = true;
        }
        Self {
            opts,
            m,
            n,
            columns,
            xb: b.clone(),
            b,
            flipped,
            objective: &p.objective,
            basis: (n..n + m).collect(),
            is_basic,
            binv,
            iterations: 0,
            since_refactor: 0,
            refactor_every: opts.refactor_every.unwrap_or(m.max(50)),
            used_bland: false,
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n
    }

    /// `B^-1 a_j`.
    fn ftran(&self, j: usize, out: &mut [f64]) {
        let m = self.m;
        if self.is_artificial(j) {
            let k = j - self.n;
            for (r, o) in out.iter_mut().enumerate() {
                *o = self.binv[r * m + k];
            }
        } else {
            out.fill(0.0);
            for &(k, v) in &self.columns[j] {
                for (r, o) in out.iter_mut().enumerate() {
                    *o += self.binv[r * m + k] * v;
                }
            }
        }
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut pi = vec![0.0; m];
        for r in 0..m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (p, &v) in pi.iter_mut().zip(row) {
                    *p += cb * v;
                }
            }
        }
        pi
    }

    fn reduced_cost(&self, j: usize, cost: &[f64], pi: &[f64]) -> f64 {
        if self.is_artificial(j) {
            cost[j] - pi[j - self.n]
        } else {
            cost[j] - self.columns[j].iter().map(|&(r, v)| pi[r] * v).sum::<f64>()
        }
    }

    fn pivot(&mut self, row: usize, entering: usize, dir: &[f64]) {
        let m = self.m;
        let piv = dir[row];
        let theta = self.xb[row] / piv;
        for (r, x) in self.xb.iter_mut().enumerate() {
            if r != row {
                *x -= theta * dir[r];
            }
        }
        self.xb[row] = theta;

        let (before, rest) = self.binv.split_at_mut(row * m);
        let (prow, after) = rest.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= piv;
        }
        for (r, chunk) in before.chunks_exact_mut(m).enumerate() {
            let f = dir[r];
            if f != 0.0 {
                for (c, p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
            }
        }
        for (k, chunk) in after.chunks_exact_mut(m).enumerate() {
            let f = dir[row + 1 + k];
            if f != 0.0 {
                for (c, p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
            }
        }

        let leaving = self.basis[row];
        self.is_basic[leaving] = false;
        self.is_basic[entering] = true;
        self.basis[row] = entering;
        self.iterations += 1;
        self.since_refactor += 1;
        if self.since_refactor >= self.refactor_every {
            self.refactor();
        }
    }

    /// Rebuilds `B^-1` from scratch and recomputes the basic values.
    fn refactor(&mut self) {
        let m = self.m;
        let mut bmat = vec![0.0; m * m];
        for (c, &j) in self.basis.iter().enumerate() {
            if self.is_artificial(j) {
                bmat[(j - self.n) * m + c] = 1.0;
            } else {
                for &(r, v) in &self.columns[j] {
                    bmat[r * m + c] = v;
                }
            }
        }
        if let Some(inv) = invert(m, bmat) {
            self.binv = inv;
            for r in 0..m {
                let row = &self.binv[r * m..(r + 1) * m];
                self.xb[r] = row.iter().zip(&self.b).map(|(a, b)| a * b).sum();
            }
        }
        self.since_refactor = 0;
    }

    /// Leaving row for direction `dir`, or None if the direction is
    /// unbounded. Ties on the minimum ratio go to the smallest basic index
    /// under Bland, otherwise to the lexicographically smallest row of
    /// `B^-1 / dir_r`, which rules out cycling because the initial basis is
    /// the identity.
    fn ratio_test(&self, dir: &[f64], bland: bool, scale: f64) -> Option<usize> {
        let m = self.m;
        let mut min_ratio = f64::INFINITY;
        for (d, xb) in dir.iter().zip(&self.xb) {
            if *d > self.opts.pivot_tol {
                min_ratio = min_ratio.min(xb.max(0.0) / d);
            }
        }
        if min_ratio == f64::INFINITY {
            return None;
        }
        let tol = 1e-12 * scale;
        let mut best: Option<usize> = None;
        for r in 0..m {
            if dir[r] <= self.opts.pivot_tol || self.xb[r].max(0.0) / dir[r] > min_ratio + tol {
                continue;
            }
            let Some(l) = best else {
                best = Some(r);
                continue;
            };
            let replace = if bland {
                self.basis[r] < self.basis[l]
            } else {
                let (row_r, row_l) = (
                    &self.binv[r * m..(r + 1) * m],
                    &self.binv[l * m..(l + 1) * m],
                );
                let (dr, dl) = (dir[r], dir[l]);
                row_r
                    .iter()
                    .zip(row_l)
                    .map(|(a, b)| a / dr - b / dl)
                    .find(|diff| diff.abs() > 1e-12)
                    .is_some_and(|diff| diff < 0.0)
            };
            if replace {
                best = Some(r);
            }
        }
        best
    }

    fn run_phase(&mut self, cost: &[f64], allow_artificial: bool) -> PhaseEnd {
        let m = self.m;
        let total = self.n + self.m;
        let mut bland = self.opts.bland_only;
        let bland_after = self.opts.bland_after.unwrap_or(20 * (self.n + m));
        let mut phase_pivots = 0usize;
        let mut dir = vec![0.0; m];
        let scale = 1.0 + self.b.iter().fold(0.0f64, |a, &v| a.max(v));
        loop {
            if self.iterations >= self.opts.max_iterations {
                return PhaseEnd::IterationLimit;
            }
            let pi = self.duals(cost);
            let mut entering = None;
            let mut best = self.opts.optimality_tol;
            for j in 0..total {
                if self.is_basic[j] || (!allow_artificial && self.is_artificial(j)) {
                    continue;
                }
                let d = self.reduced_cost(j, cost, &pi);
                if d > best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = entering else {
                return PhaseEnd::Optimal;
            };

            self.ftran(q, &mut dir);
            let leave = self.ratio_test(&dir, bland, scale);
            let Some(row) = leave else {
                return PhaseEnd::Unbounded;
            };
            phase_pivots += 1;
            if phase_pivots > bland_after && !bland {
                bland = true;
                self.used_bland = true;
            }
            if self.xb[row] < 0.0 {
                self.xb[row] = 0.0;
            }
            self.pivot(row, q, &dir);
        }
    }

    /// Pivots basic artificials (at zero level) out of the basis where a
    /// structural column can replace them. Rows where none can are linearly
    /// dependent on the others; their artificial stays basic at zero.
    fn drive_out_artificials(&mut self) {
        let m = self.m;
        let mut dir = vec![0.0; m];
        for row in 0..m {
            if !self.is_artificial(self.basis[row]) {
                continue;
            }
            let binv_row: Vec<f64> = self.binv[row * m..(row + 1) * m].to_vec();
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if self.is_basic[j] {
                    continue;
                }
                let v: f64 = self.columns[j].iter().map(|&(r, a)| binv_row[r] * a).sum();
                if v.abs() > 1e-7 && best.is_none_or(|(_, b)| v.abs() > b.abs()) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                self.ftran(j, &mut dir);
                self.pivot(row, j, &dir);
            }
        }
    }

    fn run(mut self) -> LpSolution {
        let (n, m) = (self.n, self.m);
        let tol = self.opts.feasibility_tol * (1.0 + self.b.iter().fold(0.0f64, |a, &v| a.max(v)));

        let mut phase1 = vec![0.0; n + m];
        for c in &mut phase1[n..] {
            *c = -1.0;
        }
        if let PhaseEnd::IterationLimit = self.run_phase(&phase1, false) {
            return self.finish(LpStatus::IterationLimit, &phase1);
        }
        self.refactor();
        let infeasibility: f64 = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(&j, _)| j >= n)
            .map(|(_, &v)| v)
            .sum();
        if infeasibility > tol {
            return self.finish(LpStatus::Infeasible, &phase1);
        }
        self.drive_out_artificials();

        let mut phase2 = vec![0.0; n + m];
        phase2[..n].copy_from_slice(self.objective);
        let end = self.run_phase(&phase2, false);
        self.refactor();
        match end {
            PhaseEnd::Optimal => self.finish(LpStatus::Optimal, &phase2),
            PhaseEnd::Unbounded => self.finish(LpStatus::Unbounded, &phase2),
            PhaseEnd::IterationLimit => self.finish(LpStatus::IterationLimit, &phase2),
        }
    }

    fn finish(self, status: LpStatus, cost: &[f64]) -> LpSolution {
        let mut x = vec![0.0; self.n];
        for (&j, &v) in self.basis.iter().zip(&self.xb) {
            if j < self.n {
                // round-off below the feasibility tolerance
                x[j] = if v < 0.0 && v > -self.opts.feasibility_tol {
                    0.0
                } else {
                    v
                };
            }
        }
        let objective = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        let mut duals = self.duals(cost);
        for (d, &f) in duals.iter_mut().zip(&self.flipped) {
            if f {
                *d = -*d;
            }
        }
        LpSolution {
            status,
            x,
            objective,
            duals,
            iterations: self.iterations,
            used_bland: self.used_bland,
        }
    }
}

/// Gauss-Jordan inverse with partial pivoting of a row-major `m x m` matrix.
fn invert(m: usize, mut a: Vec<f64>) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for col in 0..m {
        let piv =
            (col..m).max_by(|&x, &y| a[x * m + col].abs().total_cmp(&a[y * m + col].abs()))?;
        if a[piv * m + col].abs() < 1e-13 {
            return None;
        }
        if piv != col {
            for k in 0..m {
                a.swap(piv * m + k, col * m + k);
                inv.swap(piv * m + k, col * m + k);
            }
        }
        let d = a[col * m + col];
        for k in 0..m {
            a[col * m + k] /= d;
            inv[col * m + k] /= d;
        }
        let prow_a: Vec<f64> = a[col * m..(col + 1) * m].to_vec();
        let prow_i: Vec<f64> = inv[col * m..(col + 1) * m].to_vec();
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = a[r * m + col];
            if f != 0.0 {
                for k in 0..m {
                    a[r * m + k] -= f * prow_a[k];
                    inv[r * m + k] -= f * prow_i[k];
                }
            }
        }
    }
    Some(inv)
}

/// Solves the dense row-major system `a x = b` by Gaussian elimination with
/// partial pivoting. Returns None when `a` is numerically singular.
pub fn solve_dense(n: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    for col in 0..n {
        let piv =
            (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-13 {
            return None;
        }
        if piv != col {
            for k in col..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - tail) / a[r * n + r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_certificate(p: &LpProgram, s: &LpSolution) {
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(p.residual(&s.x) <= 1e-9 * (1.0 + p.rhs_norm()));
        assert!(s.x.iter().all(|&v| v >= -1e-12));
        // dual feasibility and weak duality
        for j in 0..p.cols() {
            let d = p.objective()[j]
                - p.column(j)
                    .iter()
                    .map(|&(r, v)| s.duals[r] * v)
                    .sum::<f64>();
            assert!(d <= 1e-8, "column {j} has reduced cost {d}");
        }
        assert!(s.objective <= s.dual_bound(p) + 1e-8);
    }

    #[test]
    fn single_variable() {
        let p = LpProgram::from_dense(&[vec![1.0]], vec![1.0], vec![1.0]).unwrap();
        let s = solve(&p).unwrap();
        check_certificate(&p, &s);
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_face() {
        let p = LpProgram::from_dense(&[vec![1.0, 1.0]], vec![1.0], vec![1.0, 1.0]).unwrap();
        let s = solve(&p).unwrap();
        check_certificate(&p, &s);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x1 + x2 = -1 with x >= 0
        let p = LpProgram::from_dense(&[vec![1.0, 1.0]], vec![-1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(solve(&p).unwrap().status, LpStatus::Infeasible);
        // x1 - x2 = 1, maximise x1
        let p = LpProgram::from_dense(&[vec![1.0, -1.0]], vec![1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(solve(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // -x1 - x2 = -2 ; 2x1 + 2x2 = 4 (redundant) ; max x1 + 3 x2
        let p = LpProgram::from_dense(
            &[vec![-1.0, -1.0], vec![2.0, 2.0]],
            vec![-2.0, 4.0],
            vec![1.0, 3.0],
        )
        .unwrap();
        let s = solve(&p).unwrap();
        check_certificate(&p, &s);
        assert!((s.objective - 6.0).abs() < 1e-10);
    }

    fn beale() -> LpProgram {
        // classic cycling example in equality form, slacks s1..s3 first
        let rows = vec![
            vec![1.0, 0.0, 0.0, 0.25, -8.0, -1.0, 9.0],
            vec![0.0, 1.0, 0.0, 0.5, -12.0, -0.5, 3.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        ];
        LpProgram::from_dense(
            &rows,
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.75, -20.0, 0.5, -6.0],
        )
        .unwrap()
    }

    #[test]
    fn beale_terminates() {
        for opts in [
            SolverOptions::default(),
            SolverOptions {
                bland_only: true,
                ..SolverOptions::default()
            },
            SolverOptions {
                bland_after: Some(0),
                ..SolverOptions::default()
            },
        ] {
            let p = beale();
            let s = solve_with(&p, &opts).unwrap();
            check_certificate(&p, &s);
            assert!((s.objective - 1.25).abs() < 1e-10, "{}", s.objective);
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(LpProgram::from_dense(&[vec![1.0]], vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(LpProgram::from_dense(&[vec![1.0, 2.0]], vec![1.0], vec![1.0]).is_err());
        let p = LpProgram::from_dense(&[vec![1.0]], vec![f64::NAN], vec![1.0]).unwrap();
        assert!(solve(&p).is_err());
    }

    #[test]
    fn text_export_layout() {
        let p = LpProgram::from_dense(
            &[vec![1.0, 0.0], vec![1.0, 2.0]],
            vec![1.0, 3.0],
            vec![1.0, 0.5],
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_text("tiny", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let expected = "NAME tiny\nSENSE MAX\nROWS 2\nCOLS 2\nOBJ\n0 1.0\n1 0.5\nRHS\n0 1.0\n1 3.0\nMATRIX 3\n0 0 1.0\n1 0 1.0\n1 1 2.0\nEND\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn dense_solve() {
        let x = solve_dense(2, vec![0.0, 2.0, 4.0, 1.0], vec![2.0, 9.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
        assert!(solve_dense(2, vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 1.0]).is_none());
    }

    #[test]
    fn inverse_roundtrip() {
        let a = vec![4.0, 7.0, 2.0, 6.0];
        let inv = invert(2, a).unwrap();
        let expect = [0.6, -0.7, -0.2, 0.4];
        for (x, y) in inv.iter().zip(expect) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(invert(2, vec![1.0, 2.0, 2.0, 4.0]).is_none());
    }
}
