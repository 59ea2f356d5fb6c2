//! Dense two-phase primal simplex for small linear programs.
//!
//! Problems are stated as `maximize c^T x` subject to rows `a^T x {<=,=,>=} b`
//! and `x >= 0`. Linearly dependent equality rows are removed up front.
//! Phase one minimizes the sum of artificial variables, optionally after
//! crashing a caller-supplied set of columns into the basis; rows whose
//! artificial cannot be pivoted out at zero level are dropped before phase
//! two. The tableau is rebuilt from the original data whenever the basic
//! solution drifts and before optimality is declared, and the final basis is
//! re-solved with an LU factorization, which also yields duals and reduced
//! costs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::linalg::Lu;
use crate::error::{domain, Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-11;
const HARRIS_TOL: f64 = 1e-11;
const DRIFT_TOL: f64 = 1e-9;
const REINVERT_CHECK: usize = 50;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    /// Dense coefficient row, one entry per variable.
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub var_names: Vec<String>,
    /// Maximized.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

/// Entering-variable rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pricing {
    /// Smallest-index improving column throughout.
    Bland,
    /// Most positive reduced cost; after a run of degenerate pivots Bland's
    /// rule takes over until the objective strictly improves again. Cycling
    /// needs an endless degenerate run, which Bland's rule rules out.
    #[default]
    Dantzig,
}

/// Consecutive degenerate pivots tolerated before Bland's rule takes over.
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
    /// Row duals (zero for dropped redundant rows).
    pub duals: Vec<f64>,
    /// Largest constraint violation of `x` on the original rows.
    pub primal_residual: f64,
    /// Largest reduced cost over all columns; `<= 0` certifies optimality.
    pub max_reduced_cost: f64,
    pub iterations: usize,
    pub redundant_rows: Vec<usize>,
}

impl LinearProgram {
    pub fn new(var_names: Vec<String>, objective: Vec<f64>) -> Self {
        Self {
            var_names,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, name: impl Into<String>, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs,
            relation,
            rhs,
        });
    }

    /// Same program with columns reordered: new column `k` is old column
    /// `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let pick = |v: &[f64]| perm.iter().map(|&j| v[j]).collect::<Vec<_>>();
        Self {
            var_names: perm.iter().map(|&j| self.var_names[j].clone()).collect(),
            objective: pick(&self.objective),
            constraints: self
                .constraints
                .iter()
                .map(|c| Constraint {
                    name: c.name.clone(),
                    coeffs: pick(&c.coeffs),
                    relation: c.relation,
                    rhs: c.rhs,
                })
                .collect(),
        }
    }

    /// Largest violation of the constraints and of `x >= 0`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
            match c.relation {
                Relation::Le => (lhs - c.rhs).max(0.0),
                Relation::Ge => (c.rhs - lhs).max(0.0),
                Relation::Eq => (lhs - c.rhs).abs(),
            }
        });
        let bounds = x.iter().map(|&v| (-v).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// CPLEX LP text: objective, constraint rows, bounds.
    pub fn to_lp_format(&self) -> String {
        let mut s = String::from("\\ dense export\nMaximize\n obj:");
        write_terms(&mut s, &self.objective, &self.var_names);
        s.push_str("\nSubject To\n");
        for c in &self.constraints {
            let _ = write!(s, " {}:", c.name);
            write_terms(&mut s, &c.coeffs, &self.var_names);
            let op = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(s, " {op} {:e}", c.rhs);
        }
        s.push_str("Bounds\n");
        for v in &self.var_names {
            let _ = writeln!(s, " {v} >= 0");
        }
        s.push_str("End\n");
        s
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.num_vars();
        if self.var_names.len() != n {
            return Err(domain("variable names and objective differ in length"));
        }
        for c in &self.constraints {
            if c.coeffs.len() != n {
                return Err(domain(format!(
                    "row {} has {} coefficients, expected {n}",
                    c.name,
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(domain(format!("row {} has a non-finite entry", c.name)));
            }
        }
        if self.objective.iter().any(|a| !a.is_finite()) {
            return Err(domain("non-finite objective coefficient"));
        }
        Ok(())
    }
}

fn write_terms(s: &mut String, coeffs: &[f64], names: &[String]) {
    let mut any = false;
    for (a, name) in coeffs.iter().zip(names) {
        if *a != 0.0 {
            let sign = if *a < 0.0 { '-' } else { '+' };
            let _ = write!(s, " {sign} {:e} {name}", a.abs());
            any = true;
        }
    }
    if !any {
        let _ = write!(s, " 0 {}", names.first().map_or("x", String::as_str));
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    solve_lp_with(lp, Pricing::default())
}

pub fn solve_lp_with(lp: &LinearProgram, pricing: Pricing) -> Result<LpSolution> {
    solve_lp_from(lp, pricing, &[])
}

/// Like [`solve_lp_with`], first trying to crash the listed variables into
/// the basis in place of artificials. The crash basis is kept only if it is
/// primal feasible; otherwise phase one starts from scratch.
pub fn solve_lp_from(lp: &LinearProgram, pricing: Pricing, start: &[usize]) -> Result<LpSolution> {
    lp.check_shape()?;
    let n = lp.num_vars();
    let m = lp.constraints.len();

    // Standard form: flip rows to b >= 0, add slack/surplus and artificials.
    let rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let rel = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (c.coeffs.iter().map(|a| -a).collect(), rel, -c.rhs)
            } else {
                (c.coeffs.clone(), c.relation, c.rhs)
            }
        })
        .collect();
    let dropped = dependent_equalities(&rows, n)?;
    let active: Vec<usize> = (0..m).filter(|i| !dropped.contains(i)).collect();
    let slacks = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let arts = active
        .iter()
        .filter(|&&i| rows[i].1 != Relation::Le)
        .count();
    let structural = n + slacks;
    let cols = structural + arts;

    // Standard-form rows over the structural columns, kept for the final
    // re-solve.
    let mut original = vec![vec![0.0; structural]; m];
    let mut slack_of = vec![None; m];
    let mut slack_col = n;
    for (i, (coeffs, rel, _)) in rows.iter().enumerate() {
        original[i][..n].copy_from_slice(coeffs);
        if *rel != Relation::Eq {
            original[i][slack_col] = if *rel == Relation::Le { 1.0 } else { -1.0 };
            slack_of[i] = Some(slack_col);
            slack_col += 1;
        }
    }
    let rhs: Vec<f64> = rows.iter().map(|r| r.2).collect();

    let mut tab = Tableau::new(active.len(), cols);
    tab.row_ids = active.clone();
    let mut art_col = structural;
    for (t, &i) in active.iter().enumerate() {
        let row = tab.row_mut(t);
        row[..structural].copy_from_slice(&original[i]);
        row[cols] = rhs[i];
        if rows[i].1 == Relation::Le {
            tab.basis[t] = slack_of[i].expect("slack");
        } else {
            row[art_col] = 1.0;
            tab.basis[t] = art_col;
            art_col += 1;
        }
    }

    tab.pristine = vec![Vec::new(); m];
    for (t, &i) in active.iter().enumerate() {
        tab.pristine[i] = tab.row(t).to_vec();
    }

    if start.iter().any(|&j| j >= n) {
        return Err(domain("crash variable out of range"));
    }
    if !start.is_empty() && arts > 0 {
        let initial = tab.clone();
        if !tab.crash(start, structural)? {
            tab = initial;
        }
    }

    let mut iterations = 0;
    if arts > 0 {
        let mut cost = vec![0.0; cols];
        cost[structural..].iter_mut().for_each(|c| *c = -1.0);
        tab.set_cost(&cost);
        if tab.value() < -FEAS_TOL {
            iterations += tab.run(cols, pricing)?;
        }
        if tab.value() < -1e-9 * (1.0 + rhs.iter().fold(0.0, |a: f64, b| a.max(b.abs()))) {
            return Err(Error::Infeasible);
        }
        tab.drive_out_artificials(structural);
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    tab.set_cost(&cost);
    iterations += tab.run(structural, pricing)?;

    // Re-solve the optimal basis on the original data.
    let kept: Vec<usize> = tab.row_ids.clone();
    let redundant_rows: Vec<usize> = (0..m).filter(|i| !kept.contains(i)).collect();
    let k = kept.len();
    let basis = tab.basis.clone();
    let bmat: Vec<Vec<f64>> = kept
        .iter()
        .map(|&i| basis.iter().map(|&j| original[i][j]).collect())
        .collect();
    let mut x_std = vec![0.0; structural];
    let mut duals = vec![0.0; m];
    let mut max_reduced_cost = f64::NEG_INFINITY;
    if k > 0 {
        let lu = Lu::factor(bmat)?;
        let xb = lu.solve(&kept.iter().map(|&i| rhs[i]).collect::<Vec<_>>());
        for (&j, v) in basis.iter().zip(xb) {
            x_std[j] = v.max(0.0);
        }
        let y = lu.solve_transpose(&basis.iter().map(|&j| cost[j]).collect::<Vec<_>>());
        for (&i, yi) in kept.iter().zip(&y) {
            duals[i] = if lp.constraints[i].rhs < 0.0 {
                -yi
            } else {
                *yi
            };
        }
        for j in 0..structural {
            let col: f64 = kept
                .iter()
                .zip(&y)
                .map(|(&i, yi)| original[i][j] * yi)
                .sum();
            max_reduced_cost = max_reduced_cost.max(cost[j] - col);
        }
    } else {
        max_reduced_cost = cost[..structural]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let x = x_std[..n].to_vec();
    Ok(LpSolution {
        objective: lp.objective_value(&x),
        primal_residual: lp.residual(&x),
        x,
        duals,
        max_reduced_cost,
        iterations,
        redundant_rows,
    })
}

/// Equality rows that are linear combinations of earlier equality rows,
/// found by Gaussian elimination. An inconsistent combination is infeasible.
fn dependent_equalities(rows: &[(Vec<f64>, Relation, f64)], n: usize) -> Result<Vec<usize>> {
    let mut basis: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    let mut dropped = Vec::new();
    for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        if *rel != Relation::Eq {
            continue;
        }
        let scale = coeffs.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
        let (mut r, mut b) = (coeffs.clone(), *rhs);
        for (p, row, rb) in &basis {
            let f = r[*p];
            if f != 0.0 {
                for (x, y) in r.iter_mut().zip(row) {
                    *x -= f * y;
                }
                b -= f * rb;
            }
        }
        let (p, a) = (0..n)
            .map(|j| (j, r[j]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .unwrap_or((0, 0.0));
        if a.abs() <= 1e-9 * scale.max(1.0) {
            if b.abs() > 1e-9 * (1.0 + rhs.abs()) {
                return Err(Error::Infeasible);
            }
            dropped.push(i);
        } else {
            r.iter_mut().for_each(|x| *x /= a);
            basis.push((p, r, b / a));
        }
    }
    Ok(dropped)
}

#[derive(Clone)]
struct Tableau {
    cols: usize,
    width: usize,
    data: Vec<f64>,
    /// Original row index of each tableau row.
    row_ids: Vec<usize>,
    basis: Vec<usize>,
    /// Reduced costs `c_j - c_B B^-1 a_j`, with minus the objective at `cols`.
    d: Vec<f64>,
    cost: Vec<f64>,
    /// Initial rows by original row index, for reinversion.
    pristine: Vec<Vec<f64>>,
}

impl Tableau {
    fn new(m: usize, cols: usize) -> Self {
        let width = cols + 1;
        Self {
            cols,
            width,
            data: vec![0.0; m * width],
            row_ids: (0..m).collect(),
            basis: vec![0; m],
            d: vec![0.0; width],
            cost: vec![0.0; cols],
            pristine: Vec::new(),
        }
    }

    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    fn value(&self) -> f64 {
        -self.d[self.cols]
    }

    fn set_cost(&mut self, cost: &[f64]) {
        self.cost = cost.to_vec();
        self.d[..self.cols].copy_from_slice(cost);
        self.d[self.cols] = 0.0;
        for i in 0..self.rows() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let (d, row) = (
                    &mut self.d,
                    &self.data[i * self.width..(i + 1) * self.width],
                );
                for (dj, a) in d[..self.cols].iter_mut().zip(row) {
                    *dj -= cb * a;
                }
                d[self.cols] -= cb * row[self.cols];
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        self.data[r * w + c] = 1.0;
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        let f = self.d[c];
        if f != 0.0 {
            for (x, &y) in self.d.iter_mut().zip(prow.iter()) {
                *x -= f * y;
            }
            self.d[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Pivots `start` columns into rows held by artificials, then checks that
    /// the resulting basic solution is feasible.
    fn crash(&mut self, start: &[usize], structural: usize) -> Result<bool> {
        let w = self.width;
        for &j in start {
            if self.basis.contains(&j) {
                continue;
            }
            let row = (0..self.rows())
                .filter(|&r| self.basis[r] >= structural)
                .map(|r| (r, self.data[r * w + j].abs()))
                .filter(|&(_, a)| a > 1e-7)
                .max_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((r, _)) = row {
                self.pivot(r, j);
            }
        }
        if self.reinvert().is_err() {
            return Ok(false);
        }
        for t in 0..self.rows() {
            let b = &mut self.data[t * w + self.cols];
            if *b < -FEAS_TOL || self.basis[t] >= structural && *b > FEAS_TOL {
                return Ok(false);
            }
            *b = b.max(0.0);
        }
        Ok(true)
    }

    /// Largest violation of `B x_B = b` on the original rows.
    fn basic_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for &i in &self.row_ids {
            let row = &self.pristine[i];
            let lhs: f64 = self
                .basis
                .iter()
                .enumerate()
                .map(|(t, &j)| row[j] * self.data[t * self.width + self.cols])
                .sum();
            worst = worst.max((lhs - row[self.cols]).abs());
        }
        worst
    }

    /// Rebuilds the tableau as `B^-1 [A | b]` from the original rows, which
    /// discards accumulated rounding.
    fn reinvert(&mut self) -> Result<()> {
        let bmat: Vec<Vec<f64>> = self
            .row_ids
            .iter()
            .map(|&i| self.basis.iter().map(|&j| self.pristine[i][j]).collect())
            .collect();
        let lu = Lu::factor(bmat)?;
        let k = self.rows();
        let mut col = vec![0.0; k];
        for j in 0..self.width {
            for (c, &i) in col.iter_mut().zip(&self.row_ids) {
                *c = self.pristine[i][j];
            }
            let y = if col.iter().all(|&c| c == 0.0) {
                vec![0.0; k]
            } else {
                lu.solve(&col)
            };
            for (t, v) in y.into_iter().enumerate() {
                self.data[t * self.width + j] = v;
            }
        }
        for (t, &j) in self.basis.iter().enumerate() {
            for r in 0..k {
                self.data[r * self.width + j] = (r == t) as u8 as f64;
            }
        }
        let cost = std::mem::take(&mut self.cost);
        self.set_cost(&cost);
        Ok(())
    }

    /// Ratio test for entering column `c`. With `bland`, exact minimum ratio
    /// with ties to the smallest basic index; otherwise a two-pass test that
    /// takes the largest pivot among rows within a small tolerance of the
    /// minimum ratio.
    fn leaving_row(&self, c: usize, bland: bool) -> Option<(usize, f64)> {
        let w = self.width;
        let entries = (0..self.rows()).filter_map(|i| {
            let a = self.data[i * w + c];
            (a > PIVOT_TOL).then(|| (i, a, self.data[i * w + self.cols].max(0.0)))
        });
        if bland {
            let mut best: Option<(usize, f64)> = None;
            for (i, a, b) in entries {
                let ratio = b / a;
                best = match best {
                    Some((bi, br))
                        if br < ratio || br == ratio && self.basis[bi] < self.basis[i] =>
                    {
                        Some((bi, br))
                    }
                    _ => Some((i, ratio)),
                };
            }
            return best;
        }
        let bound = entries
            .clone()
            .map(|(_, a, b)| (b + HARRIS_TOL) / a)
            .fold(f64::INFINITY, f64::min);
        entries
            .filter(|&(_, a, b)| b / a <= bound)
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(i, a, b)| (i, b / a))
    }

    /// Iterates to optimality; only columns `< enterable` may enter.
    fn run(&mut self, enterable: usize, pricing: Pricing) -> Result<usize> {
        let limit = 50 * (self.rows() + self.cols) + 10_000;
        let always_bland = pricing == Pricing::Bland;
        let mut degenerate_run = 0;
        let mut fresh = false;
        for it in 0..limit {
            if it > 0 && it % REINVERT_CHECK == 0 && self.basic_residual() > DRIFT_TOL {
                self.reinvert()?;
            }
            let bland = always_bland || degenerate_run > DEGENERATE_RUN;
            let candidates = (0..enterable).filter(|&j| self.d[j] > COST_TOL);
            let entering = if bland {
                candidates.min()
            } else {
                candidates.max_by(|&a, &b| self.d[a].total_cmp(&self.d[b]).then(b.cmp(&a)))
            };
            let Some(c) = entering else {
                // Confirm optimality on a freshly inverted tableau.
                if fresh {
                    return Ok(it);
                }
                self.reinvert()?;
                fresh = true;
                continue;
            };
            let Some((r, ratio)) = self.leaving_row(c, bland) else {
                return Err(Error::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
            fresh = false;
        }
        Err(Error::Capacity(format!(
            "simplex iteration limit {limit} reached"
        )))
    }

    /// Replaces basic artificials (at zero level) by structural columns and
    /// deletes rows where that is impossible.
    fn drive_out_artificials(&mut self, structural: usize) {
        let mut i = 0;
        while i < self.rows() {
            if self.basis[i] < structural {
                i += 1;
                continue;
            }
            let row = self.row(i);
            let candidate = (0..structural)
                .map(|j| (j, row[j].abs()))
                .filter(|&(_, a)| a > PIVOT_TOL)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match candidate {
                Some((j, _)) => {
                    self.pivot(i, j);
                    i += 1;
                }
                None => {
                    let w = self.width;
                    self.data.drain(i * w..(i + 1) * w);
                    self.basis.remove(i);
                    self.row_ids.remove(i);
                }
            }
        }
    }
}
