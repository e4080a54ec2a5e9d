//! Basis pursuit `min ‖x‖₁ s.t. D x = y` as a standard-form LP, solved by a
//! dense two-phase revised simplex.
//!
//! Problem sizes here are small (tens of rows), so the basis inverse is kept
//! explicitly, updated by Gauss–Jordan pivots and refactorized periodically.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randmat::ProblemInstance;

/// Per-entry mean squared error below which a reconstruction counts as exact.
pub const DEFAULT_RECOVERY_TOL: f64 = 1e-8;
/// Pivot budget used by [`l1_reconstruct`].
pub const DEFAULT_MAX_PIVOTS: usize = 100_000;

/// Reduced-cost threshold for optimality.
const OPT_TOL: f64 = 1e-10;
/// Smallest pivot element accepted in the ratio test.
const PIVOT_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots after which pricing switches to Bland's rule.
const BLAND_TRIGGER: usize = 50;
const REFACTOR_EVERY: usize = 64;

/// `min cᵀx s.t. A x = b, x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardFormLp {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

impl StandardFormLp {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if b.len() != m || c.len() != n {
            return Err(Error::domain(format!(
                "LP shapes disagree: A is {m}x{n}, b has {}, c has {}",
                b.len(),
                c.len()
            )));
        }
        if m > n {
            return Err(Error::domain(format!(
                "LP has more rows ({m}) than columns ({n})"
            )));
        }
        if a.iter()
            .chain(b.iter())
            .chain(c.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::domain("LP data must be finite"));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Meaningful only when `status` is `Optimal`.
    pub x: DVector<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// Splits `x = x⁺ - x⁻` so the l1 program becomes
/// `min 1ᵀ(x⁺, x⁻) s.t. [D, -D](x⁺, x⁻) = y`.
pub fn to_standard_form(instance: &ProblemInstance) -> Result<StandardFormLp> {
    let d = &instance.dictionary;
    let (m, n) = d.shape();
    if instance.observation.len() != m {
        return Err(Error::domain(format!(
            "observation has length {}, dictionary has {m} rows",
            instance.observation.len()
        )));
    }
    let mut a = DMatrix::zeros(m, 2 * n);
    a.columns_mut(0, n).copy_from(d);
    a.columns_mut(n, n).copy_from(&(-d));
    StandardFormLp::new(
        a,
        instance.observation.clone(),
        DVector::from_element(2 * n, 1.0),
    )
}

/// Indices of a maximal set of linearly independent rows of `a`, or `None`
/// if a dependent row's right-hand side is inconsistent.
fn independent_rows(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<Vec<usize>> {
    let (m, n) = a.shape();
    let scale = a.amax().max(1.0);
    let tol = 1e-10 * scale * (m.max(n) as f64);
    let mut work = a.clone();
    let mut rhs = b.clone();
    let mut is_pivot = vec![false; m];
    for j in 0..n {
        let best = (0..m)
            .filter(|&r| !is_pivot[r])
            .map(|r| (r, work[(r, j)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1));
        let Some((p, mag)) = best else { break };
        if mag <= tol {
            continue;
        }
        is_pivot[p] = true;
        for r in 0..m {
            if is_pivot[r] {
                continue;
            }
            let f = work[(r, j)] / work[(p, j)];
            if f != 0.0 {
                for k in j..n {
                    work[(r, k)] -= f * work[(p, k)];
                }
                rhs[r] -= f * rhs[p];
            }
        }
    }
    let b_scale = b.amax().max(1.0);
    for r in 0..m {
        if !is_pivot[r] && rhs[r].abs() > 1e-9 * b_scale {
            return None;
        }
    }
    Some((0..m).filter(|&r| is_pivot[r]).collect())
}

/// Revised simplex working state over `n` structural and `m` artificial columns.
struct Simplex<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    n: usize,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    pivots: usize,
    since_refactor: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl<'a> Simplex<'a> {
    fn new(a: &'a DMatrix<f64>, b: &'a DVector<f64>) -> Self {
        let (m, n) = a.shape();
        Self {
            a,
            b,
            n,
            basis: (n..n + m).collect(),
            binv: DMatrix::identity(m, m),
            xb: b.clone(),
            pivots: 0,
            since_refactor: 0,
        }
    }

    fn m(&self) -> usize {
        self.a.nrows()
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            self.a.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.m());
            e[j - self.n] = 1.0;
            e
        }
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let m = self.m();
        let mut bm = DMatrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            bm.set_column(k, &self.column(j));
        }
        bm
    }

    /// Recomputes `B⁻¹` and `x_B` from scratch.
    fn refactor(&mut self) {
        let lu = self.basis_matrix().lu();
        if let Some(inv) = lu.try_inverse() {
            self.binv = inv;
            self.xb = &self.binv * self.b;
            for v in self.xb.iter_mut() {
                if *v < 0.0 && *v > -1e-9 {
                    *v = 0.0;
                }
            }
        }
        self.since_refactor = 0;
    }

    fn pivot(&mut self, row: usize, entering: usize, w: &DVector<f64>) {
        let theta = self.xb[row] / w[row];
        let m = self.m();
        for i in 0..m {
            if i != row {
                self.xb[i] -= theta * w[i];
                if self.xb[i] < 0.0 && self.xb[i] > -1e-11 {
                    self.xb[i] = 0.0;
                }
            }
        }
        self.xb[row] = theta;

        let pr = w[row];
        for k in 0..m {
            self.binv[(row, k)] /= pr;
        }
        for i in 0..m {
            if i == row || w[i] == 0.0 {
                continue;
            }
            let f = w[i];
            for k in 0..m {
                let v = self.binv[(row, k)];
                self.binv[(i, k)] -= f * v;
            }
        }
        self.basis[row] = entering;
        self.pivots += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor();
        }
    }

    /// Runs primal simplex on cost `cost` (indexed over structural plus
    /// artificial columns). Columns with `allowed[j] == false` never enter.
    fn run(&mut self, cost: &[f64], allowed: &[bool], max_pivots: usize) -> Outcome {
        let m = self.m();
        let total = self.n + m;
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        let mut in_basis = vec![false; total];
        for &j in &self.basis {
            in_basis[j] = true;
        }

        loop {
            let cb = DVector::from_iterator(m, self.basis.iter().map(|&j| cost[j]));
            let y = self.binv.tr_mul(&cb);
            let ay = self.a.tr_mul(&y);

            let mut entering: Option<(usize, f64)> = None;
            for j in 0..total {
                if in_basis[j] || !allowed[j] {
                    continue;
                }
                let d = if j < self.n {
                    cost[j] - ay[j]
                } else {
                    cost[j] - y[j - self.n]
                };
                if d < -OPT_TOL {
                    if bland {
                        entering = Some((j, d));
                        break;
                    }
                    if entering.is_none_or(|(_, best)| d < best) {
                        entering = Some((j, d));
                    }
                }
            }
            let Some((q, _)) = entering else {
                return Outcome::Optimal;
            };
            if self.pivots >= max_pivots {
                return Outcome::IterationLimit;
            }

            let w = &self.binv * self.column(q);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if w[i] <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.xb[i].max(0.0) / w[i];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best);
                        let better = if tie {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                w[i] > w[r]
                            }
                        } else {
                            ratio < best
                        };
                        if better {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            let Some((row, theta)) = leave else {
                return Outcome::Unbounded;
            };

            if theta <= 1e-12 {
                degenerate_streak += 1;
                if degenerate_streak >= BLAND_TRIGGER {
                    bland = true;
                }
            } else {
                degenerate_streak = 0;
            }

            in_basis[self.basis[row]] = false;
            in_basis[q] = true;
            self.pivot(row, q, &w);
        }
    }

    /// Pivots basic artificials out of the basis wherever a structural column
    /// can replace them.
    fn drive_out_artificials(&mut self) {
        let m = self.m();
        for row in 0..m {
            if self.basis[row] < self.n {
                continue;
            }
            let binv_row = self.binv.row(row).into_owned();
            let candidate = (0..self.n)
                .filter(|j| !self.basis.contains(j))
                .map(|j| (j, (&binv_row * self.a.column(j))[0]))
                .filter(|(_, v)| v.abs() > PIVOT_TOL)
                .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()));
            if let Some((j, _)) = candidate {
                let w = &self.binv * self.a.column(j);
                self.pivot(row, j, &w);
            }
        }
    }

    fn structural_solution(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.n);
        for (k, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                x[j] = self.xb[k].max(0.0);
            }
        }
        x
    }
}

/// Two-phase revised simplex with Dantzig pricing, switching to Bland's rule
/// after a run of degenerate pivots.
pub fn simplex_solve(lp: &StandardFormLp, max_pivots: usize) -> LpSolution {
    let n = lp.cols();
    let fail = |status, pivots| LpSolution {
        status,
        x: DVector::zeros(n),
        objective: f64::NAN,
        pivots,
    };

    let Some(rows) = independent_rows(&lp.a, &lp.b) else {
        return fail(LpStatus::Infeasible, 0);
    };
    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (k, &r) in rows.iter().enumerate() {
        let sign = if lp.b[r] < 0.0 { -1.0 } else { 1.0 };
        a.set_row(k, &(lp.a.row(r) * sign));
        b[k] = lp.b[r] * sign;
    }

    let mut sx = Simplex::new(&a, &b);

    // Phase 1: minimize the sum of artificials.
    let mut cost1 = vec![0.0; n + m];
    cost1[n..].iter_mut().for_each(|c| *c = 1.0);
    let allowed1 = vec![true; n + m];
    match sx.run(&cost1, &allowed1, max_pivots) {
        Outcome::Optimal => {}
        Outcome::IterationLimit => return fail(LpStatus::IterationLimit, sx.pivots),
        // The phase-1 objective is bounded below by zero.
        Outcome::Unbounded => return fail(LpStatus::Infeasible, sx.pivots),
    }
    sx.refactor();
    let infeasibility: f64 = sx
        .basis
        .iter()
        .zip(sx.xb.iter())
        .filter(|(&j, _)| j >= n)
        .map(|(_, &v)| v.abs())
        .sum();
    if infeasibility > 1e-9 * (1.0 + b.amax()) {
        return fail(LpStatus::Infeasible, sx.pivots);
    }
    sx.drive_out_artificials();

    // Phase 2 on the original cost; artificials may not re-enter.
    let mut cost2 = vec![0.0; n + m];
    cost2[..n].copy_from_slice(lp.c.as_slice());
    let mut allowed2 = vec![true; n + m];
    allowed2[n..].iter_mut().for_each(|a| *a = false);
    let outcome = sx.run(&cost2, &allowed2, max_pivots);
    match outcome {
        Outcome::Optimal => {}
        Outcome::Unbounded => return fail(LpStatus::Unbounded, sx.pivots),
        Outcome::IterationLimit => return fail(LpStatus::IterationLimit, sx.pivots),
    }
    sx.refactor();
    let x = sx.structural_solution();
    let objective = lp.c.dot(&x);
    LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        pivots: sx.pivots,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Estimate of `[x1; x2]`, length `2M`.
    pub x_hat: DVector<f64>,
    /// `‖x_hat‖₁`.
    pub objective: f64,
    pub pivots: usize,
}

/// Solves the l1 program for an instance. LP failures carry the instance seed.
pub fn l1_reconstruct(instance: &ProblemInstance) -> Result<Reconstruction> {
    let lp = to_standard_form(instance)?;
    let sol = simplex_solve(&lp, DEFAULT_MAX_PIVOTS);
    if sol.status != LpStatus::Optimal {
        return Err(Error::Lp {
            status: sol.status,
            seed: instance.seed,
        });
    }
    let n = instance.dictionary.ncols();
    let x_hat = sol.x.rows(0, n) - sol.x.rows(n, n);
    let objective = x_hat.lp_norm(1);
    Ok(Reconstruction {
        x_hat,
        objective,
        pivots: sol.pivots,
    })
}

/// Recovery succeeds when `‖x_hat - x‖² / len ≤ tol`. Vectors of different
/// length never match.
pub fn check_recovery(x_hat: &DVector<f64>, x_planted: &DVector<f64>, tol: f64) -> bool {
    if x_hat.len() != x_planted.len() || x_hat.is_empty() {
        return false;
    }
    (x_hat - x_planted).norm_squared() / x_hat.len() as f64 <= tol
}
