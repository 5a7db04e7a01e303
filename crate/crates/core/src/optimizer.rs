//! Minimum residual-ISI pulse design over PSWF coefficients.
//!
//! Minimizes `2 sum_{l > L} (a^T S(l) a)^2` subject to `|a| = 1` and
//! `sum a_i^2 (1 - lambda_i) = eps`. The feasible set is a smooth manifold; each
//! iterate is mapped back onto it exactly by the metric projection
//! `x_i = y_i / (1 + mu q_i)` (renormalized), with `mu` found by bisection, and a
//! BFGS model is kept on the tangent spaces. A few Newton steps on the
//! Lagrangian finish each run.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{gram_stack_for, GramStack};
use crate::error::{FtnError, Result};
use crate::pswf::PswfBasis;

#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub basis: Arc<PswfBasis>,
    /// Number of PSWFs in the expansion.
    pub n: usize,
    pub ts: f64,
    pub t_mod: f64,
    /// Equalizer depth L.
    pub depth: usize,
    pub epsilon: f64,
    pub even_only: bool,
    /// Random starts in addition to the deterministic one.
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl DesignProblem {
    /// Defaults: even coefficients only, 16 random restarts, 2000 iterations per start.
    pub fn new(basis: Arc<PswfBasis>, n: usize, ts: f64, t_mod: f64, depth: usize, epsilon: f64) -> Self {
        Self {
            basis,
            n,
            ts,
            t_mod,
            depth,
            epsilon,
            even_only: true,
            restarts: 16,
            seed: 0,
            max_iterations: 2000,
        }
    }

    /// Basis indices carried as free variables.
    pub fn active_indices(&self) -> Vec<usize> {
        if self.even_only {
            (0..self.n).step_by(2).collect()
        } else {
            (0..self.n).collect()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > self.basis.len() {
            return Err(FtnError::DimensionMismatch {
                expected: self.basis.len(),
                got: self.n,
            });
        }
        if !(self.t_mod > 0.0 && self.t_mod <= self.ts) {
            return Err(FtnError::InvalidConfig(format!(
                "modulation interval must lie in (0, {}], got {}",
                self.ts, self.t_mod
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(FtnError::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        let q: Vec<f64> = self
            .active_indices()
            .iter()
            .map(|&i| self.basis.complements()[i])
            .collect();
        let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(self.epsilon > lo && self.epsilon < hi) {
            return Err(FtnError::Infeasible(format!(
                "epsilon {} outside the achievable range ({lo:e}, {hi:e}) for N = {}",
                self.epsilon, self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    /// Coefficients for indices `0..N` (odd entries zero when optimizing even ones only).
    pub alphas: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// `(|sum a^2 - 1|, |sum a^2 lambda - (1 - eps)|)`.
    pub constraint_residuals: (f64, f64),
    pub restarts_used: usize,
    pub best_restart_index: usize,
    pub restart_log: Vec<RestartRecord>,
}

/// `(2 sum_{l>L} h_l^2, sum_{l>L} 8 h_l S(l) a)` with `h_l = a^T S(l) a`.
pub fn objective_and_gradient(
    gram: &GramStack,
    depth: usize,
    alpha: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    if alpha.len() != gram.dim() {
        return Err(FtnError::DimensionMismatch {
            expected: gram.dim(),
            got: alpha.len(),
        });
    }
    let mut value = 0.0;
    let mut grad = DVector::zeros(alpha.len());
    for l in (depth + 1)..=gram.l_max() {
        let sa = gram.matrix(l) * alpha;
        let h = alpha.dot(&sa);
        value += 2.0 * h * h;
        grad.axpy(8.0 * h, &sa, 1.0);
    }
    Ok((value, grad))
}

fn objective_hessian(gram: &GramStack, depth: usize, alpha: &DVector<f64>) -> DMatrix<f64> {
    let n = alpha.len();
    let mut hess = DMatrix::zeros(n, n);
    for l in (depth + 1)..=gram.l_max() {
        let s = gram.matrix(l);
        let sa = s * alpha;
        let h = alpha.dot(&sa);
        hess += &sa * sa.transpose() * 16.0 + s * (8.0 * h);
    }
    hess
}

/// The feasible set `{x : |x| = 1, sum x_i^2 q_i = eps}`.
struct ConstraintSet {
    q: DVector<f64>,
    eps: f64,
}

impl ConstraintSet {
    /// Closest feasible point to `y`, or `None` if `y` has no weight on one side of `eps`.
    fn project(&self, y: &DVector<f64>) -> Option<DVector<f64>> {
        let mean_q = |mu: f64| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (yi, qi) in y.iter().zip(self.q.iter()) {
                let s = yi / (1.0 + mu * qi);
                num += s * s * qi;
                den += s * s;
            }
            num / den - self.eps
        };
        let q_top = y
            .iter()
            .zip(self.q.iter())
            .filter(|(yi, _)| **yi != 0.0)
            .map(|(_, qi)| *qi)
            .fold(0.0f64, f64::max);
        if q_top <= self.eps {
            return None;
        }
        let pole = -1.0 / q_top;
        let mut hi = 1.0f64;
        while mean_q(hi) > 0.0 {
            hi *= 4.0;
            if hi > 1e300 {
                return None;
            }
        }
        let mut lo = 0.0f64.min(pole + 0.5 * (hi - pole));
        let mut step = 0.5;
        while mean_q(lo) < 0.0 {
            step *= 0.5;
            lo = pole + step * (hi - pole);
            if step < 1e-300 {
                return None;
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if mean_q(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 0.5 * (lo + hi);
        let mut x = DVector::from_iterator(
            y.len(),
            y.iter().zip(self.q.iter()).map(|(yi, qi)| yi / (1.0 + mu * qi)),
        );
        let norm = x.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        x /= norm;
        Some(x)
    }

    /// Orthonormal basis of the normal space at `x`: span{x, Qx}.
    fn normal_frame(&self, x: &DVector<f64>) -> (DVector<f64>, Option<DVector<f64>>) {
        let n1 = x.normalize();
        let qx = x.component_mul(&self.q);
        let mut n2 = &qx - &n1 * n1.dot(&qx);
        let len = n2.norm();
        if len > 1e-14 * qx.norm().max(1e-300) {
            n2 /= len;
            (n1, Some(n2))
        } else {
            (n1, None)
        }
    }

    fn to_tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (n1, n2) = self.normal_frame(x);
        let mut out = v - &n1 * n1.dot(v);
        if let Some(n2) = n2 {
            out -= &n2 * n2.dot(&out);
        }
        out
    }

    fn residuals(&self, x: &DVector<f64>) -> (f64, f64) {
        let e: f64 = x.iter().map(|a| a * a).sum();
        let oobe: f64 = x.iter().zip(self.q.iter()).map(|(a, q)| a * a * q).sum();
        ((e - 1.0).abs(), (oobe - self.eps).abs())
    }
}

struct RunOutcome {
    x: DVector<f64>,
    value: f64,
    kkt: f64,
    iterations: usize,
}

struct Runner<'a> {
    gram: &'a GramStack,
    depth: usize,
    set: ConstraintSet,
    max_iterations: usize,
}

impl Runner<'_> {
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        objective_and_gradient(self.gram, self.depth, x).expect("dimension checked at setup")
    }

    fn run(&self, start: &DVector<f64>) -> Option<RunOutcome> {
        let mut x = self.set.project(start)?;
        let (mut f, g) = self.eval(&x);
        let mut rg = self.set.to_tangent(&x, &g);
        let n = x.len();
        let mut h_inv = DMatrix::<f64>::identity(n, n);
        let mut scaled = false;
        let mut iterations = 0;
        let mut stalls = 0;

        while iterations < self.max_iterations {
            if rg.norm() <= 1e-13 {
                break;
            }
            iterations += 1;
            let mut d = -self.set.to_tangent(&x, &(&h_inv * &rg));
            let mut slope = d.dot(&rg);
            if !(slope < 0.0) {
                h_inv = DMatrix::identity(n, n);
                scaled = false;
                d = -rg.clone();
                slope = d.dot(&rg);
            }
            let mut t = if scaled { 1.0 } else { (0.1 / d.norm()).min(1.0) };
            let mut accepted = None;
            for _ in 0..60 {
                if let Some(y) = self.set.project(&(&x + &d * t)) {
                    let (fy, gy) = self.eval(&y);
                    if fy <= f + 1e-4 * t * slope {
                        accepted = Some((y, fy, gy));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((x_new, f_new, g_new)) = accepted else {
                stalls += 1;
                if stalls > 2 {
                    break;
                }
                h_inv = DMatrix::identity(n, n);
                scaled = false;
                continue;
            };
            let rg_new = self.set.to_tangent(&x_new, &g_new);
            let s = self.set.to_tangent(&x_new, &(&x_new - &x));
            let yv = &rg_new - self.set.to_tangent(&x_new, &rg);
            let sy = s.dot(&yv);
            if sy > 1e-300 && sy.is_finite() {
                if !scaled {
                    h_inv = DMatrix::identity(n, n) * (sy / yv.dot(&yv));
                    scaled = true;
                }
                let rho = 1.0 / sy;
                let eye = DMatrix::<f64>::identity(n, n);
                let left = &eye - &s * yv.transpose() * rho;
                let right = &eye - &yv * s.transpose() * rho;
                h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
            }
            let progress = f - f_new;
            x = x_new;
            f = f_new;
            rg = rg_new;
            if progress <= 1e-16 * f.abs() {
                stalls += 1;
                if stalls > 5 {
                    break;
                }
            } else {
                stalls = 0;
            }
        }

        let (x, f, kkt) = self.polish(x, f, rg);
        Some(RunOutcome {
            x,
            value: f,
            kkt,
            iterations,
        })
    }

    /// Newton steps on the tangent space using the exact Lagrangian Hessian.
    fn polish(&self, mut x: DVector<f64>, mut f: f64, mut rg: DVector<f64>) -> (DVector<f64>, f64, f64) {
        for _ in 0..8 {
            let (n1, n2) = self.set.normal_frame(&x);
            let Some(n2) = n2 else { break };
            let (_, g) = self.eval(&x);
            // multipliers: g = a x + b Qx (least squares on the normal frame)
            let qx = x.component_mul(&self.set.q);
            let a_mat = DMatrix::from_columns(&[x.clone(), qx]);
            let Some(coef) = (a_mat.transpose() * &a_mat)
                .try_inverse()
                .map(|inv| inv * a_mat.transpose() * &g)
            else {
                break;
            };
            let n = x.len();
            let lag = objective_hessian(self.gram, self.depth, &x)
                - DMatrix::<f64>::identity(n, n) * (2.0 * 0.5 * coef[0])
                - DMatrix::from_diagonal(&self.set.q) * (2.0 * 0.5 * coef[1]);
            // tangent basis: complement of {n1, n2}
            let mut frame = DMatrix::<f64>::identity(n, n);
            for mut col in frame.column_iter_mut() {
                let v = col.clone_owned();
                let v = &v - &n1 * n1.dot(&v);
                let v = &v - &n2 * n2.dot(&v);
                col.copy_from(&v);
            }
            let svd = frame.svd(true, false);
            let Some(u) = svd.u else { break };
            let basis = u.columns(0, n - 2).into_owned();
            let h_red = basis.transpose() * &lag * &basis;
            let g_red = basis.transpose() * &rg;
            let Some(chol) = h_red.clone().cholesky() else { break };
            let step = &basis * chol.solve(&(-g_red));
            let Some(y) = self.set.project(&(&x + &step)) else { break };
            let (fy, gy) = self.eval(&y);
            let rgy = self.set.to_tangent(&y, &gy);
            if fy <= f * (1.0 + 1e-12) && rgy.norm() < rg.norm() {
                x = y;
                f = fy;
                rg = rgy;
            } else {
                break;
            }
            if rg.norm() <= 1e-15 {
                break;
            }
        }
        let kkt = rg.norm();
        (x, f, kkt)
    }
}

fn deterministic_start(indices: &[usize]) -> DVector<f64> {
    // geometric, alternating in the even index, all mass on even functions
    DVector::from_iterator(
        indices.len(),
        indices.iter().map(|&i| {
            if i % 2 == 0 {
                (-0.6f64).powi((i / 2) as i32)
            } else {
                0.0
            }
        }),
    )
}

fn restart_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 of (seed, index)
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the deterministic start plus `restarts` seeded random starts and keeps the best
/// stationary point (lowest objective, ties to the lowest restart index).
pub fn solve(problem: &DesignProblem) -> Result<DesignResult> {
    problem.validate()?;
    let indices = problem.active_indices();
    let gram = gram_stack_for(&problem.basis, &indices, problem.t_mod, problem.ts)?;
    solve_with_gram(problem, &gram)
}

/// As [`solve`] with a precomputed Gram stack over [`DesignProblem::active_indices`].
pub fn solve_with_gram(problem: &DesignProblem, gram: &GramStack) -> Result<DesignResult> {
    problem.validate()?;
    let indices = problem.active_indices();
    if gram.indices() != indices.as_slice() {
        return Err(FtnError::DimensionMismatch {
            expected: indices.len(),
            got: gram.dim(),
        });
    }
    let set = ConstraintSet {
        q: DVector::from_iterator(indices.len(), indices.iter().map(|&i| problem.basis.complements()[i])),
        eps: problem.epsilon,
    };
    let runner = Runner {
        gram,
        depth: problem.depth,
        set,
        max_iterations: problem.max_iterations,
    };

    let starts: Vec<DVector<f64>> = (0..=problem.restarts)
        .map(|k| {
            if k == 0 {
                deterministic_start(&indices)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(problem.seed, k));
                DVector::from_iterator(
                    indices.len(),
                    (0..indices.len()).map(|_| StandardNormal.sample(&mut rng)),
                )
            }
        })
        .collect();

    let outcomes: Vec<Option<RunOutcome>> = starts.par_iter().map(|s| runner.run(s)).collect();

    let tolerance = |f: f64| 1e-6 * f.abs().max(1.0);
    let mut log = Vec::with_capacity(outcomes.len());
    let mut best: Option<(usize, &RunOutcome)> = None;
    for (k, out) in outcomes.iter().enumerate() {
        let Some(out) = out else {
            log.push(RestartRecord {
                index: k,
                objective: f64::NAN,
                kkt_residual: f64::NAN,
                iterations: 0,
                converged: false,
            });
            continue;
        };
        let converged = out.kkt < tolerance(out.value);
        log.push(RestartRecord {
            index: k,
            objective: out.value,
            kkt_residual: out.kkt,
            iterations: out.iterations,
            converged,
        });
        if !converged {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => out.value < b.value - 1e-12 * b.value.abs(),
        };
        if better {
            best = Some((k, out));
        }
    }

    let Some((best_index, out)) = best else {
        return Err(FtnError::NoConvergence(format!(
            "none of {} starts reached stationarity",
            outcomes.len()
        )));
    };

    let mut x = out.x.clone();
    if x[0] < 0.0 {
        x.neg_mut();
    }
    let residuals = runner.set.residuals(&x);
    let mut alphas = vec![0.0; problem.n];
    for (k, &i) in indices.iter().enumerate() {
        alphas[i] = x[k];
    }
    Ok(DesignResult {
        alphas,
        objective: out.value,
        kkt_residual: out.kkt,
        constraint_residuals: residuals,
        restarts_used: outcomes.len(),
        best_restart_index: best_index,
        restart_log: log,
    })
}
