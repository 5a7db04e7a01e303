//! Prolate spheroidal wave functions for a time-bandwidth product `c = 2 Ts W`.
//!
//! Everything is computed on the normalized interval [-1, 1], where the
//! band-limiting kernel reads `sin(w (x - y)) / (pi (x - y))` with `w = pi c / 2`.
//! The eigenfunctions come from the commuting Sturm-Liouville operator
//!
//! ```text
//! (1 - x^2) psi'' - 2 x psi' - w^2 x^2 psi = -chi psi
//! ```
//!
//! which is symmetric tridiagonal in the normalized Legendre basis (even and
//! odd degrees decouple). The energy concentrations `lambda_i` are not
//! produced by that eigenproblem; they are recovered from the Fourier
//! self-reciprocity of the PSWFs,
//!
//! ```text
//! mu_i psi_i(x) = int_{-1}^{1} exp(i w x t) psi_i(t) dt,   lambda_i = w |mu_i|^2 / (2 pi)
//! ```
//!
//! evaluated at `x = 0` (even i) or differentiated there (odd i). Near the
//! plateau `lambda_i` rounds to 1.0 in double precision, so the complement
//! `1 - lambda_i` is obtained separately by integrating
//! `d lambda_i / d w = (2 / w) lambda_i psi_i(1)^2` from `w` to infinity.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FtnError, Result};
use crate::quadrature::{legendre_at_zero, normalized_legendre, GaussLegendre};

/// Complements smaller than this are recomputed by integrating over the bandwidth.
const COMPLEMENT_SWITCH: f64 = 1e-4;
/// Magnitude allowed for the last retained Legendre coefficients.
const TAIL_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PswfConfig {
    /// Time-bandwidth product `c = 2 Ts W`.
    pub c: f64,
    pub n_funcs: usize,
    /// Number of normalized Legendre polynomials kept per function.
    pub legendre_order: usize,
    /// Gauss-Legendre nodes used for inner products on [-1, 1].
    pub quadrature_nodes: usize,
}

impl PswfConfig {
    /// Default truncation: `n_funcs + ceil(c) + 40` Legendre terms and 512 quadrature nodes.
    pub fn new(c: f64, n_funcs: usize) -> Self {
        let extra = if c.is_finite() && c > 0.0 { c.ceil() as usize } else { 0 };
        Self {
            c,
            n_funcs,
            legendre_order: n_funcs + extra + 40,
            quadrature_nodes: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(FtnError::InvalidConfig(format!(
                "time-bandwidth product must be positive, got {}",
                self.c
            )));
        }
        if self.n_funcs == 0 {
            return Err(FtnError::InvalidConfig("n_funcs must be at least 1".into()));
        }
        let min_order = self.n_funcs + self.c.ceil() as usize + 10;
        if self.legendre_order < min_order {
            return Err(FtnError::InvalidConfig(format!(
                "legendre_order {} below the minimum {} for c = {} and {} functions",
                self.legendre_order, min_order, self.c, self.n_funcs
            )));
        }
        if self.quadrature_nodes < 2 * self.legendre_order.min(256) {
            return Err(FtnError::InvalidConfig(format!(
                "quadrature_nodes {} too small for legendre_order {}",
                self.quadrature_nodes, self.legendre_order
            )));
        }
        Ok(())
    }

    /// Slepian's bandwidth parameter on [-1, 1].
    pub fn omega(&self) -> f64 {
        0.5 * PI * self.c
    }
}

/// Truncated PSWF family. Immutable once built.
#[derive(Debug, Clone)]
pub struct PswfBasis {
    config: PswfConfig,
    eigenvalues: Vec<f64>,
    complements: Vec<f64>,
    chi: Vec<f64>,
    /// Row i holds the coefficients of psi_i over normalized Legendre polynomials.
    coeffs: Vec<Vec<f64>>,
}

/// JSON export of a basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisExport {
    pub c: f64,
    pub n_funcs: usize,
    pub eigenvalues: Vec<f64>,
    pub complements: Vec<f64>,
    pub legendre_coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(i: usize) -> Self {
        if i.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

struct BlockSolution {
    chi: Vec<f64>,
    /// Full-length (legendre_order) coefficient vectors.
    vectors: Vec<Vec<f64>>,
}

fn block_entries(omega: f64, order: usize, parity: usize) -> (Vec<f64>, Vec<f64>) {
    let w2 = omega * omega;
    let ks: Vec<usize> = (parity..order).step_by(2).collect();
    let diag = ks
        .iter()
        .map(|&k| {
            let kf = k as f64;
            kf * (kf + 1.0)
                + w2 * (2.0 * kf * (kf + 1.0) - 1.0) / ((2.0 * kf + 3.0) * (2.0 * kf - 1.0))
        })
        .collect();
    let off = ks
        .iter()
        .take(ks.len().saturating_sub(1))
        .map(|&k| {
            let kf = k as f64;
            w2 * (kf + 2.0) * (kf + 1.0)
                / ((2.0 * kf + 3.0) * ((2.0 * kf + 1.0) * (2.0 * kf + 5.0)).sqrt())
        })
        .collect();
    (diag, off)
}

/// Lowest `count` eigenpairs of one parity block, ordered by ascending chi.
fn solve_block(omega: f64, order: usize, parity: usize, count: usize) -> Result<BlockSolution> {
    let (diag, off) = block_entries(omega, order, parity);
    let m = diag.len();
    if count > m {
        return Err(FtnError::InvalidConfig(format!(
            "legendre_order {order} too small for {count} functions of one parity"
        )));
    }
    let mut mat = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        mat[(j, j)] = diag[j];
        if j + 1 < m {
            mat[(j, j + 1)] = off[j];
            mat[(j + 1, j)] = off[j];
        }
    }
    let eig = SymmetricEigen::try_new(mat, 1e-15, 10_000).ok_or_else(|| {
        FtnError::ConvergenceFailure("tridiagonal eigen-decomposition did not converge".into())
    })?;
    let mut order_idx: Vec<usize> = (0..m).collect();
    order_idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut chi = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for &col in order_idx.iter().take(count) {
        let x = eig.eigenvalues[col];
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        refine_leading_components(&diag, &off, x, &mut v);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        if v[m - 1].abs() > TAIL_TOLERANCE {
            return Err(FtnError::ConvergenceFailure(format!(
                "Legendre tail coefficient {:e} exceeds tolerance; raise legendre_order",
                v[m - 1].abs()
            )));
        }
        let mut full = vec![0.0; order];
        for (j, a) in v.into_iter().enumerate() {
            full[parity + 2 * j] = a;
        }
        chi.push(x);
        vectors.push(full);
    }
    Ok(BlockSolution { chi, vectors })
}

/// The leading (small-degree) coefficients of high-index functions are tiny and
/// carry only absolute accuracy from the dense solver. Forward recurrence from
/// the first coefficient is stable there, so it restores relative accuracy.
fn refine_leading_components(diag: &[f64], off: &[f64], chi: f64, v: &mut [f64]) {
    let peak = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let Some(stop) = v.iter().position(|a| a.abs() >= 0.1 * peak) else {
        return;
    };
    if stop == 0 {
        return;
    }
    let mut f = vec![0.0; stop + 1];
    f[0] = 1.0;
    for j in 0..stop {
        let prev = if j > 0 { off[j - 1] * f[j - 1] } else { 0.0 };
        f[j + 1] = -((diag[j] - chi) * f[j] + prev) / off[j];
        if !f[j + 1].is_finite() {
            return;
        }
    }
    if f[stop] == 0.0 {
        return;
    }
    let scale = v[stop] / f[stop];
    for j in 0..stop {
        v[j] = scale * f[j];
    }
}

/// Energy concentration from the Fourier eigenvalue at the origin.
fn concentration(omega: f64, index: usize, coeffs: &[f64], p0: &[f64]) -> f64 {
    if index.is_multiple_of(2) {
        // psi(0) = sum d_k sqrt(k + 1/2) P_k(0);  int psi = sqrt(2) d_0
        let psi0: f64 = coeffs
            .iter()
            .zip(p0)
            .enumerate()
            .map(|(k, (d, p))| d * (k as f64 + 0.5).sqrt() * p)
            .sum();
        let mu = 2f64.sqrt() * coeffs[0] / psi0;
        omega / (2.0 * PI) * mu * mu
    } else {
        // psi'(0) = sum d_k sqrt(k + 1/2) k P_{k-1}(0);  int t psi = sqrt(2/3) d_1
        let dpsi0: f64 = coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, d)| d * (k as f64 + 0.5).sqrt() * k as f64 * p0[k - 1])
            .sum();
        let mu = omega * (2.0f64 / 3.0).sqrt() * coeffs[1] / dpsi0;
        omega / (2.0 * PI) * mu * mu
    }
}

fn end_value(coeffs: &[f64]) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, d)| d * (k as f64 + 0.5).sqrt())
        .sum()
}

fn fix_sign(index: usize, coeffs: &mut [f64], p0: &[f64]) {
    // psi_i has the sign of P_i near the origin: psi(0) (even) or psi'(0) (odd)
    // carries the sign (-1)^{floor(i/2)}.
    let probe: f64 = if index.is_multiple_of(2) {
        coeffs
            .iter()
            .zip(p0)
            .enumerate()
            .map(|(k, (d, p))| d * (k as f64 + 0.5).sqrt() * p)
            .sum()
    } else {
        coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, d)| d * (k as f64 + 0.5).sqrt() * k as f64 * p0[k - 1])
            .sum()
    };
    let want = if (index / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
    if probe * want < 0.0 {
        coeffs.iter_mut().for_each(|d| *d = -*d);
    }
}

/// Eigenfunctions (sign-fixed, merged by index) and concentrations for the first
/// `count` functions at bandwidth `omega`.
fn solve_family(omega: f64, order: usize, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let n_even = count.div_ceil(2);
    let n_odd = count / 2;
    let even = solve_block(omega, order, 0, n_even)?;
    let odd = if n_odd > 0 {
        Some(solve_block(omega, order, 1, n_odd)?)
    } else {
        None
    };
    let p0 = legendre_at_zero(order);
    let mut chi = Vec::with_capacity(count);
    let mut coeffs = Vec::with_capacity(count);
    let mut lambdas = Vec::with_capacity(count);
    for i in 0..count {
        let (x, mut v) = if i % 2 == 0 {
            (even.chi[i / 2], even.vectors[i / 2].clone())
        } else {
            let o = odd.as_ref().expect("odd block solved when count > 1");
            (o.chi[i / 2], o.vectors[i / 2].clone())
        };
        fix_sign(i, &mut v, &p0);
        lambdas.push(concentration(omega, i, &v, &p0));
        chi.push(x);
        coeffs.push(v);
    }
    Ok((chi, coeffs, lambdas))
}

fn order_for(omega: f64, count: usize) -> usize {
    count + (2.0 * omega / PI).ceil() as usize + 40
}

/// `1 - lambda_i(omega)` for each `i < count`, by integrating
/// `(2 / s) lambda_i(s) psi_i(1; s)^2` over `s` in `[omega, inf)`.
fn complements_by_integration(omega: f64, count: usize) -> Result<Vec<f64>> {
    let gl = GaussLegendre::new(12);
    let panel = 2.0;
    let mut acc = vec![0.0; count];
    for p in 0..60 {
        let lo = omega + panel * p as f64;
        let (nodes, weights) = gl.mapped(lo, lo + panel);
        let mut contrib = vec![0.0; count];
        for (s, w) in nodes.iter().zip(&weights) {
            let (_, coeffs, lambdas) = solve_family(*s, order_for(*s, count), count)?;
            for i in 0..count {
                let e = end_value(&coeffs[i]);
                contrib[i] += w * 2.0 / s * lambdas[i].min(1.0) * e * e;
            }
        }
        let mut done = true;
        for i in 0..count {
            acc[i] += contrib[i];
            // psi(1)^2 bottoms out near 1e-30 from cancellation in the Legendre sum
            if contrib[i] > 1e-17 * acc[i] && contrib[i] > 1e-28 {
                done = false;
            }
        }
        if done {
            return Ok(acc);
        }
    }
    Err(FtnError::ConvergenceFailure(
        "bandwidth integral for eigenvalue complements did not converge".into(),
    ))
}

impl PswfBasis {
    pub fn build(config: PswfConfig) -> Result<Self> {
        config.validate()?;
        let omega = config.omega();
        let n = config.n_funcs;
        let (chi, coeffs, lambdas) = solve_family(omega, config.legendre_order, n)?;

        for w in chi.windows(2) {
            if w[1] <= w[0] {
                return Err(FtnError::ConvergenceFailure(
                    "Sturm-Liouville eigenvalues of the two parities do not interlace".into(),
                ));
            }
        }

        let mut complements: Vec<f64> = lambdas.iter().map(|l| 1.0 - l).collect();
        let plateau = complements
            .iter()
            .take_while(|&&q| q < COMPLEMENT_SWITCH)
            .count();
        if plateau > 0 {
            let refined = complements_by_integration(omega, plateau)?;
            complements[..plateau].copy_from_slice(&refined);
        }
        let eigenvalues: Vec<f64> = lambdas
            .iter()
            .zip(&complements)
            .map(|(l, q)| if *q < COMPLEMENT_SWITCH { 1.0 - q } else { *l })
            .collect();

        let basis = Self {
            config,
            eigenvalues,
            complements,
            chi,
            coeffs,
        };
        basis.check_ordering()?;
        Ok(basis)
    }

    fn check_ordering(&self) -> Result<()> {
        for i in 1..self.len() {
            let (a, b) = (self.eigenvalues[i - 1], self.eigenvalues[i]);
            let (qa, qb) = (self.complements[i - 1], self.complements[i]);
            let strict = if a < 0.5 { b < a } else { qb > qa };
            if !(b > 0.0 && b <= a && strict) {
                return Err(FtnError::ConvergenceFailure(format!(
                    "eigenvalues not strictly decreasing at index {i}: {a:e} -> {b:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &PswfConfig {
        &self.config
    }

    pub fn c(&self) -> f64 {
        self.config.c
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Energy concentrations lambda_i. Values on the plateau may round to 1.0;
    /// use [`PswfBasis::complements`] where `1 - lambda_i` matters.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `1 - lambda_i`, accurate to relative precision even when lambda_i rounds to 1.
    pub fn complements(&self) -> &[f64] {
        &self.complements
    }

    pub fn sturm_liouville_eigenvalues(&self) -> &[f64] {
        &self.chi
    }

    pub fn legendre_coeffs(&self, i: usize) -> &[f64] {
        &self.coeffs[i]
    }

    pub fn parity(&self, i: usize) -> Parity {
        Parity::of(i)
    }

    /// `psi_i(x)` on [-1, 1], normalized to unit energy there.
    pub fn eval_normalized(&self, i: usize, x: f64) -> f64 {
        let mut p = vec![0.0; self.config.legendre_order];
        normalized_legendre(x, &mut p);
        dot(&self.coeffs[i], &p)
    }

    /// All `psi_i(x)`, `i < out.len()`, sharing one Legendre evaluation.
    pub fn eval_all_normalized(&self, x: f64, legendre_buf: &mut [f64], out: &mut [f64]) {
        normalized_legendre(x, legendre_buf);
        for (o, c) in out.iter_mut().zip(&self.coeffs) {
            *o = dot(c, legendre_buf);
        }
    }

    /// Unit-energy truncated PSWF `D phi_i(t) / sqrt(lambda_i)` on `[-ts/2, ts/2]`.
    pub fn eval_truncated(&self, i: usize, t: f64, ts: f64) -> Result<f64> {
        if i >= self.len() {
            return Err(FtnError::DimensionMismatch {
                expected: self.len(),
                got: i + 1,
            });
        }
        let half = 0.5 * ts;
        if t.abs() > half {
            return Err(FtnError::OutOfInterval { t, half });
        }
        Ok((2.0 / ts).sqrt() * self.eval_normalized(i, t / half))
    }

    /// Smallest `N > c` whose tail bound `min(1, eps / (1 - lambda_{N-1}))` is within
    /// relative slack `delta` of `eps`.
    pub fn choose_basis_size(&self, epsilon: f64, delta: f64) -> Result<usize> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(FtnError::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        let first = self.config.c.floor() as usize + 1;
        for n in first.max(1)..=self.len() {
            let q = self.complements[n - 1];
            let bound = (epsilon / q).min(1.0);
            if bound <= epsilon * (1.0 + delta) {
                return Ok(n);
            }
        }
        Err(FtnError::BasisTooSmall {
            smallest_lambda: *self.eigenvalues.last().unwrap_or(&1.0),
        })
    }

    /// Max over quadrature nodes of `|lambda_i psi_i(x) - int K(x, y) psi_i(y) dy|`.
    pub fn integral_equation_residual(&self, i: usize) -> f64 {
        let gl = GaussLegendre::new(self.config.quadrature_nodes);
        let omega = self.config.omega();
        let psi: Vec<f64> = gl.nodes().iter().map(|&y| self.eval_normalized(i, y)).collect();
        let mut worst = 0.0f64;
        for (j, &x) in gl.nodes().iter().enumerate() {
            let mut acc = 0.0;
            for (m, (&y, &w)) in gl.nodes().iter().zip(gl.weights()).enumerate() {
                acc += w * sinc_kernel(omega, x - y) * psi[m];
            }
            worst = worst.max((self.eigenvalues[i] * psi[j] - acc).abs());
        }
        worst
    }

    pub fn export(&self) -> BasisExport {
        BasisExport {
            c: self.config.c,
            n_funcs: self.len(),
            eigenvalues: self.eigenvalues.clone(),
            complements: self.complements.clone(),
            legendre_coeffs: self.coeffs.clone(),
        }
    }
}

/// `sin(w d) / (pi d)` with its limit `w / pi` at d = 0.
pub fn sinc_kernel(omega: f64, d: f64) -> f64 {
    if d.abs() < 1e-12 {
        omega / PI
    } else {
        (omega * d).sin() / (PI * d)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
