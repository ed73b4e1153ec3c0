//! Deflection coefficient of the diffusion filter with a static combiner.
//!
//! Under the scalar-Gaussian sample model the energy at a BS is `Y = x²`
//! with `x ~ N(0, P_n)` when the incumbent is absent and `x ~ N(√P_s, P_n)`
//! when it is present. The steady-state mean of the weights has a closed
//! form; the variance under the null hypothesis is available three ways:
//! the energy-conservation expansion with its published fourth-moment term,
//! the same expansion with that term recomputed, and an exact second-moment
//! solve over the joint `(w, d)` state.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, io_err, Error, Result};
use crate::rng::{sub_stream, Purpose};

/// Stop the Lyapunov series once a block of terms is this small.
const LYAPUNOV_TERM_TOL: f64 = 1e-14;
/// Residual bound enforced on every Lyapunov solution.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;
/// Largest network handled by the exact joint-moment solve.
pub const EXACT_MAX_BS: usize = 16;
/// Minimum steady-state samples per hypothesis for Monte Carlo estimates.
pub const MIN_MC_SAMPLES: usize = 10_000;

/// Row-major square matrix helpers.
fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `P S Pᵀ`.
fn sandwich(p: &[f64], s: &[f64], n: usize) -> Vec<f64> {
    matmul(&matmul(p, s, n), &transpose(p, n), n)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    let scale = max_abs(&a).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[piv * n + col].abs() <= 1e-14 * scale {
            return Err(Error::Numerical("singular linear system".into()));
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for i in col + 1..n {
            let f = a[i * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[i * n + j] -= f * a[col * n + j];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Ok(x)
}

/// True when the spectral radius of `b` is below one: some power
/// `b^(2^j)` must reach an infinity norm below one.
pub fn is_stable(b: &[f64], n: usize) -> bool {
    let norm = |m: &[f64]| (0..n).map(|i| m[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut p = b.to_vec();
    for _ in 0..64 {
        let v = norm(&p);
        if v < 1.0 {
            return true;
        }
        if !v.is_finite() || v > 1e150 {
            return false;
        }
        p = matmul(&p, &p, n);
    }
    false
}

/// Solves `Σ − B Σ Bᵀ = I` (row-major `B`, `n×n`) by summing the series
/// `Σ_t Bᵗ (Bᵗ)ᵀ` in doubling blocks, then verifies the residual.
pub fn solve_lyapunov(b: &[f64], n: usize) -> Result<Vec<f64>> {
    if b.len() != n * n {
        return Err(invalid("Lyapunov matrix has the wrong size"));
    }
    if !is_stable(b, n) {
        return Err(Error::Numerical("Lyapunov series does not converge: spectral radius >= 1".into()));
    }
    let mut s = identity(n);
    let mut p = b.to_vec();
    for _ in 0..200 {
        let term = sandwich(&p, &s, n);
        let small = max_abs(&term) < LYAPUNOV_TERM_TOL;
        for (x, t) in s.iter_mut().zip(&term) {
            *x += t;
        }
        if small {
            break;
        }
        p = matmul(&p, &p, n);
    }
    // fixed-point polish: each pass multiplies the residual by B(·)Bᵀ
    for _ in 0..3 {
        let mut next = sandwich(b, &s, n);
        for i in 0..n {
            next[i * n + i] += 1.0;
        }
        s = next;
    }
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (s[i * n + j] + s[j * n + i]);
            s[i * n + j] = m;
            s[j * n + i] = m;
        }
    }
    let r = lyapunov_residual(b, &s, n);
    if r > LYAPUNOV_RESIDUAL_TOL {
        return Err(Error::Numerical(format!("Lyapunov residual {r:e} above tolerance")));
    }
    Ok(s)
}

/// `max |Σ − B Σ Bᵀ − I|`.
pub fn lyapunov_residual(b: &[f64], s: &[f64], n: usize) -> f64 {
    let bsb = sandwich(b, s, n);
    let mut r: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            r = r.max((s[i * n + j] - bsb[i * n + j] - id).abs());
        }
    }
    r
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Which hypothesis generates the samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Noise only.
    Absent,
    /// Incumbent present.
    Present,
}

/// Diffusion filter with a fixed combiner under the scalar-Gaussian model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticDiffusionModel {
    pub num_bs: usize,
    /// `combiner[j * K + k]` is `a_{jk}`, the weight BS `k` gives to `j`;
    /// columns sum to one.
    pub combiner: Vec<f64>,
    pub steps: Vec<f64>,
    pub noise_power: f64,
    pub signal_power: f64,
    pub smoothing: f64,
}

impl StaticDiffusionModel {
    /// Averaging rule `a_{jk} = 1/|N_k|` over the given neighborhoods
    /// (each must contain its own index).
    pub fn averaging(neighbors: &[Vec<usize>], step: f64, noise_power: f64, signal_power: f64, smoothing: f64) -> Result<Self> {
        let k_n = neighbors.len();
        let mut combiner = vec![0.0; k_n * k_n];
        for (k, nb) in neighbors.iter().enumerate() {
            if !nb.contains(&k) {
                return Err(invalid(format!("neighborhood of BS {k} does not contain itself")));
            }
            for &j in nb {
                if j >= k_n {
                    return Err(invalid(format!("neighbor {j} of BS {k} out of range")));
                }
                combiner[j * k_n + k] = 1.0 / nb.len() as f64;
            }
        }
        let model = StaticDiffusionModel {
            num_bs: k_n,
            combiner,
            steps: vec![step; k_n],
            noise_power,
            signal_power,
            smoothing,
        };
        model.validate()?;
        Ok(model)
    }

    /// Averaging rule on a `side × side` lattice with 4-neighborhoods.
    pub fn grid(side: usize, step: f64, noise_power: f64, signal_power: f64, smoothing: f64) -> Result<Self> {
        let neighbors: Vec<Vec<usize>> = (0..side * side)
            .map(|k| {
                let (r, c) = (k / side, k % side);
                let mut nb = vec![k];
                if r > 0 {
                    nb.push(k - side);
                }
                if r + 1 < side {
                    nb.push(k + side);
                }
                if c > 0 {
                    nb.push(k - 1);
                }
                if c + 1 < side {
                    nb.push(k + 1);
                }
                nb
            })
            .collect();
        Self::averaging(&neighbors, step, noise_power, signal_power, smoothing)
    }

    pub fn with_signal_power(&self, signal_power: f64) -> Self {
        StaticDiffusionModel {
            signal_power,
            ..self.clone()
        }
    }

    pub fn with_step(&self, step: f64) -> Self {
        StaticDiffusionModel {
            steps: vec![step; self.num_bs],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k_n = self.num_bs;
        if k_n == 0 || self.combiner.len() != k_n * k_n || self.steps.len() != k_n {
            return Err(invalid("model dimensions are inconsistent"));
        }
        if self.combiner.iter().any(|&a| !(a >= 0.0)) {
            return Err(invalid("combiner entries must be nonnegative"));
        }
        for k in 0..k_n {
            let col: f64 = (0..k_n).map(|j| self.combiner[j * k_n + k]).sum();
            if (col - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("combiner column {k} sums to {col}")));
            }
        }
        if self.steps.iter().any(|&m| !(m > 0.0)) {
            return Err(invalid("step sizes must be positive"));
        }
        if !(self.noise_power > 0.0) || !(self.signal_power >= 0.0) {
            return Err(invalid("noise power must be positive and signal power nonnegative"));
        }
        if !(self.smoothing > 0.0 && self.smoothing < 1.0) {
            return Err(invalid("smoothing must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `E[Y²]` and `E[Y d]` under `h`.
    pub fn moments(&self, h: Hypothesis) -> (f64, f64) {
        let pn = self.noise_power;
        let z = self.smoothing;
        match h {
            Hypothesis::Absent => (3.0 * pn * pn, (3.0 - 2.0 * z) * pn * pn),
            Hypothesis::Present => {
                let ps = self.signal_power;
                let ey2 = ps * ps + 6.0 * ps * pn + 3.0 * pn * pn;
                (ey2, (1.0 - z) * ey2 + z * (ps + pn) * (ps + pn))
            }
        }
    }

    /// `(I − c M) Aᵀ` for a scalar `c`.
    fn transition(&self, c: f64) -> Vec<f64> {
        let k_n = self.num_bs;
        let mut b = vec![0.0; k_n * k_n];
        for k in 0..k_n {
            let f = 1.0 - c * self.steps[k];
            for j in 0..k_n {
                b[k * k_n + j] = f * self.combiner[j * k_n + k];
            }
        }
        b
    }
}

/// Steady-state mean `E[w] = (I − (I − M E[Y²]) Aᵀ)⁻¹ M E[Y d]`.
pub fn steady_mean(model: &StaticDiffusionModel, h: Hypothesis) -> Result<Vec<f64>> {
    model.validate()?;
    let k_n = model.num_bs;
    let (ey2, eyd) = model.moments(h);
    let b = model.transition(ey2);
    if !is_stable(&b, k_n) {
        return Err(Error::Numerical("mean recursion is unstable: step size too large".into()));
    }
    let mut a = identity(k_n);
    for (x, v) in a.iter_mut().zip(&b) {
        *x -= v;
    }
    let rhs = model.steps.iter().map(|m| m * eyd).collect();
    solve_linear(a, rhs, k_n)
}

/// Fourth-order term `E₀[(Y d)²]` in the closed form published with the
/// energy-conservation expansion.
pub fn phi_second_moment_published(noise_power: f64, smoothing: f64) -> f64 {
    let z = smoothing;
    let p4 = noise_power.powi(4);
    (1.0 - z).powi(2)
        * p4
        * (105.0 + 30.0 / (1.0 - z) + 9.0 * z * z / (1.0 - z * z) + 6.0 * z.powi(3) / ((1.0 + z) * (1.0 - z * z)))
}

/// `E₀[(Y d)²]` for i.i.d. scalar-Gaussian energies and a stationary
/// smoothing filter, computed from `E[Y⁴] = 105 P⁴`, `E[Y³] = 15 P³`,
/// `E[Y²] = 3 P²` and the filter's stationary moments.
pub fn phi_second_moment_exact(noise_power: f64, smoothing: f64) -> f64 {
    let z = smoothing;
    let p4 = noise_power.powi(4);
    (1.0 - z).powi(2)
        * p4
        * (105.0 + 30.0 * z / (1.0 - z) + 6.0 * z * z / (1.0 - z * z) + 3.0 * z * z / (1.0 - z).powi(2))
}

/// Method used for the null-hypothesis variance of the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    /// Energy-conservation expansion with the published `E₀[(Y d)²]`.
    Expansion,
    /// Same expansion with [`phi_second_moment_exact`].
    ExpansionExactPhi,
    /// Exact stationary second moments of the joint `(w, d)` recursion.
    JointMoments,
}

impl VarianceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            VarianceMethod::Expansion => "expansion",
            VarianceMethod::ExpansionExactPhi => "expansion_exact_phi",
            VarianceMethod::JointMoments => "joint_moments",
        }
    }
}

/// Network-average null variance `E₀‖w̃‖²/K` from the energy-conservation
/// expansion `Tr(MΣM Z̄) + E₀[wᵀ M YΣY M w] − 2 Σ_k c̄_k w_k`, with Σ the
/// Lyapunov solution for `B = (I − 3P_n² M) Aᵀ` and `z_diag` the diagonal of
/// `Z̄`.
pub fn expansion_variance(model: &StaticDiffusionModel, z_diag: f64) -> Result<f64> {
    let k_n = model.num_bs;
    let pn4 = model.noise_power.powi(4);
    let zeta = model.smoothing;
    let w0 = steady_mean(model, Hypothesis::Absent)?;
    let b = model.transition(3.0 * model.noise_power * model.noise_power);
    let sigma = solve_lyapunov(&b, k_n)?;
    let mu = &model.steps;
    let z_off = (3.0 - 2.0 * zeta).powi(2) * pn4;
    let mut total = 0.0;
    for k in 0..k_n {
        for j in 0..k_n {
            let s = sigma[k * k_n + j];
            // Tr(MΣM Z̄)
            let z = if j == k { z_diag } else { z_off };
            total += mu[k] * s * mu[j] * z;
            // E₀[Y Σ Y] entries
            let ysy = if j == k { 105.0 * pn4 * s } else { 9.0 * pn4 * s };
            total += w0[k] * mu[k] * ysy * mu[j] * w0[j];
        }
        let cross: f64 = (0..k_n).filter(|&j| j != k).map(|j| mu[j] * sigma[j * k_n + k]).sum();
        let c = (105.0 - 90.0 * zeta) * mu[k] * mu[k] * sigma[k * k_n + k] * pn4 + 3.0 * (3.0 - 2.0 * zeta) * pn4 * mu[k] * cross;
        total -= 2.0 * c * w0[k];
    }
    Ok(total / k_n as f64)
}

/// Null variance per the published expansion.
pub fn steady_variance(model: &StaticDiffusionModel) -> Result<f64> {
    expansion_variance(model, phi_second_moment_published(model.noise_power, model.smoothing))
}

/// Raw moments `E[Y^p]`, `p = 0..=4`, of `Y = x²` with `x ~ N(√P_s, P_n)`.
fn energy_moments(ps: f64, pn: f64) -> [f64; 5] {
    let a = ps.sqrt();
    let gauss = |p: usize| -> f64 {
        if p % 2 == 1 {
            return 0.0;
        }
        let dfact: f64 = (1..p).step_by(2).map(|q| q as f64).product();
        dfact * pn.powf(p as f64 / 2.0)
    };
    let raw = |p: usize| -> f64 {
        (0..=p)
            .map(|j| binomial(p, j) * a.powi((p - j) as i32) * gauss(j))
            .sum()
    };
    [1.0, raw(2), raw(4), raw(6), raw(8)]
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Stationary per-BS mean and variance of `w` from the exact second-moment
/// recursion of the state `x = [w; d; 1]`. Since `Y_i` is independent of
/// `x_{i-1}`, `E[x xᵀ]` obeys a linear map whose fixed point is solved
/// directly.
pub fn joint_moments(model: &StaticDiffusionModel, h: Hypothesis) -> Result<(Vec<f64>, Vec<f64>)> {
    model.validate()?;
    let k_n = model.num_bs;
    if k_n > EXACT_MAX_BS {
        return Err(Error::SizeGuard(format!(
            "joint-moment solve supports at most {EXACT_MAX_BS} BSs, got {k_n}"
        )));
    }
    let (ey2, _) = model.moments(h);
    if !is_stable(&model.transition(ey2), k_n) {
        return Err(Error::Numerical("mean recursion is unstable: step size too large".into()));
    }
    let ps = match h {
        Hypothesis::Absent => 0.0,
        Hypothesis::Present => model.signal_power,
    };
    let mom = energy_moments(ps, model.noise_power);
    let z = model.smoothing;
    let n = 2 * k_n + 1;
    let last = n - 1;
    // x_i = C0 x + Σ_k (Y_k C1k + Y_k² C2k) x
    let mut terms: Vec<(Option<usize>, usize, Vec<f64>)> = Vec::with_capacity(2 * k_n + 1);
    let mut c0 = vec![0.0; n * n];
    for k in 0..k_n {
        for j in 0..k_n {
            c0[k * n + j] = model.combiner[j * k_n + k];
        }
        c0[(k_n + k) * n + k_n + k] = z;
    }
    c0[last * n + last] = 1.0;
    terms.push((None, 0, c0));
    for k in 0..k_n {
        let mu = model.steps[k];
        let mut c1 = vec![0.0; n * n];
        c1[k * n + k_n + k] = z * mu;
        c1[(k_n + k) * n + last] = 1.0 - z;
        let mut c2 = vec![0.0; n * n];
        for j in 0..k_n {
            c2[k * n + j] = -mu * model.combiner[j * k_n + k];
        }
        c2[k * n + last] = (1.0 - z) * mu;
        terms.push((Some(k), 1, c1));
        terms.push((Some(k), 2, c2));
    }
    let nn = n * n;
    // vec(C R Dᵀ) = (C ⊗ D) vec(R) in row-major order
    let mut t = vec![0.0; nn * nn];
    for (ka, pa, ca) in &terms {
        for (kb, pb, cb) in &terms {
            let e = match (ka, kb) {
                (Some(a), Some(b)) if a == b => mom[pa + pb],
                _ => {
                    let ea = if ka.is_some() { mom[*pa] } else { 1.0 };
                    let eb = if kb.is_some() { mom[*pb] } else { 1.0 };
                    ea * eb
                }
            };
            for i in 0..n {
                for j in 0..n {
                    let a = ca[i * n + j];
                    if a == 0.0 {
                        continue;
                    }
                    for p in 0..n {
                        for q in 0..n {
                            let bv = cb[p * n + q];
                            if bv != 0.0 {
                                t[(i * n + p) * nn + j * n + q] += e * a * bv;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut sys = identity(nn);
    for (x, v) in sys.iter_mut().zip(&t) {
        *x -= v;
    }
    // pin E[1·1] = 1
    let pin = last * n + last;
    for j in 0..nn {
        sys[pin * nn + j] = 0.0;
    }
    sys[pin * nn + pin] = 1.0;
    let mut rhs = vec![0.0; nn];
    rhs[pin] = 1.0;
    let r = solve_linear(sys, rhs, nn)?;
    let mean: Vec<f64> = (0..k_n).map(|k| r[k * n + last]).collect();
    let var: Vec<f64> = (0..k_n).map(|k| r[k * n + k] - mean[k] * mean[k]).collect();
    Ok((mean, var))
}

/// Theoretical deflection of the network-average weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoreticalDeflection {
    pub method: VarianceMethod,
    pub mean_absent: Vec<f64>,
    pub mean_present: Vec<f64>,
    /// Network-average null variance.
    pub variance_absent: f64,
    pub delta_sq: f64,
}

impl TheoreticalDeflection {
    pub fn delta(&self) -> f64 {
        self.delta_sq.sqrt()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `δ² = (Ē₁[w] − Ē₀[w])² / V₀` with the chosen variance method.
pub fn theoretical_deflection(model: &StaticDiffusionModel, method: VarianceMethod) -> Result<TheoreticalDeflection> {
    let mean_absent = steady_mean(model, Hypothesis::Absent)?;
    let mean_present = steady_mean(model, Hypothesis::Present)?;
    let variance_absent = match method {
        VarianceMethod::Expansion => steady_variance(model)?,
        VarianceMethod::ExpansionExactPhi => {
            expansion_variance(model, phi_second_moment_exact(model.noise_power, model.smoothing))?
        }
        VarianceMethod::JointMoments => mean(&joint_moments(model, Hypothesis::Absent)?.1),
    };
    if !(variance_absent > 0.0) {
        return Err(Error::Numerical(format!("null variance {variance_absent:e} is not positive")));
    }
    let gap = mean(&mean_present) - mean(&mean_absent);
    Ok(TheoreticalDeflection {
        method,
        mean_absent,
        mean_present,
        variance_absent,
        delta_sq: gap * gap / variance_absent,
    })
}

/// Deflection of a single energy sample, `P_s / (√2 P_n)`.
pub fn deflection_energy_detector(signal_power: f64, noise_power: f64) -> f64 {
    signal_power / (std::f64::consts::SQRT_2 * noise_power)
}

/// Monte Carlo run length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McOptions {
    /// Independent chains, each on its own stream.
    pub chains: usize,
    /// Steady-state samples kept per chain.
    pub samples_per_chain: usize,
    /// Discarded warm-up steps; `None` picks ten time constants of the
    /// slowest mode.
    pub burn_in: Option<usize>,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            chains: 16,
            samples_per_chain: 100_000,
            burn_in: None,
            seed: 1,
        }
    }
}

/// Empirical moments of the weights from paired chains: both hypotheses
/// share the Gaussian draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McDeflection {
    pub mean_absent: Vec<f64>,
    pub mean_present: Vec<f64>,
    pub variance_absent: Vec<f64>,
    pub samples_per_hypothesis: usize,
    pub delta_sq: f64,
}

/// Simulates the static-combiner filter under both hypotheses.
pub fn deflection_monte_carlo(model: &StaticDiffusionModel, opts: &McOptions) -> Result<McDeflection> {
    model.validate()?;
    let k_n = model.num_bs;
    let total = opts.chains * opts.samples_per_chain;
    if total < MIN_MC_SAMPLES {
        return Err(invalid(format!(
            "{total} samples per hypothesis; at least {MIN_MC_SAMPLES} are required"
        )));
    }
    let (ey2, _) = model.moments(Hypothesis::Absent);
    let slowest = model.steps.iter().cloned().fold(f64::INFINITY, f64::min) * ey2;
    let burn = opts.burn_in.unwrap_or_else(|| (10.0 / slowest).ceil().min(1e8) as usize);
    let w_start = (3.0 - 2.0 * model.smoothing) / 3.0;
    let sd = model.noise_power.sqrt();
    let shift = model.signal_power.sqrt();
    let z = model.smoothing;
    let a = &model.combiner;

    let per_chain: Vec<[Vec<f64>; 3]> = (0..opts.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = sub_stream(opts.seed, 0, Purpose::Misc, c as u64);
            let mut x: Vec<f64> = (0..k_n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut d0: Vec<f64> = x.iter().map(|v| v * v).collect();
            let mut d1: Vec<f64> = x.iter().map(|v| (shift + v) * (shift + v)).collect();
            let mut w0 = vec![w_start; k_n];
            let mut w1 = vec![w_start; k_n];
            let mut psi0 = vec![0.0; k_n];
            let mut psi1 = vec![0.0; k_n];
            let mut s0 = vec![0.0; k_n];
            let mut s1 = vec![0.0; k_n];
            let mut q0 = vec![0.0; k_n];
            for t in 0..burn + opts.samples_per_chain {
                for v in x.iter_mut() {
                    *v = sd * rng.sample::<f64, _>(StandardNormal);
                }
                for k in 0..k_n {
                    let (mut p0, mut p1) = (0.0, 0.0);
                    for j in 0..k_n {
                        let ajk = a[j * k_n + k];
                        if ajk != 0.0 {
                            p0 += ajk * w0[j];
                            p1 += ajk * w1[j];
                        }
                    }
                    psi0[k] = p0;
                    psi1[k] = p1;
                }
                for k in 0..k_n {
                    let mu = model.steps[k];
                    let y0 = x[k] * x[k];
                    let y1 = (shift + x[k]) * (shift + x[k]);
                    d0[k] = z * d0[k] + (1.0 - z) * y0;
                    d1[k] = z * d1[k] + (1.0 - z) * y1;
                    w0[k] = psi0[k] + mu * y0 * (d0[k] - y0 * psi0[k]);
                    w1[k] = psi1[k] + mu * y1 * (d1[k] - y1 * psi1[k]);
                }
                if t >= burn {
                    for k in 0..k_n {
                        s0[k] += w0[k];
                        s1[k] += w1[k];
                        q0[k] += w0[k] * w0[k];
                    }
                }
            }
            [s0, s1, q0]
        })
        .collect();

    let mut s0 = vec![0.0; k_n];
    let mut s1 = vec![0.0; k_n];
    let mut q0 = vec![0.0; k_n];
    for [a0, a1, b0] in &per_chain {
        for k in 0..k_n {
            s0[k] += a0[k];
            s1[k] += a1[k];
            q0[k] += b0[k];
        }
    }
    let nf = total as f64;
    let mean_absent: Vec<f64> = s0.iter().map(|s| s / nf).collect();
    let mean_present: Vec<f64> = s1.iter().map(|s| s / nf).collect();
    let variance_absent: Vec<f64> = q0.iter().zip(&mean_absent).map(|(q, m)| q / nf - m * m).collect();
    let v = mean(&variance_absent);
    if !(v > 0.0) {
        return Err(Error::Numerical("empirical null variance is not positive".into()));
    }
    let gap = mean(&mean_present) - mean(&mean_absent);
    Ok(McDeflection {
        mean_absent,
        mean_present,
        variance_absent,
        samples_per_hypothesis: total,
        delta_sq: gap * gap / v,
    })
}

/// Theory and Monte Carlo side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeflectionReport {
    pub delta_sq_theory: f64,
    pub delta_sq_mc: f64,
    pub mean_absent: Vec<f64>,
    pub mean_present: Vec<f64>,
    pub variance_absent: f64,
    pub samples_per_hypothesis: usize,
}

pub fn deflection_report(model: &StaticDiffusionModel, method: VarianceMethod, opts: &McOptions) -> Result<DeflectionReport> {
    let th = theoretical_deflection(model, method)?;
    let mc = deflection_monte_carlo(model, opts)?;
    Ok(DeflectionReport {
        delta_sq_theory: th.delta_sq,
        delta_sq_mc: mc.delta_sq,
        mean_absent: mc.mean_absent.clone(),
        mean_present: mc.mean_present.clone(),
        variance_absent: mean(&mc.variance_absent),
        samples_per_hypothesis: mc.samples_per_hypothesis,
    })
}

/// One point of an SNR sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub step: f64,
    pub snr_db: f64,
    pub delta_theory: f64,
    pub delta_mc: f64,
    pub delta_ed: f64,
}

/// Sweeps `P_s = P_n · 10^(snr/10)` for each step size. Every point uses
/// the same Monte Carlo streams.
pub fn snr_sweep(
    base: &StaticDiffusionModel,
    steps: &[f64],
    snr_db: &[f64],
    method: VarianceMethod,
    opts: &McOptions,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(steps.len() * snr_db.len());
    for &mu in steps {
        for &snr in snr_db {
            let ps = base.noise_power * 10f64.powf(snr / 10.0);
            let model = base.with_step(mu).with_signal_power(ps);
            let th = theoretical_deflection(&model, method)?;
            let mc = deflection_monte_carlo(&model, opts)?;
            rows.push(SweepRow {
                step: mu,
                snr_db: snr,
                delta_theory: th.delta(),
                delta_mc: mc.delta_sq.sqrt(),
                delta_ed: deflection_energy_detector(ps, base.noise_power),
            });
        }
    }
    Ok(rows)
}

/// Writes `snr_db,delta_theory,delta_mc,delta_ed` (one step size per file).
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    writeln!(f, "snr_db,delta_theory,delta_mc,delta_ed").map_err(|e| io_err(path, e))?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.snr_db, r.delta_theory, r.delta_mc, r.delta_ed).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Ratios `mean(d)/mean(Y)` and `var(d)/var(Y)` of the smoothing filter
/// over `samples` steady-state steps of scalar-Gaussian noise energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterMoments {
    pub mean_ratio: f64,
    pub variance_ratio: f64,
    /// `(1 − ζ)² / (1 − ζ²)`.
    pub expected_variance_ratio: f64,
}

pub fn filter_moments<R: Rng + ?Sized>(noise_power: f64, smoothing: f64, samples: usize, rng: &mut R) -> Result<FilterMoments> {
    if samples < 2 || !(smoothing > 0.0 && smoothing < 1.0) || !(noise_power > 0.0) {
        return Err(invalid("filter moments need samples >= 2, smoothing in (0,1) and positive noise"));
    }
    let sd = noise_power.sqrt();
    let mut draw = || {
        let x: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        x * x
    };
    let mut d = draw();
    let warm = (20.0 / (1.0 - smoothing)).ceil() as usize;
    for _ in 0..warm {
        d = smoothing * d + (1.0 - smoothing) * draw();
    }
    let (mut sy, mut syy, mut sd_, mut sdd) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let y = draw();
        d = smoothing * d + (1.0 - smoothing) * y;
        sy += y;
        syy += y * y;
        sd_ += d;
        sdd += d * d;
    }
    let n = samples as f64;
    let (my, md) = (sy / n, sd_ / n);
    let (vy, vd) = (syy / n - my * my, sdd / n - md * md);
    Ok(FilterMoments {
        mean_ratio: md / my,
        variance_ratio: vd / vy,
        expected_variance_ratio: (1.0 - smoothing).powi(2) / (1.0 - smoothing * smoothing),
    })
}
