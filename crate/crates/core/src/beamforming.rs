//! Amplify-and-forward relay beamforming for one coalition.
//!
//! Every member receives the target's signal, whitens it with its own noise
//! level, scales it by a complex weight and forwards it to the base station.
//! With `k_i = conj(h_ub_i) * h_tu_i / sqrt(sigma_ii)` and
//! `Q = diag(|h_ub_i|^2)`, the SNR at the base station is
//!
//! ```text
//! SNR(w) = |w^H k|^2 / (w^H Q w + sigma^2)
//! ```
//!
//! and relay `i` spends `|w_i|^2 (|h_tu_i|^2 / sigma_ii + 1)` power.
//!
//! The SNR is maximised by bisection on the level `t`. Because `Q` is
//! diagonal, the phase of each weight can be aligned with `k_i`, so deciding
//! whether a level is reachable reduces to maximising the concave function
//!
//! ```text
//! f(rho) = sum_i a_i rho_i - sqrt(t) * sqrt(sum_i q_i rho_i^2 + sigma^2)
//! ```
//!
//! over the box `0 <= rho_i <= b_i`, with `a_i = |k_i|`, `q_i = |h_ub_i|^2`
//! and `b_i` the largest magnitude allowed by the power cap. The level is
//! reachable exactly when the maximum is nonnegative.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instantaneous channels of one coalition, leader at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelState {
    pub h_tu: Vec<Complex64>,
    pub h_ub: Vec<Complex64>,
    pub noise_cov_diag: Vec<f64>,
    pub sigma2_base: f64,
}

impl ChannelState {
    pub fn new(
        h_tu: Vec<Complex64>,
        h_ub: Vec<Complex64>,
        noise_cov_diag: Vec<f64>,
        sigma2_base: f64,
    ) -> Result<Self> {
        let ch = Self {
            h_tu,
            h_ub,
            noise_cov_diag,
            sigma2_base,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.h_tu.len();
        if self.h_ub.len() != n || self.noise_cov_diag.len() != n {
            return Err(Error::InvalidChannel(format!(
                "lengths differ: h_tu {}, h_ub {}, noise {}",
                n,
                self.h_ub.len(),
                self.noise_cov_diag.len()
            )));
        }
        let finite = |z: &Complex64| z.re.is_finite() && z.im.is_finite();
        if !self.h_tu.iter().all(finite) || !self.h_ub.iter().all(finite) {
            return Err(Error::InvalidChannel("non-finite channel gain".into()));
        }
        if !self.noise_cov_diag.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(Error::InvalidChannel("noise powers must be positive".into()));
        }
        if !(self.sigma2_base.is_finite() && self.sigma2_base > 0.0) {
            return Err(Error::InvalidChannel("base-station noise must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.h_tu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_tu.is_empty()
    }

    /// Whitened end-to-end gain `k_i`.
    pub fn effective_gain(&self, i: usize) -> Complex64 {
        self.h_ub[i].conj() * self.h_tu[i] / self.noise_cov_diag[i].sqrt()
    }

    /// Power spent per unit squared weight magnitude at relay `i`.
    pub fn power_factor(&self, i: usize) -> f64 {
        self.h_tu[i].norm_sqr() / self.noise_cov_diag[i] + 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingSolution {
    pub weights: Vec<Complex64>,
    pub snr: f64,
    pub iterations: usize,
    pub t_up: f64,
    /// Final bisection bracket: `lower` is reachable, `upper` is not.
    pub lower: f64,
    pub upper: f64,
}

impl BeamformingSolution {
    fn zero(n: usize) -> Self {
        Self {
            weights: vec![Complex64::new(0.0, 0.0); n],
            snr: 0.0,
            iterations: 0,
            t_up: 0.0,
            lower: 0.0,
            upper: 0.0,
        }
    }
}

/// SNR at the base station for the given weights.
pub fn snr_at_base(weights: &[Complex64], channels: &ChannelState) -> Result<f64> {
    if weights.len() != channels.len() {
        return Err(Error::LengthMismatch {
            expected: channels.len(),
            found: weights.len(),
        });
    }
    let mut signal = Complex64::new(0.0, 0.0);
    let mut interference = 0.0;
    for (i, w) in weights.iter().enumerate() {
        signal += w.conj() * channels.effective_gain(i);
        interference += w.norm_sqr() * channels.h_ub[i].norm_sqr();
    }
    Ok(signal.norm_sqr() / (interference + channels.sigma2_base))
}

/// Power spent by relay `i` to forward with weight `weights[i]`.
pub fn relay_power(weights: &[Complex64], channels: &ChannelState, i: usize) -> Result<f64> {
    if weights.len() != channels.len() {
        return Err(Error::LengthMismatch {
            expected: channels.len(),
            found: weights.len(),
        });
    }
    if i >= channels.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: channels.len(),
        });
    }
    Ok(weights[i].norm_sqr() * channels.power_factor(i))
}

/// Matched-filter bound `k^H Q^{-1} k` on the achievable SNR. Relays that
/// cannot reach the base station are left out.
pub fn snr_upper_bound(channels: &ChannelState) -> f64 {
    (0..channels.len())
        .filter(|&i| channels.h_ub[i].norm_sqr() > 0.0)
        .map(|i| channels.effective_gain(i).norm_sqr() / channels.h_ub[i].norm_sqr())
        .sum()
}

/// Upper bound on bisection iterations for a given bound and precision.
pub fn iteration_bound(t_up: f64, precision: f64) -> usize {
    if t_up <= precision {
        return 1;
    }
    (t_up / precision).log2().ceil() as usize + 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FeasibilityOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BisectionOptions {
    /// Absolute precision on the SNR; defaults to `1e-6 * t_up`.
    pub precision: Option<f64>,
    pub inner: FeasibilityOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Weights meeting the power caps with SNR at least `t`.
    pub witness: Option<Vec<Complex64>>,
    pub iterations: usize,
}

/// Phase-aligned magnitude problem over the relays that reach the base.
#[derive(Debug, Clone)]
struct MagnitudeProblem {
    index: Vec<usize>,
    a: Vec<f64>,
    q: Vec<f64>,
    b: Vec<f64>,
    phase: Vec<Complex64>,
    sigma2: f64,
    n: usize,
}

impl MagnitudeProblem {
    fn new(channels: &ChannelState, power_caps: &[f64]) -> Result<Self> {
        channels.validate()?;
        if power_caps.len() != channels.len() {
            return Err(Error::LengthMismatch {
                expected: channels.len(),
                found: power_caps.len(),
            });
        }
        if !power_caps.iter().all(|&p| p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidValue("power caps must be finite and nonnegative".into()));
        }
        let mut p = Self {
            index: Vec::new(),
            a: Vec::new(),
            q: Vec::new(),
            b: Vec::new(),
            phase: Vec::new(),
            sigma2: channels.sigma2_base,
            n: channels.len(),
        };
        for (i, &cap) in power_caps.iter().enumerate() {
            let q = channels.h_ub[i].norm_sqr();
            if q == 0.0 {
                continue;
            }
            let k = channels.effective_gain(i);
            let a = k.norm();
            p.index.push(i);
            p.a.push(a);
            p.q.push(q);
            p.b.push((cap / channels.power_factor(i)).sqrt());
            p.phase.push(if a > 0.0 { k / a } else { Complex64::new(1.0, 0.0) });
        }
        Ok(p)
    }

    fn t_up(&self) -> f64 {
        self.a.iter().zip(&self.q).map(|(a, q)| a * a / q).sum()
    }

    fn is_degenerate(&self) -> bool {
        !self.a.iter().zip(&self.b).any(|(&a, &b)| a > 0.0 && b > 0.0)
    }

    fn snr(&self, rho: &[f64]) -> f64 {
        let (num, den) = rho
            .iter()
            .enumerate()
            .fold((0.0, self.sigma2), |(n, d), (i, &r)| {
                (n + self.a[i] * r, d + self.q[i] * r * r)
            });
        num * num / den
    }

    fn objective(&self, s: f64, rho: &[f64]) -> (f64, f64) {
        let (lin, quad) = rho
            .iter()
            .enumerate()
            .fold((0.0, self.sigma2), |(l, d), (i, &r)| {
                (l + self.a[i] * r, d + self.q[i] * r * r)
            });
        let root = quad.sqrt();
        (lin - s * root, root)
    }

    fn gradient(&self, s: f64, rho: &[f64], root: f64, out: &mut [f64]) {
        for i in 0..rho.len() {
            out[i] = self.a[i] - s * self.q[i] * rho[i] / root;
        }
    }

    fn project(&self, rho: &mut [f64]) {
        for (r, &b) in rho.iter_mut().zip(&self.b) {
            *r = r.clamp(0.0, b);
        }
    }

    /// Frank-Wolfe gap: `f(rho) + gap` bounds the box maximum from above.
    fn gap(&self, rho: &[f64], grad: &[f64]) -> f64 {
        rho.iter()
            .zip(grad)
            .zip(&self.b)
            .map(|((&r, &g), &b)| (g * (b - r)).max(-g * r))
            .sum()
    }

    fn weights(&self, rho: &[f64]) -> Vec<Complex64> {
        let mut w = vec![Complex64::new(0.0, 0.0); self.n];
        for (j, &i) in self.index.iter().enumerate() {
            w[i] = self.phase[j] * rho[j];
        }
        w
    }

    /// Projected gradient ascent on `f` starting from `rho`. Returns whether
    /// the level is reachable, leaving the final iterate in `rho`. With
    /// `early_exit` the ascent stops at the first nonnegative value.
    fn ascend(
        &self,
        t: f64,
        rho: &mut Vec<f64>,
        opts: &FeasibilityOptions,
        early_exit: bool,
    ) -> (bool, usize) {
        let m = self.a.len();
        if t <= 0.0 {
            rho.iter_mut().for_each(|r| *r = 0.0);
            return (true, 0);
        }
        let s = t.sqrt();
        let mut grad = vec![0.0; m];
        let mut next = vec![0.0; m];
        let mut next_grad = vec![0.0; m];
        self.project(rho);

        let (mut f, root) = self.objective(s, rho);
        self.gradient(s, rho, root, &mut grad);
        let qmax = self.q.iter().copied().fold(0.0, f64::max);
        let mut step = 1.0 / (s * qmax / self.sigma2.sqrt() + 1e-300).max(1e-12);
        let scale = 1.0 + self.a.iter().zip(&self.b).map(|(a, b)| a * b).sum::<f64>();

        for iter in 0..opts.max_iterations {
            if early_exit && f >= 0.0 {
                return (true, iter);
            }
            let gap = self.gap(rho, &grad);
            if f + gap < 0.0 || gap <= opts.tolerance * scale {
                return (f >= 0.0, iter);
            }

            // Armijo backtracking along the projection arc.
            let mut alpha = step;
            let (f_next, root_next) = loop {
                for i in 0..m {
                    next[i] = rho[i] + alpha * grad[i];
                }
                self.project(&mut next);
                let (fv, rv) = self.objective(s, &next);
                let ascent: f64 = (0..m).map(|i| grad[i] * (next[i] - rho[i])).sum();
                if fv >= f + 1e-4 * ascent || alpha < 1e-300 {
                    break (fv, rv);
                }
                alpha *= 0.5;
            };
            self.gradient(s, &next, root_next, &mut next_grad);

            // Barzilai-Borwein estimate for the next trial step.
            let (mut ss, mut sy) = (0.0, 0.0);
            for i in 0..m {
                let ds = next[i] - rho[i];
                ss += ds * ds;
                sy += ds * (next_grad[i] - grad[i]);
            }
            step = if sy < 0.0 { (ss / -sy).clamp(1e-12, 1e12) } else { alpha * 2.0 };

            std::mem::swap(rho, &mut next);
            std::mem::swap(&mut grad, &mut next_grad);
            f = f_next;
        }
        (f >= 0.0, opts.max_iterations)
    }
}

/// Decide whether SNR level `t` is reachable under the power caps.
pub fn feasibility_check(
    t: f64,
    channels: &ChannelState,
    power_caps: &[f64],
    opts: &FeasibilityOptions,
) -> Result<Feasibility> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidValue(format!("SNR level {t}")));
    }
    let problem = MagnitudeProblem::new(channels, power_caps)?;
    if t > problem.t_up() {
        return Ok(Feasibility {
            feasible: false,
            witness: None,
            iterations: 0,
        });
    }
    let mut rho = problem.b.clone();
    let (feasible, iterations) = problem.ascend(t, &mut rho, opts, true);
    Ok(Feasibility {
        feasible,
        witness: feasible.then(|| problem.weights(&rho)),
        iterations,
    })
}

/// Maximise the base-station SNR by bisection on the level over `[0, t_up]`.
pub fn optimize_snr(
    channels: &ChannelState,
    power_caps: &[f64],
    opts: &BisectionOptions,
) -> Result<BeamformingSolution> {
    let problem = MagnitudeProblem::new(channels, power_caps)?;
    if problem.is_degenerate() {
        return Ok(BeamformingSolution::zero(channels.len()));
    }
    let t_up = problem.t_up();
    let precision = opts.precision.unwrap_or(1e-6 * t_up);
    if !(precision.is_finite() && precision > 0.0) {
        return Err(Error::InvalidValue(format!("bisection precision {precision}")));
    }

    let (mut lower, mut upper) = (0.0, t_up);
    let mut best = vec![0.0; problem.a.len()];
    let mut trial = problem.b.clone();
    let mut iterations = 0;
    while upper - lower > precision {
        let mid = 0.5 * (lower + upper);
        iterations += 1;
        trial.clone_from(&best);
        if best.iter().all(|&r| r == 0.0) {
            trial.clone_from(&problem.b);
        }
        let (feasible, _) = problem.ascend(mid, &mut trial, &opts.inner, true);
        if feasible {
            lower = mid;
            best.clone_from(&trial);
        } else {
            upper = mid;
        }
    }

    // Polish the witness by maximising fully at the reachable level; this
    // drives relays with no useful gain to zero magnitude.
    if lower > 0.0 {
        let mut polished = best.clone();
        let (ok, _) = problem.ascend(lower, &mut polished, &opts.inner, false);
        if ok && problem.snr(&polished) >= problem.snr(&best) {
            best = polished;
        }
    }

    Ok(BeamformingSolution {
        weights: problem.weights(&best),
        snr: problem.snr(&best),
        iterations,
        t_up,
        lower,
        upper,
    })
}

/// Largest relay count accepted by [`oracle_grid_search`].
pub const ORACLE_MAX_RELAYS: usize = 4;

/// Exhaustive search of the phase-aligned magnitude box on a uniform grid of
/// `grid_n` points per axis. Exponential in the coalition size; meant only
/// as a reference for small instances.
pub fn oracle_grid_search(channels: &ChannelState, power_caps: &[f64], grid_n: usize) -> Result<f64> {
    channels.validate()?;
    let n = channels.len();
    if n > ORACLE_MAX_RELAYS {
        return Err(Error::OracleTooLarge {
            size: n,
            max: ORACLE_MAX_RELAYS,
        });
    }
    if power_caps.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: power_caps.len(),
        });
    }
    if grid_n < 2 {
        return Err(Error::InvalidValue("grid needs at least two points per axis".into()));
    }

    // Per-axis tables of signal amplitude and interference power.
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .map(|i| {
            let amp = channels.h_ub[i].norm() * channels.h_tu[i].norm()
                / channels.noise_cov_diag[i].sqrt();
            let gain = channels.h_ub[i].norm_sqr();
            let cost = channels.h_tu[i].norm_sqr() / channels.noise_cov_diag[i] + 1.0;
            let top = (power_caps[i] / cost).sqrt();
            (0..grid_n)
                .map(|g| {
                    let r = top * g as f64 / (grid_n - 1) as f64;
                    (amp * r, gain * r * r)
                })
                .unzip()
        })
        .collect();

    let mut best: f64 = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let mut num = 0.0;
        let mut den = channels.sigma2_base;
        for (i, &g) in idx.iter().enumerate() {
            num += axes[i].0[g];
            den += axes[i].1[g];
        }
        best = best.max(num * num / den);

        let mut axis = 0;
        loop {
            if axis == n {
                return Ok(best);
            }
            idx[axis] += 1;
            if idx[axis] < grid_n {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}
