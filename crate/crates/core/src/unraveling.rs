//! Monte Carlo jump-trajectory engine: stochastic Schrödinger equation on the
//! unit hyper-sphere, the influence martingale and its step process, ensemble
//! estimators with standard errors, the variance bound, and the POVM-padding
//! workaround for non-canonical operator sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::equation::{CanonicalMasterEquation, PairedEquations, TimeOperator};
use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eigen, identity, psd_sqrt, CMatrix, CVector, DensityMatrix, StateVector, C64, I,
};

/// Trajectories are distributed over fixed-size blocks so the ensemble
/// reduction is independent of the number of worker threads.
const TRAJ_BLOCK: usize = 256;

/// One realization of the jump process.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub psi: Vec<StateVector>,
    /// Influence martingale mu_t = exp(g int c) lambda_t.
    pub mu: Vec<f64>,
    /// Step process: product of jump factors w_l/(w_l + c).
    pub lambda: Vec<f64>,
    pub jumps: Vec<(f64, usize)>,
    pub seed: u64,
}

/// Monte Carlo estimators on the time grid.
#[derive(Debug, Clone)]
pub struct EnsembleEstimate {
    pub grid: Vec<f64>,
    /// Mean of mu psi psi^dag (estimates the completely bounded solution).
    pub rho_hat: Vec<CMatrix>,
    /// Mean of psi psi^dag (estimates the paired CP solution).
    pub rho_tilde_hat: Vec<CMatrix>,
    /// Entrywise standard errors; real part holds SE(Re), imaginary SE(Im).
    pub rho_hat_se: Vec<CMatrix>,
    pub rho_tilde_hat_se: Vec<CMatrix>,
    pub mu_mean: Vec<f64>,
    pub mu_se: Vec<f64>,
    pub mu_sq_mean: Vec<f64>,
    pub mu_sq_se: Vec<f64>,
    pub n_traj: usize,
    /// Largest |lambda| seen on any path at any grid point.
    pub max_abs_lambda: f64,
    /// Cumulative int_{t0}^{t_k} c ds on the step grid.
    pub c_integral: Vec<f64>,
    /// POVM constant used by the engine (g, or the padded g').
    pub povm_constant: f64,
}

/// Per-time variance-bound report.
#[derive(Debug, Clone)]
pub struct BoundPoint {
    pub t: f64,
    /// Tr(rho_hat - rho_tilde_hat)^2.
    pub distance_sq: f64,
    /// E[mu^2] - 1.
    pub mu_sq_minus_one: f64,
    /// mu_sq_minus_one - distance_sq (nonnegative when the bound holds).
    pub slack: f64,
    /// Analytic envelope exp(2 g int c) - 1.
    pub envelope: f64,
    pub distance_se: f64,
    pub mu_sq_se: f64,
    /// Bound violated beyond 3 combined standard errors.
    pub violated: bool,
    pub envelope_violated: bool,
    /// Fewer than 2 trajectories: standard errors are meaningless.
    pub statistically_meaningless: bool,
}

/// Initial-state distribution with E[psi psi^dag] = rho0.
#[derive(Clone)]
pub enum InitialStateSampler {
    Pure(StateVector),
    Mixed {
        probs: Vec<f64>,
        vectors: Vec<CVector>,
    },
}

impl InitialStateSampler {
    pub fn pure(psi: StateVector) -> Self {
        InitialStateSampler::Pure(psi)
    }

    /// Eigen-decompose rho0 and sample eigenvectors with eigenvalue weights.
    pub fn from_density(rho0: &DensityMatrix) -> Result<Self> {
        let (vals, vecs) = hermitian_eigen(&rho0.matrix)?;
        let mut probs = Vec::new();
        let mut vectors = Vec::new();
        for (k, &v) in vals.iter().enumerate() {
            if v < -1e-9 {
                return Err(Error::NotPositiveSemidefinite { value: v });
            }
            if v > 1e-12 {
                probs.push(v);
                vectors.push(vecs.column(k).into_owned());
            }
        }
        let total: f64 = probs.iter().sum();
        if (total - rho0.trace).abs() > 1e-6 {
            return Err(Error::TraceMismatch {
                actual: total,
                declared: rho0.trace,
            });
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(InitialStateSampler::Mixed { probs, vectors })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> CVector {
        match self {
            InitialStateSampler::Pure(psi) => psi.amplitudes.clone(),
            InitialStateSampler::Mixed { probs, vectors } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (p, v) in probs.iter().zip(vectors) {
                    acc += p;
                    if u < acc {
                        return v.clone();
                    }
                }
                vectors.last().expect("sampler never empty").clone()
            }
        }
    }
}

/// Precomputed per-step data shared across trajectories.
struct StepData {
    t: f64,
    /// -iH - (1/2) sum_l r_l L_l^dag L_l evaluated at the step start.
    a: CMatrix,
    ops: Vec<CMatrix>,
    /// r_l(t) for each channel.
    rates: Vec<f64>,
    /// Jump factor w_l/(w_l + c); 0 where the channel never fires.
    jump_factors: Vec<f64>,
}

/// Jump-process integrator with a frozen step grid.
pub struct JumpEngine {
    pub dim: usize,
    pub grid: Vec<f64>,
    pub dt: f64,
    pub povm_constant: f64,
    /// Cumulative left-Riemann integral of c on the grid.
    pub c_integral: Vec<f64>,
    steps: Vec<StepData>,
}

impl JumpEngine {
    /// Engine for a paired completely bounded / completely positive equation.
    pub fn from_paired(pair: &PairedEquations, t0: f64, t1: f64, dt: f64) -> Result<Self> {
        assert!(t1 >= t0 && dt > 0.0);
        let me = &pair.source;
        let n = ((t1 - t0) / dt).round().max(0.0) as usize;
        let h = if n > 0 { (t1 - t0) / n as f64 } else { dt };
        let mut steps = Vec::with_capacity(n);
        let mut grid = vec![t0];
        let mut c_integral = vec![0.0];
        for k in 0..n {
            let t = t0 + k as f64 * h;
            let c = (pair.shift)(t);
            let ops: Vec<CMatrix> = me.lindblad_ops.iter().map(|op| op(t)).collect();
            let mut rates = Vec::with_capacity(ops.len());
            let mut jump_factors = Vec::with_capacity(ops.len());
            for (l, w_fn) in me.rates.iter().enumerate() {
                let w = w_fn(t);
                let r = (pair.paired_cp.rates[l])(t);
                if r < -1e-15 {
                    return Err(Error::NegativeForwardRate {
                        channel: l,
                        rate: r,
                        t,
                    });
                }
                rates.push(r.max(0.0));
                jump_factors.push(if r > 0.0 { w / r } else { 0.0 });
            }
            steps.push(StepData {
                t,
                a: drift_matrix(&(me.hamiltonian)(t), &ops, &rates),
                ops,
                rates,
                jump_factors,
            });
            grid.push(t0 + (k + 1) as f64 * h);
            c_integral.push(c_integral[k] + c * h);
        }
        Ok(JumpEngine {
            dim: me.dim,
            grid,
            dt: h,
            povm_constant: me.povm_constant,
            c_integral,
            steps,
        })
    }

    /// Engine for a possibly POVM-incomplete operator set: the set is padded
    /// with the completion channel L_0 at forward rate c and weight w_0 = 0,
    /// so a jump in channel 0 suppresses the path (multiplies mu by zero).
    pub fn from_noncanonical(
        me: &CanonicalMasterEquation,
        t0: f64,
        t1: f64,
        dt: f64,
    ) -> Result<Self> {
        assert!(t1 >= t0 && dt > 0.0);
        let n = ((t1 - t0) / dt).round().max(0.0) as usize;
        let h = if n > 0 { (t1 - t0) / n as f64 } else { dt };
        let scan_grid: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * h).collect();
        let (padded, gtilde) = pad_povm(&me.lindblad_ops, &scan_grid)?;
        let mut steps = Vec::with_capacity(n);
        let mut grid = vec![t0];
        let mut c_integral = vec![0.0];
        for k in 0..n {
            let t = t0 + k as f64 * h;
            let c = me.optimal_c(t);
            let ops: Vec<CMatrix> = padded.iter().map(|op| op(t)).collect();
            // channel 0 is the padding channel: w = 0, r = c
            let mut rates = vec![c];
            let mut jump_factors = vec![0.0];
            for w_fn in &me.rates {
                let w = w_fn(t);
                let r = (w + c).max(0.0);
                rates.push(r);
                jump_factors.push(if r > 0.0 { w / r } else { 0.0 });
            }
            steps.push(StepData {
                t,
                a: drift_matrix(&(me.hamiltonian)(t), &ops, &rates),
                ops,
                rates,
                jump_factors,
            });
            grid.push(t0 + (k + 1) as f64 * h);
            c_integral.push(c_integral[k] + c * h);
        }
        Ok(JumpEngine {
            dim: me.dim,
            grid,
            dt: h,
            povm_constant: gtilde,
            c_integral,
            steps,
        })
    }

    /// Walk one path, invoking the observer at every grid point with
    /// (index, psi, mu, lambda).
    fn run_path<F>(&self, psi0: &CVector, rng: &mut ChaCha8Rng, mut observe: F) -> Result<Vec<(f64, usize)>>
    where
        F: FnMut(usize, &CVector, f64, f64),
    {
        let mut psi = psi0.clone();
        psi /= C64::new(psi.norm(), 0.0);
        let mut lambda = 1.0_f64;
        let mut jumps = Vec::new();
        let mut work = CVector::zeros(self.dim);
        let mut jump_norms: Vec<f64> = vec![0.0; self.steps.first().map_or(0, |s| s.ops.len())];
        observe(0, &psi, 1.0, lambda);
        for (k, step) in self.steps.iter().enumerate() {
            // per-channel jump probabilities r_l ||L_l psi||^2 dt at the step
            // start; at most one jump fires per step
            let mut total = 0.0;
            jump_norms.resize(step.ops.len(), 0.0);
            for (l, op) in step.ops.iter().enumerate() {
                if step.rates[l] > 0.0 {
                    op.mul_to(&psi, &mut work);
                    jump_norms[l] = work.norm_squared();
                    total += step.rates[l] * jump_norms[l] * self.dt;
                } else {
                    jump_norms[l] = 0.0;
                }
            }
            if total > 0.5 {
                return Err(Error::StepSizeViolation {
                    t: step.t,
                    probability: total,
                });
            }
            let u: f64 = rng.gen();
            let mut chosen = None;
            let mut acc = 0.0;
            for (l, &nsq) in jump_norms.iter().enumerate() {
                let p = step.rates[l] * nsq * self.dt;
                if p > 0.0 {
                    acc += p;
                    if u < acc {
                        chosen = Some(l);
                        break;
                    }
                }
            }
            match chosen {
                Some(l) => {
                    // jump: psi -> L_l psi / ||L_l psi||
                    step.ops[l].mul_to(&psi, &mut work);
                    psi.copy_from(&work);
                    psi /= C64::new(jump_norms[l].sqrt(), 0.0);
                    lambda *= step.jump_factors[l];
                    jumps.push((step.t, l));
                }
                None => {
                    // Euler step on the nonlinear drift, then exact
                    // renormalization
                    let s: f64 = step
                        .rates
                        .iter()
                        .zip(&jump_norms)
                        .map(|(r, nsq)| r * nsq)
                        .sum();
                    step.a.mul_to(&psi, &mut work);
                    work.axpy(C64::new(0.5 * s, 0.0), &psi, C64::new(1.0, 0.0));
                    psi.axpy(C64::new(self.dt, 0.0), &work.clone(), C64::new(1.0, 0.0));
                    let norm = psi.norm();
                    if !norm.is_finite() || norm == 0.0 {
                        return Err(Error::NonFinite { t: step.t });
                    }
                    psi /= C64::new(norm, 0.0);
                }
            }
            let mu = (self.povm_constant * self.c_integral[k + 1]).exp() * lambda;
            observe(k + 1, &psi, mu, lambda);
        }
        Ok(jumps)
    }

    /// Simulate one trajectory with a dedicated RNG stream.
    pub fn simulate(&self, psi0: &StateVector, seed: u64, stream: u64) -> Result<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let n = self.grid.len();
        let mut psi = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut lambda = Vec::with_capacity(n);
        let jumps = self.run_path(&psi0.amplitudes, &mut rng, |_, p, m, l| {
            psi.push(StateVector::new(p.clone()).expect("renormalized each step"));
            mu.push(m);
            lambda.push(l);
        })?;
        Ok(Trajectory {
            grid: self.grid.clone(),
            psi,
            mu,
            lambda,
            jumps,
            seed,
        })
    }

    /// Monte Carlo ensemble estimate over n_traj paths. Trajectory i uses RNG
    /// stream i of the master seed, so results do not depend on the number of
    /// worker threads; the reduction folds fixed-size blocks in index order
    /// (bitwise deterministic for a given block size).
    pub fn ensemble(
        &self,
        sampler: &InitialStateSampler,
        n_traj: usize,
        seed: u64,
    ) -> Result<EnsembleEstimate> {
        assert!(n_traj >= 1);
        let n_blocks = (n_traj + TRAJ_BLOCK - 1) / TRAJ_BLOCK;
        let partials: Vec<Accumulator> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = Accumulator::new(self.grid.len(), self.dim);
                let hi = ((b + 1) * TRAJ_BLOCK).min(n_traj);
                for i in (b * TRAJ_BLOCK)..hi {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    let psi0 = sampler.sample(&mut rng);
                    self.run_path(&psi0, &mut rng, |k, psi, mu, lambda| {
                        acc.add(k, psi, mu, lambda);
                    })?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut acc = Accumulator::new(self.grid.len(), self.dim);
        for p in partials {
            acc.merge(p);
        }
        Ok(acc.finish(
            &self.grid,
            n_traj,
            &self.c_integral,
            self.povm_constant,
        ))
    }
}

/// -iH - (1/2) sum_l r_l L_l^dag L_l.
fn drift_matrix(h: &CMatrix, ops: &[CMatrix], rates: &[f64]) -> CMatrix {
    let mut a = h * (-I);
    for (op, &r) in ops.iter().zip(rates) {
        if r != 0.0 {
            a -= (op.adjoint() * op).scale(0.5 * r);
        }
    }
    a
}

/// Deterministic part of the stochastic Schrödinger equation:
/// -iH psi - (1/2) sum_l r_l (L_l^dag L_l - ||L_l psi||^2) psi.
pub fn drift(pair: &PairedEquations, psi: &StateVector, t: f64) -> CVector {
    let me = &pair.source;
    let ops: Vec<CMatrix> = me.lindblad_ops.iter().map(|op| op(t)).collect();
    let rates: Vec<f64> = pair.paired_cp.rates.iter().map(|r| r(t).max(0.0)).collect();
    let a = drift_matrix(&(me.hamiltonian)(t), &ops, &rates);
    let s: f64 = ops
        .iter()
        .zip(&rates)
        .map(|(op, r)| r * (op * &psi.amplitudes).norm_squared())
        .sum();
    &a * &psi.amplitudes + psi.amplitudes.scale(0.5 * s)
}

/// Simulate a single trajectory of the paired process.
pub fn simulate_trajectory(
    pair: &PairedEquations,
    psi0: &StateVector,
    t0: f64,
    t1: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    JumpEngine::from_paired(pair, t0, t1, dt)?.simulate(psi0, seed, 0)
}

/// Monte Carlo ensemble of the paired process.
pub fn ensemble_estimate(
    pair: &PairedEquations,
    sampler: &InitialStateSampler,
    t0: f64,
    t1: f64,
    dt: f64,
    n_traj: usize,
    seed: u64,
) -> Result<EnsembleEstimate> {
    JumpEngine::from_paired(pair, t0, t1, dt)?.ensemble(sampler, n_traj, seed)
}

/// Simulate one trajectory of a POVM-incomplete equation after padding.
pub fn simulate_noncanonical(
    me: &CanonicalMasterEquation,
    psi0: &StateVector,
    t0: f64,
    t1: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    JumpEngine::from_noncanonical(me, t0, t1, dt)?.simulate(psi0, seed, 0)
}

/// Monte Carlo ensemble of a POVM-incomplete equation after padding.
pub fn ensemble_noncanonical(
    me: &CanonicalMasterEquation,
    sampler: &InitialStateSampler,
    t0: f64,
    t1: f64,
    dt: f64,
    n_traj: usize,
    seed: u64,
) -> Result<EnsembleEstimate> {
    JumpEngine::from_noncanonical(me, t0, t1, dt)?.ensemble(sampler, n_traj, seed)
}

/// Complete an operator set so that sum_l L_l^dag L_l = g' 1:
/// g' = (1 + margin) * (largest eigenvalue of the sum over the grid) and
/// L_0 = psd_sqrt(g' 1 - sum L^dag L) is prepended.
pub fn pad_povm(ops: &[TimeOperator], grid: &[f64]) -> Result<(Vec<TimeOperator>, f64)> {
    assert!(!grid.is_empty(), "padding needs a nonempty scan grid");
    let d = ops
        .first()
        .map(|op| op(grid[0]).nrows())
        .ok_or_else(|| Error::DimensionMismatch("empty operator set".into()))?;
    let sum_at = {
        let ops: Vec<TimeOperator> = ops.to_vec();
        move |t: f64| {
            let mut s = CMatrix::zeros(d, d);
            for op in &ops {
                let l = op(t);
                s += l.adjoint() * l;
            }
            s
        }
    };
    let mut max_eig = 0.0_f64;
    for &t in grid {
        let (vals, _) = hermitian_eigen(&sum_at(t))?;
        max_eig = max_eig.max(*vals.last().expect("nonempty spectrum"));
    }
    let margin = 1e-6;
    let gtilde = (1.0 + margin) * max_eig;
    // guard: remainder must be PSD at every scanned time
    for &t in grid {
        let rem = identity(d).scale(gtilde) - sum_at(t);
        let min = crate::linalg::min_eigenvalue(&rem)?;
        if min < -1e-9 * gtilde.max(1.0) {
            return Err(Error::PaddingRemainder { t, min_eig: min });
        }
    }
    let slack = 1e-9 * gtilde.max(1.0) + 1e-12;
    let completion: TimeOperator = std::sync::Arc::new(move |t| {
        let rem = identity(d).scale(gtilde) - sum_at(t);
        psd_sqrt(&rem, slack).expect("remainder verified PSD on the scan grid")
    });
    let mut padded = Vec::with_capacity(ops.len() + 1);
    padded.push(completion);
    padded.extend(ops.iter().cloned());
    Ok((padded, gtilde))
}

/// Compare Tr(rho_hat - rho_tilde_hat)^2 against E[mu^2] - 1 and the analytic
/// envelope exp(2 g int c) - 1 at every grid time.
pub fn variance_bound_check(est: &EnsembleEstimate) -> Vec<BoundPoint> {
    let meaningless = est.n_traj < 2;
    est.grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let diff = &est.rho_hat[k] - &est.rho_tilde_hat[k];
            let distance_sq: f64 = diff.iter().map(|z| z.norm_sqr()).sum();
            // first-order propagation: d(sum |D_ij|^2) = 2 sum |D_ij| |dD_ij|
            let distance_se: f64 = 2.0
                * diff
                    .iter()
                    .zip(est.rho_hat_se[k].iter().zip(est.rho_tilde_hat_se[k].iter()))
                    .map(|(dij, (s1, s2))| {
                        let se = (s1.re.hypot(s1.im).powi(2) + s2.re.hypot(s2.im).powi(2)).sqrt();
                        (dij.norm() * se).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt();
            let mu_sq_minus_one = est.mu_sq_mean[k] - 1.0;
            let envelope = (2.0 * est.povm_constant * est.c_integral[k]).exp() - 1.0;
            let combined = 3.0 * (est.mu_sq_se[k] + distance_se);
            BoundPoint {
                t,
                distance_sq,
                mu_sq_minus_one,
                slack: mu_sq_minus_one - distance_sq,
                envelope,
                distance_se,
                mu_sq_se: est.mu_sq_se[k],
                violated: !meaningless && distance_sq > mu_sq_minus_one + combined,
                envelope_violated: !meaningless
                    && mu_sq_minus_one > envelope + 3.0 * est.mu_sq_se[k],
                statistically_meaningless: meaningless,
            }
        })
        .collect()
}

/// Streaming sums for the ensemble reduction.
struct Accumulator {
    sum_rho: Vec<CMatrix>,
    sum_rho_sq: Vec<CMatrix>,
    sum_tilde: Vec<CMatrix>,
    sum_tilde_sq: Vec<CMatrix>,
    sum_mu: Vec<f64>,
    sum_mu2: Vec<f64>,
    sum_mu4: Vec<f64>,
    max_abs_lambda: f64,
    dim: usize,
}

impl Accumulator {
    fn new(points: usize, dim: usize) -> Self {
        Accumulator {
            sum_rho: vec![CMatrix::zeros(dim, dim); points],
            sum_rho_sq: vec![CMatrix::zeros(dim, dim); points],
            sum_tilde: vec![CMatrix::zeros(dim, dim); points],
            sum_tilde_sq: vec![CMatrix::zeros(dim, dim); points],
            sum_mu: vec![0.0; points],
            sum_mu2: vec![0.0; points],
            sum_mu4: vec![0.0; points],
            max_abs_lambda: 0.0,
            dim,
        }
    }

    fn add(&mut self, k: usize, psi: &CVector, mu: f64, lambda: f64) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let p = psi[i] * psi[j].conj();
                let w = p.scale(mu);
                self.sum_rho[k][(i, j)] += w;
                self.sum_rho_sq[k][(i, j)] += C64::new(w.re * w.re, w.im * w.im);
                self.sum_tilde[k][(i, j)] += p;
                self.sum_tilde_sq[k][(i, j)] += C64::new(p.re * p.re, p.im * p.im);
            }
        }
        self.sum_mu[k] += mu;
        self.sum_mu2[k] += mu * mu;
        self.sum_mu4[k] += mu.powi(4);
        self.max_abs_lambda = self.max_abs_lambda.max(lambda.abs());
    }

    fn merge(&mut self, other: Accumulator) {
        for k in 0..self.sum_rho.len() {
            self.sum_rho[k] += &other.sum_rho[k];
            self.sum_rho_sq[k] += &other.sum_rho_sq[k];
            self.sum_tilde[k] += &other.sum_tilde[k];
            self.sum_tilde_sq[k] += &other.sum_tilde_sq[k];
            self.sum_mu[k] += other.sum_mu[k];
            self.sum_mu2[k] += other.sum_mu2[k];
            self.sum_mu4[k] += other.sum_mu4[k];
        }
        self.max_abs_lambda = self.max_abs_lambda.max(other.max_abs_lambda);
    }

    fn finish(
        self,
        grid: &[f64],
        n: usize,
        c_integral: &[f64],
        povm_constant: f64,
    ) -> EnsembleEstimate {
        let nf = n as f64;
        let se_scalar = |sum: f64, sum_sq: f64| -> f64 {
            if n < 2 {
                return 0.0;
            }
            let mean = sum / nf;
            let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        };
        let mut rho_hat = Vec::with_capacity(grid.len());
        let mut rho_tilde_hat = Vec::with_capacity(grid.len());
        let mut rho_hat_se = Vec::with_capacity(grid.len());
        let mut rho_tilde_hat_se = Vec::with_capacity(grid.len());
        let mut mu_mean = Vec::with_capacity(grid.len());
        let mut mu_se = Vec::with_capacity(grid.len());
        let mut mu_sq_mean = Vec::with_capacity(grid.len());
        let mut mu_sq_se = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let mean_rho = self.sum_rho[k].scale(1.0 / nf);
            let mean_tilde = self.sum_tilde[k].scale(1.0 / nf);
            let se_matrix = |mean: &CMatrix, sum_sq: &CMatrix| {
                CMatrix::from_fn(self.dim, self.dim, |i, j| {
                    let s = sum_sq[(i, j)];
                    let m = mean[(i, j)];
                    C64::new(
                        se_scalar(m.re * nf, s.re),
                        se_scalar(m.im * nf, s.im),
                    )
                })
            };
            rho_hat_se.push(se_matrix(&mean_rho, &self.sum_rho_sq[k]));
            rho_tilde_hat_se.push(se_matrix(&mean_tilde, &self.sum_tilde_sq[k]));
            rho_hat.push(mean_rho);
            rho_tilde_hat.push(mean_tilde);
            mu_mean.push(self.sum_mu[k] / nf);
            mu_se.push(se_scalar(self.sum_mu[k], self.sum_mu2[k]));
            mu_sq_mean.push(self.sum_mu2[k] / nf);
            mu_sq_se.push(se_scalar(self.sum_mu2[k], self.sum_mu4[k]));
        }
        EnsembleEstimate {
            grid: grid.to_vec(),
            rho_hat,
            rho_tilde_hat,
            rho_hat_se,
            rho_tilde_hat_se,
            mu_mean,
            mu_se,
            mu_sq_mean,
            mu_sq_se,
            n_traj: n,
            max_abs_lambda: self.max_abs_lambda,
            c_integral: c_integral.to_vec(),
            povm_constant,
        }
    }
}

impl EnsembleEstimate {
    /// Largest entrywise excess of |rho_hat - reference| over 3 SE at grid
    /// point k (negative means agreement within 3 SE everywhere).
    pub fn entrywise_excess(&self, k: usize, reference: &CMatrix) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..reference.nrows() {
            for j in 0..reference.ncols() {
                let diff = self.rho_hat[k][(i, j)] - reference[(i, j)];
                let se = self.rho_hat_se[k][(i, j)];
                worst = worst.max(diff.re.abs() - 3.0 * se.re.max(1e-300));
                worst = worst.max(diff.im.abs() - 3.0 * se.im.max(1e-300));
            }
        }
        worst
    }
}
