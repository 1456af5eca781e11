//! Completely positive embedding on C^2 (x) H: the doubled-space master
//! equation whose diagonal blocks evolve the paired CP solution and whose
//! off-diagonal blocks carry the rescaled completely bounded solution, plus
//! the commutant positivity criterion.

use std::sync::Arc;

use crate::equation::{CanonicalMasterEquation, PairedEquations, TimeOperator, TimeRate};
use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eigen, hermitize, identity, kron, min_eigenvalue, sigma3, CMatrix, DensityMatrix,
    Tolerances,
};

/// Doubled-space CP equation built from a pairing: each channel L_l of the
/// base splits into V_{2l-1} = 1_2 (x) L_l at rate v_odd = (r_l + w_l)/2 and
/// V_{2l} = sigma_3 (x) L_l at rate v_even = c/2, with
/// cos(theta_l) = w_l/(w_l + c).
pub struct EmbeddedMasterEquation {
    pub base: PairedEquations,
    /// 2d, where d is the base dimension.
    pub dim: usize,
    /// The embedding stored as a plain master equation of dimension 2d, so
    /// the dense integrators and the jump engine apply unchanged.
    pub equation: CanonicalMasterEquation,
    /// theta_l(t) in [0, pi], one per base channel.
    pub angles: Vec<TimeRate>,
    /// v_1..v_{2L} interleaved (odd, even) per base channel.
    pub v_rates: Vec<TimeRate>,
}

impl std::fmt::Debug for EmbeddedMasterEquation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddedMasterEquation")
            .field("dim", &self.dim)
            .field("channels", &self.equation.channels())
            .finish()
    }
}

/// State on the doubled space with block accessors.
#[derive(Debug, Clone)]
pub struct EmbeddedState {
    pub gamma: DensityMatrix,
    /// Base dimension d (gamma is 2d x 2d).
    pub base_dim: usize,
}

impl EmbeddedState {
    pub fn new(gamma: DensityMatrix) -> Result<Self> {
        let n = gamma.dim();
        if n % 2 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "doubled-space dimension {n} is odd"
            )));
        }
        Ok(EmbeddedState {
            base_dim: n / 2,
            gamma,
        })
    }

    pub fn block(&self, i: usize, j: usize) -> CMatrix {
        let d = self.base_dim;
        self.gamma.matrix.view((i * d, j * d), (d, d)).into_owned()
    }
}

fn cos_theta(w: f64, c: f64) -> f64 {
    let r = w + c;
    if r.abs() < 1e-300 {
        // inert channel: both split rates vanish, the angle is immaterial
        1.0
    } else {
        w / r
    }
}

/// Build the doubled-space equation, checking |cos theta| <= 1 on `grid`.
pub fn build_embedding(pair: &PairedEquations, grid: &[f64]) -> Result<EmbeddedMasterEquation> {
    let me = &pair.source;
    let d = me.dim;
    for &t in grid {
        for w_fn in &me.rates {
            let cos = cos_theta(w_fn(t), (pair.shift)(t));
            if cos.abs() > 1.0 + 1e-12 {
                return Err(Error::AngleOutOfRange {
                    t,
                    cos_abs: cos.abs(),
                });
            }
        }
    }
    let h = me.hamiltonian.clone();
    let big_h: TimeOperator = Arc::new(move |t| kron(&identity(2), &h(t)));
    let mut ops: Vec<TimeOperator> = Vec::with_capacity(2 * me.channels());
    let mut v_rates: Vec<TimeRate> = Vec::with_capacity(2 * me.channels());
    let mut angles: Vec<TimeRate> = Vec::with_capacity(me.channels());
    for (l_op, w_fn) in me.lindblad_ops.iter().zip(&me.rates) {
        let op = l_op.clone();
        let odd: TimeOperator = Arc::new(move |t| kron(&identity(2), &op(t)));
        let op = l_op.clone();
        let even: TimeOperator = Arc::new(move |t| kron(&sigma3(), &op(t)));
        ops.push(odd);
        ops.push(even);
        let w = w_fn.clone();
        let c = pair.shift.clone();
        // v_odd = r cos^2(theta/2) = (r + w)/2
        let v_odd: TimeRate = Arc::new(move |t| (((w(t) + c(t)) + w(t)) / 2.0).max(0.0));
        let c = pair.shift.clone();
        // v_even = r sin^2(theta/2) = c/2
        let v_even: TimeRate = Arc::new(move |t| (c(t) / 2.0).max(0.0));
        v_rates.push(v_odd);
        v_rates.push(v_even);
        let w = w_fn.clone();
        let c = pair.shift.clone();
        let theta: TimeRate = Arc::new(move |t| cos_theta(w(t), c(t)).clamp(-1.0, 1.0).acos());
        angles.push(theta);
    }
    let equation = CanonicalMasterEquation::new(
        2 * d,
        big_h,
        ops,
        v_rates.clone(),
        2.0 * me.povm_constant,
        false,
    )?;
    Ok(EmbeddedMasterEquation {
        base: PairedEquations {
            source: pair.source.clone(),
            shift: pair.shift.clone(),
            paired_cp: pair.paired_cp.clone(),
        },
        dim: 2 * d,
        equation,
        angles,
        v_rates,
    })
}

/// Integrated doubled-space series with positivity bookkeeping.
#[derive(Debug, Clone)]
pub struct EmbeddedSeries {
    pub times: Vec<f64>,
    pub states: Vec<CMatrix>,
    pub max_trace_drift: f64,
    /// Smallest eigenvalue over all snapshots (CP flow keeps it >= -1e-7).
    pub min_eigenvalue: f64,
    /// Cumulative int c ds on the same grid (trapezoid rule).
    pub c_integral: Vec<f64>,
}

impl EmbeddedSeries {
    pub fn last_state(&self) -> EmbeddedState {
        let gamma = self.states.last().expect("series never empty").clone();
        let trace = gamma.trace().re;
        EmbeddedState::new(DensityMatrix {
            matrix: gamma,
            trace,
        })
        .expect("even dimension by construction")
    }
}

/// Integrate the embedding with dense RK4 and record positivity diagnostics.
pub fn integrate_embedded(
    eme: &EmbeddedMasterEquation,
    gamma0: &EmbeddedState,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<EmbeddedSeries> {
    let series = eme
        .equation
        .integrate_density(&gamma0.gamma, t0, t1, dt)?;
    let mut min_eig = f64::INFINITY;
    for s in &series.states {
        min_eig = min_eig.min(min_eigenvalue(&hermitize(s))?);
    }
    let mut c_integral = Vec::with_capacity(series.times.len());
    let mut acc = 0.0;
    c_integral.push(0.0);
    for k in 1..series.times.len() {
        let (ta, tb) = (series.times[k - 1], series.times[k]);
        acc += 0.5 * ((eme.base.shift)(ta) + (eme.base.shift)(tb)) * (tb - ta);
        c_integral.push(acc);
    }
    Ok(EmbeddedSeries {
        max_trace_drift: series.max_trace_drift(),
        times: series.times,
        states: series.states,
        min_eigenvalue: min_eig,
        c_integral,
    })
}

/// Read the two solutions off a doubled-space state:
/// rho_tilde = 2 gamma_11 and rho = exp(g c_integral) * 2 gamma_12,
/// Hermitized against the adjoint of 2 gamma_21.
pub fn extract_blocks(
    gamma: &EmbeddedState,
    c_integral: f64,
    gtilde: f64,
) -> (CMatrix, CMatrix) {
    let rho_tilde = gamma.block(0, 0).scale(2.0);
    let off = (gamma.block(0, 1) + gamma.block(1, 0).adjoint()).scale(1.0);
    let rho = off.scale((gtilde * c_integral).exp());
    (rho_tilde, rho)
}

/// Result of the commutant positivity criterion.
#[derive(Debug, Clone)]
pub struct CommutantCheck {
    pub psd: bool,
    pub min_eigenvalue: f64,
    pub max_singular_value: f64,
}

/// Appendix-style criterion: M = [[1 (x) 1, T (x) 1], [T^dag (x) 1, 1 (x) 1]]
/// is PSD iff the largest singular value of T is <= 1. Both the eigenvalue
/// and the singular value are computed and cross-checked.
pub fn commutant_embedding_psd(t_mat: &CMatrix, d: usize) -> Result<CommutantCheck> {
    if t_mat.nrows() != t_mat.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "T is {}x{}, expected square",
            t_mat.nrows(),
            t_mat.ncols()
        )));
    }
    let m = t_mat.nrows();
    let id = identity(m * d);
    let cross = kron(t_mat, &identity(d));
    let n = 2 * m * d;
    let mut big = CMatrix::zeros(n, n);
    big.view_mut((0, 0), (m * d, m * d)).copy_from(&id);
    big.view_mut((0, m * d), (m * d, m * d)).copy_from(&cross);
    big.view_mut((m * d, 0), (m * d, m * d))
        .copy_from(&cross.adjoint());
    big.view_mut((m * d, m * d), (m * d, m * d)).copy_from(&id);
    let min_eig = min_eigenvalue(&big)?;
    let svd = t_mat.clone().svd(false, false);
    let sigma_max = svd
        .singular_values
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    // block eigenvalues are 1 +/- sigma_i(T); cross-check the two routes
    let predicted_min = 1.0 - sigma_max;
    if (min_eig - predicted_min).abs() > 1e-8 * (1.0 + sigma_max) {
        return Err(Error::Validation(format!(
            "commutant criterion mismatch: min eig {min_eig:.3e} vs 1 - sigma_max = {predicted_min:.3e}"
        )));
    }
    Ok(CommutantCheck {
        psd: min_eig >= -1e-9,
        min_eigenvalue: min_eig,
        max_singular_value: sigma_max,
    })
}

/// Ancilla-compatible initial condition ((1_2 + sigma_1)/2) (x) rho.
pub fn ancilla_plus_state(rho: &DensityMatrix) -> Result<EmbeddedState> {
    let plus = (identity(2) + crate::linalg::sigma1()).scale(0.5);
    let gamma = kron(&plus, &rho.matrix);
    let state = DensityMatrix::new(gamma, rho.trace, &Tolerances::default())?;
    EmbeddedState::new(state)
}

/// Maximally mixed ancilla (1_2/2) (x) rho.
pub fn ancilla_mixed_state(rho: &DensityMatrix) -> Result<EmbeddedState> {
    let gamma = kron(&identity(2).scale(0.5), &rho.matrix);
    let state = DensityMatrix::new(gamma, rho.trace, &Tolerances::default())?;
    EmbeddedState::new(state)
}

/// POVM-type sum of the doubled operator set: sum_k V_k^dag V_k, which equals
/// 2 g 1 when the base set satisfies the POVM sum with constant g.
pub fn embedded_povm_sum(eme: &EmbeddedMasterEquation, t: f64) -> CMatrix {
    let mut sum = CMatrix::zeros(eme.dim, eme.dim);
    for op in &eme.equation.lindblad_ops {
        let v = op(t);
        sum += v.adjoint() * v;
    }
    sum
}

/// Smallest eigenvalue route used in tests and diagnostics.
pub fn spectrum(m: &CMatrix) -> Result<Vec<f64>> {
    Ok(hermitian_eigen(m)?.0)
}
