//! Experiment runner: dispatches a parsed configuration to the pipelines and
//! writes the CSV artifacts.

use std::path::PathBuf;

use crate::config::{ExperimentConfig, Mode};
use crate::embedding::{ancilla_plus_state, build_embedding, integrate_embedded};
use crate::equation::DensitySeries;
use crate::error::{Error, Result};
use crate::linalg::{hermitize, matrix_unit, DensityMatrix};
use crate::output;
use crate::recovery::{recover_by_embedding_series, recover_by_martingale, RecoveredPoint};
use crate::unraveling::{variance_bound_check, InitialStateSampler, JumpEngine};

/// Execute the configured experiment; returns the files written.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let meta = output::meta_line(&cfg.raw_text, cfg.seed);
    let mut written = Vec::new();
    let path = |name: &str| out_dir.join(name);

    match cfg.mode {
        Mode::Integrate => {
            let series = cfg
                .equation
                .integrate_density(&cfg.initial, cfg.t0, cfg.t1, cfg.dt)?;
            output::write_density(&path("density.csv"), &meta, &series)?;
            written.push(path("density.csv"));
        }
        Mode::Pair => {
            let pair = cfg
                .equation
                .pair(cfg.effective_shift(), &cfg.sample_grid(201))?;
            let series =
                pair.paired_cp
                    .integrate_density(&cfg.initial, cfg.t0, cfg.t1, cfg.dt)?;
            output::write_density(&path("density.csv"), &meta, &series)?;
            written.push(path("density.csv"));
        }
        Mode::Unravel => {
            let engine = if cfg.povm_complete {
                let pair = cfg
                    .equation
                    .pair(cfg.effective_shift(), &cfg.sample_grid(201))?;
                JumpEngine::from_paired(&pair, cfg.t0, cfg.t1, cfg.dt)?
            } else {
                JumpEngine::from_noncanonical(&cfg.equation, cfg.t0, cfg.t1, cfg.dt)?
            };
            let sampler = InitialStateSampler::from_density(&cfg.initial)?;
            let est = engine.ensemble(&sampler, cfg.n_traj, cfg.seed)?;
            output::write_ensemble(&path("ensemble.csv"), &meta, &est, None, |t| t)?;
            written.push(path("ensemble.csv"));
            let bound = variance_bound_check(&est);
            output::write_bound(&path("bound.csv"), &meta, &bound)?;
            written.push(path("bound.csv"));
            // a small sample of raw paths for inspection (streams re-run
            // deterministically with the same seeds as the ensemble)
            let n_sample = cfg.n_traj.min(10);
            let mut trajs = Vec::with_capacity(n_sample);
            for i in 0..n_sample {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                let psi0 = match &sampler {
                    InitialStateSampler::Pure(psi) => psi.clone(),
                    InitialStateSampler::Mixed { probs, vectors } => {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        let mut pick = vectors.len() - 1;
                        for (k, p) in probs.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                pick = k;
                                break;
                            }
                        }
                        crate::linalg::StateVector::new(vectors[pick].clone())?
                    }
                };
                trajs.push(engine.simulate(&psi0, cfg.seed, i as u64)?);
            }
            output::write_trajectories(&path("trajectories.csv"), &meta, &trajs)?;
            written.push(path("trajectories.csv"));
        }
        Mode::Embed => {
            let pair = cfg
                .equation
                .pair(cfg.effective_shift(), &cfg.sample_grid(201))?;
            let eme = build_embedding(&pair, &cfg.sample_grid(201))?;
            let gamma0 = ancilla_plus_state(&cfg.initial)?;
            let series = integrate_embedded(&eme, &gamma0, cfg.t0, cfg.t1, cfg.dt)?;
            let density = DensitySeries {
                times: series.times.clone(),
                states: series.states.clone(),
                declared_trace: cfg.initial.trace,
            };
            output::write_density(&path("density.csv"), &meta, &density)?;
            written.push(path("density.csv"));
        }
        Mode::RecoverEmbedding => {
            let forward = cfg
                .equation
                .integrate_density(&cfg.initial, cfg.t0, cfg.t1, cfg.dt)?;
            output::write_density(&path("density.csv"), &meta, &forward)?;
            written.push(path("density.csv"));
            let rho1 = DensityMatrix::physical(hermitize(forward.last()))?;
            let rec = recover_by_embedding_series(&cfg.equation, &rho1, cfg.t0, cfg.t1, cfg.dt)?;
            // recovery runs on a lab-time axis appended after the window
            let t1 = cfg.t1;
            let t0 = cfg.t0;
            output::write_recovery(
                &path("recovery.csv"),
                &meta,
                &rec,
                &cfg.initial.matrix,
                |s| t1 + (s - t0),
            )?;
            written.push(path("recovery.csv"));
        }
        Mode::RecoverMartingale => {
            let forward = cfg
                .equation
                .integrate_density(&cfg.initial, cfg.t0, cfg.t1, cfg.dt)?;
            let rho1 = DensityMatrix::physical(hermitize(forward.last()))?;
            let est = recover_by_martingale(
                &cfg.equation,
                &rho1,
                cfg.t0,
                cfg.t1,
                cfg.dt,
                cfg.n_traj,
                cfg.seed,
            )?;
            let (t0, t1) = (cfg.t0, cfg.t1);
            output::write_ensemble(&path("ensemble.csv"), &meta, &est, None, |s| t1 + (s - t0))?;
            written.push(path("ensemble.csv"));
            let points: Vec<RecoveredPoint> = est
                .grid
                .iter()
                .zip(&est.rho_hat)
                .map(|(&s, rho)| RecoveredPoint { t: s, rho: rho.clone() })
                .collect();
            output::write_recovery(
                &path("recovery.csv"),
                &meta,
                &points,
                &cfg.initial.matrix,
                |s| t1 + (s - t0),
            )?;
            written.push(path("recovery.csv"));
        }
        Mode::SpaScan => {
            let nstar = cfg.equation.min_isotropic_noise(cfg.t0);
            if nstar == 0.0 {
                return Err(Error::Validation(
                    "spa-scan needs a negative rate at t0 (otherwise the step is already CP)"
                        .into(),
                ));
            }
            let mut rows = Vec::new();
            for &dt in &[1e-3, 5e-4, 2.5e-4] {
                for k in 0..=15 {
                    let n = nstar * k as f64 / 10.0;
                    let step = cfg.equation.spa_deformed_step(cfg.t0, dt, n);
                    let min = crate::linalg::min_eigenvalue(&step.choi_matrix())?;
                    rows.push((dt, n, min));
                }
            }
            output::write_spa(&path("spa.csv"), &meta, &rows)?;
            written.push(path("spa.csv"));
        }
        Mode::ReproduceThermalQubit => {
            let me = crate::presets::thermal_qubit();
            let rho0 = DensityMatrix::physical(matrix_unit(2, 0, 0))?;
            let forward = me.integrate_density(&rho0, cfg.t0, cfg.t1, cfg.dt)?;
            output::write_density(&path("density.csv"), &meta, &forward)?;
            written.push(path("density.csv"));
            let rho1 = DensityMatrix::physical(hermitize(forward.last()))?;
            let (t0, t1) = (cfg.t0, cfg.t1);
            let rec = recover_by_embedding_series(&me, &rho1, t0, t1, cfg.dt)?;
            output::write_recovery(&path("recovery.csv"), &meta, &rec, &rho0.matrix, |s| {
                t1 + (s - t0)
            })?;
            written.push(path("recovery.csv"));
            // martingale diamonds at 20 evenly spaced recovery times
            let est = recover_by_martingale(&me, &rho1, t0, t1, cfg.dt, cfg.n_traj, cfg.seed)?;
            let n = est.grid.len() - 1;
            let indices: Vec<usize> = (0..20).map(|i| (i * n + 9) / 19).collect();
            output::write_ensemble(&path("ensemble.csv"), &meta, &est, Some(&indices), |s| {
                t1 + (s - t0)
            })?;
            written.push(path("ensemble.csv"));
        }
    }
    Ok(written)
}

/// Dry run: parse-level checks have already passed; sample the equation on
/// the window and report the canonical-form diagnostics.
pub fn validate(cfg: &ExperimentConfig) -> Result<String> {
    let grid = cfg.sample_grid(101);
    let report = cfg.equation.validate(&grid);
    let mut lines = vec![
        format!("mode: {:?}", cfg.mode),
        format!("window: [{}, {}], dt = {}", cfg.t0, cfg.t1, cfg.dt),
        format!(
            "equation: dim {}, {} channels, POVM constant {}",
            cfg.equation.dim,
            cfg.equation.channels(),
            cfg.equation.povm_constant
        ),
        format!("povm_complete: {}", cfg.povm_complete),
        format!("max POVM violation: {:.3e}", report.max_povm_violation),
        format!(
            "max Hamiltonian hermiticity deviation: {:.3e}",
            report.max_hamiltonian_deviation
        ),
        format!("max rate magnitude: {:.3e}", report.max_rate_magnitude),
    ];
    if cfg.equation.canonical {
        lines.push(format!(
            "canonical basis: trace violation {:.3e}, orthonormality violation {:.3e}",
            report.max_trace_violation, report.max_orthonormality_violation
        ));
    }
    for msg in &report.messages {
        lines.push(format!("note: {msg}"));
    }
    // pairing feasibility at the shift that run() would use
    if cfg.mode.needs_trajectories() && cfg.povm_complete {
        let shift = cfg.effective_shift();
        cfg.equation.pair(shift, &grid)?;
        lines.push("pairing constraint: satisfied on the sampled grid".into());
    }
    let passed = report.passed(&cfg.tolerances);
    lines.push(format!("validation: {}", if passed { "PASS" } else { "FAIL" }));
    if !passed {
        return Err(Error::Validation(lines.join("\n")));
    }
    Ok(lines.join("\n"))
}
