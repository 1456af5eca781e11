//! Experiment configuration: a flat `key = value` text format with
//! `[section]` headers, complex-matrix literals, named operator presets and
//! small time-profile expressions.

use std::path::PathBuf;
use std::sync::Arc;

use crate::equation::{constant_op, gell_mann_basis, CanonicalMasterEquation, TimeOperator, TimeRate};
use crate::error::{Error, Result};
use crate::linalg::{
    identity, matrix_unit, max_abs, min_eigenvalue, sigma1, sigma2, sigma3, sigma_minus,
    sigma_plus, CMatrix, DensityMatrix, Tolerances, C64,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Integrate,
    Unravel,
    Pair,
    Embed,
    RecoverEmbedding,
    RecoverMartingale,
    SpaScan,
    ReproduceThermalQubit,
}

impl Mode {
    fn parse(s: &str) -> Result<Mode> {
        Ok(match s {
            "integrate" => Mode::Integrate,
            "unravel" => Mode::Unravel,
            "pair" => Mode::Pair,
            "embed" => Mode::Embed,
            "recover-embedding" => Mode::RecoverEmbedding,
            "recover-martingale" => Mode::RecoverMartingale,
            "spa-scan" => Mode::SpaScan,
            "reproduce-thermal-qubit" => Mode::ReproduceThermalQubit,
            other => return Err(Error::Config(format!("unknown mode '{other}'"))),
        })
    }

    pub fn needs_trajectories(self) -> bool {
        matches!(
            self,
            Mode::Unravel | Mode::RecoverMartingale | Mode::ReproduceThermalQubit
        )
    }
}

/// A small time-dependent scalar: an affine combination of constants,
/// sinusoids a sin(w t + p) and tabulated linear interpolants.
#[derive(Debug, Clone)]
pub struct Profile {
    terms: Vec<(f64, Term)>,
}

#[derive(Debug, Clone)]
enum Term {
    Const(f64),
    Sin { a: f64, w: f64, p: f64 },
    Table(Vec<(f64, f64)>),
}

impl Profile {
    pub fn constant(v: f64) -> Profile {
        Profile {
            terms: vec![(1.0, Term::Const(v))],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|(sign, term)| {
                sign * match term {
                    Term::Const(v) => *v,
                    Term::Sin { a, w, p } => a * (w * t + p).sin(),
                    Term::Table(points) => interpolate(points, t),
                }
            })
            .sum()
    }

    pub fn into_rate(self) -> TimeRate {
        Arc::new(move |t| self.eval(t))
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    match points {
        [] => 0.0,
        [only] => only.1,
        _ => {
            if t <= points[0].0 {
                return points[0].1;
            }
            if t >= points[points.len() - 1].0 {
                return points[points.len() - 1].1;
            }
            let i = points.partition_point(|(ti, _)| *ti <= t);
            let (ta, va) = points[i - 1];
            let (tb, vb) = points[i];
            va + (vb - va) * (t - ta) / (tb - ta)
        }
    }
}

/// Parse a complex literal "a+bi" / "a-bi" / "a" / "bi" / "i" / "-i".
pub fn parse_complex(s: &str) -> Result<C64> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Config("empty complex literal".into()));
    }
    let bad = |msg: &str| Error::Config(format!("bad complex literal '{s}': {msg}"));
    if let Some(body) = s.strip_suffix(['i', 'I']) {
        // find the +/- separating real and imaginary parts (not an exponent
        // sign and not a leading sign)
        let bytes = body.as_bytes();
        let mut split = None;
        for k in (1..bytes.len()).rev() {
            let c = bytes[k] as char;
            if (c == '+' || c == '-') && !matches!(bytes[k - 1] as char, 'e' | 'E') {
                split = Some(k);
                break;
            }
        }
        let (re_str, im_str) = match split {
            Some(k) => (&body[..k], &body[k..]),
            None => ("", body),
        };
        let re = if re_str.is_empty() {
            0.0
        } else {
            re_str.trim().parse::<f64>().map_err(|_| bad("real part"))?
        };
        let im = match im_str.trim() {
            "" | "+" => 1.0,
            "-" => -1.0,
            v => v.parse::<f64>().map_err(|_| bad("imaginary part"))?,
        };
        Ok(C64::new(re, im))
    } else {
        let re = s.parse::<f64>().map_err(|_| bad("real number"))?;
        Ok(C64::new(re, 0.0))
    }
}

/// Parse a matrix: a named preset or semicolon-separated rows of
/// comma-separated complex literals.
pub fn parse_matrix(s: &str, dim_hint: Option<usize>) -> Result<CMatrix> {
    let s = s.trim();
    match s {
        "sigma1" | "sigma_x" => return Ok(sigma1()),
        "sigma2" | "sigma_y" => return Ok(sigma2()),
        "sigma3" | "sigma_z" => return Ok(sigma3()),
        "sigma_plus" => return Ok(sigma_plus()),
        "sigma_minus" => return Ok(sigma_minus()),
        "identity" => {
            let d = dim_hint
                .ok_or_else(|| Error::Config("identity preset needs a dimension".into()))?;
            return Ok(identity(d));
        }
        _ => {}
    }
    let rows: Vec<&str> = s.split(';').collect();
    let n = rows.len();
    let mut out = CMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        let entries: Vec<&str> = row.split(',').collect();
        if entries.len() != n {
            return Err(Error::Config(format!(
                "matrix row {} has {} entries, expected {} (square)",
                i + 1,
                entries.len(),
                n
            )));
        }
        for (j, e) in entries.iter().enumerate() {
            out[(i, j)] = parse_complex(e)?;
        }
    }
    if let Some(d) = dim_hint {
        if n != d {
            return Err(Error::Config(format!(
                "matrix is {n}x{n}, expected {d}x{d}"
            )));
        }
    }
    Ok(out)
}

/// Parse a time profile: terms joined by +/- where each term is a bare
/// number, const(a), sin(a, w, p) or table(t1:v1, t2:v2, ...).
pub fn parse_profile(s: &str) -> Result<Profile> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Config("empty time profile".into()));
    }
    let mut terms = Vec::new();
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut sign = 1.0;
    let mut cuts: Vec<(f64, &str)> = Vec::new();
    for (k, &b) in bytes.iter().enumerate() {
        match b as char {
            '(' => depth += 1,
            ')' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| Error::Config(format!("unbalanced parentheses in '{s}'")))?
            }
            '+' | '-' if depth == 0 && k > start => {
                // exponent signs stay inside the term
                if !matches!(bytes[k - 1] as char, 'e' | 'E') {
                    cuts.push((sign, s[start..k].trim()));
                    sign = if b as char == '-' { -1.0 } else { 1.0 };
                    start = k + 1;
                }
            }
            '-' if depth == 0 && k == start => {
                sign = -sign;
                start = k + 1;
            }
            '+' if depth == 0 && k == start => {
                start = k + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::Config(format!("unbalanced parentheses in '{s}'")));
    }
    cuts.push((sign, s[start..].trim()));
    for (sign, term) in cuts {
        if term.is_empty() {
            return Err(Error::Config(format!("empty term in profile '{s}'")));
        }
        terms.push((sign, parse_term(term)?));
    }
    Ok(Profile { terms })
}

fn parse_term(s: &str) -> Result<Term> {
    if let Ok(v) = s.parse::<f64>() {
        return Ok(Term::Const(v));
    }
    let (name, args) = s
        .split_once('(')
        .ok_or_else(|| Error::Config(format!("bad profile term '{s}'")))?;
    let args = args
        .strip_suffix(')')
        .ok_or_else(|| Error::Config(format!("bad profile term '{s}'")))?;
    let name = name.trim();
    let parse_f64 = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad number '{v}' in profile term '{s}'")))
    };
    match name {
        "const" => Ok(Term::Const(parse_f64(args)?)),
        "sin" => {
            let parts: Vec<&str> = args.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!(
                    "sin takes (amplitude, frequency, phase), got '{s}'"
                )));
            }
            Ok(Term::Sin {
                a: parse_f64(parts[0])?,
                w: parse_f64(parts[1])?,
                p: parse_f64(parts[2])?,
            })
        }
        "table" => {
            let mut points = Vec::new();
            for pair in args.split(',') {
                let (t, v) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("table entries are t:v, got '{pair}'")))?;
                points.push((parse_f64(t)?, parse_f64(v)?));
            }
            if points.is_empty() {
                return Err(Error::Config("empty table profile".into()));
            }
            let sorted = points.windows(2).all(|w| w[0].0 < w[1].0);
            if !sorted {
                return Err(Error::Config(
                    "table times must be strictly increasing".into(),
                ));
            }
            Ok(Term::Table(points))
        }
        other => Err(Error::Config(format!("unknown profile term '{other}'"))),
    }
}

/// Fully parsed and validated experiment description.
pub struct ExperimentConfig {
    pub mode: Mode,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub equation: CanonicalMasterEquation,
    /// Optional explicit pairing shift; default is the optimal c.
    pub shift: Option<TimeRate>,
    pub initial: DensityMatrix,
    pub tolerances: Tolerances,
    /// True when sum L^dag L is a scalar multiple of the identity on the
    /// window (the jump engine needs no padding).
    pub povm_complete: bool,
    /// Raw config text, hashed into every output file.
    pub raw_text: String,
}

impl std::fmt::Debug for ExperimentConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExperimentConfig")
            .field("mode", &self.mode)
            .field("window", &(self.t0, self.t1))
            .field("dt", &self.dt)
            .field("n_traj", &self.n_traj)
            .field("seed", &self.seed)
            .finish()
    }
}

struct RawConfig {
    entries: Vec<(String, String, String, usize)>, // (section, key, value, line)
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig> {
        let mut section = String::new();
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(k) => &raw[..k],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: bad section header '{raw}'", lineno + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{raw}'", lineno + 1))
            })?;
            entries.push((
                section.clone(),
                key.trim().to_string(),
                value.trim().to_string(),
                lineno + 1,
            ));
        }
        Ok(RawConfig { entries })
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(s, k, _, _)| s == section && k == key)
            .map(|(_, _, v, _)| v.as_str())
    }

    fn get_all(&self, section: &str, key: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(s, k, _, _)| s == section && k == key)
            .map(|(_, _, v, _)| v.as_str())
            .collect()
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| Error::Config(format!("missing [{section}] {key}")))
    }
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| Error::Config(format!("[{section}] {key}: bad value '{v}'")))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw = RawConfig::parse(text)?;
    let mode = Mode::parse(raw.require("experiment", "mode")?)?;
    let t0: f64 = parse_num("experiment", "t0", raw.get("experiment", "t0").unwrap_or("0"))?;
    let t1: f64 = parse_num("experiment", "t1", raw.get("experiment", "t1").unwrap_or("1"))?;
    let dt: f64 = parse_num("experiment", "dt", raw.get("experiment", "dt").unwrap_or("1e-3"))?;
    let n_traj: usize = parse_num(
        "experiment",
        "n_traj",
        raw.get("experiment", "n_traj").unwrap_or("10000"),
    )?;
    let seed: u64 = parse_num("experiment", "seed", raw.get("experiment", "seed").unwrap_or("0"))?;
    let out_dir = raw.get("experiment", "out").map(PathBuf::from);

    if !(t0.is_finite() && t1.is_finite() && dt.is_finite()) {
        return Err(Error::Config("window and dt must be finite".into()));
    }
    if dt <= 0.0 {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if t1 <= t0 {
        return Err(Error::Config(format!("t1 = {t1} must exceed t0 = {t0}")));
    }
    if n_traj < 1 {
        return Err(Error::Config("n_traj must be at least 1".into()));
    }

    let mut tolerances = Tolerances::default();
    for key in [
        "hermiticity",
        "trace",
        "psd_slack",
        "flow_composition",
        "superop_action",
        "max_condition",
    ] {
        if let Some(v) = raw.get("tolerances", key) {
            let v = parse_num::<f64>("tolerances", key, v)?;
            match key {
                "hermiticity" => tolerances.hermiticity = v,
                "trace" => tolerances.trace = v,
                "psd_slack" => tolerances.psd_slack = v,
                "flow_composition" => tolerances.flow_composition = v,
                "superop_action" => tolerances.superop_action = v,
                _ => tolerances.max_condition = v,
            }
        }
    }

    // The reproduction mode carries its own built-in equation; an [equation]
    // section would be ignored, so accept configs without one.
    if mode == Mode::ReproduceThermalQubit {
        let initial = parse_initial_state(
            raw.get("initial", "rho").unwrap_or("excited"),
            2,
            &tolerances,
        )?;
        return Ok(ExperimentConfig {
            mode,
            t0,
            t1,
            dt,
            n_traj,
            seed,
            out_dir,
            equation: crate::presets::thermal_qubit(),
            shift: None,
            initial,
            tolerances,
            povm_complete: true,
            raw_text: text.to_string(),
        });
    }

    let dim: usize = parse_num("equation", "dim", raw.get("equation", "dim").unwrap_or("2"))?;
    if dim < 2 {
        return Err(Error::Config(format!("dim must be at least 2, got {dim}")));
    }

    // Hamiltonian: repeated "ham_term = <profile> * <matrix>" lines
    let mut ham_terms: Vec<(Profile, CMatrix)> = Vec::new();
    for term in raw.get_all("equation", "ham_term") {
        let (profile_str, matrix_str) = term.split_once('*').ok_or_else(|| {
            Error::Config(format!("ham_term needs '<profile> * <matrix>', got '{term}'"))
        })?;
        ham_terms.push((
            parse_profile(profile_str)?,
            parse_matrix(matrix_str, Some(dim))?,
        ));
    }
    let hamiltonian: TimeOperator = if ham_terms.is_empty() {
        constant_op(CMatrix::zeros(dim, dim))
    } else {
        Arc::new(move |t| {
            let mut h = CMatrix::zeros(dim, dim);
            for (profile, m) in &ham_terms {
                h += m.scale(profile.eval(t));
            }
            h
        })
    };

    // decoherence operators: explicit "lindblad = <matrix>" lines, or the
    // generated orthonormal basis when none are given
    let lindblad_strs = raw.get_all("equation", "lindblad");
    let (ops, canonical): (Vec<TimeOperator>, bool) = if lindblad_strs.is_empty() {
        (
            gell_mann_basis(dim).into_iter().map(constant_op).collect(),
            true,
        )
    } else {
        let mut ops = Vec::new();
        for s in &lindblad_strs {
            ops.push(constant_op(parse_matrix(s, Some(dim))?));
        }
        (ops, false)
    };

    let rate_strs = raw.get_all("equation", "rate");
    if rate_strs.len() != ops.len() {
        return Err(Error::Config(format!(
            "{} rate lines for {} decoherence operators",
            rate_strs.len(),
            ops.len()
        )));
    }
    let mut rates: Vec<TimeRate> = Vec::new();
    for s in rate_strs {
        rates.push(parse_profile(s)?.into_rate());
    }

    // POVM constant: canonical basis fixes it; otherwise detect whether
    // sum L^dag L is scalar (operators are time-independent here)
    let (povm_constant, povm_complete) = if canonical {
        ((dim * dim - 1) as f64 / dim as f64, true)
    } else {
        let mut sum = CMatrix::zeros(dim, dim);
        for op in &ops {
            let l = op(t0);
            sum += l.adjoint() * l;
        }
        let g = sum.trace().re / dim as f64;
        if max_abs(&(sum - identity(dim).scale(g))) <= 1e-9 {
            (g, true)
        } else {
            (0.0, false)
        }
    };

    let equation = CanonicalMasterEquation::new(
        dim,
        hamiltonian,
        ops,
        rates,
        povm_constant,
        canonical,
    )?;

    let shift: Option<TimeRate> = match raw.get("equation", "c") {
        Some(s) => Some(parse_profile(s)?.into_rate()),
        None => None,
    };

    let initial = parse_initial_state(
        raw.get("initial", "rho").unwrap_or("maximally_mixed"),
        dim,
        &tolerances,
    )?;

    Ok(ExperimentConfig {
        mode,
        t0,
        t1,
        dt,
        n_traj,
        seed,
        out_dir,
        equation,
        shift,
        initial,
        tolerances,
        povm_complete,
        raw_text: text.to_string(),
    })
}

fn parse_initial_state(s: &str, dim: usize, tol: &Tolerances) -> Result<DensityMatrix> {
    let m = match s.trim() {
        "excited" => matrix_unit(dim, 0, 0),
        "ground" => matrix_unit(dim, dim - 1, dim - 1),
        "plus" => {
            if dim != 2 {
                return Err(Error::Config("preset 'plus' needs dim = 2".into()));
            }
            (identity(2) + sigma1()).scale(0.5)
        }
        "maximally_mixed" => identity(dim).scale(1.0 / dim as f64),
        literal => parse_matrix(literal, Some(dim))?,
    };
    let trace = m.trace().re;
    if (trace - 1.0).abs() > tol.trace {
        return Err(Error::Config(format!(
            "initial state trace {trace} is not 1"
        )));
    }
    let rho = DensityMatrix::new(m, 1.0, tol)?;
    let min = min_eigenvalue(&rho.matrix)?;
    if min < -tol.psd_slack {
        return Err(Error::NotPositiveSemidefinite { value: min });
    }
    Ok(rho)
}

impl ExperimentConfig {
    /// Evenly spaced sample of the window used by validation checks.
    pub fn sample_grid(&self, points: usize) -> Vec<f64> {
        (0..points)
            .map(|k| self.t0 + (self.t1 - self.t0) * k as f64 / (points - 1).max(1) as f64)
            .collect()
    }

    /// The pairing shift to use: explicit override or the optimal c.
    pub fn effective_shift(&self) -> TimeRate {
        match &self.shift {
            Some(c) => c.clone(),
            None => {
                let me = self.equation.clone();
                Arc::new(move |t| me.optimal_c(t))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn complex_literals() {
        assert_eq!(parse_complex("1").unwrap(), C64::new(1.0, 0.0));
        assert_eq!(parse_complex("-2.5").unwrap(), C64::new(-2.5, 0.0));
        assert_eq!(parse_complex("i").unwrap(), C64::new(0.0, 1.0));
        assert_eq!(parse_complex("-i").unwrap(), C64::new(0.0, -1.0));
        assert_eq!(parse_complex("2i").unwrap(), C64::new(0.0, 2.0));
        assert_eq!(parse_complex("1+2i").unwrap(), C64::new(1.0, 2.0));
        assert_eq!(parse_complex("1-2i").unwrap(), C64::new(1.0, -2.0));
        assert_eq!(parse_complex("1e-3+2.5e2i").unwrap(), C64::new(1e-3, 250.0));
        assert_eq!(parse_complex("-1.5e-2i").unwrap(), C64::new(0.0, -0.015));
        assert!(parse_complex("").is_err());
        assert!(parse_complex("foo").is_err());
    }

    #[test]
    fn matrix_presets_and_literals() {
        assert_eq!(parse_matrix("sigma1", Some(2)).unwrap(), sigma1());
        assert_eq!(parse_matrix("sigma_minus", Some(2)).unwrap(), sigma_minus());
        let m = parse_matrix("0,1;1,0", Some(2)).unwrap();
        assert_eq!(m, sigma1());
        let m = parse_matrix("0,-i;i,0", Some(2)).unwrap();
        assert_eq!(m, sigma2());
        assert!(parse_matrix("0,1;1", Some(2)).is_err());
        assert!(parse_matrix("0,1;1,0", Some(3)).is_err());
    }

    #[test]
    fn profile_expressions() {
        let p = parse_profile("const(0.5)").unwrap();
        assert_abs_diff_eq!(p.eval(3.0), 0.5, epsilon = 1e-15);

        let p = parse_profile("-0.3").unwrap();
        assert_abs_diff_eq!(p.eval(0.0), -0.3, epsilon = 1e-15);

        // the thermal-qubit drive: 0.5 + 3 sin(15 t)
        let p = parse_profile("const(0.5) + sin(3, 15, 0)").unwrap();
        assert_abs_diff_eq!(p.eval(0.2), 0.5 + 3.0 * 3.0_f64.sin(), epsilon = 1e-14);

        let p = parse_profile("sin(1, 2, 0.5) - const(1)").unwrap();
        assert_abs_diff_eq!(p.eval(1.0), (2.5_f64).sin() - 1.0, epsilon = 1e-14);

        let p = parse_profile("table(0:0, 1:2, 3:2)").unwrap();
        assert_abs_diff_eq!(p.eval(-1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eval(0.5), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eval(2.0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eval(9.0), 2.0, epsilon = 1e-15);

        assert!(parse_profile("").is_err());
        assert!(parse_profile("cos(1,2,3)").is_err());
        assert!(parse_profile("table(1:0, 0:1)").is_err());
        // exponent signs are not term separators
        let p = parse_profile("const(1e-3) + const(2e+1)").unwrap();
        assert_abs_diff_eq!(p.eval(0.0), 20.001, epsilon = 1e-12);
    }

    #[test]
    fn full_config_round_trip() {
        let text = "
# driven qubit in a thermal bath
[experiment]
mode = unravel
t0 = 0
t1 = 1
dt = 1e-3
n_traj = 500
seed = 42

[equation]
dim = 2
ham_term = const(0.5) * sigma3
ham_term = sin(3, 15, 0) * sigma1
lindblad = sigma_plus
lindblad = sigma_minus
rate = const(0.1)
rate = const(0.2718281828459045)

[initial]
rho = excited
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.mode, Mode::Unravel);
        assert_eq!(cfg.n_traj, 500);
        assert_eq!(cfg.seed, 42);
        assert!(cfg.povm_complete);
        assert_abs_diff_eq!(cfg.equation.povm_constant, 1.0, epsilon = 1e-12);
        assert!(!cfg.equation.canonical);
        let h = (cfg.equation.hamiltonian)(0.2);
        let expect = sigma3().scale(0.5) + sigma1().scale(3.0 * 3.0_f64.sin());
        assert!(max_abs(&(h - expect)) < 1e-13);
        assert_abs_diff_eq!((cfg.equation.rates[0])(0.7), 0.1, epsilon = 1e-15);
        assert_eq!(cfg.initial.matrix, matrix_unit(2, 0, 0));
    }

    #[test]
    fn canonical_default_basis() {
        let text = "
[experiment]
mode = integrate
[equation]
dim = 2
rate = const(0.5)
rate = const(0.2)
rate = -0.3
";
        let cfg = parse_config(text).unwrap();
        assert!(cfg.equation.canonical);
        assert_eq!(cfg.equation.channels(), 3);
        assert_abs_diff_eq!(cfg.equation.povm_constant, 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.equation.optimal_c(0.0), 0.6, epsilon = 1e-15);
        // defaults
        assert_eq!((cfg.t0, cfg.t1), (0.0, 1.0));
        assert_eq!(cfg.n_traj, 10_000);
    }

    #[test]
    fn povm_incomplete_detected() {
        let text = "
[experiment]
mode = unravel
[equation]
dim = 2
lindblad = sigma_minus
rate = const(-0.2)
[initial]
rho = excited
";
        let cfg = parse_config(text).unwrap();
        assert!(!cfg.povm_complete);
    }

    #[test]
    fn validation_errors() {
        let bad = |text: &str| parse_config(text).unwrap_err();
        assert!(matches!(bad("[experiment]\nmode = fly"), Error::Config(_)));
        assert!(matches!(
            bad("[experiment]\nmode = integrate\ndt = -1"),
            Error::Config(_)
        ));
        assert!(matches!(
            bad("[experiment]\nmode = integrate\nt0 = 2\nt1 = 1"),
            Error::Config(_)
        ));
        assert!(matches!(
            bad("[experiment]\nmode = integrate\nn_traj = 0"),
            Error::Config(_)
        ));
        // rate count mismatch
        assert!(matches!(
            bad("[experiment]\nmode = integrate\n[equation]\ndim = 2\nrate = const(1)"),
            Error::Config(_)
        ));
        // unnormalized initial state
        assert!(matches!(
            bad("[experiment]\nmode = integrate\n[equation]\ndim = 2\nrate = 0\nrate = 0\nrate = 0\n[initial]\nrho = 1,0;0,1"),
            Error::Config(_)
        ));
        // non-PSD initial state
        assert!(parse_config(
            "[experiment]\nmode = integrate\n[equation]\ndim = 2\nrate = 0\nrate = 0\nrate = 0\n[initial]\nrho = 1.5,0;0,-0.5"
        )
        .is_err());
        // missing key = value shape
        assert!(matches!(bad("[experiment]\nmode integrate"), Error::Config(_)));
    }

    #[test]
    fn tolerance_overrides() {
        let text = "
[experiment]
mode = integrate
[equation]
dim = 2
rate = 0
rate = 0
rate = 0
[tolerances]
trace = 1e-6
psd_slack = 1e-5
";
        let cfg = parse_config(text).unwrap();
        assert_abs_diff_eq!(cfg.tolerances.trace, 1e-6, epsilon = 1e-20);
        assert_abs_diff_eq!(cfg.tolerances.psd_slack, 1e-5, epsilon = 1e-20);
        assert_abs_diff_eq!(cfg.tolerances.hermiticity, 1e-10, epsilon = 1e-20);
    }
}
