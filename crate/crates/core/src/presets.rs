//! Built-in example systems used by tests and the `reproduce-thermal-qubit`
//! run mode.

use std::sync::Arc;

use crate::equation::{constant_op, CanonicalMasterEquation, TimeOperator, TimeRate};
use crate::linalg::{sigma1, sigma3, sigma_minus, sigma_plus};

/// Coupling strength of the thermal-qubit example.
pub const THERMAL_G: f64 = 0.1;
/// Inverse temperature of the thermal-qubit example.
pub const THERMAL_BETA: f64 = 1.0;
/// Transition frequency of the thermal-qubit example.
pub const THERMAL_OMEGA: f64 = 1.0;

/// Driven qubit in a thermal bath:
/// H(t) = sigma_3 / 2 + 3 sin(15 t) sigma_1,
/// channels sigma_+ at rate g and sigma_- at rate g e^{beta omega},
/// with g = 0.1, beta = omega = 1 and POVM constant 1.
pub fn thermal_qubit() -> CanonicalMasterEquation {
    let h: TimeOperator = Arc::new(|t: f64| {
        sigma3().scale(0.5) + sigma1().scale(3.0 * (15.0 * t).sin())
    });
    let absorb: TimeRate = Arc::new(|_| THERMAL_G);
    let emit: TimeRate = Arc::new(|_| THERMAL_G * (THERMAL_BETA * THERMAL_OMEGA).exp());
    CanonicalMasterEquation::new(
        2,
        h,
        vec![constant_op(sigma_plus()), constant_op(sigma_minus())],
        vec![absorb, emit],
        1.0,
        false,
    )
    .expect("matching operator and rate counts")
}
