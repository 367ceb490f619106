//! Benchmark systems used by the experiment suite.

use crate::error::Result;
use crate::linalg::{from_rows, Mat};
use crate::lti::LtiSystem;

/// Input map used for the misspecified control runs. With the first
/// coordinate observed, an input that only drives the second coordinate
/// has no one-step effect on `y` (`C B = 0`), so a single-step model can
/// never learn any control authority. A small direct term restores it.
pub const MISSPEC_CONTROL_INPUT: [f64; 2] = [0.3, 1.0];

fn transition(a: f64) -> Mat {
    from_rows(&[&[a, 1.0], &[0.0, 0.75]])
}

/// Fully observed two-state system `A = [[a, 1], [0, 0.75]]`, `B = [0, 1]ᵀ`,
/// unit process noise.
pub fn wellspec(a: f64) -> Result<LtiSystem> {
    LtiSystem::fully_observed(
        transition(a),
        from_rows(&[&[0.0], &[1.0]]),
        Mat::identity(2, 2),
    )
}

/// The same dynamics observed through the first coordinate with unit sensor
/// noise and no inputs.
pub fn misspec(a: f64) -> Result<LtiSystem> {
    LtiSystem::new(
        transition(a),
        Mat::zeros(2, 0),
        Mat::identity(2, 2),
        from_rows(&[&[1.0, 0.0]]),
        from_rows(&[&[1.0]]),
    )
}

/// Partially observed system with an actuated input, for the control sweeps.
pub fn misspec_control(a: f64, input_map: [f64; 2]) -> Result<LtiSystem> {
    misspec(a)?.with_input_map(from_rows(&[&[input_map[0]], &[input_map[1]]]))
}

/// Jordan block with a repeated pole at 0.9, observed through the first
/// coordinate. The single-step predictor limit for this system has a
/// spectral radius close to one.
pub fn jordan_example() -> Result<LtiSystem> {
    LtiSystem::new(
        from_rows(&[&[0.9, 1.0], &[0.0, 0.9]]),
        Mat::zeros(2, 0),
        Mat::identity(2, 2),
        from_rows(&[&[1.0, 0.0]]),
        from_rows(&[&[1.0]]),
    )
}

/// Scalar fully observed system; `b = 0` means no input channel.
pub fn scalar(a: f64, b: f64, b_w: f64) -> Result<LtiSystem> {
    let b = if b == 0.0 {
        Mat::zeros(1, 0)
    } else {
        from_rows(&[&[b]])
    };
    LtiSystem::fully_observed(from_rows(&[&[a]]), b, from_rows(&[&[b_w]]))
}
