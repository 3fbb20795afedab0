//! Verification tools that do not share code paths with the implementation
//! they check: central finite differences, the one-dimensional convergence
//! model of the annealed proxy gradient, and brute-force MAC counting.

mod flops_count;
mod gradcheck;

pub use flops_count::{brute_force_dense_macs, brute_force_train_macs};
pub use gradcheck::{run_gradient_check, GradCheckConfig, GradCheckReport, WorstCoordinate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Central difference `(f(x+h) - f(x-h)) / 2h` for each coordinate.
pub fn finite_diff_grad<F>(f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid("step", "must be positive and finite"));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        grad.push((fp - fm) / (2.0 * step));
    }
    Ok(grad)
}

/// Central difference at `step` and `step/2` combined by Richardson
/// extrapolation; also returns the gap between the two raw estimates.
pub fn richardson_grad<F>(f: F, point: &[f64], step: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64,
{
    let coarse = finite_diff_grad(&f, point, step)?;
    let fine = finite_diff_grad(&f, point, step / 2.0)?;
    let extrapolated = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect();
    let gap = coarse.iter().zip(&fine).map(|(c, f)| (c - f).abs()).collect();
    Ok((extrapolated, gap))
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Branches of `∂L/∂v = ∂h_α(v)·(h_α(v) - v*)` for `L(v) = ½(h_α(v) - v*)²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceBranch {
    /// `h_α(v) = v*`: zero gradient.
    AtOptimum,
    /// `v > 0, v* > 0`: gradient `v - v*`.
    ActiveTargetPositive,
    /// `v > 0, v* ≤ 0`: gradient `v + |v*|`.
    ActiveTargetNonPositive,
    /// `v ≤ 0, v* > 0`: gradient `α·(-v*)`.
    MaskedTargetPositive,
    /// `v ≤ 0, v* ≤ 0`: gradient `α·|v*|`.
    MaskedTargetNonPositive,
}

impl ConvergenceBranch {
    pub const ALL: [ConvergenceBranch; 5] = [
        ConvergenceBranch::AtOptimum,
        ConvergenceBranch::ActiveTargetPositive,
        ConvergenceBranch::ActiveTargetNonPositive,
        ConvergenceBranch::MaskedTargetPositive,
        ConvergenceBranch::MaskedTargetNonPositive,
    ];

    /// 1-based position in the case list.
    pub fn number(self) -> u8 {
        match self {
            ConvergenceBranch::AtOptimum => 1,
            ConvergenceBranch::ActiveTargetPositive => 2,
            ConvergenceBranch::ActiveTargetNonPositive => 3,
            ConvergenceBranch::MaskedTargetPositive => 4,
            ConvergenceBranch::MaskedTargetNonPositive => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCase {
    pub v: f64,
    pub v_star: f64,
    pub alpha: f64,
    pub branch: ConvergenceBranch,
    pub gradient: f64,
}

fn h_alpha(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Classifies `(v, v*)` and evaluates the loss gradient. The optimum test is
/// made first, so pairs with `h_α(v) = v*` never land in branches 2–5.
pub fn simulate_case(v: f64, v_star: f64, alpha: f64) -> ConvergenceCase {
    let (branch, gradient) = if h_alpha(v) == v_star {
        (ConvergenceBranch::AtOptimum, 0.0)
    } else if v > 0.0 && v_star > 0.0 {
        (ConvergenceBranch::ActiveTargetPositive, v - v_star)
    } else if v > 0.0 {
        (ConvergenceBranch::ActiveTargetNonPositive, v + v_star.abs())
    } else if v_star > 0.0 {
        (ConvergenceBranch::MaskedTargetPositive, alpha * (-v_star))
    } else {
        (ConvergenceBranch::MaskedTargetNonPositive, alpha * v_star.abs())
    };
    ConvergenceCase {
        v,
        v_star,
        alpha,
        branch,
        gradient,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrajectory {
    /// `values[0] = v0`, then one entry per step.
    pub values: Vec<f64>,
    /// Steps (1-based) at which `v` changed between masked (`≤ 0`) and
    /// active (`> 0`), with the state entered.
    pub transitions: Vec<(usize, bool)>,
}

impl DescentTrajectory {
    /// First step at which `v > 0`.
    pub fn first_active_step(&self) -> Option<usize> {
        self.values.iter().position(|&v| v > 0.0)
    }
}

/// Gradient descent `v ← v - lr·∂L/∂v` with α given per step (0-based).
pub fn simulate_descent<A>(v0: f64, v_star: f64, alpha: A, lr: f64, steps: usize) -> Result<DescentTrajectory>
where
    A: Fn(usize) -> f64,
{
    if !(lr > 0.0) {
        return Err(Error::invalid("lr", "must be positive"));
    }
    let mut values = Vec::with_capacity(steps + 1);
    let mut transitions = Vec::new();
    let mut v = v0;
    values.push(v);
    for step in 0..steps {
        let case = simulate_case(v, v_star, alpha(step));
        let next = v - lr * case.gradient;
        if (next > 0.0) != (v > 0.0) {
            transitions.push((step + 1, next > 0.0));
        }
        v = next;
        values.push(v);
    }
    Ok(DescentTrajectory {
        values,
        transitions,
    })
}
