use nalgebra::DVector;

use crate::error::{Error, Result};

use super::{spectral_norm_sq, MapSolution, SolverOptions, SynthesisModel};

/// Consecutive small-improvement iterations required before convergence.
const STALL_COUNT: usize = 5;

#[inline]
fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// Minimizes `0.5 ||Phi s - b||^2 + lambda ||s||_1` with monotone
/// accelerated proximal gradient (function-monotone FISTA with restart),
/// then synthesizes the restoration through the pseudoinverse plus shift.
///
/// The step length comes from a power-iteration estimate of the spectral
/// norm of the dictionary; the momentum restarts whenever the accelerated
/// point overshoots, and the kept iterate is always the best of (proximal
/// step, previous iterate), so the objective trace is non-increasing.
pub fn solve_synthesis_l1(
    model: &SynthesisModel,
    data: &DVector<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<MapSolution> {
    if lambda <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda));
    }
    if data.len() != model.dims.measurements {
        return Err(Error::DimensionMismatch {
            what: "data length",
            expected: model.dims.measurements,
            got: data.len(),
        });
    }
    let phi = model.dictionary();
    let m = model.dims.coeffs;

    let lipschitz = spectral_norm_sq(phi) * 1.02;
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return Err(Error::NonFinite("dictionary spectral norm"));
    }
    let step = 1.0 / lipschitz;

    let objective = |s: &DVector<f64>| -> f64 {
        0.5 * (phi * s - data).norm_squared() + lambda * s.abs().sum()
    };

    let mut current = DVector::<f64>::zeros(m);
    let mut current_value = objective(&current);
    let mut momentum_point = current.clone();
    let mut t = 1.0_f64;

    let mut trace = Vec::with_capacity(opts.max_iterations.min(4096));
    trace.push(current_value);

    let mut converged = false;
    let mut iterations = 0;
    let mut stall = 0;
    for k in 1..=opts.max_iterations {
        iterations = k;

        let gradient = phi.transpose() * (phi * &momentum_point - data);
        let mut proximal = &momentum_point - gradient * step;
        let threshold = lambda * step;
        proximal.apply(|v| *v = soft_threshold(*v, threshold));
        let proximal_value = objective(&proximal);

        let previous = current.clone();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if proximal_value <= current_value {
            // Accept the proximal point and carry Nesterov momentum.
            momentum_point = &proximal
                + (&proximal - &previous) * ((t - 1.0) / t_next);
            current = proximal;
            current_value = proximal_value;
            t = t_next;
        } else {
            // Overshoot: keep the incumbent and restart the momentum.
            momentum_point = current.clone();
            t = 1.0;
        }
        trace.push(current_value);

        let len = trace.len();
        let improvement = trace[len - 2] - trace[len - 1];
        if improvement <= opts.tolerance * current_value.abs().max(1.0) && k > 1 {
            stall += 1;
            if stall >= STALL_COUNT {
                converged = true;
                break;
            }
        } else {
            stall = 0;
        }
    }

    let (restoration, shift) = model.synthesize_with_shift(&current)?;
    Ok(MapSolution {
        coefficients: current,
        restoration,
        lambda,
        objective_trace: trace,
        iterations,
        converged,
        shift,
    })
}
