use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::solvers::SynthesisModel;

use super::moments::ActiveSystem;
use super::{SblConfig, SblCovariance, SblHyperparams, SblPosterior};

/// How far around each greedily selected basis the dormant window extends.
const NEIGHBOR_RADIUS: usize = 2;
/// Starting precision of dormant neighbors: heavy enough to keep them
/// silent unless the joint fit genuinely wants the mass moved.
const DORMANT_PRECISION: f64 = 1e6;

/// Full-covariance sparse Bayesian learning: alternates posterior moments
/// with the precision and noise updates until the active precisions settle.
///
/// The workhorse update is the fixed-point rule `a_i = gamma_i / m_i^2`,
/// `beta = (J - sum gamma) / |residual|^2`. That rule converges fast but is
/// not strictly ascending; on the rare iteration where it would lower the
/// evidence, the step is replaced by the classical EM M-step
/// (`a_i = 1 / (m_i^2 + Sigma_ii)`, `1/beta = (|r|^2 + sum gamma / beta) / J`),
/// which cannot decrease it. The recorded likelihood trace is therefore
/// non-decreasing up to round-off. Coefficients whose precision diverges
/// are pruned and leave the factorization entirely.
pub fn sbl_em(
    model: &SynthesisModel,
    data: &DVector<f64>,
    config: &SblConfig,
) -> Result<SblPosterior> {
    config.validate()?;
    let phi = model.dictionary();
    let coeffs = model.dims.coeffs;
    let measurements = model.effective_measurements() as f64;

    // The dictionary cannot represent the data mean; fit what it can and
    // let the shift strategy restore the rest.
    let original_data = data;
    let (data, _removed_mean) = model.fittable_data(data);
    let data = &data;

    // Fixed products reused every iteration.
    let gram = phi.transpose() * phi;
    let phitb = phi.transpose() * data;
    let bnorm_sq = data.norm_squared();

    let mut hyper = if config.em_greedy_init {
        // Sequential pre-pass chooses the support; EM refines it. The
        // uniform all-active start has a degenerate attractor when the
        // dictionary spans the whole fittable space. Neighbors of the
        // selected support start dormant (large but finite precision) so
        // the joint refinement can slide an edge by a sample or two --
        // the greedy pass commits to single positions and has no move to
        // relocate one afterward.
        let pre = super::sbl_fast(model, original_data, config)?;
        let mut a = DVector::from_element(coeffs, f64::INFINITY);
        for i in 0..coeffs {
            if pre.hyper.a[i].is_finite() {
                a[i] = pre.hyper.a[i];
                for d in 1..=NEIGHBOR_RADIUS {
                    if i >= d && !pre.hyper.a[i - d].is_finite() && !a[i - d].is_finite() {
                        a[i - d] = DORMANT_PRECISION;
                    }
                    let up = i + d;
                    if up < coeffs && !pre.hyper.a[up].is_finite() && !a[up].is_finite() {
                        a[up] = DORMANT_PRECISION;
                    }
                }
            }
        }
        SblHyperparams {
            a,
            beta: pre.hyper.beta,
            gamma: DVector::zeros(coeffs),
        }
    } else {
        SblHyperparams::uniform(coeffs, config.init_a, config.initial_beta(data, model))
    };
    let mut system = ActiveSystem::build(&gram, &phitb, &hyper)?;
    let mut current_likelihood = likelihood(&system, &hyper, measurements, bnorm_sq);
    let mut trace = vec![current_likelihood];
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=config.max_iterations {
        iterations = k;
        let moments = Moments::from_system(&system, &hyper, phi, data);

        let mut next = moments.fixed_point_update(&hyper, measurements, config);
        let mut next_system = ActiveSystem::build(&gram, &phitb, &next)?;
        let mut next_likelihood = likelihood(&next_system, &next, measurements, bnorm_sq);
        if next_likelihood < current_likelihood {
            // Fixed-point overshoot; take the guaranteed-ascent EM step.
            next = moments.em_update(&hyper, measurements, config);
            next_system = ActiveSystem::build(&gram, &phitb, &next)?;
            next_likelihood = likelihood(&next_system, &next, measurements, bnorm_sq);
        }

        let mut max_rel_change = (next.beta - hyper.beta).abs() / hyper.beta;
        for &i in &next_system.active {
            if hyper.a[i].is_finite() {
                max_rel_change =
                    max_rel_change.max((next.a[i] - hyper.a[i]).abs() / hyper.a[i]);
            }
        }

        hyper = next;
        system = next_system;
        current_likelihood = next_likelihood;
        trace.push(current_likelihood);

        if max_rel_change < config.tolerance || system.active.is_empty() {
            converged = true;
            break;
        }
    }

    // Materialize full-size moments; pruned entries stay exactly zero.
    let sigma_active = system.covariance();
    let mut mean = DVector::zeros(coeffs);
    let mut covariance = DMatrix::zeros(coeffs, coeffs);
    for (pi, &i) in system.active.iter().enumerate() {
        mean[i] = system.mean[pi];
        for (pj, &j) in system.active.iter().enumerate() {
            covariance[(i, j)] = sigma_active[(pi, pj)];
        }
    }
    let pruned = hyper.pruned_indices();
    Ok(SblPosterior {
        mean,
        covariance: SblCovariance::Dense(covariance),
        hyper,
        likelihood_trace: trace,
        iterations,
        converged,
        pruned,
    })
}

/// Per-iteration quantities both update families need.
struct Moments {
    active: Vec<usize>,
    mean: DVector<f64>,
    sigma_diag: DVector<f64>,
    gamma: DVector<f64>,
    gamma_sum: f64,
    residual_norm_sq: f64,
}

impl Moments {
    fn from_system(
        system: &ActiveSystem,
        hyper: &SblHyperparams,
        phi: &DMatrix<f64>,
        data: &DVector<f64>,
    ) -> Self {
        let sigma = system.covariance();
        let k = system.active.len();
        let sigma_diag = DVector::from_fn(k, |p, _| sigma[(p, p)]);
        let mut gamma = DVector::zeros(k);
        let mut gamma_sum = 0.0;
        for (p, &i) in system.active.iter().enumerate() {
            let g = 1.0 - hyper.a[i] * sigma_diag[p];
            gamma[p] = g;
            gamma_sum += g;
        }
        let mut residual = data.clone();
        for (p, &i) in system.active.iter().enumerate() {
            residual.axpy(-system.mean[p], &phi.column(i), 1.0);
        }
        Moments {
            active: system.active.clone(),
            mean: system.mean.clone(),
            sigma_diag,
            gamma,
            gamma_sum,
            residual_norm_sq: residual.norm_squared(),
        }
    }

    /// Fixed-point rule: a = gamma / m^2, beta = (J - sum gamma) / |r|^2.
    fn fixed_point_update(
        &self,
        hyper: &SblHyperparams,
        measurements: f64,
        config: &SblConfig,
    ) -> SblHyperparams {
        let coeffs = hyper.a.len();
        let mut a_next = DVector::from_element(coeffs, f64::INFINITY);
        let mut gamma_full = DVector::zeros(coeffs);
        for (p, &i) in self.active.iter().enumerate() {
            gamma_full[i] = self.gamma[p];
            let candidate = self.gamma[p] / (self.mean[p] * self.mean[p]);
            if candidate.is_finite() && candidate > 0.0 && candidate <= config.prune_threshold {
                a_next[i] = candidate;
            }
        }
        let numer = measurements - self.gamma_sum;
        let beta = if self.residual_norm_sq > 0.0 && numer > 0.0 {
            (numer / self.residual_norm_sq).min(config.beta_cap)
        } else {
            config.beta_cap
        };
        SblHyperparams {
            a: a_next,
            beta,
            gamma: gamma_full,
        }
    }

    /// Classical EM M-step: a = 1 / (m^2 + Sigma_ii),
    /// 1/beta = (|r|^2 + sum gamma / beta_old) / J. Never decreases the
    /// evidence.
    fn em_update(
        &self,
        hyper: &SblHyperparams,
        measurements: f64,
        config: &SblConfig,
    ) -> SblHyperparams {
        let coeffs = hyper.a.len();
        let mut a_next = DVector::from_element(coeffs, f64::INFINITY);
        let mut gamma_full = DVector::zeros(coeffs);
        for (p, &i) in self.active.iter().enumerate() {
            gamma_full[i] = self.gamma[p];
            let second_moment = self.mean[p] * self.mean[p] + self.sigma_diag[p];
            let candidate = 1.0 / second_moment;
            if candidate.is_finite() && candidate > 0.0 && candidate <= config.prune_threshold {
                a_next[i] = candidate;
            }
        }
        let variance = (self.residual_norm_sq + self.gamma_sum / hyper.beta) / measurements;
        let beta = if variance > 0.0 {
            (1.0 / variance).min(config.beta_cap)
        } else {
            config.beta_cap
        };
        SblHyperparams {
            a: a_next,
            beta,
            gamma: gamma_full,
        }
    }
}

/// Marginal log-likelihood from an already factored active system
/// (coefficient-sized determinant identity).
fn likelihood(
    system: &ActiveSystem,
    hyper: &SblHyperparams,
    measurements: f64,
    bnorm_sq: f64,
) -> f64 {
    let log_det_c = -measurements * hyper.beta.ln()
        - system.active.iter().map(|&i| hyper.a[i].ln()).sum::<f64>()
        + system.log_det_precision();
    let quad = hyper.beta * (bnorm_sq - system.phitb.dot(&system.mean));
    -0.5 * (measurements * (2.0 * std::f64::consts::PI).ln() + log_det_c + quad)
}
