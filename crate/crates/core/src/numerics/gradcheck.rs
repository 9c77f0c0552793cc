use rand::Rng;

use super::{NumericsError, ParamId, ParamStore};
use crate::{seeded_rng, RngStream};

/// A scalar loss over a parameter store, with an analytic gradient.
pub trait Objective {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Loss at the current parameter values.
    fn loss(&self) -> Result<f64, NumericsError>;
    /// Loss, with gradients written into the store (previous gradients cleared).
    fn loss_and_grad(&mut self) -> Result<f64, NumericsError>;
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Randomly sampled coordinates per parameter, in addition to the
    /// coordinate with the largest analytic gradient.
    pub coords_per_param: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-4, tol: 1e-4, coords_per_param: 6, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error > self.tol)
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Element-wise worst case of two reports over the same parameters.
    pub fn merge(&mut self, other: &GradCheckReport) {
        for o in &other.params {
            match self.params.iter_mut().find(|p| p.name == o.name) {
                Some(p) => {
                    p.max_rel_error = p.max_rel_error.max(o.max_rel_error);
                    p.coords_checked += o.coords_checked;
                }
                None => self.params.push(o.clone()),
            }
        }
    }
}

fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients against central differences
/// `(L(θ+eps) - L(θ-eps)) / (2 eps)` on sampled coordinates of every parameter.
pub fn gradient_check<O: Objective + ?Sized>(
    objective: &mut O,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, NumericsError> {
    if config.eps <= 0.0 {
        return Err(NumericsError::InvalidArgument("eps must be positive".into()));
    }
    let base = objective.loss_and_grad()?;
    if !base.is_finite() {
        return Err(NumericsError::NonFinite("loss".into()));
    }
    let mut rng = seeded_rng(config.seed, RngStream::GradCheck);
    let ids: Vec<ParamId> = objective.params().ids().collect();
    let mut report = GradCheckReport { params: Vec::with_capacity(ids.len()), tol: config.tol };

    for id in ids {
        let (coords, analytic) = {
            let p = objective.params();
            let grad = p.grad(id).data();
            let n = grad.len();
            let mut coords: Vec<usize> = Vec::with_capacity(config.coords_per_param + 1);
            let top = (0..n)
                .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()))
                .unwrap_or(0);
            coords.push(top);
            for _ in 0..config.coords_per_param.min(n) {
                coords.push(rng.gen_range(0..n));
            }
            coords.sort_unstable();
            coords.dedup();
            let analytic: Vec<f64> = coords.iter().map(|&c| grad[c]).collect();
            (coords, analytic)
        };

        let mut worst = 0.0f64;
        for (&c, &a) in coords.iter().zip(&analytic) {
            let orig = objective.params().value(id).data()[c];
            objective.params_mut().value_mut(id).data_mut()[c] = orig + config.eps;
            let plus = objective.loss();
            objective.params_mut().value_mut(id).data_mut()[c] = orig - config.eps;
            let minus = objective.loss();
            objective.params_mut().value_mut(id).data_mut()[c] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFinite("perturbed loss".into()));
            }
            let numeric = (plus - minus) / (2.0 * config.eps);
            worst = worst.max(relative_error(a, numeric, config.floor));
        }
        report.params.push(ParamCheck {
            name: objective.params().name(id).to_string(),
            max_rel_error: worst,
            coords_checked: coords.len(),
        });
    }
    Ok(report)
}
