//! Central finite-difference verification of tape gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{AutodiffError, Tape, Tensor, ThresholdMode, Var};

/// Result of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error seen over all probes.
    pub max_relative_error: f64,
    pub probes: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(loss_fn: &F, params: &[Tensor], mode: ThresholdMode) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::with_threshold_mode(mode);
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(AutodiffError::NonFinite { what: "loss".into() });
    }
    Ok(v)
}

fn analytic<F>(
    loss_fn: &F,
    params: &[Tensor],
    mode: ThresholdMode,
    fault: Option<super::Primitive>,
) -> Result<Vec<Vec<f64>>, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::with_threshold_mode(mode);
    if let Some(p) = fault {
        tape.inject_fault(p);
    }
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    if !tape.scalar(loss).is_finite() {
        return Err(AutodiffError::NonFinite { what: "loss".into() });
    }
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect())
}

/// Options shared by both checking strategies.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Thresholds are replaced by the identity so the finite differences
    /// see the soft surrogate whose Jacobian straight-through reports.
    pub mode: ThresholdMode,
    pub fault: Option<super::Primitive>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            mode: ThresholdMode::Surrogate,
            fault: None,
        }
    }
}

/// Element-wise check: for every scalar parameter compares the tape
/// gradient with `(f(x + eps) - f(x - eps)) / 2 eps`.
pub fn gradient_check<F>(loss_fn: F, params: &[Tensor], epsilon: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    gradient_check_with(
        loss_fn,
        params,
        GradCheckOptions {
            epsilon,
            ..GradCheckOptions::default()
        },
    )
}

pub fn gradient_check_with<F>(loss_fn: F, params: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    check_epsilon(opts.epsilon)?;
    let grads = analytic(&loss_fn, params, opts.mode, opts.fault)?;
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    let mut probes = 0;
    for (pi, g) in grads.iter().enumerate() {
        for ei in 0..g.len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + opts.epsilon;
            let up = evaluate(&loss_fn, &work, opts.mode)?;
            work[pi].data_mut()[ei] = orig - opts.epsilon;
            let down = evaluate(&loss_fn, &work, opts.mode)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * opts.epsilon);
            worst = worst.max(relative_error(g[ei], numeric));
            probes += 1;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        probes,
    })
}

/// Directional check: draws `n_probes` random unit directions `u` over
/// every parameter jointly and compares `grad . u` with the central
/// difference of the loss along `u`. Suited to models with many
/// parameters, where per-element differences drown in roundoff.
pub fn directional_gradient_check<F, R>(
    loss_fn: F,
    params: &[Tensor],
    n_probes: usize,
    opts: GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
    R: Rng,
{
    check_epsilon(opts.epsilon)?;
    if n_probes == 0 {
        return Err(AutodiffError::Domain {
            op: "gradient_check",
            detail: "n_probes must be at least 1".into(),
        });
    }
    let grads = analytic(&loss_fn, params, opts.mode, opts.fault)?;
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let mut dir: Vec<Vec<f64>> = params
            .iter()
            .map(|p| (0..p.len()).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let norm = dir.iter().flatten().map(|x: &f64| x * x).sum::<f64>().sqrt();
        dir.iter_mut().flatten().for_each(|x| *x /= norm);

        let shifted = |sign: f64| -> Vec<Tensor> {
            params
                .iter()
                .zip(&dir)
                .map(|(p, d)| {
                    let mut t = p.clone();
                    t.data_mut()
                        .iter_mut()
                        .zip(d)
                        .for_each(|(x, u)| *x += sign * opts.epsilon * u);
                    t
                })
                .collect()
        };
        let up = evaluate(&loss_fn, &shifted(1.0), opts.mode)?;
        let down = evaluate(&loss_fn, &shifted(-1.0), opts.mode)?;
        let numeric = (up - down) / (2.0 * opts.epsilon);
        let projected: f64 = grads
            .iter()
            .flatten()
            .zip(dir.iter().flatten())
            .map(|(g, u)| g * u)
            .sum();
        worst = worst.max(relative_error(projected, numeric));
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        probes: n_probes,
    })
}

fn check_epsilon(epsilon: f64) -> Result<(), AutodiffError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(AutodiffError::Domain {
            op: "gradient_check",
            detail: format!("epsilon {epsilon} must be positive"),
        });
    }
    Ok(())
}
