//! State estimation feeding the per-channel admissible sets.
//!
//! Three kinds are supported. The open-loop kind advances each channel model
//! by the governed reference and is exact when the model and its initial
//! state are exact. The decoupled kind corrects each scalar channel model
//! with an output innovation through a per-channel gain. The centralized
//! kind estimates the full plant state from a selected subset of measured
//! outputs; the membership state is then the filter state stacked on the
//! plant estimate.

use crate::error::{Error, Result};
use crate::sys::LinearSystem;
use nalgebra::{DMatrix, DVector};

/// Spectral radius at or above which observer error dynamics are rejected.
const OBSERVER_STABILITY_LIMIT: f64 = 1.0;

/// Observer selection for a transfer-function pipeline.
///
/// The `DecoupledPoles` and `CentralizedKalman` variants design their gains
/// when the pipeline is built (the channel models are not known earlier);
/// the explicit-gain variants validate the supplied gains instead.
#[derive(Debug, Clone)]
pub enum ObserverConfig {
    /// Channel models advanced by the governed reference; no correction.
    OpenLoop,
    /// Per-channel scalar-output correction with the given gains, one column
    /// vector per channel model.
    DecoupledLuenberger { gains: Vec<DVector<f64>> },
    /// Design per-channel gains at build time placing every error pole at
    /// `pole`.
    DecoupledPoles { pole: f64 },
    /// Full plant-state correction from the measured output rows.
    Centralized {
        gain: DMatrix<f64>,
        measured: Vec<usize>,
    },
    /// Design the centralized gain at build time with the steady-state
    /// filter iteration on the measured output rows.
    CentralizedKalman { measured: Vec<usize> },
}

impl ObserverConfig {
    /// True for the kinds whose channel sets live on the augmented
    /// filter-plus-plant state.
    pub fn is_centralized(&self) -> bool {
        matches!(
            self,
            ObserverConfig::Centralized { .. } | ObserverConfig::CentralizedKalman { .. }
        )
    }
}

pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(0.0f64, |acc, l| acc.max(l.norm()))
}

/// Observer gain for a single-output model by the characteristic-polynomial
/// construction: with desired error poles `p_k`, the gain is
/// `α(A) · O⁻¹ · e_n` where `α` is the target polynomial and `O` the
/// observability matrix of `(A, c)`.
pub fn ackermann_observer_gain(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    poles: &[f64],
) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch("state matrix must be square".into()));
    }
    if c.nrows() != 1 || c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "output row must be 1 x {n} for the single-output gain construction"
        )));
    }
    if poles.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "need {n} error poles, got {}",
            poles.len()
        )));
    }
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    // Observability matrix, rows c, cA, ..., cA^{n-1}.
    let mut obs = DMatrix::<f64>::zeros(n, n);
    let mut row = c.clone();
    for k in 0..n {
        obs.row_mut(k).copy_from(&row.row(0));
        row *= a;
    }
    let obs_inv = obs.clone().try_inverse().ok_or_else(|| {
        Error::Validation("channel model is not observable; no output-correction gain exists".into())
    })?;
    // alpha(A) = prod_k (A - p_k I).
    let mut alpha = DMatrix::<f64>::identity(n, n);
    for &p in poles {
        let shifted = a - DMatrix::<f64>::identity(n, n) * p;
        alpha = alpha * shifted;
    }
    let mut e_n = DVector::<f64>::zeros(n);
    e_n[n - 1] = 1.0;
    let l = alpha * obs_inv * e_n;
    let err_dyn = a - &l * c;
    let rho = spectral_radius(&err_dyn);
    if rho >= OBSERVER_STABILITY_LIMIT {
        return Err(Error::UnstableObserver(rho));
    }
    Ok(l)
}

/// Steady-state filter gain for a multi-output model: iterates the
/// prediction-form covariance recursion with unit weights until it settles,
/// then returns `L = A P Cᵀ (C P Cᵀ + I)⁻¹`.
pub fn kalman_observer_gain(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch("state matrix must be square".into()));
    }
    if c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "output matrix must have {n} columns"
        )));
    }
    let p_out = c.nrows();
    if p_out == 0 {
        return Err(Error::Validation(
            "centralized observer needs at least one measured output".into(),
        ));
    }
    let eye_n = DMatrix::<f64>::identity(n, n);
    let eye_p = DMatrix::<f64>::identity(p_out, p_out);
    let mut p = eye_n.clone();
    let mut gain = DMatrix::<f64>::zeros(n, p_out);
    for _ in 0..2000 {
        let s = c * &p * c.transpose() + &eye_p;
        let s_inv = s.clone().try_inverse().ok_or_else(|| {
            Error::Validation("innovation covariance became singular".into())
        })?;
        gain = a * &p * c.transpose() * &s_inv;
        let p_next = a * &p * a.transpose() - &gain * c * &p * a.transpose() + &eye_n;
        let diff = (&p_next - &p).amax();
        p = p_next;
        if diff < 1e-12 {
            break;
        }
    }
    let err_dyn = a - &gain * c;
    let rho = spectral_radius(&err_dyn);
    if rho >= OBSERVER_STABILITY_LIMIT {
        return Err(Error::UnstableObserver(rho));
    }
    Ok(gain)
}

/// One channel model plus its current state estimate.
#[derive(Debug, Clone)]
pub(crate) struct ChannelModel {
    pub sys: LinearSystem,
    pub x_hat: DVector<f64>,
}

impl ChannelModel {
    pub fn new(sys: LinearSystem) -> Self {
        let n = sys.n_states();
        ChannelModel {
            sys,
            x_hat: DVector::zeros(n),
        }
    }
}

/// Runtime observer state owned by a pipeline.
#[derive(Debug, Clone)]
pub(crate) enum ObserverState {
    /// Per-channel models advanced by the governed reference (and the true
    /// disturbance sample when the model carries a disturbance input).
    OpenLoop { models: Vec<ChannelModel> },
    /// Per-channel models corrected by the measured channel output.
    Decoupled {
        models: Vec<ChannelModel>,
        gains: Vec<DVector<f64>>,
    },
    /// Full plant-state estimate from the measured output rows; membership
    /// feeds stack the filter state on this estimate. `a` and `b` are the
    /// plant prediction matrices the correction wraps around.
    Centralized {
        gain: DMatrix<f64>,
        measured: Vec<usize>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c_m: DMatrix<f64>,
        d_m: DMatrix<f64>,
        x_hat: DVector<f64>,
    },
}

impl ObserverState {
    /// Validates a configuration against the channel models and the plant,
    /// designing gains where the configuration asks for it.
    pub fn build(
        cfg: &ObserverConfig,
        models: Vec<ChannelModel>,
        plant: &LinearSystem,
    ) -> Result<ObserverState> {
        match cfg {
            ObserverConfig::OpenLoop => Ok(ObserverState::OpenLoop { models }),
            ObserverConfig::DecoupledLuenberger { gains } => {
                if gains.len() != models.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} gains for {} channel models",
                        gains.len(),
                        models.len()
                    )));
                }
                for (i, (g, model)) in gains.iter().zip(models.iter()).enumerate() {
                    if g.len() != model.sys.n_states() {
                        return Err(Error::DimensionMismatch(format!(
                            "gain {i} has length {}, channel model has {} states",
                            g.len(),
                            model.sys.n_states()
                        )));
                    }
                    let err_dyn = &model.sys.a - g * &model.sys.c;
                    let rho = spectral_radius(&err_dyn);
                    if rho >= OBSERVER_STABILITY_LIMIT {
                        return Err(Error::Channel {
                            index: i,
                            source: Box::new(Error::UnstableObserver(rho)),
                        });
                    }
                }
                Ok(ObserverState::Decoupled {
                    models,
                    gains: gains.clone(),
                })
            }
            ObserverConfig::DecoupledPoles { pole } => {
                let mut gains = Vec::with_capacity(models.len());
                for (i, model) in models.iter().enumerate() {
                    let n = model.sys.n_states();
                    let poles = vec![*pole; n];
                    let g = ackermann_observer_gain(&model.sys.a, &model.sys.c, &poles).map_err(
                        |e| Error::Channel {
                            index: i,
                            source: Box::new(e),
                        },
                    )?;
                    gains.push(g);
                }
                Ok(ObserverState::Decoupled { models, gains })
            }
            ObserverConfig::Centralized { gain, measured } => {
                let (c_m, d_m) = measured_rows(plant, measured)?;
                if gain.nrows() != plant.n_states() || gain.ncols() != measured.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "centralized gain must be {} x {}",
                        plant.n_states(),
                        measured.len()
                    )));
                }
                let err_dyn = &plant.a - gain * &c_m;
                let rho = spectral_radius(&err_dyn);
                if rho >= OBSERVER_STABILITY_LIMIT {
                    return Err(Error::UnstableObserver(rho));
                }
                Ok(ObserverState::Centralized {
                    gain: gain.clone(),
                    measured: measured.clone(),
                    a: plant.a.clone(),
                    b: plant.b.clone(),
                    c_m,
                    d_m,
                    x_hat: DVector::zeros(plant.n_states()),
                })
            }
            ObserverConfig::CentralizedKalman { measured } => {
                let (c_m, d_m) = measured_rows(plant, measured)?;
                let gain = kalman_observer_gain(&plant.a, &c_m)?;
                Ok(ObserverState::Centralized {
                    gain,
                    measured: measured.clone(),
                    a: plant.a.clone(),
                    b: plant.b.clone(),
                    c_m,
                    d_m,
                    x_hat: DVector::zeros(plant.n_states()),
                })
            }
        }
    }

    /// Membership state for channel `i` at the current step.
    pub fn channel_feed(&self, i: usize, x_f: &DVector<f64>) -> DVector<f64> {
        match self {
            ObserverState::OpenLoop { models } => models[i].x_hat.clone(),
            ObserverState::Decoupled { models, .. } => models[i].x_hat.clone(),
            ObserverState::Centralized { x_hat, .. } => {
                let mut feed = DVector::zeros(x_f.len() + x_hat.len());
                feed.rows_mut(0, x_f.len()).copy_from(x_f);
                feed.rows_mut(x_f.len(), x_hat.len()).copy_from(x_hat);
                feed
            }
        }
    }

    /// Advances all estimates one step. `v` is the governed reference,
    /// `u` the input actually applied to the plant, `y` the measured plant
    /// output, and `w` the true disturbance sample when the caller knows it.
    pub fn advance(
        &mut self,
        v: &DVector<f64>,
        u: &DVector<f64>,
        y: &DVector<f64>,
        w: Option<&DVector<f64>>,
    ) {
        match self {
            ObserverState::OpenLoop { models } => {
                for (i, model) in models.iter_mut().enumerate() {
                    let vi = DVector::from_element(1, v[i]);
                    let wi = if model.sys.b_w.is_some() { w } else { None };
                    model.x_hat = model.sys.next_state(&model.x_hat, &vi, wi);
                }
            }
            ObserverState::Decoupled { models, gains } => {
                for (i, model) in models.iter_mut().enumerate() {
                    let vi = DVector::from_element(1, v[i]);
                    // Channels beyond the physical outputs have no
                    // measurement and fall back to the open-loop update.
                    let innovation = if i < y.len() {
                        let y_hat = model.sys.output(&model.x_hat, &vi, None);
                        y[i] - y_hat[0]
                    } else {
                        0.0
                    };
                    model.x_hat =
                        model.sys.next_state(&model.x_hat, &vi, None) + &gains[i] * innovation;
                }
            }
            ObserverState::Centralized {
                gain,
                measured,
                a,
                b,
                c_m,
                d_m,
                x_hat,
            } => {
                let mut y_m = DVector::zeros(measured.len());
                for (k, &idx) in measured.iter().enumerate() {
                    y_m[k] = y[idx];
                }
                let innovation = y_m - (&*c_m * &*x_hat + &*d_m * u);
                *x_hat = &*a * &*x_hat + &*b * u + &*gain * innovation;
            }
        }
    }

    /// Sets the per-channel estimates (open-loop and decoupled kinds).
    pub fn set_channel_states(&mut self, states: &[DVector<f64>]) -> Result<()> {
        match self {
            ObserverState::OpenLoop { models } | ObserverState::Decoupled { models, .. } => {
                if states.len() != models.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} states for {} channel models",
                        states.len(),
                        models.len()
                    )));
                }
                for (model, s) in models.iter_mut().zip(states) {
                    if s.len() != model.sys.n_states() {
                        return Err(Error::DimensionMismatch(
                            "channel state length does not match the model".into(),
                        ));
                    }
                    model.x_hat = s.clone();
                }
                Ok(())
            }
            ObserverState::Centralized { .. } => Err(Error::Validation(
                "centralized observers hold a single plant estimate; set it with set_plant_estimate"
                    .into(),
            )),
        }
    }

    /// Sets the plant-state estimate (centralized kind).
    pub fn set_plant_estimate(&mut self, x0: &DVector<f64>) -> Result<()> {
        match self {
            ObserverState::Centralized { x_hat, .. } => {
                if x0.len() != x_hat.len() {
                    return Err(Error::DimensionMismatch(
                        "estimate length does not match the plant".into(),
                    ));
                }
                *x_hat = x0.clone();
                Ok(())
            }
            _ => Err(Error::Validation(
                "per-channel observers hold channel states; set them with set_channel_states".into(),
            )),
        }
    }
}

/// Extracts the measured rows of the plant output map.
fn measured_rows(plant: &LinearSystem, measured: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if measured.is_empty() {
        return Err(Error::Validation(
            "centralized observer needs at least one measured output".into(),
        ));
    }
    let p = plant.n_outputs();
    for &idx in measured {
        if idx >= p {
            return Err(Error::Validation(format!(
                "measured output index {idx} out of range for {p} outputs"
            )));
        }
    }
    let mut c_m = DMatrix::<f64>::zeros(measured.len(), plant.n_states());
    let mut d_m = DMatrix::<f64>::zeros(measured.len(), plant.n_inputs());
    for (k, &idx) in measured.iter().enumerate() {
        c_m.row_mut(k).copy_from(&plant.c.row(idx));
        d_m.row_mut(k).copy_from(&plant.d.row(idx));
    }
    Ok((c_m, d_m))
}
