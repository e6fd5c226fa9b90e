//! Diffusion operators: noise-adding, single-step `x0` prediction, DDIM
//! sampling (with `eta`) and inversion, the hybrid forward process and
//! refinement sampling back to `t = 0`.
//!
//! All operators work on a single flattened vector. NFEs are charged by the
//! predictor, never by the operators themselves.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SirError};
use crate::schedule::{NoiseSchedule, TimestepLadder};
use crate::scoremodel::NoisePredictor;
use crate::Rng;

/// Which forward process turns a render into a noisy state before refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ForwardKind {
    #[serde(alias = "noise")]
    NoiseOnly,
    #[serde(alias = "inversion")]
    InversionOnly,
    Hybrid,
}

impl std::str::FromStr for ForwardKind {
    type Err = SirError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" | "noise_only" | "noiseOnly" => Ok(Self::NoiseOnly),
            "inversion" | "inversion_only" | "inversionOnly" => Ok(Self::InversionOnly),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(invalid(format!("unknown forward process '{other}'"))),
        }
    }
}

/// A vector together with its diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub t: usize,
}

/// Draws `n` standard normal values.
pub fn standard_normal(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `x_t = alpha_t x0 + sigma_t eps`, `eps ~ N(0, I)` from `rng`.
pub fn noise_add(x0: &[f64], t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Result<DiffusionState> {
    if t > sched.num_steps() {
        return Err(invalid(format!("timestep {t} beyond schedule")));
    }
    let eps = standard_normal(x0.len(), rng);
    Ok(noise_add_with(x0, &eps, t, sched))
}

/// Noise-adding with an explicit `eps`.
pub fn noise_add_with(x0: &[f64], eps: &[f64], t: usize, sched: &NoiseSchedule) -> DiffusionState {
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    DiffusionState {
        x: x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect(),
        t,
    }
}

/// `x0_hat = x_t / alpha_t - (sigma_t / alpha_t) eps(x_t, t)`.
pub fn predict_x0<P: NoisePredictor + ?Sized>(
    state: &DiffusionState,
    pred: &P,
    view_id: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if state.t == 0 {
        return Err(SirError::Domain("x0 prediction needs t >= 1".into()));
    }
    let eps = pred.predict_eps(&state.x, state.t, view_id, sched)?;
    Ok(x0_from_eps(&state.x, &eps, state.t, sched))
}

pub fn x0_from_eps(x_t: &[f64], eps: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    x_t.iter().zip(eps).map(|(x, e)| x / a - s / a * e).collect()
}

/// Standard DDIM posterior standard deviation for a step `t -> s`.
pub fn ddim_sigma(eta: f64, t: usize, s: usize, sched: &NoiseSchedule) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    let abar_t = sched.alpha(t).powi(2);
    let abar_s = sched.alpha(s).powi(2);
    let v = ((1.0 - abar_s) / (1.0 - abar_t)) * (1.0 - abar_t / abar_s);
    eta * v.max(0.0).sqrt()
}

/// One DDIM step from `state.t` down to `s`.
///
/// `eta = 0` is the deterministic probability-flow step; `eta > 0` mixes in
/// fresh noise with the standard DDIM variance.
pub fn ddim_step<P: NoisePredictor + ?Sized>(
    state: &DiffusionState,
    s: usize,
    eta: f64,
    pred: &P,
    view_id: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<DiffusionState> {
    if s >= state.t {
        return Err(invalid(format!(
            "sampling step must go down in time, got {} -> {s}",
            state.t
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid(format!("eta must lie in [0, 1], got {eta}")));
    }
    let t = state.t;
    let eps = pred.predict_eps(&state.x, t, view_id, sched)?;
    let (a_t, s_t) = (sched.alpha(t), sched.sigma(t));
    let (a_s, s_s) = (sched.alpha(s), sched.sigma(s));
    let x = if eta == 0.0 {
        let ratio = a_s / a_t;
        let coef = s_s - ratio * s_t;
        state
            .x
            .iter()
            .zip(&eps)
            .map(|(x, e)| ratio * x + coef * e)
            .collect()
    } else {
        let noise_std = ddim_sigma(eta, t, s, sched);
        let dir = (s_s * s_s - noise_std * noise_std).max(0.0).sqrt();
        let z = standard_normal(state.x.len(), rng);
        state
            .x
            .iter()
            .zip(&eps)
            .zip(&z)
            .map(|((x, e), z)| {
                let x0 = x / a_t - s_t / a_t * e;
                a_s * x0 + dir * e + noise_std * z
            })
            .collect()
    };
    Ok(DiffusionState { x, t: s })
}

/// One DDIM inversion step from `state.t` up to `u`.
///
/// Leaving `t = 0` queries the predictor at `u`, since `eps(x, 0)` is
/// undefined; every other step uses `eps(x_t, t)`.
pub fn ddim_invert_step<P: NoisePredictor + ?Sized>(
    state: &DiffusionState,
    u: usize,
    pred: &P,
    view_id: usize,
    sched: &NoiseSchedule,
) -> Result<DiffusionState> {
    if u <= state.t {
        return Err(invalid(format!(
            "inversion step must go up in time, got {} -> {u}",
            state.t
        )));
    }
    if u > sched.num_steps() {
        return Err(invalid(format!("timestep {u} beyond schedule")));
    }
    let t = state.t;
    let query_t = if t == 0 { u } else { t };
    let eps = pred.predict_eps(&state.x, query_t, view_id, sched)?;
    let ratio = sched.alpha(u) / sched.alpha(t);
    let coef = sched.sigma(u) - ratio * sched.sigma(t);
    Ok(DiffusionState {
        x: state
            .x
            .iter()
            .zip(&eps)
            .map(|(x, e)| ratio * x + coef * e)
            .collect(),
        t: u,
    })
}

/// Chained inversion along the ladder rungs from `state.t` to `target`.
///
/// Both ends must be ladder rungs. One predictor call per rung interval.
pub fn invert_along<P: NoisePredictor + ?Sized>(
    mut state: DiffusionState,
    target: usize,
    ladder: &TimestepLadder,
    pred: &P,
    view_id: usize,
    sched: &NoiseSchedule,
) -> Result<DiffusionState> {
    for u in ladder.between(state.t + 1, target) {
        state = ddim_invert_step(&state, u, pred, view_id, sched)?;
    }
    Ok(state)
}

fn snap_interior(t: usize, ladder: &TimestepLadder) -> usize {
    let snapped = ladder.snap(t as f64);
    let top = ladder.steps()[ladder.len() - 2].max(ladder.first_positive());
    snapped.clamp(ladder.first_positive(), top)
}

/// The `(t1, t2)` rungs the forward processes actually use.
pub fn snapped_times(t1: usize, t2: usize, ladder: &TimestepLadder) -> (usize, usize) {
    let t2 = snap_interior(t2, ladder);
    (snap_interior(t1, ladder).min(t2), t2)
}

/// Noise-adding to `t1` followed by DDIM inversion to `t2`.
///
/// `t1` and `t2` are snapped to the ladder (kept inside `(0, T)`) before
/// traversal; with equal snapped times this is exactly [`noise_add`].
#[allow(clippy::too_many_arguments)]
pub fn hybrid_forward<P: NoisePredictor + ?Sized>(
    x: &[f64],
    t1: usize,
    t2: usize,
    ladder: &TimestepLadder,
    pred: &P,
    view_id: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<DiffusionState> {
    if t1 > t2 {
        return Err(invalid(format!("hybrid forward needs t1 <= t2, got {t1} > {t2}")));
    }
    let t2 = snap_interior(t2, ladder);
    let t1 = snap_interior(t1, ladder).min(t2);
    let state = noise_add(x, t1, sched, rng)?;
    invert_along(state, t2, ladder, pred, view_id, sched)
}

/// Runs one of the three forward processes from a clean `x` to `t2`.
#[allow(clippy::too_many_arguments)]
pub fn forward_process<P: NoisePredictor + ?Sized>(
    kind: ForwardKind,
    x: &[f64],
    t1: usize,
    t2: usize,
    ladder: &TimestepLadder,
    pred: &P,
    view_id: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<DiffusionState> {
    match kind {
        ForwardKind::Hybrid => hybrid_forward(x, t1, t2, ladder, pred, view_id, sched, rng),
        ForwardKind::NoiseOnly => noise_add(x, snap_interior(t2, ladder), sched, rng),
        ForwardKind::InversionOnly => {
            let start = DiffusionState { x: x.to_vec(), t: 0 };
            invert_along(start, snap_interior(t2, ladder), ladder, pred, view_id, sched)
        }
    }
}

/// Number of inversion sub-steps [`forward_process`] takes.
pub fn forward_substeps(kind: ForwardKind, t1: usize, t2: usize, ladder: &TimestepLadder) -> usize {
    let t2 = snap_interior(t2, ladder);
    let idx = |t| ladder.index_of(t).expect("snapped to ladder");
    match kind {
        ForwardKind::NoiseOnly => 0,
        ForwardKind::InversionOnly => idx(t2),
        ForwardKind::Hybrid => {
            let t1 = snap_interior(t1, ladder).min(t2);
            idx(t2) - idx(t1)
        }
    }
}

/// Number of sampling sub-steps from `t2` to zero.
pub fn sampling_substeps(t2: usize, ladder: &TimestepLadder) -> usize {
    ladder.index_of(ladder.snap(t2 as f64)).expect("snapped to ladder")
}

/// Output range applied after refinement sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clamp {
    None,
    Unit,
}

/// Chained DDIM steps from `state.t` down the ladder to `t = 0`.
///
/// A state off the ladder is snapped (with a warning) before sampling.
#[allow(clippy::too_many_arguments)]
pub fn sample_to_zero<P: NoisePredictor + ?Sized>(
    mut state: DiffusionState,
    ladder: &TimestepLadder,
    eta: f64,
    pred: &P,
    view_id: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    clamp: Clamp,
) -> Result<Vec<f64>> {
    if !ladder.contains(state.t) {
        let snapped = ladder.snap(state.t as f64);
        log::warn!("sampling start t = {} is not on the ladder; snapped to {snapped}", state.t);
        state.t = snapped;
    }
    let idx = ladder.index_of(state.t).expect("on ladder");
    for &s in ladder.steps()[..idx].iter().rev() {
        state = ddim_step(&state, s, eta, pred, view_id, sched, rng)?;
    }
    let mut x = state.x;
    if clamp == Clamp::Unit {
        for v in x.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(x)
}
