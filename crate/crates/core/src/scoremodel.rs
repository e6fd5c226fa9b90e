//! Exact closed-form noise predictors.
//!
//! The empirical model is the Bayes-optimal `eps` predictor for a finite
//! weighted dataset: its posterior mean `E[x0 | x_t]` is a softmax-weighted
//! average of the data points. The single-Gaussian model is the affine
//! predictor of a diagonal normal distribution. Both count every forward
//! evaluation in an [`NfeCounter`].

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SirError};
use crate::scene::{Camera, Scene};
use crate::schedule::NoiseSchedule;
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Guidance {
    Conditional,
    Unconditional,
}

/// The condition `c` seen by the noise predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Condition {
    pub view_id: usize,
    pub guidance: Guidance,
}

impl Condition {
    pub fn conditional(view_id: usize) -> Self {
        Self {
            view_id,
            guidance: Guidance::Conditional,
        }
    }

    pub fn unconditional(view_id: usize) -> Self {
        Self {
            view_id,
            guidance: Guidance::Unconditional,
        }
    }
}

/// Number of forward passes through the noise predictor.
#[derive(Debug, Default)]
pub struct NfeCounter(AtomicU64);

impl NfeCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::SeqCst);
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::SeqCst);
    }
}

/// A conditional noise predictor `eps(x_t, t, c)`.
///
/// Every call to [`EpsilonModel::eps`] counts as one NFE.
pub trait EpsilonModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of distinct view conditions.
    fn num_conditions(&self) -> usize;

    fn eps(&self, x_t: &[f64], t: usize, cond: Condition, sched: &NoiseSchedule)
        -> Result<Vec<f64>>;

    fn counter(&self) -> &NfeCounter;

    fn nfe(&self) -> u64 {
        self.counter().get()
    }
}

fn check_time(t: usize, sched: &NoiseSchedule) -> Result<()> {
    if t == 0 {
        return Err(SirError::Domain(
            "noise prediction is undefined at t = 0 (sigma_0 = 0)".into(),
        ));
    }
    if t > sched.num_steps() {
        return Err(invalid(format!(
            "timestep {t} beyond schedule length {}",
            sched.num_steps()
        )));
    }
    Ok(())
}

/// Weighted point set stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Dataset {
    /// Equal-weight dataset.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::weighted(points, vec![1.0 / n.max(1) as f64; n])
    }

    /// Weights are normalized to sum to one.
    pub fn weighted(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(SirError::Model("dataset must be non-empty".into()));
        }
        if points.len() != weights.len() {
            return Err(invalid("one weight per data point required"));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(SirError::Model("data points differ in dimension".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("weights must not all be zero"));
        }
        Ok(Self {
            dim,
            points: points.concat(),
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Posterior weights of each point given `x_t ~ N(alpha y_i, sigma^2 I)`.
    ///
    /// Log-softmax with max subtraction; zero-weight points get probability 0.
    pub fn posterior(&self, x_t: &[f64], alpha: f64, sigma: f64) -> Vec<f64> {
        let inv = 1.0 / (2.0 * sigma * sigma);
        let mut logits: Vec<f64> = self
            .points()
            .zip(&self.weights)
            .map(|(y, &w)| {
                if w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let d2: f64 = x_t
                    .iter()
                    .zip(y)
                    .map(|(x, y)| {
                        let r = x - alpha * y;
                        r * r
                    })
                    .sum();
                w.ln() - d2 * inv
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        for l in logits.iter_mut() {
            *l /= total;
        }
        logits
    }

    /// `E[x0 | x_t]`.
    pub fn posterior_mean(&self, x_t: &[f64], alpha: f64, sigma: f64) -> Vec<f64> {
        let post = self.posterior(x_t, alpha, sigma);
        let mut mean = vec![0.0; self.dim];
        for (p, y) in post.iter().zip(self.points()) {
            if *p == 0.0 {
                continue;
            }
            for (m, v) in mean.iter_mut().zip(y) {
                *m += p * v;
            }
        }
        mean
    }

    fn map_points(&self, f: &dyn Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        Self::weighted(self.points().map(f).collect(), self.weights.clone())
    }
}

/// Serializable form of an [`EmpiricalScoreModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalModelData {
    pub views: Vec<Dataset>,
}

/// Exact noise predictor of per-view empirical data distributions.
///
/// The unconditional branch is the pooled dataset: each view's weights are
/// scaled by `1 / views` and all points are concatenated.
#[derive(Debug)]
pub struct EmpiricalScoreModel {
    views: Vec<Dataset>,
    pooled: Dataset,
    counter: NfeCounter,
}

impl EmpiricalScoreModel {
    pub fn new(views: Vec<Dataset>) -> Result<Self> {
        if views.is_empty() {
            return Err(SirError::Model("model needs at least one view dataset".into()));
        }
        let dim = views[0].dim();
        if views.iter().any(|d| d.dim() != dim) {
            return Err(SirError::Model("view datasets differ in dimension".into()));
        }
        let share = 1.0 / views.len() as f64;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for d in &views {
            for (y, w) in d.points().zip(d.weights()) {
                points.push(y.to_vec());
                weights.push(w * share);
            }
        }
        let pooled = Dataset::weighted(points, weights)?;
        Ok(Self {
            views,
            pooled,
            counter: NfeCounter::default(),
        })
    }

    /// Same dataset for a single condition.
    pub fn single(dataset: Dataset) -> Result<Self> {
        Self::new(vec![dataset])
    }

    pub fn from_data(data: EmpiricalModelData) -> Result<Self> {
        Self::new(data.views)
    }

    pub fn data(&self) -> EmpiricalModelData {
        EmpiricalModelData {
            views: self.views.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.data()).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let data: EmpiricalModelData =
            serde_json::from_str(s).map_err(|e| SirError::Parse(e.to_string()))?;
        Self::from_data(data)
    }

    pub fn view(&self, view_id: usize) -> &Dataset {
        &self.views[view_id]
    }

    pub fn pooled(&self) -> &Dataset {
        &self.pooled
    }

    fn dataset(&self, cond: Condition) -> Result<&Dataset> {
        match cond.guidance {
            Guidance::Unconditional => Ok(&self.pooled),
            Guidance::Conditional => self.views.get(cond.view_id).ok_or_else(|| {
                invalid(format!(
                    "view {} outside condition table of {}",
                    cond.view_id,
                    self.views.len()
                ))
            }),
        }
    }

    /// Posterior mean without counting an NFE.
    pub fn posterior_mean(
        &self,
        x_t: &[f64],
        t: usize,
        cond: Condition,
        sched: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        check_time(t, sched)?;
        let d = self.dataset(cond)?;
        Ok(d.posterior_mean(x_t, sched.alpha(t), sched.sigma(t)))
    }

    /// Applies `f` to every data point, e.g. to move the model into a latent
    /// space.
    pub fn mapped(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let views = self
            .views
            .iter()
            .map(|d| d.map_points(&f))
            .collect::<Result<Vec<_>>>()?;
        Self::new(views)
    }
}

impl EpsilonModel for EmpiricalScoreModel {
    fn dim(&self) -> usize {
        self.pooled.dim()
    }

    fn num_conditions(&self) -> usize {
        self.views.len()
    }

    fn eps(
        &self,
        x_t: &[f64],
        t: usize,
        cond: Condition,
        sched: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        empirical_eps(self, x_t, t, cond, sched)
    }

    fn counter(&self) -> &NfeCounter {
        &self.counter
    }
}

/// `(x_t - alpha_t E[x0 | x_t]) / sigma_t` for the empirical model; one NFE.
pub fn empirical_eps(
    model: &EmpiricalScoreModel,
    x_t: &[f64],
    t: usize,
    cond: Condition,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_time(t, sched)?;
    let d = model.dataset(cond)?;
    if x_t.len() != d.dim() {
        return Err(invalid(format!(
            "input dimension {} does not match model dimension {}",
            x_t.len(),
            d.dim()
        )));
    }
    let (alpha, sigma) = (sched.alpha(t), sched.sigma(t));
    let mean = d.posterior_mean(x_t, alpha, sigma);
    model.counter.add(1);
    Ok(x_t
        .iter()
        .zip(&mean)
        .map(|(x, m)| (x - alpha * m) / sigma)
        .collect())
}

/// Diagonal Gaussian data distribution `N(mean, diag(var))`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SingleGaussianModel {
    mean: Vec<f64>,
    var: Vec<f64>,
    #[serde(skip)]
    counter: NfeCounter,
}

impl SingleGaussianModel {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(invalid("mean and variance must have the same non-zero length"));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("variances must be positive"));
        }
        Ok(Self {
            mean,
            var,
            counter: NfeCounter::default(),
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }
}

/// `sigma (x - alpha mu) / (alpha^2 v + sigma^2)` elementwise; one NFE.
pub fn gaussian_eps(
    model: &SingleGaussianModel,
    x_t: &[f64],
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_time(t, sched)?;
    if x_t.len() != model.mean.len() {
        return Err(invalid("input dimension does not match the Gaussian model"));
    }
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    model.counter.add(1);
    Ok(x_t
        .iter()
        .zip(model.mean.iter().zip(&model.var))
        .map(|(x, (m, v))| s * (x - a * m) / (a * a * v + s * s))
        .collect())
}

impl EpsilonModel for SingleGaussianModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn num_conditions(&self) -> usize {
        1
    }

    fn eps(&self, x_t: &[f64], t: usize, _cond: Condition, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        gaussian_eps(self, x_t, t, sched)
    }

    fn counter(&self) -> &NfeCounter {
        &self.counter
    }
}

/// Classifier-free guidance: `eps_u + scale (eps_c - eps_u)`.
///
/// `scale == 1` evaluates only the conditional branch (one NFE); any other
/// scale evaluates both (two NFEs).
pub fn cfg_eps<M: EpsilonModel + ?Sized>(
    model: &M,
    x_t: &[f64],
    t: usize,
    view_id: usize,
    scale: f64,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if !(scale >= 0.0) {
        return Err(invalid(format!("guidance scale must be >= 0, got {scale}")));
    }
    let cond = model.eps(x_t, t, Condition::conditional(view_id), sched)?;
    if scale == 1.0 {
        return Ok(cond);
    }
    let uncond = model.eps(x_t, t, Condition::unconditional(view_id), sched)?;
    Ok(uncond
        .iter()
        .zip(&cond)
        .map(|(u, c)| u + scale * (c - u))
        .collect())
}

/// Anything that predicts the noise in `x_t` for a given view.
///
/// This is what the diffusion operators consume; [`Guided`] adapts an
/// [`EpsilonModel`] with a guidance scale.
pub trait NoisePredictor: Sync {
    fn predict_eps(
        &self,
        x_t: &[f64],
        t: usize,
        view_id: usize,
        sched: &NoiseSchedule,
    ) -> Result<Vec<f64>>;

    /// NFEs charged per call.
    fn nfe_per_call(&self) -> u64 {
        1
    }
}

/// An [`EpsilonModel`] combined with a classifier-free guidance scale.
pub struct Guided<'a, M: ?Sized> {
    pub model: &'a M,
    pub scale: f64,
}

impl<'a, M: EpsilonModel + ?Sized> Guided<'a, M> {
    pub fn new(model: &'a M, scale: f64) -> Self {
        Self { model, scale }
    }
}

impl<M: EpsilonModel + ?Sized> NoisePredictor for Guided<'_, M> {
    fn predict_eps(
        &self,
        x_t: &[f64],
        t: usize,
        view_id: usize,
        sched: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        cfg_eps(self.model, x_t, t, view_id, self.scale, sched)
    }

    fn nfe_per_call(&self) -> u64 {
        if self.scale == 1.0 {
            1
        } else {
            2
        }
    }
}

/// Wraps a closure as a [`NoisePredictor`]; useful for scripted predictors.
pub struct FnPredictor<F>(pub F);

impl<F> NoisePredictor for FnPredictor<F>
where
    F: Fn(&[f64], usize, usize) -> Vec<f64> + Sync,
{
    fn predict_eps(
        &self,
        x_t: &[f64],
        t: usize,
        view_id: usize,
        _sched: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        Ok((self.0)(x_t, t, view_id))
    }
}

/// Jitter applied to ground-truth renders so each view is a small cluster
/// rather than a single point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JitterSpec {
    pub count: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            count: 4,
            amplitude: 0.02,
            seed: 0x5eed,
        }
    }
}

impl JitterSpec {
    pub fn none() -> Self {
        Self {
            count: 0,
            ..Self::default()
        }
    }
}

fn jittered(image: &[f64], amplitude: f64, rng: &mut Rng) -> Vec<f64> {
    let brightness = rng.random_range(-amplitude..=amplitude);
    let contrast = rng.random_range(-amplitude..=amplitude);
    image
        .iter()
        .map(|&v| (0.5 + (1.0 + contrast) * (v - 0.5) + brightness).clamp(0.0, 1.0))
        .collect()
}

/// Renders the hidden ground truth from every condition camera; view `i`
/// of the model corresponds to `cameras[i]`.
pub fn build_oracle_model<S: Scene>(
    ground_truth: &S,
    cameras: &[Camera],
    jitter: JitterSpec,
) -> Result<EmpiricalScoreModel> {
    if cameras.is_empty() {
        return Err(invalid("oracle model needs at least one condition camera"));
    }
    if jitter.count > 0 && !(jitter.amplitude >= 0.0) {
        return Err(invalid("jitter amplitude must be non-negative"));
    }
    let mut rng = seeded_rng(jitter.seed);
    let views = cameras
        .iter()
        .map(|cam| {
            let anchor = ground_truth.render(cam).image;
            let mut points = Vec::with_capacity(jitter.count + 1);
            for _ in 0..jitter.count {
                points.push(jittered(&anchor, jitter.amplitude, &mut rng));
            }
            points.insert(0, anchor);
            Dataset::uniform(points)
        })
        .collect::<Result<Vec<_>>>()?;
    EmpiricalScoreModel::new(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffops::noise_add;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::ddpm_default()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_point_posterior_is_exact() {
        let y = vec![0.1, 0.5, 0.9];
        let m = EmpiricalScoreModel::single(Dataset::uniform(vec![y.clone()]).unwrap()).unwrap();
        let s = sched();
        let x = vec![0.3, -1.2, 2.0];
        for t in [1, 10, 500, 1000] {
            let e = m.eps(&x, t, Condition::conditional(0), &s).unwrap();
            let expected: Vec<f64> = x
                .iter()
                .zip(&y)
                .map(|(x, y)| (x - s.alpha(t) * y) / s.sigma(t))
                .collect();
            assert!(close(&e, &expected, 1e-12));
        }
        assert_eq!(m.nfe(), 4);
    }

    #[test]
    fn symmetric_pair_posterior_mean_is_midpoint() {
        let ya = vec![1.0, 0.0];
        let yb = vec![0.0, 1.0];
        let d = Dataset::uniform(vec![ya, yb]).unwrap();
        let s = sched();
        for t in [50, 300, 900] {
            let a = s.alpha(t);
            // points equidistant from alpha*ya and alpha*yb
            let x = vec![a * 0.5 + 0.3, a * 0.5 + 0.3];
            let m = d.posterior_mean(&x, a, s.sigma(t));
            assert!(close(&m, &[0.5, 0.5], 1e-12));
        }
    }

    #[test]
    fn t_zero_is_a_domain_error() {
        let m = EmpiricalScoreModel::single(Dataset::uniform(vec![vec![0.5]]).unwrap()).unwrap();
        let err = m.eps(&[0.5], 0, Condition::conditional(0), &sched()).unwrap_err();
        assert!(matches!(err, SirError::Domain(_)));
        let g = SingleGaussianModel::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(gaussian_eps(&g, &[0.0], 0, &sched()), Err(SirError::Domain(_))));
        assert_eq!(m.nfe(), 0);
    }

    #[test]
    fn empty_and_ragged_datasets_rejected() {
        assert!(matches!(Dataset::uniform(vec![]), Err(SirError::Model(_))));
        assert!(Dataset::uniform(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(EmpiricalScoreModel::new(vec![]).is_err());
        assert!(Dataset::weighted(vec![vec![0.0]], vec![-1.0]).is_err());
    }

    #[test]
    fn unknown_view_rejected() {
        let m = EmpiricalScoreModel::single(Dataset::uniform(vec![vec![0.5]]).unwrap()).unwrap();
        assert!(m.eps(&[0.5], 10, Condition::conditional(3), &sched()).is_err());
    }

    #[test]
    fn gaussian_eps_vanishes_at_scaled_mean() {
        let s = sched();
        let g = SingleGaussianModel::new(vec![0.2, -0.4], vec![0.5, 2.0]).unwrap();
        let t = 400;
        let x: Vec<f64> = g.mean().iter().map(|m| s.alpha(t) * m).collect();
        let e = gaussian_eps(&g, &x, t, &s).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gaussian_small_variance_matches_point_model() {
        let s = sched();
        let mu = vec![0.3, 0.7];
        let g = SingleGaussianModel::new(mu.clone(), vec![1e-16; 2]).unwrap();
        let p = EmpiricalScoreModel::single(Dataset::uniform(vec![mu]).unwrap()).unwrap();
        let x = vec![0.9, -0.1];
        for t in [5, 250, 999] {
            let a = gaussian_eps(&g, &x, t, &s).unwrap();
            let b = p.eps(&x, t, Condition::conditional(0), &s).unwrap();
            assert!(close(&a, &b, 1e-8), "{a:?} {b:?}");
        }
    }

    #[test]
    fn cfg_identities_and_counts() {
        let s = sched();
        let m = EmpiricalScoreModel::new(vec![
            Dataset::uniform(vec![vec![0.1, 0.2], vec![0.2, 0.1]]).unwrap(),
            Dataset::uniform(vec![vec![0.9, 0.8]]).unwrap(),
        ])
        .unwrap();
        let x = vec![0.4, 0.3];
        let t = 300;
        let ec = m.eps(&x, t, Condition::conditional(0), &s).unwrap();
        let eu = m.eps(&x, t, Condition::unconditional(0), &s).unwrap();
        m.counter().reset();

        let one = cfg_eps(&m, &x, t, 0, 1.0, &s).unwrap();
        assert_eq!(one, ec);
        assert_eq!(m.nfe(), 1);

        let zero = cfg_eps(&m, &x, t, 0, 0.0, &s).unwrap();
        assert!(close(&zero, &eu, 1e-15));
        assert_eq!(m.nfe(), 3);

        let three = cfg_eps(&m, &x, t, 0, 3.0, &s).unwrap();
        for j in 0..2 {
            assert!((three[j] - (eu[j] + 3.0 * (ec[j] - eu[j]))).abs() < 1e-12);
        }
        assert_eq!(m.nfe(), 5);
        assert!(cfg_eps(&m, &x, t, 0, -1.0, &s).is_err());
    }

    #[test]
    fn pooled_dataset_weights() {
        let m = EmpiricalScoreModel::new(vec![
            Dataset::uniform(vec![vec![0.0], vec![0.1]]).unwrap(),
            Dataset::uniform(vec![vec![1.0]]).unwrap(),
        ])
        .unwrap();
        assert_eq!(m.pooled().len(), 3);
        assert_eq!(m.pooled().weights(), &[0.25, 0.25, 0.5]);
    }

    #[test]
    fn posterior_collapses_near_zero() {
        let s = sched();
        let pts = vec![vec![0.1, 0.9, 0.4], vec![0.8, 0.2, 0.6], vec![0.5, 0.5, 0.0]];
        let d = Dataset::uniform(pts.clone()).unwrap();
        let mut rng = seeded_rng(3);
        for (k, y) in pts.iter().enumerate() {
            let state = noise_add(y, 1, &s, &mut rng).unwrap();
            let m = d.posterior_mean(&state.x, s.alpha(1), s.sigma(1));
            assert!(close(&m, &pts[k], 1e-6), "{m:?}");
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = EmpiricalScoreModel::new(vec![
            Dataset::uniform(vec![vec![0.0, 1.0]]).unwrap(),
            Dataset::weighted(vec![vec![0.5, 0.5], vec![1.0, 0.0]], vec![1.0, 3.0]).unwrap(),
        ])
        .unwrap();
        let back = EmpiricalScoreModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.data(), m.data());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dataset() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (1usize..6, 1usize..5).prop_flat_map(|(n, d)| {
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), n)
            })
        }

        proptest! {
            #[test]
            fn posterior_is_normalized_and_in_hull(
                pts in dataset(),
                t in 1usize..=1000,
                noise in prop::collection::vec(-3.0f64..3.0, 5),
            ) {
                let s = NoiseSchedule::ddpm_default();
                let d = Dataset::uniform(pts.clone()).unwrap();
                let x: Vec<f64> = (0..d.dim()).map(|j| noise[j]).collect();
                let post = d.posterior(&x, s.alpha(t), s.sigma(t));
                prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let mean = d.posterior_mean(&x, s.alpha(t), s.sigma(t));
                for j in 0..d.dim() {
                    let lo = pts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                    let hi = pts.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(mean[j] >= lo - 1e-12 && mean[j] <= hi + 1e-12);
                }
            }

            #[test]
            fn nfe_counts_follow_call_script(script in prop::collection::vec((0u8..3, 0.0f64..4.0), 0..30)) {
                let s = NoiseSchedule::ddpm_default();
                let m = EmpiricalScoreModel::new(vec![
                    Dataset::uniform(vec![vec![0.2, 0.4]]).unwrap(),
                    Dataset::uniform(vec![vec![0.7, 0.1]]).unwrap(),
                ]).unwrap();
                let mut expected = 0;
                for (op, scale) in script {
                    let scale = if op == 2 { 1.0 } else { scale };
                    match op {
                        0 => { m.eps(&[0.1, 0.1], 100, Condition::conditional(1), &s).unwrap(); expected += 1; }
                        _ => {
                            cfg_eps(&m, &[0.1, 0.1], 100, 0, scale, &s).unwrap();
                            expected += if scale == 1.0 { 1 } else { 2 };
                        }
                    }
                }
                prop_assert_eq!(m.nfe(), expected);
            }
        }
    }
}
