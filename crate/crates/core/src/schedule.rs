//! Discrete variance-preserving noise schedules, timestep ladders and the
//! annealed `t2`/`t1` plans used by the outer reconstruction loop.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::Rng;

/// Tabulated `(alpha_t, sigma_t)` for integer timesteps `0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    num_steps: usize,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Variance-preserving schedule with `beta` linearly spaced from
    /// `beta_min` (at `t = 1`) to `beta_max` (at `t = T`).
    pub fn vp_linear(num_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(invalid(format!(
                "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let mut alpha = Vec::with_capacity(num_steps + 1);
        let mut sigma = Vec::with_capacity(num_steps + 1);
        alpha.push(1.0);
        sigma.push(0.0);
        let mut alpha_bar = 1.0f64;
        for s in 1..=num_steps {
            let frac = if num_steps == 1 {
                0.0
            } else {
                (s - 1) as f64 / (num_steps - 1) as f64
            };
            let beta = beta_min + (beta_max - beta_min) * frac;
            alpha_bar *= 1.0 - beta;
            alpha.push(alpha_bar.sqrt());
            sigma.push((1.0 - alpha_bar).sqrt());
        }
        Ok(Self {
            num_steps,
            alpha,
            sigma,
        })
    }

    /// The DDPM default: `T = 1000`, `beta` in `[1e-4, 0.02]`.
    pub fn ddpm_default() -> Self {
        Self::vp_linear(1000, 1e-4, 0.02).expect("default schedule parameters are valid")
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }
}

/// `make_vp_schedule` under its operational name.
pub fn make_vp_schedule(num_steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::vp_linear(num_steps, beta_min, beta_max)
}

/// Strictly increasing subset of `0..=T` that always contains `0` and `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepLadder {
    steps: Vec<usize>,
}

impl TimestepLadder {
    /// `n + 1` evenly spaced integer timesteps from `0` to `T` inclusive.
    pub fn even(num_steps: usize, n: usize) -> Result<Self> {
        if n == 0 || n > num_steps {
            return Err(invalid(format!(
                "ladder needs 1 <= n <= T, got n = {n}, T = {num_steps}"
            )));
        }
        // round(i * T / n) in integer arithmetic
        let steps = (0..=n)
            .map(|i| (2 * i * num_steps + n) / (2 * n))
            .collect();
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `T`, the last rung.
    pub fn max_step(&self) -> usize {
        *self.steps.last().expect("ladder is never empty")
    }

    /// Smallest positive rung.
    pub fn first_positive(&self) -> usize {
        self.steps[1]
    }

    pub fn contains(&self, t: usize) -> bool {
        self.steps.binary_search(&t).is_ok()
    }

    pub fn index_of(&self, t: usize) -> Option<usize> {
        self.steps.binary_search(&t).ok()
    }

    /// Nearest rung to `t`; ties resolve downward.
    pub fn snap(&self, t: f64) -> usize {
        let mut best = self.steps[0];
        let mut best_dist = f64::INFINITY;
        for &s in &self.steps {
            let d = (s as f64 - t).abs();
            if d < best_dist {
                best = s;
                best_dist = d;
            }
        }
        best
    }

    /// Rungs `r` with `lo <= r <= hi`, ascending.
    pub fn between(&self, lo: usize, hi: usize) -> Vec<usize> {
        self.steps
            .iter()
            .copied()
            .filter(|&s| s >= lo && s <= hi)
            .collect()
    }
}

/// `subsample_ladder` under its operational name.
pub fn subsample_ladder(num_steps: usize, n: usize) -> Result<TimestepLadder> {
    TimestepLadder::even(num_steps, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AnnealKind {
    Linear,
    Square,
    Random,
}

/// How `t1` is derived from `t2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum T1Rule {
    /// `t1 = round(c * t2)`.
    Ratio(f64),
    /// `t1 = round(t2^2 / T)`.
    SquareOverT,
}

/// Outer-iteration schedule for the forward endpoint `t2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AnnealPlan {
    pub kind: AnnealKind,
    /// Fraction of `T` at `k = 0`.
    pub t2_start: f64,
    /// Fraction of `T` at the end of the run.
    pub t2_end: f64,
    pub t1_rule: T1Rule,
    /// Use the ascending square formula `(k/K)^2 (start - end) T + end T`.
    #[serde(default)]
    pub literal_square: bool,
}

impl AnnealPlan {
    pub fn linear(t2_start: f64, t2_end: f64, t1_rule: T1Rule) -> Self {
        Self {
            kind: AnnealKind::Linear,
            t2_start,
            t2_end,
            t1_rule,
            literal_square: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2_end > 0.0 && self.t2_end <= self.t2_start && self.t2_start < 1.0) {
            return Err(invalid(format!(
                "anneal plan needs 0 < t2_end <= t2_start < 1, got {} -> {}",
                self.t2_start, self.t2_end
            )));
        }
        if let T1Rule::Ratio(c) = self.t1_rule {
            if !(c > 0.0 && c <= 1.0) {
                return Err(invalid(format!("t1 ratio must lie in (0, 1], got {c}")));
            }
        }
        Ok(())
    }

    /// Continuous (unsnapped) `t2` for outer iteration `k` of `total`.
    fn raw_t2(&self, k: usize, total: usize, num_steps: usize, rng: &mut Rng) -> f64 {
        let span = self.t2_start - self.t2_end;
        let big_t = num_steps as f64;
        match self.kind {
            AnnealKind::Linear => {
                let frac = if total <= 1 {
                    0.0
                } else {
                    k as f64 / (total - 1) as f64
                };
                big_t * (self.t2_start - span * frac)
            }
            AnnealKind::Square => {
                let r = k as f64 / total as f64;
                let w = if self.literal_square {
                    r * r
                } else {
                    (1.0 - r) * (1.0 - r)
                };
                w * span * big_t + self.t2_end * big_t
            }
            AnnealKind::Random => {
                let lo = self.t2_end * big_t;
                let hi = self.t2_start * big_t;
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            }
        }
    }
}

/// `t2` for outer iteration `k` of `total`, snapped to `ladder` and kept
/// strictly inside `(0, T)`.
///
/// Only the random plan draws from `rng`.
pub fn t2_at(
    k: usize,
    total: usize,
    plan: &AnnealPlan,
    ladder: &TimestepLadder,
    rng: &mut Rng,
) -> Result<usize> {
    if k >= total {
        return Err(invalid(format!(
            "outer iteration {k} out of range for K = {total}"
        )));
    }
    let raw = plan.raw_t2(k, total, ladder.max_step(), rng);
    Ok(clamp_interior(ladder.snap(raw), ladder))
}

fn clamp_interior(t: usize, ladder: &TimestepLadder) -> usize {
    let steps = ladder.steps();
    let hi = steps[steps.len().saturating_sub(2).max(1)];
    t.clamp(ladder.first_positive(), hi.max(ladder.first_positive()))
}

/// `t1` from `t2` under the plan's rule; never exceeds `t2`.
pub fn t1_from_t2(t2: usize, plan: &AnnealPlan, num_steps: usize) -> usize {
    let t1 = match plan.t1_rule {
        T1Rule::Ratio(c) => (c * t2 as f64).round(),
        T1Rule::SquareOverT => (t2 as f64 * t2 as f64 / num_steps as f64).round(),
    };
    (t1 as usize).min(t2)
}
