use serde::{Deserialize, Serialize};

use crate::scene::{Scene, SceneGrad};

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    /// State sized for every parameter of `scene` (density then color).
    pub fn for_scene<S: Scene>(scene: &S, lr: f64) -> Self {
        Self::new(scene.density().len() + scene.color().len(), lr)
    }

    fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64]) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (j, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let i = offset + j;
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimState) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state has the wrong size");
    state.step += 1;
    state.update(0, params, grads);
}

/// Adam on a scene followed by projection onto the feasible set.
pub fn adam_scene_step<S: Scene>(scene: &mut S, grad: &SceneGrad, state: &mut OptimState) {
    let nd = scene.density().len();
    assert_eq!(state.m.len(), nd + scene.color().len(), "optimizer state has the wrong size");
    state.step += 1;
    state.update(0, scene.density_mut(), &grad.density);
    state.update(nd, scene.color_mut(), &grad.color);
    scene.project();
}
