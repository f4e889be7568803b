use super::grad::MapGradients;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Parameters per Gaussian in the flat state layout:
/// position(3) + log-scale(3) + rotation tangent(3) + logit opacity(1) + color(3).
pub const PARAMS_PER_GAUSSIAN: usize = 13;

/// First/second-moment adaptive step state over the whole map.
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_gaussians: usize) -> Self {
        Self {
            m: vec![0.0; num_gaussians * PARAMS_PER_GAUSSIAN],
            v: vec![0.0; num_gaussians * PARAMS_PER_GAUSSIAN],
            step: 0,
        }
    }

    /// Bias-corrected update directions (`lr`-free): `m̂ / (√v̂ + ε)` per
    /// parameter. The caller applies group learning rates.
    pub fn directions(&mut self, grads: &MapGradients) -> Vec<f64> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let mut out = vec![0.0; self.m.len()];
        for (i, g) in grads.per_gaussian.iter().enumerate() {
            let flat = [
                g.position.x,
                g.position.y,
                g.position.z,
                g.log_scale.x,
                g.log_scale.y,
                g.log_scale.z,
                g.rotation.x,
                g.rotation.y,
                g.rotation.z,
                g.opacity_logit,
                g.color[0],
                g.color[1],
                g.color[2],
            ];
            let base = i * PARAMS_PER_GAUSSIAN;
            for (k, &gk) in flat.iter().enumerate() {
                let idx = base + k;
                self.m[idx] = BETA1 * self.m[idx] + (1.0 - BETA1) * gk;
                self.v[idx] = BETA2 * self.v[idx] + (1.0 - BETA2) * gk * gk;
                let m_hat = self.m[idx] / bc1;
                let v_hat = self.v[idx] / bc2;
                out[idx] = m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        out
    }
}
