//! From-scratch feedforward value network: a shared two-layer ReLU trunk
//! feeding a value head and an advantage head, with optional
//! quantile-wise dueling combination and N quantile outputs per action
//! (N = 1 collapses to a scalar Q head). Includes the quantile Huber and
//! MSE losses with analytic gradients, manual backpropagation over a flat
//! parameter buffer, bias-corrected Adam, and a bit-exact text checkpoint.
//!
//! Parameter layout (flat `Vec<f64>`, row-major):
//! trunk `w1 (H×I), b1 (H), w2 (H×H), b2 (H)`, value head `wv (N×H),
//! bv (N)`, advantage head `wa (A·N×H), ba (A·N)`. Both heads are always
//! allocated so every variant shares one checkpoint shape; the value head
//! is only evaluated (and only receives gradient) when dueling is on.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueNetError {
    #[error("feature vector has {got} entries but the network input is {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error("the value/advantage decomposition is only defined for dueling shapes")]
    NotDueling,
}

/// Static architecture description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    /// Input width (3M features).
    pub input: usize,
    /// Width of both trunk layers.
    pub hidden: usize,
    /// Number of actions |A| = M + 1.
    pub actions: usize,
    /// Quantiles per action; 1 for scalar-Q variants.
    pub quantiles: usize,
    /// Combine value and mean-subtracted advantage per quantile when true;
    /// use the advantage head directly as the output when false.
    pub dueling: bool,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wv: usize,
    bv: usize,
    wa: usize,
    ba: usize,
    total: usize,
}

impl NetShape {
    fn offsets(&self) -> Offsets {
        let (i, h, a, n) = (self.input, self.hidden, self.actions, self.quantiles);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let wv = b2 + h;
        let bv = wv + n * h;
        let wa = bv + n;
        let ba = wa + a * n * h;
        Offsets { w1, b1, w2, b2, wv, bv, wa, ba, total: ba + a * n }
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        self.offsets().total
    }
}

/// Quantile return estimates for every action at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileValue {
    /// `theta[a·N + i]` = θ_i(s, a), row-major over actions.
    pub theta: Vec<f64>,
    pub num_actions: usize,
    pub num_quantiles: usize,
}

/// Quantile midpoints τ̂_i = (2i − 1)/(2N), strictly increasing in (0, 1).
pub fn tau_hat_midpoints(n: usize) -> Vec<f64> {
    (1..=n).map(|i| (2 * i - 1) as f64 / (2 * n) as f64).collect()
}

impl QuantileValue {
    /// The quantile estimates for one action.
    pub fn action_quantiles(&self, action: usize) -> &[f64] {
        &self.theta[action * self.num_quantiles..(action + 1) * self.num_quantiles]
    }

    /// Mean-of-quantiles action values Q(s, a) = (1/N)·Σ_i θ_i(s, a).
    pub fn mean_q(&self) -> Vec<f64> {
        (0..self.num_actions)
            .map(|a| {
                self.action_quantiles(a).iter().sum::<f64>() / self.num_quantiles as f64
            })
            .collect()
    }

    /// Midpoints τ̂ matching this value's quantile resolution.
    pub fn tau_hat(&self) -> Vec<f64> {
        tau_hat_midpoints(self.num_quantiles)
    }
}

/// Index of the maximal entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trunk activations cached by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
}

/// A value network: shape plus the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub shape: NetShape,
    pub data: Vec<f64>,
}

impl NetParams {
    /// All-zero parameters (outputs θ ≡ 0 everywhere).
    pub fn zeros(shape: NetShape) -> Self {
        Self { shape, data: vec![0.0; shape.param_count()] }
    }

    /// Uniform init in [−1/√fan_in, +1/√fan_in] per layer, drawn in layout
    /// order so a seeded RNG reproduces the network exactly.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let o = shape.offsets();
        let mut data = vec![0.0; o.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, data: &mut Vec<f64>| {
            let limit = 1.0 / (fan_in as f64).sqrt();
            for slot in &mut data[range] {
                *slot = limit * (2.0 * rng.random::<f64>() - 1.0);
            }
        };
        fill(o.w1..o.w2, shape.input, &mut data);
        fill(o.w2..o.wv, shape.hidden, &mut data);
        fill(o.wv..o.total, shape.hidden, &mut data);
        Self { shape, data }
    }

    /// Forward pass producing per-action quantiles.
    pub fn forward(&self, features: &[f64]) -> Result<QuantileValue, ValueNetError> {
        self.forward_impl(features, false).map(|(q, _)| q)
    }

    /// Forward pass that also returns the trunk activations needed by
    /// [`NetParams::backward`].
    pub fn forward_cached(
        &self,
        features: &[f64],
    ) -> Result<(QuantileValue, ForwardCache), ValueNetError> {
        self.forward_impl(features, true).map(|(q, c)| (q, c.expect("cache requested")))
    }

    /// The dueling split at `features`: per-quantile state values (length
    /// N) and mean-subtracted advantages (A×N, row-major), the exact terms
    /// [`NetParams::forward`] adds, so `theta[a·N+i] = value[i] + adv[a·N+i]`
    /// and each advantage column sums to zero across actions. Errors on a
    /// non-dueling shape, whose output has no such split.
    pub fn dueling_decomposition(
        &self,
        features: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), ValueNetError> {
        let s = self.shape;
        if !s.dueling {
            return Err(ValueNetError::NotDueling);
        }
        let (_, cache) = self.forward_cached(features)?;
        let o = s.offsets();
        let p = &self.data;
        let mut value = vec![0.0; s.quantiles];
        for (i, v) in value.iter_mut().enumerate() {
            let row = &p[o.wv + i * s.hidden..o.wv + (i + 1) * s.hidden];
            *v = p[o.bv + i] + dot(row, &cache.h2);
        }
        let rows = s.actions * s.quantiles;
        let mut adv = vec![0.0; rows];
        for (r, slot) in adv.iter_mut().enumerate() {
            let row = &p[o.wa + r * s.hidden..o.wa + (r + 1) * s.hidden];
            *slot = p[o.ba + r] + dot(row, &cache.h2);
        }
        for i in 0..s.quantiles {
            let mut mean = 0.0;
            for a in 0..s.actions {
                mean += adv[a * s.quantiles + i];
            }
            mean /= s.actions as f64;
            for a in 0..s.actions {
                adv[a * s.quantiles + i] -= mean;
            }
        }
        Ok((value, adv))
    }

    fn forward_impl(
        &self,
        features: &[f64],
        want_cache: bool,
    ) -> Result<(QuantileValue, Option<ForwardCache>), ValueNetError> {
        let s = self.shape;
        if features.len() != s.input {
            return Err(ValueNetError::ShapeMismatch { got: features.len(), expected: s.input });
        }
        let o = s.offsets();
        let p = &self.data;

        let mut z1 = vec![0.0; s.hidden];
        for h in 0..s.hidden {
            let row = &p[o.w1 + h * s.input..o.w1 + (h + 1) * s.input];
            z1[h] = p[o.b1 + h] + dot(row, features);
        }
        let h1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();

        let mut z2 = vec![0.0; s.hidden];
        for h in 0..s.hidden {
            let row = &p[o.w2 + h * s.hidden..o.w2 + (h + 1) * s.hidden];
            z2[h] = p[o.b2 + h] + dot(row, &h1);
        }
        let h2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();

        let rows = s.actions * s.quantiles;
        let mut adv = vec![0.0; rows];
        for r in 0..rows {
            let row = &p[o.wa + r * s.hidden..o.wa + (r + 1) * s.hidden];
            adv[r] = p[o.ba + r] + dot(row, &h2);
        }

        let theta = if s.dueling {
            let mut value = vec![0.0; s.quantiles];
            for (i, v) in value.iter_mut().enumerate() {
                let row = &p[o.wv + i * s.hidden..o.wv + (i + 1) * s.hidden];
                *v = p[o.bv + i] + dot(row, &h2);
            }
            // θ_i(s,a) = V_i(s) + (A_i(s,a) − mean_a' A_i(s,a')), per quantile.
            let mut theta = vec![0.0; rows];
            for i in 0..s.quantiles {
                let mut mean = 0.0;
                for a in 0..s.actions {
                    mean += adv[a * s.quantiles + i];
                }
                mean /= s.actions as f64;
                for a in 0..s.actions {
                    theta[a * s.quantiles + i] = value[i] + adv[a * s.quantiles + i] - mean;
                }
            }
            theta
        } else {
            adv
        };

        let q = QuantileValue {
            theta,
            num_actions: s.actions,
            num_quantiles: s.quantiles,
        };
        let cache = want_cache.then_some(ForwardCache { z1, h1, z2, h2 });
        Ok((q, cache))
    }

    /// Accumulates dL/dparams into `grads` (same layout as `data`) for one
    /// sample, given dL/dθ over all action-quantile outputs. Entries of
    /// `d_theta` for untrained actions are simply zero.
    pub fn backward(
        &self,
        features: &[f64],
        cache: &ForwardCache,
        d_theta: &[f64],
        grads: &mut [f64],
    ) {
        let s = self.shape;
        let o = s.offsets();
        let p = &self.data;
        debug_assert_eq!(d_theta.len(), s.actions * s.quantiles);
        debug_assert_eq!(grads.len(), o.total);

        // Split dθ into head gradients. Dueling couples every action through
        // the per-quantile advantage mean; the value head sees the column sum.
        let rows = s.actions * s.quantiles;
        let mut d_adv = vec![0.0; rows];
        let mut d_val = vec![0.0; s.quantiles];
        if s.dueling {
            for i in 0..s.quantiles {
                let mut col_sum = 0.0;
                for a in 0..s.actions {
                    col_sum += d_theta[a * s.quantiles + i];
                }
                d_val[i] = col_sum;
                let mean = col_sum / s.actions as f64;
                for a in 0..s.actions {
                    d_adv[a * s.quantiles + i] = d_theta[a * s.quantiles + i] - mean;
                }
            }
        } else {
            d_adv.copy_from_slice(d_theta);
        }

        let mut d_h2 = vec![0.0; s.hidden];
        if s.dueling {
            for i in 0..s.quantiles {
                let g = d_val[i];
                if g == 0.0 {
                    continue;
                }
                grads[o.bv + i] += g;
                let (w_row, g_row) = (
                    &p[o.wv + i * s.hidden..o.wv + (i + 1) * s.hidden],
                    &mut grads[o.wv + i * s.hidden..],
                );
                for h in 0..s.hidden {
                    g_row[h] += g * cache.h2[h];
                    d_h2[h] += g * w_row[h];
                }
            }
        }
        for r in 0..rows {
            let g = d_adv[r];
            if g == 0.0 {
                continue;
            }
            grads[o.ba + r] += g;
            let w_row = &p[o.wa + r * s.hidden..o.wa + (r + 1) * s.hidden];
            let g_row = &mut grads[o.wa + r * s.hidden..];
            for h in 0..s.hidden {
                g_row[h] += g * cache.h2[h];
                d_h2[h] += g * w_row[h];
            }
        }

        // Trunk layer 2.
        let mut d_h1 = vec![0.0; s.hidden];
        for h in 0..s.hidden {
            if cache.z2[h] <= 0.0 || d_h2[h] == 0.0 {
                continue;
            }
            let g = d_h2[h];
            grads[o.b2 + h] += g;
            let w_row = &p[o.w2 + h * s.hidden..o.w2 + (h + 1) * s.hidden];
            let g_row = &mut grads[o.w2 + h * s.hidden..];
            for i in 0..s.hidden {
                g_row[i] += g * cache.h1[i];
                d_h1[i] += g * w_row[i];
            }
        }

        // Trunk layer 1.
        for h in 0..s.hidden {
            if cache.z1[h] <= 0.0 || d_h1[h] == 0.0 {
                continue;
            }
            let g = d_h1[h];
            grads[o.b1 + h] += g;
            let g_row = &mut grads[o.w1 + h * s.input..];
            for i in 0..s.input {
                g_row[i] += g * features[i];
            }
        }
    }

    /// Serializes shape and parameters to a portable text checkpoint;
    /// parameter values are written as the 16-hex-digit bit pattern of each
    /// f64, so round-trips are bit-exact.
    pub fn save_to_string(&self) -> String {
        let s = self.shape;
        let mut out = String::with_capacity(self.data.len() * 17 + 128);
        out.push_str("valuenet-checkpoint v1\n");
        out.push_str(&format!("input {}\n", s.input));
        out.push_str(&format!("hidden {}\n", s.hidden));
        out.push_str(&format!("actions {}\n", s.actions));
        out.push_str(&format!("quantiles {}\n", s.quantiles));
        out.push_str(&format!("dueling {}\n", u8::from(s.dueling)));
        out.push_str(&format!("params {}\n", self.data.len()));
        for chunk in self.data.chunks(8) {
            let line: Vec<String> =
                chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses the checkpoint format written by [`NetParams::save_to_string`].
    pub fn load_from_str(text: &str) -> Result<Self, ValueNetError> {
        let err = |line: usize, message: String| ValueNetError::Checkpoint { line, message };
        let mut lines = text.lines().enumerate();
        let (_, magic) = lines
            .next()
            .ok_or_else(|| err(1, "empty checkpoint".to_string()))?;
        if magic.trim() != "valuenet-checkpoint v1" {
            return Err(err(1, format!("unrecognized header `{magic}`")));
        }

        let mut field = |name: &str| -> Result<usize, ValueNetError> {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing `{name}` line")))?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(key), Some(value)) if key == name => value
                    .parse::<usize>()
                    .map_err(|e| err(idx + 1, format!("bad {name} `{value}`: {e}"))),
                _ => Err(err(idx + 1, format!("expected `{name} <count>`, got `{line}`"))),
            }
        };
        let input = field("input")?;
        let hidden = field("hidden")?;
        let actions = field("actions")?;
        let quantiles = field("quantiles")?;
        let dueling = field("dueling")? != 0;
        let count = field("params")?;

        let shape = NetShape { input, hidden, actions, quantiles, dueling };
        if shape.param_count() != count {
            return Err(err(
                7,
                format!("shape implies {} parameters, header says {count}", shape.param_count()),
            ));
        }
        let mut data = Vec::with_capacity(count);
        for (idx, line) in lines {
            for token in line.split_whitespace() {
                let bits = u64::from_str_radix(token, 16)
                    .map_err(|e| err(idx + 1, format!("bad f64 bits `{token}`: {e}")))?;
                data.push(f64::from_bits(bits));
            }
        }
        if data.len() != count {
            return Err(err(0, format!("expected {count} parameters, found {}", data.len())));
        }
        Ok(Self { shape, data })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Asymmetric Huber penalty ρ_τ^κ(u) and its derivative in u. The |u| ≤ κ
/// branch (including the boundary) is quadratic; the indicator uses
/// 1[u < 0], so u = 0 carries weight τ and zero slope.
fn rho(u: f64, tau: f64, kappa: f64) -> (f64, f64) {
    let weight = (tau - f64::from(u < 0.0)).abs();
    if u.abs() <= kappa {
        (0.5 * u * u * weight, u * weight)
    } else {
        (kappa * (u.abs() - 0.5 * kappa) * weight, kappa * u.signum() * weight)
    }
}

/// Quantile Huber loss between N predicted and N target quantiles:
/// L = (1/N)·Σ_i Σ_j ρ_{τ̂_i}^κ(target_j − pred_i), with the gradient taken
/// with respect to the predictions.
pub fn quantile_huber_loss(
    pred_theta: &[f64],
    target_theta: &[f64],
    tau_hat: &[f64],
    kappa: f64,
) -> (f64, Vec<f64>) {
    assert!(kappa > 0.0, "kappa must be positive, got {kappa}");
    assert_eq!(pred_theta.len(), tau_hat.len());
    let n = pred_theta.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred_theta.len()];
    for (i, (&pred, &tau)) in pred_theta.iter().zip(tau_hat).enumerate() {
        for &target in target_theta {
            let (value, d_u) = rho(target - pred, tau, kappa);
            loss += value;
            grad[i] -= d_u; // du/dpred = −1
        }
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    (loss, grad)
}

/// Batch-mean squared TD error (1/B)·Σ_b (y_b − Q_b)² and its gradient
/// −2(y_b − Q_b)/B with respect to each prediction.
pub fn mse_td_loss(pred_q: &[f64], target_y: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred_q.len(), target_y.len());
    let b = pred_q.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred_q.len()];
    for (i, (&q, &y)) in pred_q.iter().zip(target_y).enumerate() {
        let err = y - q;
        loss += err * err / b;
        grad[i] = -2.0 * err / b;
    }
    (loss, grad)
}

/// Bias-corrected Adam over the flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Adam {
    alpha: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    /// Standard constants: moment decays 0.9/0.999, epsilon 1e-8.
    pub fn new(alpha: f64, param_count: usize) -> Self {
        Self {
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    /// One update step. A non-finite gradient aborts before touching any
    /// parameter or moment.
    pub fn step(&mut self, params: &mut NetParams, grads: &[f64]) -> Result<(), ValueNetError> {
        assert_eq!(grads.len(), params.data.len());
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(ValueNetError::NonFiniteGradient { index });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, &g) in grads.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params.data[i] -= self.alpha * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_shape(dueling: bool, quantiles: usize) -> NetShape {
        NetShape { input: 4, hidden: 8, actions: 3, quantiles, dueling }
    }

    #[test]
    fn tau_midpoints_are_increasing_interior_points() {
        let tau = tau_hat_midpoints(4);
        assert_eq!(tau, vec![0.125, 0.375, 0.625, 0.875]);
        let tau = tau_hat_midpoints(64);
        assert!(tau.windows(2).all(|w| w[0] < w[1]));
        assert!(tau[0] > 0.0 && tau[63] < 1.0);
    }

    #[test]
    fn dueling_combine_applies_mean_subtracted_advantage() {
        // Zero trunk ⇒ h2 = 0 ⇒ heads output their biases; the combine rule
        // is then directly observable. V = 2, A = (1, −1): θ = (3, 1).
        let shape = NetShape { input: 2, hidden: 4, actions: 2, quantiles: 1, dueling: true };
        let o = shape.offsets();
        let mut params = NetParams::zeros(shape);
        params.data[o.bv] = 2.0;
        params.data[o.ba] = 1.0;
        params.data[o.ba + 1] = -1.0;
        let q = params.forward(&[0.3, -0.4]).unwrap();
        assert_eq!(q.theta, vec![3.0, 1.0]);

        // A = (2, 0) with the same V: mean subtraction gives identical θ.
        params.data[o.ba] = 2.0;
        params.data[o.ba + 1] = 0.0;
        let q = params.forward(&[0.3, -0.4]).unwrap();
        assert_eq!(q.theta, vec![3.0, 1.0]);
    }

    #[test]
    fn zero_params_output_zero_everywhere() {
        for dueling in [false, true] {
            let params = NetParams::zeros(small_shape(dueling, 5));
            let q = params.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
            assert!(q.theta.iter().all(|&t| t == 0.0));
        }
    }

    #[test]
    fn mean_q_averages_quantiles() {
        let q = QuantileValue { theta: vec![1.0, 3.0], num_actions: 1, num_quantiles: 2 };
        assert_eq!(q.mean_q(), vec![2.0]);

        let q = QuantileValue { theta: vec![0.7, -1.2], num_actions: 2, num_quantiles: 1 };
        assert_eq!(q.mean_q(), vec![0.7, -1.2]);

        // Dyadic constant so the sum-then-divide mean is exact.
        let q = QuantileValue { theta: vec![0.5; 6], num_actions: 2, num_quantiles: 3 };
        assert_eq!(q.mean_q(), vec![0.5, 0.5]);
    }

    #[test]
    fn advantage_components_sum_to_zero_per_quantile() {
        let shape = small_shape(true, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let params = NetParams::init(shape, &mut rng);
            let x: Vec<f64> = (0..shape.input).map(|_| rng.random::<f64>()).collect();
            let q = params.forward(&x).unwrap();
            let (value, adv) = params.dueling_decomposition(&x).unwrap();
            for i in 0..shape.quantiles {
                let column_sum: f64 =
                    (0..shape.actions).map(|a| adv[a * shape.quantiles + i]).sum();
                assert!(column_sum.abs() < 1e-9, "advantages must be centered");
            }
            // The decomposition must recombine into the forward output; this
            // pins centering to the action axis (a quantile-axis mistake
            // would break both checks).
            for a in 0..shape.actions {
                for i in 0..shape.quantiles {
                    let recombined = value[i] + adv[a * shape.quantiles + i];
                    assert!((recombined - q.theta[a * shape.quantiles + i]).abs() < 1e-12);
                }
            }
        }

        let plain = NetParams::zeros(small_shape(false, 6));
        assert_eq!(
            plain.dueling_decomposition(&[0.0; 4]).unwrap_err(),
            ValueNetError::NotDueling
        );
    }

    #[test]
    fn huber_hand_cases() {
        // Single pair, u = 0.5 inside the quadratic branch, τ = 0.75.
        let (loss, _) = quantile_huber_loss(&[0.0], &[0.5], &[0.75], 1.0);
        assert!((loss - 0.09375).abs() < 1e-12, "loss = {loss}");

        // u = −2 on the linear branch, τ = 0.25.
        let (loss, _) = quantile_huber_loss(&[2.0], &[0.0], &[0.25], 1.0);
        assert!((loss - 1.125).abs() < 1e-12, "loss = {loss}");

        // Matching prediction and target: zero loss, zero gradient.
        let tau = tau_hat_midpoints(4);
        let theta = vec![0.3, 0.3, 0.3, 0.3];
        let (loss, grad) = quantile_huber_loss(&theta, &theta, &tau, 1.0);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn huber_is_zero_iff_all_pairs_agree() {
        let tau = tau_hat_midpoints(2);
        // Equal multisets but unequal pairwise values still incur loss:
        // the double sum crosses every (i, j) pair.
        let (loss, _) = quantile_huber_loss(&[0.0, 1.0], &[1.0, 0.0], &tau, 1.0);
        assert!(loss > 0.0);
        let (loss, _) = quantile_huber_loss(&[0.5, 0.5], &[0.5, 0.5], &tau, 1.0);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn mse_hand_cases() {
        let (loss, grad) = mse_td_loss(&[2.0], &[2.0]);
        assert_eq!((loss, grad), (0.0, vec![0.0]));

        let (loss, grad) = mse_td_loss(&[1.0], &[3.0]);
        assert_eq!(loss, 4.0);
        assert_eq!(grad, vec![-4.0]);

        let (loss, _) = mse_td_loss(&[1.0, 3.0], &[2.0, 2.0]);
        assert_eq!(loss, 1.0);
    }

    /// Central finite differences of a scalar loss in every parameter.
    fn fd_check(shape: NetShape, quantile_loss: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let params = NetParams::init(shape, &mut rng);
        let x: Vec<f64> = (0..shape.input).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let action = 1usize;
        let target: Vec<f64> =
            (0..shape.quantiles).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let tau = tau_hat_midpoints(shape.quantiles);

        let loss_of = |p: &NetParams| -> f64 {
            let q = p.forward(&x).unwrap();
            if quantile_loss {
                quantile_huber_loss(q.action_quantiles(action), &target, &tau, 1.0).0
            } else {
                mse_td_loss(&[q.mean_q()[action]], &[target[0]]).0
            }
        };

        // Analytic gradient.
        let (q, cache) = params.forward_cached(&x).unwrap();
        let mut d_theta = vec![0.0; shape.actions * shape.quantiles];
        if quantile_loss {
            let (_, g) = quantile_huber_loss(q.action_quantiles(action), &target, &tau, 1.0);
            d_theta[action * shape.quantiles..(action + 1) * shape.quantiles]
                .copy_from_slice(&g);
        } else {
            let (_, g) = mse_td_loss(&[q.mean_q()[action]], &[target[0]]);
            // d mean_q / d theta_i = 1/N.
            for i in 0..shape.quantiles {
                d_theta[action * shape.quantiles + i] = g[0] / shape.quantiles as f64;
            }
        }
        let mut grads = vec![0.0; shape.param_count()];
        params.backward(&x, &cache, &d_theta, &mut grads);

        let h = 1e-5;
        let mut checked = 0;
        for idx in 0..shape.param_count() {
            let mut plus = params.clone();
            plus.data[idx] += h;
            let mut minus = params.clone();
            minus.data[idx] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let analytic = grads[idx];
            if analytic.abs() < 1e-10 && fd.abs() < 1e-7 {
                continue; // dead path (ReLU off or untouched head)
            }
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
            assert!(
                rel < 1e-4,
                "param {idx}: analytic {analytic}, fd {fd}, rel {rel}"
            );
            checked += 1;
        }
        // A single-action loss leaves whole blocks structurally dead (the
        // untaken actions' advantage rows; in plain mode the value head
        // too), so the vacuousness floor is an eighth, not a quarter.
        assert!(checked > shape.param_count() / 8, "too few live parameters: {checked}");
    }

    #[test]
    fn backward_matches_finite_differences_quantile_dueling() {
        fd_check(small_shape(true, 4), true);
    }

    #[test]
    fn backward_matches_finite_differences_quantile_plain() {
        fd_check(small_shape(false, 4), true);
    }

    #[test]
    fn backward_matches_finite_differences_scalar_dueling() {
        fd_check(small_shape(true, 1), false);
    }

    #[test]
    fn backward_matches_finite_differences_scalar_plain() {
        fd_check(small_shape(false, 1), false);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let shape = NetShape { input: 1, hidden: 1, actions: 1, quantiles: 1, dueling: false };
        let mut params = NetParams::zeros(shape);
        let count = shape.param_count();
        let mut adam = Adam::new(2e-3, count);

        // Zero gradient: parameters unchanged.
        adam.step(&mut params, &vec![0.0; count]).unwrap();
        assert!(params.data.iter().all(|&p| p == 0.0));

        // First real step: bias correction makes the move ≈ α·sign(g).
        let mut adam = Adam::new(2e-3, count);
        let mut grads = vec![0.0; count];
        grads[0] = 1.0;
        adam.step(&mut params, &grads).unwrap();
        assert!((params.data[0] + 2e-3).abs() < 1e-9, "moved to {}", params.data[0]);

        // Repeated identical gradients keep moving against the gradient.
        let mut last = params.data[0];
        for _ in 0..50 {
            adam.step(&mut params, &grads).unwrap();
            assert!(params.data[0] < last);
            last = params.data[0];
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients_without_side_effects() {
        let shape = small_shape(false, 1);
        let mut params = NetParams::zeros(shape);
        let before = params.data.clone();
        let mut adam = Adam::new(2e-3, shape.param_count());
        let mut grads = vec![0.0; shape.param_count()];
        grads[3] = f64::NAN;
        let err = adam.step(&mut params, &grads).unwrap_err();
        assert_eq!(err, ValueNetError::NonFiniteGradient { index: 3 });
        assert_eq!(params.data, before);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let shape = small_shape(true, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let params = NetParams::init(shape, &mut rng);
        let text = params.save_to_string();
        let loaded = NetParams::load_from_str(&text).unwrap();
        assert_eq!(loaded.shape, params.shape);
        assert_eq!(
            loaded.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            params.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn checkpoint_rejects_corrupted_input() {
        assert!(matches!(
            NetParams::load_from_str("not a checkpoint\n"),
            Err(ValueNetError::Checkpoint { line: 1, .. })
        ));
        let shape = small_shape(false, 1);
        let text = NetParams::zeros(shape).save_to_string();
        let truncated: String =
            text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(NetParams::load_from_str(&truncated).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let params = NetParams::zeros(small_shape(false, 1));
        let err = params.forward(&[0.0; 3]).unwrap_err();
        assert_eq!(err, ValueNetError::ShapeMismatch { got: 3, expected: 4 });
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.2]), 0);
        assert_eq!(argmax(&[-1.0]), 0);
    }
}
