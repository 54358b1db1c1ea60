//! Signal-based delay compensation.
//!
//! The baseline compensators are zero/first-order-hold extrapolation; the
//! general form is a linear autoregressive predictor over the last `p`
//! delayed samples. A small feedforward network (leaky-ReLU hidden layer)
//! generalizes the linear predictor to piecewise-linear behavior and can be
//! retrained online from recorded coupling signals.

pub mod trainer;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

/// Coefficients of the linear autoregressive extrapolator
/// `u_hat = a^T window + b`, window ordered newest-first.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolatorParams {
    pub coeffs: Vec<f64>,
    pub bias: f64,
}

impl ExtrapolatorParams {
    pub fn new(coeffs: Vec<f64>, bias: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(CoreError::InvalidParams(
                "extrapolator needs at least one coefficient".into(),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) || !bias.is_finite() {
            return Err(CoreError::InvalidParams(
                "extrapolator coefficients must be finite".into(),
            ));
        }
        Ok(Self { coeffs, bias })
    }

    /// Zero-order hold: pass the newest delayed sample through unchanged.
    pub fn zoh(len: usize) -> Self {
        let mut coeffs = vec![0.0; len.max(1)];
        coeffs[0] = 1.0;
        Self { coeffs, bias: 0.0 }
    }

    /// First-order hold extrapolated over the delay horizon: continues the
    /// slope of the two newest delayed samples `k` steps ahead, which is
    /// exact on ramps.
    pub fn foh_for_delay(delay_steps: usize, len: usize) -> Result<Self> {
        if delay_steps > 0 && len < 2 {
            return Err(CoreError::InvalidParams(
                "FOH delay extrapolation needs a window of at least 2".into(),
            ));
        }
        let mut coeffs = vec![0.0; len.max(1)];
        let k = delay_steps as f64;
        coeffs[0] = 1.0 + k;
        if len >= 2 {
            coeffs[1] = -k;
        }
        Ok(Self { coeffs, bias: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// DC gain of the predictor: sum of coefficients plus bias.
    pub fn dc_gain(&self) -> f64 {
        self.coeffs.iter().sum::<f64>() + self.bias
    }

    pub fn extrapolate(&self, window: &[f64]) -> f64 {
        extrapolate_ar(self, window)
    }
}

/// `u_hat = a^T window + b` with the window newest-first.
pub fn extrapolate_ar(params: &ExtrapolatorParams, window: &[f64]) -> f64 {
    assert_eq!(
        params.coeffs.len(),
        window.len(),
        "window length must match coefficient count"
    );
    params
        .coeffs
        .iter()
        .zip(window)
        .map(|(a, u)| a * u)
        .sum::<f64>()
        + params.bias
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    LeakyRelu,
}

/// Weights of the p-input, h-hidden, 1-output feedforward compensator.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensatorNet {
    pub inputs: usize,
    pub hidden: usize,
    /// Hidden weights, row-major `hidden x inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub leaky_slope: f64,
    pub activation: Activation,
}

impl CompensatorNet {
    pub fn zeros(inputs: usize, hidden: usize, leaky_slope: f64, activation: Activation) -> Self {
        Self {
            inputs,
            hidden,
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            leaky_slope,
            activation,
        }
    }

    fn act(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Linear => z,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    self.leaky_slope * z
                }
            }
        }
    }

    fn act_grad(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Linear => 1.0,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    self.leaky_slope
                }
            }
        }
    }

    /// Pre-activations `z = W1 window + b1`.
    pub fn hidden_pre(&self, window: &[f64], out: &mut [f64]) {
        assert_eq!(window.len(), self.inputs);
        for (i, z) in out.iter_mut().enumerate() {
            let row = &self.w1[i * self.inputs..(i + 1) * self.inputs];
            *z = row.iter().zip(window).map(|(w, u)| w * u).sum::<f64>() + self.b1[i];
        }
    }

    pub fn forward(&self, window: &[f64]) -> f64 {
        let mut z = vec![0.0; self.hidden];
        self.hidden_pre(window, &mut z);
        self.w2
            .iter()
            .zip(&z)
            .map(|(w, &zi)| w * self.act(zi))
            .sum::<f64>()
            + self.b2
    }

    /// Bit `i` set when hidden unit `i` is on its unit-slope side.
    pub fn activation_pattern(&self, window: &[f64]) -> u32 {
        let mut z = vec![0.0; self.hidden];
        self.hidden_pre(window, &mut z);
        z.iter()
            .enumerate()
            .fold(0u32, |acc, (i, &zi)| acc | (((zi > 0.0) as u32) << i))
    }

    /// The affine map the network realizes while the hidden-unit sign
    /// pattern is fixed. With leaky-ReLU and `h` hidden units there are at
    /// most `2^h` such regions.
    pub fn region_params(&self, pattern: u32) -> ExtrapolatorParams {
        let mut coeffs = vec![0.0; self.inputs];
        let mut bias = self.b2;
        for i in 0..self.hidden {
            let unit_slope = self.activation == Activation::Linear || pattern & (1 << i) != 0;
            let gain = if unit_slope { 1.0 } else { self.leaky_slope };
            let scale = self.w2[i] * gain;
            let row = &self.w1[i * self.inputs..(i + 1) * self.inputs];
            for (c, w) in coeffs.iter_mut().zip(row) {
                *c += scale * w;
            }
            bias += scale * self.b1[i];
        }
        ExtrapolatorParams { coeffs, bias }
    }

    /// With linear activation the network is exactly one AR parameter set.
    pub fn as_linear(&self) -> Option<ExtrapolatorParams> {
        match self.activation {
            Activation::Linear => Some(self.region_params(0)),
            Activation::LeakyRelu => None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden * self.inputs + 2 * self.hidden + 1
    }

    /// Weights flattened in row-major layer order: W1 rows, b1, w2, b2.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count());
        let hp = self.hidden * self.inputs;
        self.w1.copy_from_slice(&flat[..hp]);
        self.b1.copy_from_slice(&flat[hp..hp + self.hidden]);
        self.w2
            .copy_from_slice(&flat[hp + self.hidden..hp + 2 * self.hidden]);
        self.b2 = flat[hp + 2 * self.hidden];
    }
}

pub fn mlp_forward(net: &CompensatorNet, window: &[f64]) -> f64 {
    net.forward(window)
}

/// Builds a two-hidden-unit network that reproduces the linear predictor
/// exactly: `LReLU(z) - LReLU(-z) = (1 + slope) z`, so with rows `+a`/`-a`
/// and output weights `+-1/(1 + slope)` both units carry signal while the
/// realized map stays `a^T u + b`.
pub fn init_from_linear(params: &ExtrapolatorParams, leaky_slope: f64) -> CompensatorNet {
    let p = params.coeffs.len();
    let scale = 1.0 / (1.0 + leaky_slope);
    let mut w1 = Vec::with_capacity(2 * p);
    w1.extend(params.coeffs.iter().copied());
    w1.extend(params.coeffs.iter().map(|a| -a));
    CompensatorNet {
        inputs: p,
        hidden: 2,
        w1,
        b1: vec![0.0; 2],
        w2: vec![scale, -scale],
        b2: params.bias,
        leaky_slope,
        activation: Activation::LeakyRelu,
    }
}

/// One supervised pair: `input` holds `p` consecutive samples newest-first,
/// `target` is the sample `k` steps after the newest input entry.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub input: Vec<f64>,
    pub target: f64,
}

/// Sliding-window samples over one contiguous recorded signal. Returns the
/// empty set when the signal is too short, which makes the trainer skip the
/// cycle.
pub fn build_training_set(
    signal: &[f64],
    window_len: usize,
    delay_steps: usize,
    max_samples: usize,
) -> Vec<TrainingSample> {
    let p = window_len;
    let k = delay_steps;
    if p == 0 || signal.len() < p + k {
        return Vec::new();
    }
    let mut samples = Vec::new();
    // newest window entry sits at index e; target is e + k
    for e in (p - 1)..(signal.len() - k) {
        let input: Vec<f64> = (0..p).map(|i| signal[e - i]).collect();
        samples.push(TrainingSample {
            input,
            target: signal[e + k],
        });
    }
    if samples.len() > max_samples {
        let skip = samples.len() - max_samples;
        samples.drain(..skip);
    }
    samples
}

/// Mean-squared-error training setup: Adam constants, epoch/batch sizing,
/// and the online-trigger schedule.
#[derive(Clone, Debug)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// 0 means full-batch.
    pub batch_size: usize,
    /// Retrain every this many newly sent samples.
    pub trigger_every: usize,
    /// Most recent samples kept in the training buffer.
    pub max_samples: usize,
    /// Macro steps between a trigger and the weight hand-off.
    pub apply_delay_steps: usize,
    /// Fixed trigger/application schedule for reproducible runs.
    pub deterministic: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 300,
            batch_size: 64,
            trigger_every: 5000,
            max_samples: 6000,
            apply_delay_steps: 1000,
            deterministic: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, window_len: usize, delay_steps: usize) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
        ];
        for (name, value) in positive {
            if value <= 0.0 || !value.is_finite() {
                return Err(CoreError::InvalidParams(format!(
                    "trainer {name} must be positive"
                )));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(CoreError::InvalidParams(
                "trainer moment decays must be < 1".into(),
            ));
        }
        if self.epochs == 0 || self.trigger_every == 0 || self.apply_delay_steps == 0 {
            return Err(CoreError::InvalidParams(
                "trainer epochs, trigger_every and apply_delay_steps must be positive".into(),
            ));
        }
        if self.max_samples < window_len + delay_steps + 1 {
            return Err(CoreError::InvalidParams(format!(
                "trainer max_samples must be at least p + k + 1 = {}",
                window_len + delay_steps + 1
            )));
        }
        Ok(())
    }
}

/// Training-set cost `C(w) = (1/N) sum (f(x_i) - y_i)^2`.
pub fn mse_cost(net: &CompensatorNet, samples: &[TrainingSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| {
            let e = net.forward(&s.input) - s.target;
            e * e
        })
        .sum::<f64>()
        / samples.len() as f64
}

pub struct TrainOutcome {
    pub net: CompensatorNet,
    pub cost_before: f64,
    pub cost_after: f64,
    /// False when the candidate weights were rejected (worse or non-finite
    /// cost) and the previous weights kept.
    pub accepted: bool,
}

/// Gradient of [`mse_cost`] with respect to the flattened parameters
/// (same layout as [`CompensatorNet::parameters`]).
pub fn cost_gradient(net: &CompensatorNet, samples: &[TrainingSample]) -> Vec<f64> {
    let mut grad = vec![0.0; net.parameter_count()];
    let mut z = vec![0.0; net.hidden];
    if samples.is_empty() {
        return grad;
    }
    let scale = 1.0 / samples.len() as f64;
    for sample in samples {
        accumulate_gradient(net, sample, scale, &mut z, &mut grad);
    }
    grad
}

fn accumulate_gradient(
    net: &CompensatorNet,
    sample: &TrainingSample,
    scale: f64,
    z: &mut [f64],
    grad: &mut [f64],
) {
    net.hidden_pre(&sample.input, z);
    let out = net
        .w2
        .iter()
        .zip(z.iter())
        .map(|(w, &zi)| w * net.act(zi))
        .sum::<f64>()
        + net.b2;
    let e = 2.0 * (out - sample.target) * scale;
    let p = net.inputs;
    let h = net.hidden;
    let (gw1, rest) = grad.split_at_mut(h * p);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(h);
    gb2[0] += e;
    for i in 0..h {
        gw2[i] += e * net.act(z[i]);
        let dz = e * net.w2[i] * net.act_grad(z[i]);
        gb1[i] += dz;
        for j in 0..p {
            gw1[i * p + j] += dz * sample.input[j];
        }
    }
}

/// Minimizes the MSE cost with Adam. A result that does not improve the
/// cost on the training set (or is non-finite) is discarded and the old
/// weights kept, so the returned network never scores worse than the input.
pub fn train(
    net: &CompensatorNet,
    samples: &[TrainingSample],
    cfg: &TrainerConfig,
    seed: u64,
) -> TrainOutcome {
    let cost_before = mse_cost(net, samples);
    if samples.is_empty() {
        return TrainOutcome {
            net: net.clone(),
            cost_before,
            cost_after: cost_before,
            accepted: false,
        };
    }

    let n_params = net.parameter_count();
    let mut flat = net.parameters();
    let mut work = net.clone();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut z = vec![0.0; net.hidden];
    let mut t = 0u32;

    let full_batch = cfg.batch_size == 0 || cfg.batch_size >= samples.len();
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _ in 0..cfg.epochs {
        if !full_batch {
            indices.shuffle(&mut rng);
        }
        let chunk = if full_batch {
            samples.len()
        } else {
            cfg.batch_size
        };
        for batch in indices.chunks(chunk) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                accumulate_gradient(&work, &samples[idx], scale, &mut z, &mut grad);
            }
            t += 1;
            let bc1 = 1.0 - cfg.beta1.powi(t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(t as i32);
            for i in 0..n_params {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                flat[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            work.set_parameters(&flat);
        }
    }

    let cost_after = mse_cost(&work, samples);
    if cost_after.is_finite() && cost_after <= cost_before {
        TrainOutcome {
            net: work,
            cost_before,
            cost_after,
            accepted: true,
        }
    } else {
        TrainOutcome {
            net: net.clone(),
            cost_before,
            cost_after,
            accepted: false,
        }
    }
}

/// Writes network weights as a flat text table, one value per line, in
/// row-major layer order: W1 rows, b1, w2, b2. Lines starting with `#` are
/// comments.
pub fn write_weights<W: std::io::Write>(net: &CompensatorNet, out: &mut W) -> std::io::Result<()> {
    writeln!(
        out,
        "# compensator network weights: {} inputs, {} hidden",
        net.inputs, net.hidden
    )?;
    writeln!(out, "# order: w1 row-major, b1, w2, b2")?;
    for value in net.parameters() {
        writeln!(out, "{value}")?;
    }
    Ok(())
}

/// Reads weights written by [`write_weights`]. Shape comes from the caller.
pub fn read_weights<R: std::io::BufRead>(
    reader: R,
    inputs: usize,
    hidden: usize,
    leaky_slope: f64,
    activation: Activation,
) -> Result<CompensatorNet> {
    let mut values = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| CoreError::InvalidParams(format!("weight file: {e}")))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let value: f64 = trimmed
            .parse()
            .map_err(|_| CoreError::InvalidParams(format!("bad weight value '{trimmed}'")))?;
        values.push(value);
    }
    let mut net = CompensatorNet::zeros(inputs, hidden, leaky_slope, activation);
    let expected = net.parameter_count();
    if values.len() != expected {
        return Err(CoreError::InvalidParams(format!(
            "weight file holds {} values, expected {expected}",
            values.len()
        )));
    }
    net.set_parameters(&values);
    Ok(net)
}

/// A compensator instance attached to one coupling input.
#[derive(Clone, Debug)]
pub enum Compensator {
    /// Deliver the delayed sample unchanged (trivial ZOH compensation).
    Passthrough,
    /// Linear slope continuation over the delay horizon.
    FohDelay(ExtrapolatorParams),
    /// General linear autoregressive extrapolator.
    LinearAr(ExtrapolatorParams),
    /// Feedforward network, optionally retrained online.
    Network(CompensatorNet),
}

impl Compensator {
    pub fn foh_for_delay(delay_steps: usize, window_len: usize) -> Result<Self> {
        Ok(Self::FohDelay(ExtrapolatorParams::foh_for_delay(
            delay_steps,
            window_len,
        )?))
    }

    /// Window length this compensator expects, if it cares.
    pub fn window_len(&self) -> Option<usize> {
        match self {
            Compensator::Passthrough => None,
            Compensator::FohDelay(p) | Compensator::LinearAr(p) => Some(p.coeffs.len()),
            Compensator::Network(n) => Some(n.inputs),
        }
    }

    pub fn predict(&self, window: &[f64]) -> f64 {
        match self {
            Compensator::Passthrough => window[0],
            Compensator::FohDelay(p) | Compensator::LinearAr(p) => p.extrapolate(window),
            Compensator::Network(n) => n.forward(window),
        }
    }

    pub fn network(&self) -> Option<&CompensatorNet> {
        match self {
            Compensator::Network(n) => Some(n),
            _ => None,
        }
    }

    pub fn network_mut(&mut self) -> Option<&mut CompensatorNet> {
        match self {
            Compensator::Network(n) => Some(n),
            _ => None,
        }
    }
}
