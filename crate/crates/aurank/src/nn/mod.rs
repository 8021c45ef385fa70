//! Minimal differentiable feedforward engine: scalar-output dense networks,
//! reverse-mode gradients via a recorded forward trace, and SGD/Adam updates.
//!
//! All three models in the pipeline (pseudo-intensity, uncertainty, mapping)
//! are instances of [`NetworkParams`]; losses live with their stages and feed
//! `d loss / d output` into [`NetworkParams::backward`].

pub mod math;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTransform {
    Identity,
    /// Final scalar mapped through ln(1+e^z); output is strictly positive.
    Softplus,
}

/// Weights and biases of a scalar-output dense network.
///
/// Layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l+1]` outputs with a
/// row-major weight matrix (`out` rows of `in` columns). Hidden layers apply
/// `activation`; the final layer applies `output_transform` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub output_transform: OutputTransform,
}

/// Deterministic parameter initialization: weights uniform on
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn init_params(
    layer_sizes: &[usize],
    seed: u64,
    output_transform: OutputTransform,
) -> Result<NetworkParams> {
    init_params_with(layer_sizes, seed, Activation::Relu, output_transform)
}

pub fn init_params_with(
    layer_sizes: &[usize],
    seed: u64,
    activation: Activation,
    output_transform: OutputTransform,
) -> Result<NetworkParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "network needs at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::InvalidConfig(format!(
            "networks are scalar-output; final layer size must be 1, got {layer_sizes:?}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for l in 0..layer_sizes.len() - 1 {
        let fan_in = layer_sizes[l];
        let fan_out = layer_sizes[l + 1];
        let scale = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-scale, scale);
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }

    Ok(NetworkParams {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        activation,
        output_transform,
    })
}

/// Forward pass bookkeeping needed for reverse mode: per-layer pre-activations
/// and post-activations, plus the transformed scalar output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    output: f64,
}

impl ForwardTrace {
    pub fn output(&self) -> f64 {
        self.output
    }
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Checks shape chaining and value finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidConfig(format!(
                "bad layer sizes {:?}",
                self.layer_sizes
            )));
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidConfig(
                "final layer size must be 1".to_string(),
            ));
        }
        let n_layers = self.layer_sizes.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(Error::Shape(format!(
                "expected {n_layers} weight/bias layers, got {}/{}",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if self.weights[l].len() != fan_in * fan_out {
                return Err(Error::Shape(format!(
                    "layer {l}: weight len {} != {fan_out}x{fan_in}",
                    self.weights[l].len()
                )));
            }
            if self.biases[l].len() != fan_out {
                return Err(Error::Shape(format!(
                    "layer {l}: bias len {} != {fan_out}",
                    self.biases[l].len()
                )));
            }
            if self.weights[l].iter().chain(&self.biases[l]).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "layer {l} contains non-finite parameters"
                )));
            }
        }
        Ok(())
    }

    /// Scalar forward pass. With `Softplus` output the result is > 0.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        Ok(self.forward_traced(input)?.output)
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.layer_sizes[0] {
            return Err(Error::Shape(format!(
                "input len {} != network input dim {}",
                input.len(),
                self.layer_sizes[0]
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite network input".to_string()));
        }

        let n_layers = self.layer_sizes.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers);
        let mut current: &[f64] = input;

        for l in 0..n_layers {
            let fan_in = self.layer_sizes[l];
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                *zo += row.iter().zip(current).map(|(wi, xi)| wi * xi).sum::<f64>();
            }
            let a: Vec<f64> = if l + 1 == n_layers {
                z.clone() // output transform applied below
            } else {
                match self.activation {
                    Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                    Activation::Tanh => z.iter().map(|&v| v.tanh()).collect(),
                }
            };
            pre.push(z);
            post.push(a);
            current = post.last().unwrap();
        }

        let z_out = pre.last().unwrap()[0];
        let output = match self.output_transform {
            OutputTransform::Identity => z_out,
            OutputTransform::Softplus => math::softplus(z_out),
        };
        Ok(ForwardTrace {
            input: input.to_vec(),
            pre,
            post,
            output,
        })
    }

    /// Reverse-mode pass: accumulates `d_output * d output / d theta` into
    /// `tape` for every parameter. Call repeatedly (siamese arms, batches)
    /// before scaling and stepping.
    pub fn backward(&self, trace: &ForwardTrace, d_output: f64, tape: &mut GradientTape) -> Result<()> {
        if tape.weights.len() != self.weights.len() {
            return Err(Error::Shape("gradient tape does not match network".to_string()));
        }
        let n_layers = self.layer_sizes.len() - 1;
        if trace.pre.len() != n_layers || trace.input.len() != self.layer_sizes[0] {
            return Err(Error::Shape("forward trace does not match network".to_string()));
        }

        let z_out = trace.pre[n_layers - 1][0];
        let d_z_out = match self.output_transform {
            OutputTransform::Identity => d_output,
            OutputTransform::Softplus => d_output * math::sigmoid(z_out),
        };

        let mut d_z = vec![d_z_out];
        for l in (0..n_layers).rev() {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let prev: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };

            let w = &self.weights[l];
            let dw = &mut tape.weights[l];
            let db = &mut tape.biases[l];
            let mut d_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let g = d_z[o];
                db[o] += g;
                let row = o * fan_in;
                for i in 0..fan_in {
                    dw[row + i] += g * prev[i];
                    d_prev[i] += w[row + i] * g;
                }
            }

            if l > 0 {
                // chain through the hidden activation of layer l-1
                let z_prev = &trace.pre[l - 1];
                let a_prev = &trace.post[l - 1];
                d_z = match self.activation {
                    Activation::Relu => d_prev
                        .iter()
                        .zip(z_prev)
                        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                        .collect(),
                    Activation::Tanh => d_prev
                        .iter()
                        .zip(a_prev)
                        .map(|(&d, &a)| d * (1.0 - a * a))
                        .collect(),
                };
            }
        }
        Ok(())
    }
}

/// Per-parameter partials of a scalar loss; shapes mirror the owning network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTape {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientTape {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        GradientTape {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= c;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= c;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub step_count: u64,
    moment1: Option<GradientTape>,
    moment2: Option<GradientTape>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &NetworkParams) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let (m1, m2) = match kind {
            OptimizerKind::Sgd => (None, None),
            OptimizerKind::Adam { .. } => (
                Some(GradientTape::zeros_like(params)),
                Some(GradientTape::zeros_like(params)),
            ),
        };
        Ok(OptimizerState {
            kind,
            learning_rate,
            step_count: 0,
            moment1: m1,
            moment2: m2,
        })
    }

    /// One update. SGD: `p -= lr * g` exactly; Adam: bias-corrected moments.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &GradientTape) -> Result<()> {
        if grads.weights.len() != params.weights.len()
            || grads
                .weights
                .iter()
                .zip(&params.weights)
                .any(|(g, w)| g.len() != w.len())
            || grads
                .biases
                .iter()
                .zip(&params.biases)
                .any(|(g, b)| g.len() != b.len())
        {
            return Err(Error::Shape("gradient shapes do not match parameters".to_string()));
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                apply(params, grads, |p, g, _| *p -= lr * g);
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let m1 = self.moment1.as_mut().unwrap();
                let m2 = self.moment2.as_mut().unwrap();
                for l in 0..params.weights.len() {
                    adam_update(
                        &mut params.weights[l],
                        &grads.weights[l],
                        &mut m1.weights[l],
                        &mut m2.weights[l],
                        lr, beta1, beta2, epsilon, c1, c2,
                    );
                    adam_update(
                        &mut params.biases[l],
                        &grads.biases[l],
                        &mut m1.biases[l],
                        &mut m2.biases[l],
                        lr, beta1, beta2, epsilon, c1, c2,
                    );
                }
            }
        }
        Ok(())
    }
}

fn apply(params: &mut NetworkParams, grads: &GradientTape, mut f: impl FnMut(&mut f64, f64, usize)) {
    for l in 0..params.weights.len() {
        for (i, (p, &g)) in params.weights[l].iter_mut().zip(&grads.weights[l]).enumerate() {
            f(p, g, i);
        }
        for (i, (p, &g)) in params.biases[l].iter_mut().zip(&grads.biases[l]).enumerate() {
            f(p, g, i);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m1: &mut [f64],
    m2: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m1[i] / c1;
        let v_hat = m2[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(sizes: &[usize], transform: OutputTransform) -> NetworkParams {
        let mut p = init_params(sizes, 0, transform).unwrap();
        for w in &mut p.weights {
            w.fill(0.0);
        }
        p
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&[4, 8, 1], 7, OutputTransform::Identity).unwrap();
        let b = init_params(&[4, 8, 1], 7, OutputTransform::Identity).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_rejects_short_or_zero_sizes() {
        assert!(init_params(&[4], 0, OutputTransform::Identity).is_err());
        assert!(init_params(&[], 0, OutputTransform::Identity).is_err());
        assert!(init_params(&[4, 0, 1], 0, OutputTransform::Identity).is_err());
    }

    #[test]
    fn init_biases_are_zero() {
        let p = init_params(&[3, 5, 1], 0, OutputTransform::Identity).unwrap();
        assert!(p.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_weight_scale_respects_fan_in() {
        let p = init_params(&[100, 4, 1], 3, OutputTransform::Identity).unwrap();
        let bound = 1.0 / 10.0;
        assert!(p.weights[0].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn forward_zero_net_is_zero() {
        let p = zeroed(&[4, 3, 1], OutputTransform::Identity);
        assert_eq!(p.forward(&[1.0, -2.0, 3.5, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn forward_single_layer_dot_product() {
        let mut p = zeroed(&[2, 1], OutputTransform::Identity);
        p.weights[0] = vec![1.0, 1.0];
        assert_eq!(p.forward(&[3.0, 4.0]).unwrap(), 7.0);
    }

    #[test]
    fn forward_softplus_of_zero_preactivation() {
        let p = zeroed(&[2, 1], OutputTransform::Softplus);
        let out = p.forward(&[3.0, 4.0]).unwrap();
        assert!((out - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn forward_softplus_always_positive() {
        let p = init_params(&[4, 6, 1], 11, OutputTransform::Softplus).unwrap();
        let mut rng_vals = [-50.0, -3.0, 0.0, 3.0, 50.0];
        for &a in &rng_vals {
            for &b in &rng_vals {
                assert!(p.forward(&[a, b, a * b, a - b]).unwrap() > 0.0);
            }
        }
        rng_vals.reverse();
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = init_params(&[3, 1], 0, OutputTransform::Identity).unwrap();
        assert!(matches!(p.forward(&[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(
            p.forward(&[1.0, f64::NAN, 2.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn backward_linear_layer_gradient_is_input() {
        // loss = forward itself on a single linear layer
        let mut p = zeroed(&[3, 1], OutputTransform::Identity);
        p.weights[0] = vec![0.5, -0.25, 2.0];
        let input = [1.5, -2.0, 0.75];
        let trace = p.forward_traced(&input).unwrap();
        let mut tape = GradientTape::zeros_like(&p);
        p.backward(&trace, 1.0, &mut tape).unwrap();
        assert_eq!(tape.weights[0], input.to_vec());
        assert_eq!(tape.biases[0], vec![1.0]);
    }

    #[test]
    fn backward_dead_relu_gradient_is_zero() {
        // with a negative pre-activation, the unit's incoming weights get no gradient
        let mut p = zeroed(&[1, 2, 1], OutputTransform::Identity);
        p.weights[0] = vec![1.0, -1.0];
        p.weights[1] = vec![1.0, 1.0];
        let trace = p.forward_traced(&[2.0]).unwrap();
        let mut tape = GradientTape::zeros_like(&p);
        p.backward(&trace, 1.0, &mut tape).unwrap();
        assert_ne!(tape.weights[0][0], 0.0);
        assert_eq!(tape.weights[0][1], 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, transform, act) in [
            (1u64, OutputTransform::Identity, Activation::Tanh),
            (2, OutputTransform::Softplus, Activation::Tanh),
            (3, OutputTransform::Identity, Activation::Relu),
        ] {
            let p = init_params_with(&[4, 6, 5, 1], seed, act, transform).unwrap();
            let input = [0.3, -0.7, 1.1, 0.4];
            let trace = p.forward_traced(&input).unwrap();
            let mut tape = GradientTape::zeros_like(&p);
            p.backward(&trace, 1.0, &mut tape).unwrap();

            let h = 1e-5;
            let mut probes = 0;
            for l in 0..p.weights.len() {
                for i in 0..p.weights[l].len() {
                    let mut plus = p.clone();
                    plus.weights[l][i] += h;
                    let mut minus = p.clone();
                    minus.weights[l][i] -= h;
                    let numeric =
                        (plus.forward(&input).unwrap() - minus.forward(&input).unwrap()) / (2.0 * h);
                    let analytic = tape.weights[l][i];
                    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (analytic - numeric).abs() / scale <= 1e-4,
                        "seed {seed} layer {l} w{i}: {analytic} vs {numeric}"
                    );
                    probes += 1;
                }
            }
            assert!(probes > 30);
        }
    }

    #[test]
    fn sgd_step_is_exact() {
        let mut p = zeroed(&[1, 1], OutputTransform::Identity);
        p.weights[0] = vec![1.0];
        let mut g = GradientTape::zeros_like(&p);
        g.weights[0] = vec![2.0];
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, &p).unwrap();
        opt.step(&mut p, &g).unwrap();
        assert!((p.weights[0][0] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn sgd_zero_gradient_leaves_params_unchanged() {
        let mut p = init_params(&[3, 4, 1], 5, OutputTransform::Identity).unwrap();
        let before = p.clone();
        let g = GradientTape::zeros_like(&p);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.5, &p).unwrap();
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_magnitude() {
        let mut p = zeroed(&[1, 1], OutputTransform::Identity);
        p.weights[0] = vec![0.0];
        let mut g = GradientTape::zeros_like(&p);
        g.weights[0] = vec![1.0];
        let mut opt = OptimizerState::new(OptimizerKind::adam_default(), 1e-3, &p).unwrap();
        opt.step(&mut p, &g).unwrap();
        // hand-evaluated bias-corrected update at t = 1
        assert!((p.weights[0][0] - (-0.000_999_999_99)).abs() < 1e-9);
    }

    #[test]
    fn optimizer_rejects_mismatched_shapes() {
        let mut p = init_params(&[3, 1], 0, OutputTransform::Identity).unwrap();
        let other = init_params(&[4, 2, 1], 0, OutputTransform::Identity).unwrap();
        let g = GradientTape::zeros_like(&other);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, &p).unwrap();
        assert!(matches!(opt.step(&mut p, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn optimizer_rejects_non_positive_lr() {
        let p = init_params(&[3, 1], 0, OutputTransform::Identity).unwrap();
        assert!(OptimizerState::new(OptimizerKind::Sgd, 0.0, &p).is_err());
    }

    #[test]
    fn params_json_round_trip_is_bit_exact() {
        let p = init_params(&[5, 7, 3, 1], 42, OutputTransform::Softplus).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let back: NetworkParams = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        for (a, b) in p.weights.iter().flatten().zip(back.weights.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn training_steps_are_bit_deterministic() {
        let run = || {
            let mut p = init_params(&[3, 4, 1], 9, OutputTransform::Identity).unwrap();
            let mut opt = OptimizerState::new(OptimizerKind::adam_default(), 1e-2, &p).unwrap();
            for step in 0..25 {
                let input = [step as f64 * 0.1, 1.0, -0.5];
                let trace = p.forward_traced(&input).unwrap();
                let mut tape = GradientTape::zeros_like(&p);
                p.backward(&trace, trace.output() - 1.0, &mut tape).unwrap();
                opt.step(&mut p, &tape).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        for (x, y) in a.weights.iter().flatten().zip(b.weights.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
