//! Dense feed-forward networks with exact reverse-mode gradients and Adam.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Initialization
//! draws, for each layer from input to output, every weight in row-major order
//! followed by every bias. This order is part of the environment file contract.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    /// `exp(-z^2)`
    Gaussian,
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Gaussian,
        Activation::Tanh,
        Activation::Relu,
        Activation::Linear,
    ];

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Gaussian => (-z * z).exp(),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Gaussian => -2.0 * z * y,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gaussian => "gaussian",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Activation::Gaussian),
            "tanh" => Ok(Activation::Tanh),
            "relu" | "rectifier" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Parameter distribution used by [`Mlp::init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// Weights and biases i.i.d. `N(0, 1)`.
    StandardNormal,
    /// Weights and biases i.i.d. `U(-gain/sqrt(fan_in), gain/sqrt(fan_in))`.
    FanInUniform { gain: f64 },
    /// All zeros; consumes no randomness.
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) activation: Activation,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        check_dim("layer weights", in_dim * out_dim, weights.len())?;
        check_dim("layer bias", out_dim, bias.len())?;
        Ok(Layer {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Multilayer perceptron.
///
/// Each instance carries an identity and a generation counter bumped on every
/// parameter update, so a [`ForwardCache`] produced before an update (or by a
/// different network) is rejected by [`Mlp::backward`].
#[derive(Debug)]
pub struct Mlp {
    layers: Vec<Layer>,
    id: u64,
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Mlp {
            layers: self.layers.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer values recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    generation: u64,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().map_or(&self.input, Vec::as_slice)
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("layer chain", pair[0].out_dim, pair[1].in_dim)?;
        }
        Ok(Mlp {
            layers,
            id: fresh_id(),
            generation: 0,
        })
    }

    /// Build a network from `sizes = [input, width_1, ..., width_L]` with one
    /// activation per layer.
    pub fn init(
        sizes: &[usize],
        activations: &[Activation],
        weight_init: WeightInit,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        check_dim("activation list", sizes.len() - 1, activations.len())?;
        let mut layers = Vec::with_capacity(activations.len());
        for (dims, &activation) in sizes.windows(2).zip(activations) {
            let (in_dim, out_dim) = (dims[0], dims[1]);
            let draw = |rng: &mut RngStream| match weight_init {
                WeightInit::StandardNormal => rng.standard_normal(),
                WeightInit::FanInUniform { gain } => {
                    let bound = gain / (in_dim as f64).sqrt();
                    rng.uniform_in(-bound, bound)
                }
                WeightInit::Zeros => 0.0,
            };
            let weights: Vec<f64> = (0..in_dim * out_dim).map(|_| draw(rng)).collect();
            let bias: Vec<f64> = (0..out_dim).map(|_| draw(rng)).collect();
            layers.push(Layer::new(in_dim, out_dim, weights, bias, activation)?);
        }
        Mlp::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to parameters; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Forward pass without recording intermediates.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut current = x.to_vec();
        for layer in &self.layers {
            current = affine(layer, &current)
                .into_iter()
                .map(|z| layer.activation.apply(z))
                .collect();
        }
        Ok(current)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_dim("network input", self.input_dim(), x.len())?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().map_or(x, Vec::as_slice);
            let z = affine(layer, input);
            let y: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(y);
        }
        let output = post.last().cloned().unwrap_or_default();
        Ok((
            output,
            ForwardCache {
                net_id: self.id,
                generation: self.generation,
                input: x.to_vec(),
                pre,
                post,
            },
        ))
    }

    /// Gradients of `<output_grad, y>` with respect to all parameters.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<GradientSet> {
        if cache.net_id != self.id || cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        check_dim("output gradient", self.output_dim(), output_grad.len())?;
        let mut grads = GradientSet::zeros_like(self);
        let mut upstream = output_grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&cache.pre[idx])
                .zip(&cache.post[idx])
                .map(|((g, &z), &y)| g * layer.activation.derivative(z, y))
                .collect();
            let input = if idx == 0 {
                &cache.input
            } else {
                &cache.post[idx - 1]
            };
            let entry = &mut grads.layers[idx];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut entry.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &xi) in row.iter_mut().zip(input) {
                    *w = d * xi;
                }
            }
            entry.bias.copy_from_slice(&delta);
            if idx > 0 {
                let mut next = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, &w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                upstream = next;
            }
        }
        Ok(grads)
    }

    fn apply_update(&mut self, mut f: impl FnMut(usize, bool, usize, &mut f64)) {
        self.generation += 1;
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (i, w) in layer.weights.iter_mut().enumerate() {
                f(li, false, i, w);
            }
            for (i, b) in layer.bias.iter_mut().enumerate() {
                f(li, true, i, b);
            }
        }
    }
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    layer
        .weights
        .chunks_exact(layer.in_dim)
        .zip(&layer.bias)
        .map(|(row, b)| crate::matrix::dot(row, x) + b)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer gradients shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_congruent(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// `self += scale * other`. Shapes must agree.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values().copied().collect()
    }
}

/// Scale a group of gradient sets so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_joint_norm(grads: &mut [&mut GradientSet], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.squared_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / (norm + 1e-6);
        for g in grads.iter_mut() {
            g.scale(factor);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: GradientSet,
    pub second_moment: GradientSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: GradientSet::zeros_like(net),
            second_moment: GradientSet::zeros_like(net),
            step: 0,
        }
    }

    /// Apply one descent step to `net`. Rejects mis-shaped or non-finite
    /// gradients without touching any state.
    pub fn step(&mut self, net: &mut Mlp, grads: &GradientSet) -> Result<()> {
        if !grads.is_congruent(net)
            || !self.first_moment.is_congruent(net)
            || !self.second_moment.is_congruent(net)
        {
            return Err(Error::DimensionMismatch {
                context: "adam parameter shapes",
                expected: net.parameter_count(),
                actual: grads.values().count(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let m = &mut self.first_moment;
        let v = &mut self.second_moment;
        net.apply_update(|li, is_bias, i, param| {
            let (g, m, v) = if is_bias {
                (
                    grads.layers[li].bias[i],
                    &mut m.layers[li].bias[i],
                    &mut v.layers[li].bias[i],
                )
            } else {
                (
                    grads.layers[li].weights[i],
                    &mut m.layers[li].weights[i],
                    &mut v.layers[li].weights[i],
                )
            };
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *param -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn single(w: Vec<f64>, b: Vec<f64>, act: Activation) -> Mlp {
        let in_dim = w.len() / b.len();
        Mlp::from_layers(vec![Layer::new(in_dim, b.len(), w, b, act).unwrap()]).unwrap()
    }

    #[test]
    fn gaussian_zero_preactivation_is_one() {
        let net = single(vec![0.0], vec![0.0], Activation::Gaussian);
        assert_eq!(net.predict(&[5.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn gaussian_unit_input() {
        let net = single(vec![1.0], vec![0.0], Activation::Gaussian);
        assert_eq!(net.predict(&[1.0]).unwrap(), vec![(-1.0f64).exp()]);
    }

    #[test]
    fn linear_symmetric_cancellation() {
        let net = single(vec![1.0, 1.0], vec![0.0], Activation::Linear);
        assert_eq!(net.predict(&[0.5, -0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn init_shapes_follow_table_row() {
        let mut rng = derive_stream(1, "fs");
        let net = Mlp::init(
            &[100, 10, 10, 10],
            &[Activation::Gaussian, Activation::Gaussian, Activation::Linear],
            WeightInit::StandardNormal,
            &mut rng,
        )
        .unwrap();
        assert_eq!(net.input_dim(), 100);
        assert_eq!(net.output_dim(), 10);
        assert_eq!(net.layers().len(), 3);
        assert_eq!(net.parameter_count(), 100 * 10 + 10 + 2 * (10 * 10 + 10));
    }

    #[test]
    fn init_is_deterministic() {
        let build = || {
            Mlp::init(
                &[100, 10, 10, 10],
                &[Activation::Gaussian; 3],
                WeightInit::StandardNormal,
                &mut derive_stream(9, "fs"),
            )
            .unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn init_draw_order_is_weights_then_bias() {
        let mut rng = derive_stream(3, "order");
        let net = Mlp::init(
            &[2, 2, 1],
            &[Activation::Tanh, Activation::Linear],
            WeightInit::StandardNormal,
            &mut rng.clone(),
        )
        .unwrap();
        let expected: Vec<f64> = (0..9).map(|_| rng.standard_normal()).collect();
        let mut flat = Vec::new();
        for l in net.layers() {
            flat.extend_from_slice(l.weights());
            flat.extend_from_slice(l.bias());
        }
        assert_eq!(flat, expected);
    }

    #[test]
    fn standard_normal_init_moments() {
        let mut rng = derive_stream(11, "moments");
        let net = Mlp::init(
            &[100, 100],
            &[Activation::Linear],
            WeightInit::StandardNormal,
            &mut rng,
        )
        .unwrap();
        let w = net.layers()[0].weights();
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn init_rejects_bad_shapes() {
        let mut rng = derive_stream(0, "x");
        assert!(Mlp::init(&[3], &[], WeightInit::Zeros, &mut rng).is_err());
        assert!(Mlp::init(&[3, 0], &[Activation::Linear], WeightInit::Zeros, &mut rng).is_err());
        assert!(Mlp::init(&[3, 2], &[], WeightInit::Zeros, &mut rng).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = single(vec![1.0, 1.0], vec![0.0], Activation::Linear);
        assert!(matches!(
            net.predict(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = derive_stream(2, "net");
        let net = Mlp::init(
            &[4, 5, 3],
            &[Activation::Gaussian, Activation::Tanh],
            WeightInit::StandardNormal,
            &mut rng,
        )
        .unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g = net.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        let net = single(
            vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4],
            vec![0.1, 0.2],
            Activation::Linear,
        );
        let x = [1.0, -2.0, 0.5];
        let g = [0.25, -1.5];
        let (_, cache) = net.forward(&x).unwrap();
        let grads = net.backward(&cache, &g).unwrap();
        let expected: Vec<f64> = g
            .iter()
            .flat_map(|gi| x.iter().map(move |xj| gi * xj))
            .collect();
        assert_eq!(grads.layers[0].weights, expected);
        assert_eq!(grads.layers[0].bias, g.to_vec());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = single(vec![1.0], vec![0.0], Activation::Tanh);
        let (_, cache) = net.forward(&[0.5]).unwrap();
        let other = net.clone();
        assert!(matches!(other.backward(&cache, &[1.0]), Err(Error::StaleCache)));
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let grads = net.backward(&cache, &[1.0]).unwrap();
        adam.step(&mut net, &grads).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut net = single(vec![0.5, -0.5], vec![0.1], Activation::Linear);
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        // seed non-zero moments first
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].weights[0] = 1.0;
        adam.step(&mut net, &g).unwrap();
        let after_one = net.clone();
        let m_before = adam.first_moment.layers[0].weights[0];
        let v_before = adam.second_moment.layers[0].weights[0];
        let zeros = GradientSet::zeros_like(&net);
        adam.step(&mut net, &zeros).unwrap();
        assert_eq!(adam.step, 2);
        assert!(adam.first_moment.layers[0].weights[0] < m_before);
        assert!(adam.second_moment.layers[0].weights[0] < v_before);
        // untouched coordinates never move
        assert_eq!(net.layers()[0].weights()[1], before.layers()[0].weights()[1]);
        assert_eq!(net.layers()[0].bias(), before.layers()[0].bias());
        let _ = after_one;

        let mut fresh = single(vec![0.5, -0.5], vec![0.1], Activation::Linear);
        let snapshot = fresh.clone();
        let mut adam = AdamState::new(&fresh, AdamConfig::default());
        let zeros = GradientSet::zeros_like(&snapshot);
        adam.step(&mut fresh, &zeros).unwrap();
        assert_eq!(fresh, snapshot);
    }

    #[test]
    fn adam_moves_against_gradient_sign() {
        let mut net = single(vec![0.0], vec![0.0], Activation::Linear);
        let mut adam = AdamState::new(&net, AdamConfig::with_learning_rate(1e-2));
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].weights[0] = 0.3;
        g.layers[0].bias[0] = -2.0;
        for _ in 0..100 {
            adam.step(&mut net, &g).unwrap();
        }
        assert!(net.layers()[0].weights()[0] < 0.0);
        assert!(net.layers()[0].bias()[0] > 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_and_mismatched() {
        let mut net = single(vec![0.0], vec![0.0], Activation::Linear);
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let mut g = GradientSet::zeros_like(&net);
        g.layers[0].weights[0] = f64::NAN;
        assert!(matches!(adam.step(&mut net, &g), Err(Error::NonFinite(_))));
        assert_eq!(adam.step, 0);
        let other = single(vec![0.0, 0.0], vec![0.0], Activation::Linear);
        let g2 = GradientSet::zeros_like(&other);
        assert!(adam.step(&mut net, &g2).is_err());
    }

    #[test]
    fn clip_joint_norm_scales_down() {
        let net = single(vec![0.0, 0.0], vec![0.0], Activation::Linear);
        let mut a = GradientSet::zeros_like(&net);
        a.layers[0].weights = vec![3.0, 0.0];
        let mut b = GradientSet::zeros_like(&net);
        b.layers[0].bias = vec![4.0];
        let norm = clip_joint_norm(&mut [&mut a, &mut b], 0.5);
        assert_eq!(norm, 5.0);
        let after = (a.squared_norm() + b.squared_norm()).sqrt();
        assert!((after - 0.5).abs() < 1e-6);
    }
}
