//! Miniature U-Net segmentation network and its flat parameter view.
//!
//! The encoder has `depth` levels of two 3×3 conv blocks followed by 2×
//! max-pooling, then a two-block bottleneck, then a mirrored decoder that
//! upsamples (nearest neighbour), concatenates the matching skip and runs
//! two more conv blocks. Every 3×3 block is conv → bias → ReLU → dropout.
//! A 1×1 conv maps to class logits.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            num_classes: 3,
            base_channels: 8,
            depth: 2,
            dropout_rate: 0.2,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation("num_classes must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Validation(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Validation("weight_decay must be >= 0".into()));
        }
        if self.depth < 1 || self.in_channels < 1 || self.base_channels < 1 {
            return Err(Error::Validation(
                "depth, in_channels and base_channels must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForwardMode {
    /// Dropout on, used while fitting.
    Train,
    /// Dropout on at prediction time (MC dropout).
    EvalStochastic,
    /// No dropout.
    EvalDeterministic,
}

impl ForwardMode {
    fn dropout_active(self) -> bool {
        !matches!(self, ForwardMode::EvalDeterministic)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Where each named tensor lives inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

/// Flat view of all network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    kernel: usize,
}

fn architecture(config: &ModelConfig) -> Vec<(String, ConvSpec)> {
    let ch = |level: usize| config.base_channels << level;
    let conv3 = |cin, cout| ConvSpec {
        cin,
        cout,
        kernel: 3,
    };
    let mut convs = Vec::new();
    for level in 0..config.depth {
        let cin = if level == 0 { config.in_channels } else { ch(level - 1) };
        convs.push((format!("enc{level}.conv0"), conv3(cin, ch(level))));
        convs.push((format!("enc{level}.conv1"), conv3(ch(level), ch(level))));
    }
    convs.push(("bottleneck.conv0".into(), conv3(ch(config.depth - 1), ch(config.depth))));
    convs.push(("bottleneck.conv1".into(), conv3(ch(config.depth), ch(config.depth))));
    for level in (0..config.depth).rev() {
        convs.push((format!("dec{level}.conv0"), conv3(ch(level + 1) + ch(level), ch(level))));
        convs.push((format!("dec{level}.conv1"), conv3(ch(level), ch(level))));
    }
    convs.push((
        "head".into(),
        ConvSpec {
            cin: ch(0),
            cout: config.num_classes,
            kernel: 1,
        },
    ));
    convs
}

#[derive(Debug, Clone)]
pub struct SegNet {
    config: ModelConfig,
    convs: Vec<ConvSpec>,
    layout: ParamLayout,
    /// Interleaved `[kernel, bias]` per conv.
    params: Vec<Tensor>,
}

impl SegNet {
    /// He-initialised network; kernels ~ N(0, 2/fan_in), biases ~ U(±1/√fan_in).
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let arch = architecture(config);
        let mut rng = rng_from(config.seed);
        let mut params = Vec::with_capacity(2 * arch.len());
        let mut entries = Vec::with_capacity(2 * arch.len());
        let mut offset = 0;
        for (name, spec) in &arch {
            let fan_in = (spec.cin * spec.kernel * spec.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let kshape = vec![spec.cout, spec.cin, spec.kernel, spec.kernel];
            let klen: usize = kshape.iter().product();
            let kernel: Vec<f64> = (0..klen).map(|_| normal.sample(&mut rng)).collect();
            let bound = 1.0 / fan_in.sqrt();
            let bias: Vec<f64> = (0..spec.cout).map(|_| rng.random_range(-bound..bound)).collect();

            entries.push(ParamEntry {
                name: format!("{name}.weight"),
                shape: kshape.clone(),
                offset,
            });
            offset += klen;
            entries.push(ParamEntry {
                name: format!("{name}.bias"),
                shape: vec![spec.cout],
                offset,
            });
            offset += spec.cout;
            params.push(Tensor::new(kshape, kernel)?);
            params.push(Tensor::new(vec![spec.cout], bias)?);
        }
        Ok(Self {
            config: config.clone(),
            convs: arch.into_iter().map(|(_, s)| s).collect(),
            layout: ParamLayout {
                entries,
                total: offset,
            },
            params,
        })
    }

    /// Network with the architecture of `config` and the given parameters.
    pub fn from_params(config: &ModelConfig, theta: &ParamVector) -> Result<Self> {
        let mut net = Self::init(config)?;
        net.set_params(theta)?;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Parameter tensors, `[kernel, bias]` per conv in layout order.
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn flatten(&self) -> ParamVector {
        let mut flat = Vec::with_capacity(self.layout.total);
        for p in &self.params {
            flat.extend_from_slice(p.data());
        }
        ParamVector(flat)
    }

    pub fn set_params(&mut self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.layout.total {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, network needs {}",
                theta.len(),
                self.layout.total
            )));
        }
        for (p, entry) in self.params.iter_mut().zip(&self.layout.entries) {
            let len = p.len();
            p.data_mut().copy_from_slice(&theta.0[entry.offset..entry.offset + len]);
        }
        Ok(())
    }

    pub fn unflatten(&self, theta: &ParamVector) -> Result<Self> {
        let mut net = self.clone();
        net.set_params(theta)?;
        Ok(net)
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let (c, h, w) = image.chw()?;
        let factor = 1usize << self.config.depth;
        if c != self.config.in_channels {
            return Err(Error::Dimension(format!(
                "image has {c} channels, model expects {}",
                self.config.in_channels
            )));
        }
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Dimension(format!(
                "spatial dims {h}x{w} must be divisible by {factor}"
            )));
        }
        Ok(())
    }

    /// Records the network on `tape`. `param_vars` must hold the
    /// `[kernel, bias]` pairs in layout order.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        param_vars: &[Var],
        image: Var,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_input(tape.value(image))?;
        let rate = self.config.dropout_rate;
        let active = mode.dropout_active();
        let mut conv_idx = 0;
        let mut block = |tape: &mut Tape, x: Var, rng: &mut R| -> Result<Var> {
            let (k, b) = (param_vars[2 * conv_idx], param_vars[2 * conv_idx + 1]);
            conv_idx += 1;
            let y = tape.conv2d(x, k, 1, 1)?;
            let y = tape.add_channel_bias(y, b)?;
            let y = tape.relu(y);
            tape.dropout(y, rate, active, rng)
        };

        let mut x = image;
        let mut skips = Vec::with_capacity(self.config.depth);
        for _ in 0..self.config.depth {
            x = block(tape, x, rng)?;
            x = block(tape, x, rng)?;
            skips.push(x);
            x = tape.max_pool2(x)?;
        }
        x = block(tape, x, rng)?;
        x = block(tape, x, rng)?;
        for skip in skips.into_iter().rev() {
            x = tape.upsample2(x)?;
            x = tape.concat_channels(x, skip)?;
            x = block(tape, x, rng)?;
            x = block(tape, x, rng)?;
        }
        let head = self.convs.len() - 1;
        let y = tape.conv2d(x, param_vars[2 * head], 1, 0)?;
        tape.add_channel_bias(y, param_vars[2 * head + 1])
    }

    /// Logits `[C×H×W]` without recording gradients.
    pub fn forward<R: Rng + ?Sized>(&self, image: &Tensor, mode: ForwardMode, rng: &mut R) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let input = tape.constant(image.clone());
        let out = self.forward_on_tape(&mut tape, &vars, input, mode, rng)?;
        Ok(tape.value(out).clone())
    }

    /// Softmax probabilities `[C×H×W]`.
    pub fn predict_probs<R: Rng + ?Sized>(&self, image: &Tensor, mode: ForwardMode, rng: &mut R) -> Result<Tensor> {
        let logits = self.forward(image, mode, rng)?;
        let probs = crate::autodiff::softmax_columns(logits.data(), self.config.num_classes);
        Tensor::new(logits.shape().to_vec(), probs)
    }

    /// Mean pixel cross-entropy of one example and its gradient w.r.t. θ.
    pub fn example_loss_grad<R: Rng + ?Sized>(
        &self,
        example: &Example,
        mode: ForwardMode,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let input = tape.constant(example.image.clone());
        let logits = self.forward_on_tape(&mut tape, &vars, input, mode, rng)?;
        let loss = tape.softmax_cross_entropy(logits, &example.labels.as_usize())?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let mut flat = Vec::with_capacity(self.layout.total);
        for (v, p) in vars.iter().zip(&self.params) {
            flat.extend(grads.get_or_zeros(*v, p.len()));
        }
        Ok((value, flat))
    }

    /// Mean cross-entropy over all pixels of `batch` and its gradient.
    ///
    /// Example `i` draws its dropout masks from a stream derived from
    /// `(seed, i)`, so the result does not depend on thread scheduling.
    pub fn batch_loss_grad(&self, batch: &[&Example], mode: ForwardMode, seed: u64) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Usage("empty minibatch".into()));
        }
        let parts: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut rng = derived_rng(seed, "dropout", i as u64);
                self.example_loss_grad(ex, mode, &mut rng)
            })
            .collect::<Result<_>>()?;
        let inv = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.layout.total];
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        grad.iter_mut().for_each(|v| *v *= inv);
        Ok((loss * inv, grad))
    }
}

/// `(λ/2)·‖θ‖²` and its gradient `λ·θ`.
pub fn l2_penalty(theta: &[f64], weight_decay: f64) -> (f64, Vec<f64>) {
    let value = 0.5 * weight_decay * theta.iter().map(|v| v * v).sum::<f64>();
    (value, theta.iter().map(|v| weight_decay * v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::check_gradients;
    use crate::tensor::LabelField;
    use proptest::prelude::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            base_channels: 2,
            depth: 1,
            dropout_rate: 0.2,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        Tensor::new(vec![1, h, w], (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn same_seed_same_params() {
        let a = SegNet::init(&ModelConfig::default()).unwrap().flatten();
        let b = SegNet::init(&ModelConfig::default()).unwrap().flatten();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ_almost_everywhere() {
        let a = SegNet::init(&ModelConfig::default()).unwrap().flatten();
        let other = ModelConfig {
            seed: 1,
            ..ModelConfig::default()
        };
        let b = SegNet::init(&other).unwrap().flatten();
        let differing = a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count();
        assert!(differing as f64 >= 0.99 * a.len() as f64);
    }

    #[test]
    fn output_shape_matches_classes() {
        let net = SegNet::init(&ModelConfig::default()).unwrap();
        let mut rng = rng_from(0);
        let out = net
            .forward(&image(32, 32, 1), ForwardMode::EvalDeterministic, &mut rng)
            .unwrap();
        assert_eq!(out.shape(), &[3, 32, 32]);
        assert!(out.is_finite());
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let net = SegNet::init(&ModelConfig::default()).unwrap();
        let mut rng = rng_from(0);
        let err = net.forward(&image(30, 32, 1), ForwardMode::EvalDeterministic, &mut rng);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            ModelConfig {
                num_classes: 1,
                ..ModelConfig::default()
            },
            ModelConfig {
                dropout_rate: 1.0,
                ..ModelConfig::default()
            },
            ModelConfig {
                weight_decay: -1.0,
                ..ModelConfig::default()
            },
            ModelConfig {
                depth: 0,
                ..ModelConfig::default()
            },
        ] {
            assert!(SegNet::init(&bad).is_err());
        }
    }

    #[test]
    fn zero_dropout_stochastic_equals_deterministic() {
        let cfg = ModelConfig {
            dropout_rate: 0.0,
            ..tiny()
        };
        let net = SegNet::init(&cfg).unwrap();
        let x = image(8, 8, 2);
        let a = net.forward(&x, ForwardMode::EvalStochastic, &mut rng_from(1)).unwrap();
        let b = net.forward(&x, ForwardMode::EvalDeterministic, &mut rng_from(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_forward_is_repeatable() {
        let net = SegNet::init(&tiny()).unwrap();
        let x = image(8, 8, 2);
        let a = net.forward(&x, ForwardMode::EvalDeterministic, &mut rng_from(1)).unwrap();
        let b = net.forward(&x, ForwardMode::EvalDeterministic, &mut rng_from(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stochastic_forward_varies_with_rng() {
        let net = SegNet::init(&tiny()).unwrap();
        let x = image(8, 8, 2);
        let a = net.forward(&x, ForwardMode::EvalStochastic, &mut rng_from(1)).unwrap();
        let b = net.forward(&x, ForwardMode::EvalStochastic, &mut rng_from(2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn l2_penalty_cases() {
        assert_eq!(l2_penalty(&[3.0, 4.0], 0.0).0, 0.0);
        let (v, g) = l2_penalty(&[3.0, 4.0], 2.0);
        assert_eq!(v, 25.0);
        assert_eq!(g, vec![6.0, 8.0]);
    }

    #[test]
    fn l2_penalty_gradient_matches_finite_differences() {
        let theta = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.01]).unwrap();
        let lambda = 0.7;
        let (_, analytic) = l2_penalty(theta.data(), lambda);
        let h = 1e-6;
        for j in 0..4 {
            let mut up = theta.data().to_vec();
            let mut down = theta.data().to_vec();
            up[j] += h;
            down[j] -= h;
            let fd = (l2_penalty(&up, lambda).0 - l2_penalty(&down, lambda).0) / (2.0 * h);
            assert!((fd - analytic[j]).abs() / (fd.abs() + 1e-8) < 1e-6);
        }
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            base_channels: 2,
            depth: 2,
            dropout_rate: 0.2,
            seed: 5,
            ..ModelConfig::default()
        };
        let net = SegNet::init(&cfg).unwrap();
        let x = image(8, 8, 4);
        let labels: Vec<usize> = (0..64).map(|i| (i / 7) % 3).collect();
        let check = check_gradients(&net.params, 1e-5, |tape, vars| {
            let mut rng = rng_from(11);
            let input = tape.constant(x.clone());
            let logits = net.forward_on_tape(tape, vars, input, ForwardMode::Train, &mut rng)?;
            tape.softmax_cross_entropy(logits, &labels)
        })
        .unwrap();
        assert_eq!(check.coordinates, net.num_params());
        assert!(check.max_rel_err < 1e-4, "{check:?}");
    }

    #[test]
    fn batch_gradient_is_mean_of_example_gradients() {
        let net = SegNet::init(&tiny()).unwrap();
        let examples: Vec<Example> = (0..3)
            .map(|s| Example {
                image: image(8, 8, s),
                labels: LabelField::new(8, 8, (0..64).map(|i| ((i + s as usize) % 3) as u8).collect()).unwrap(),
            })
            .collect();
        let refs: Vec<&Example> = examples.iter().collect();
        let (loss, grad) = net.batch_loss_grad(&refs, ForwardMode::EvalDeterministic, 0).unwrap();
        let mut mean_loss = 0.0;
        let mut mean_grad = vec![0.0; net.num_params()];
        for ex in &examples {
            let (l, g) = net
                .example_loss_grad(ex, ForwardMode::EvalDeterministic, &mut rng_from(0))
                .unwrap();
            mean_loss += l / 3.0;
            mean_grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / 3.0);
        }
        assert!((loss - mean_loss).abs() < 1e-12);
        for (a, b) in grad.iter().zip(&mean_grad) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn flatten_unflatten_roundtrip(seed in 0u64..1000) {
            let net = SegNet::init(&tiny()).unwrap();
            let mut rng = rng_from(seed);
            let v = ParamVector((0..net.num_params()).map(|_| rng.random_range(-3.0..3.0)).collect());
            let back = net.unflatten(&v).unwrap().flatten();
            prop_assert_eq!(back, v);
        }
    }
}
