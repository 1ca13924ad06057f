use super::loss::{loss_and_output_gradient, BatchLoss, LossKind};
use super::{Activation, AutonetError, Scalar};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shape and activation of one fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

/// `z = f(W x + b)` with `W` stored as `output_dim × input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Scalar> DenseLayer<F> {
    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            input_dim: self.weights.ncols(),
            output_dim: self.weights.nrows(),
            activation: self.activation,
        }
    }
}

/// Hidden widths and activations for a symmetric-or-not autoencoder body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    /// Widths between input and output, e.g. `[512, 128, 64, 128, 512]`.
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub final_activation: Activation,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 128, 64, 128, 512],
            hidden_activation: Activation::Selu,
            final_activation: Activation::Relu,
        }
    }
}

impl ArchitectureConfig {
    /// Mirrored body `widths ++ [bottleneck] ++ reverse(widths)`.
    pub fn mirrored(widths: &[usize], bottleneck: usize) -> Self {
        let mut hidden = widths.to_vec();
        hidden.push(bottleneck);
        hidden.extend(widths.iter().rev());
        Self {
            hidden,
            ..Self::default()
        }
    }

    pub fn layer_specs(&self, input_dim: usize) -> Vec<LayerSpec> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend(&self.hidden);
        dims.push(input_dim);
        let last = dims.len() - 2;
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                input_dim: w[0],
                output_dim: w[1],
                activation: if i == last {
                    self.final_activation
                } else {
                    self.hidden_activation
                },
            })
            .collect()
    }
}

/// Initial bias of a ReLU output layer. With zero biases a sizeable share of
/// output units start (and stay) at zero on small inputs.
pub const RELU_OUTPUT_BIAS: f64 = 1.0;

/// Dense feed-forward autoencoder `R^n -> R^d -> R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<F> {
    layers: Vec<DenseLayer<F>>,
    bottleneck: usize,
}

/// Per-layer gradients `(dW, db)` in layer order.
pub type Gradients<F> = Vec<(Array2<F>, Array1<F>)>;

/// Dropout masks applied during a training-mode forward pass.
pub(crate) struct Dropout {
    pub input: f64,
    pub bottleneck: f64,
}

struct Trace<F> {
    /// Input to each layer, after any dropout.
    inputs: Vec<Array2<F>>,
    pre_activations: Vec<Array2<F>>,
    /// Scaled keep-mask applied to the bottleneck output, if any.
    bottleneck_mask: Option<Array2<F>>,
    output: Array2<F>,
}

fn bottleneck_index(specs: &[LayerSpec]) -> usize {
    specs
        .iter()
        .enumerate()
        .min_by_key(|(i, s)| (s.output_dim, *i))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn dropout_mask<F: Scalar>(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<F> {
    let keep = F::from_f64(1.0 / (1.0 - p)).unwrap();
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

impl<F: Scalar> Autoencoder<F> {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`. Biases
    /// start at zero, except a ReLU output layer whose biases start at
    /// [`RELU_OUTPUT_BIAS`] so no output unit begins dead.
    pub fn new(input_dim: usize, arch: &ArchitectureConfig, seed: u64) -> Result<Self, AutonetError> {
        let specs = arch.layer_specs(input_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<DenseLayer<F>> = specs
            .iter()
            .map(|s| {
                let limit = (6.0 / (s.input_dim + s.output_dim) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((s.output_dim, s.input_dim), || {
                    F::from_f64(rng.random_range(-limit..limit)).unwrap()
                });
                DenseLayer {
                    weights,
                    bias: Array1::zeros(s.output_dim),
                    activation: s.activation,
                }
            })
            .collect();
        if let Some(last) = layers.last_mut() {
            if last.activation == Activation::Relu {
                last.bias.fill(F::from_f64(RELU_OUTPUT_BIAS).unwrap());
            }
        }
        Self::from_layers(layers)
    }

    /// Validates chained dimensions and `first input = last output`.
    pub fn from_layers(layers: Vec<DenseLayer<F>>) -> Result<Self, AutonetError> {
        if layers.is_empty() {
            return Err(AutonetError::Shape("an autoencoder needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.nrows() == 0 || l.weights.ncols() == 0 {
                return Err(AutonetError::Shape(format!("layer {i} has a zero dimension")));
            }
            if l.bias.len() != l.weights.nrows() {
                return Err(AutonetError::Shape(format!(
                    "layer {i}: bias length {} != output dim {}",
                    l.bias.len(),
                    l.weights.nrows()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weights.nrows() != pair[1].weights.ncols() {
                return Err(AutonetError::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].weights.nrows(),
                    i + 1,
                    pair[1].weights.ncols()
                )));
            }
        }
        let n_in = layers[0].weights.ncols();
        let n_out = layers[layers.len() - 1].weights.nrows();
        if n_in != n_out {
            return Err(AutonetError::Shape(format!(
                "input dim {n_in} differs from output dim {n_out}"
            )));
        }
        let specs: Vec<LayerSpec> = layers.iter().map(DenseLayer::spec).collect();
        Ok(Self {
            bottleneck: bottleneck_index(&specs),
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.layers[self.bottleneck].weights.nrows()
    }

    /// Index of the layer whose output is the bottleneck code.
    pub fn bottleneck_layer(&self) -> usize {
        self.bottleneck
    }

    pub fn layers(&self) -> &[DenseLayer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<F>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(DenseLayer::spec).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    fn check_width(&self, width: usize) -> Result<(), AutonetError> {
        if width != self.input_dim() {
            return Err(AutonetError::Dimension {
                expected: self.input_dim(),
                found: width,
            });
        }
        Ok(())
    }

    /// Output and bottleneck code for a single input vector.
    pub fn forward(&self, x: &[F]) -> Result<(Vec<F>, Vec<F>), AutonetError> {
        self.check_width(x.len())?;
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        let (out, code) = self.forward_batch(batch)?;
        Ok((out.into_raw_vec_and_offset().0, code.into_raw_vec_and_offset().0))
    }

    /// Inference over a batch of rows: `(outputs, bottleneck codes)`.
    pub fn forward_batch(&self, x: ArrayView2<F>) -> Result<(Array2<F>, Array2<F>), AutonetError> {
        self.check_width(x.ncols())?;
        let mut a = x.to_owned();
        let mut code = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            if i == self.bottleneck {
                code = Some(z.clone());
            }
            a = z;
        }
        Ok((a, code.expect("bottleneck layer visited")))
    }

    /// Bottleneck codes only; skips the decoder half.
    pub fn encode_batch(&self, x: ArrayView2<F>) -> Result<Array2<F>, AutonetError> {
        self.check_width(x.ncols())?;
        let mut a = x.to_owned();
        for layer in &self.layers[..=self.bottleneck] {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            a = z;
        }
        Ok(a)
    }

    fn forward_trace(
        &self,
        x: ArrayView2<F>,
        dropout: Option<(&Dropout, &mut ChaCha8Rng)>,
    ) -> Trace<F> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut bottleneck_mask = None;
        let mut a = x.to_owned();
        let (dropout, mut rng) = match dropout {
            Some((d, rng)) => (Some(d), Some(rng)),
            None => (None, None),
        };
        if let (Some(d), Some(rng)) = (dropout, rng.as_deref_mut()) {
            if d.input > 0.0 {
                a *= &dropout_mask::<F>(a.dim(), d.input, rng);
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.bias;
            let mut out = z.mapv(|v| layer.activation.apply(v));
            if i == self.bottleneck && i + 1 < self.layers.len() {
                if let (Some(d), Some(rng)) = (dropout, rng.as_deref_mut()) {
                    if d.bottleneck > 0.0 {
                        let mask = dropout_mask::<F>(out.dim(), d.bottleneck, rng);
                        out *= &mask;
                        bottleneck_mask = Some(mask);
                    }
                }
            }
            inputs.push(a);
            pre_activations.push(z);
            a = out;
        }
        Trace {
            inputs,
            pre_activations,
            bottleneck_mask,
            output: a,
        }
    }

    fn backward(&self, trace: &Trace<F>, output_grad: Array2<F>) -> Gradients<F> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i == self.bottleneck {
                if let Some(mask) = &trace.bottleneck_mask {
                    upstream *= mask;
                }
            }
            let z = &trace.pre_activations[i];
            let mut dz = upstream;
            ndarray::Zip::from(&mut dz)
                .and(z)
                .for_each(|g, &zv| *g *= layer.activation.derivative(zv));
            let dw = dz.t().dot(&trace.inputs[i]);
            let db = dz.sum_axis(Axis(0));
            upstream = if i > 0 {
                dz.dot(&layer.weights)
            } else {
                Array2::zeros((0, 0))
            };
            grads.push((dw, db));
        }
        grads.reverse();
        grads
    }

    /// Loss and exact parameter gradients for reconstructing `target` from
    /// `input`, without dropout.
    pub fn loss_and_gradients(
        &self,
        input: ArrayView2<F>,
        target: ArrayView2<F>,
        loss: LossKind,
    ) -> Result<(F, Gradients<F>), AutonetError> {
        self.check_width(input.ncols())?;
        self.check_width(target.ncols())?;
        let trace = self.forward_trace(input, None);
        let (value, grad) = loss_and_output_gradient(loss, trace.output.view(), target);
        Ok((value.mean(), self.backward(&trace, grad)))
    }

    /// Training-mode step helper: forward with dropout, loss, gradients.
    pub(crate) fn train_pass(
        &self,
        input: ArrayView2<F>,
        target: ArrayView2<F>,
        loss: LossKind,
        dropout: &Dropout,
        rng: &mut ChaCha8Rng,
    ) -> (BatchLoss<F>, Gradients<F>, Array2<F>) {
        let trace = self.forward_trace(input, Some((dropout, rng)));
        let (value, grad) = loss_and_output_gradient(loss, trace.output.view(), target);
        let grads = self.backward(&trace, grad);
        (value, grads, trace.output)
    }
}

/// Forward pass with predictions clamped to the rating range `[0, 10]`.
pub fn predict_ratings<F: Scalar>(model: &Autoencoder<F>, user_row: &[F]) -> Result<Vec<F>, AutonetError> {
    let (out, _) = model.forward(user_row)?;
    let hi = F::from_f64(10.0).unwrap();
    Ok(out.into_iter().map(|v| v.max(F::zero()).min(hi)).collect())
}

/// Batched [`predict_ratings`].
pub fn predict_ratings_batch<F: Scalar>(
    model: &Autoencoder<F>,
    rows: ArrayView2<F>,
) -> Result<Array2<F>, AutonetError> {
    let (mut out, _) = model.forward_batch(rows)?;
    let hi = F::from_f64(10.0).unwrap();
    out.mapv_inplace(|v| v.max(F::zero()).min(hi));
    Ok(out)
}
