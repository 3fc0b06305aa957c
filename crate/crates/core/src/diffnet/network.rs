use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayD, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{Activation, DiffNetConfig, DiffNetError};
use crate::corpus::{Descriptor, Gender};
use crate::encoders::Embedding;
use crate::rng::named_rng;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

/// `act(BN(x W + b))`, with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub bn: Option<BatchNorm<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffNetModel<T> {
    pub config: DiffNetConfig,
    /// Encoder whose embeddings the model accepts.
    pub encoder_id: String,
    /// Descriptor of each output node, in node order.
    pub nodes: Vec<Descriptor>,
    /// Gender the model serves; `None` for a joint model.
    pub gender: Option<Gender>,
    pub hidden: Vec<HiddenLayer<T>>,
    pub output_weight: Array2<T>,
    pub output_bias: Array1<T>,
    /// Provenance carried into the model file (seeds, digests).
    pub meta: BTreeMap<String, String>,
}

/// Gradients in the order of [`DiffNetModel::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<ArrayD<T>>,
}

pub(crate) struct BatchStats<T> {
    pub mean: Array1<T>,
    pub var: Array1<T>,
}

struct LayerCache<T> {
    input: Array2<T>,
    pre_act: Array2<T>,
    act: Array2<T>,
    xhat: Option<Array2<T>>,
    inv_std: Option<Array1<T>>,
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    let one = T::one();
    let s = if z >= T::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    };
    // keep the output strictly inside (0, 1)
    let lo = T::min_positive_value();
    let hi = one - T::epsilon() / T::lit(2.0);
    s.max(lo).min(hi)
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, from the logit.
pub(crate) fn bce_from_logit<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - y * z + (-z.abs()).exp().ln_1p()
}

fn activate<T: Scalar>(a: Activation, y: T) -> T {
    match a {
        Activation::Tanh => y.tanh(),
        Activation::Relu => y.max(T::zero()),
        Activation::Softplus => y.max(T::zero()) + (-y.abs()).exp().ln_1p(),
    }
}

fn activation_slope<T: Scalar>(a: Activation, y: T, out: T) -> T {
    match a {
        Activation::Tanh => T::one() - out * out,
        Activation::Relu => {
            if y > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Softplus => sigmoid(y),
    }
}

impl<T: Scalar> DiffNetModel<T> {
    /// Glorot-uniform weights from a seed derived from the training seed and
    /// the gender binding; zero biases, identity batch normalization.
    pub fn new(
        config: DiffNetConfig,
        encoder_id: impl Into<String>,
        nodes: Vec<Descriptor>,
        gender: Option<Gender>,
    ) -> Result<Self, DiffNetError> {
        let mut model = Self::zeroed(config, encoder_id, nodes, gender)?;
        let tag = model.gender.map(Gender::as_str).unwrap_or("joint");
        let mut rng = named_rng(model.config.train.seed, &["diffnet", "init", tag]);
        let mut fill = |w: &mut Array2<T>| {
            let (fan_in, fan_out) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| T::from_f64_lossy(rng.random_range(-limit..limit)));
        };
        for layer in &mut model.hidden {
            fill(&mut layer.weight);
        }
        fill(&mut model.output_weight);
        Ok(model)
    }

    /// All weights and biases zero; batch normalization is the identity map
    /// up to its epsilon.
    pub fn zeroed(
        config: DiffNetConfig,
        encoder_id: impl Into<String>,
        nodes: Vec<Descriptor>,
        gender: Option<Gender>,
    ) -> Result<Self, DiffNetError> {
        config.validate()?;
        if nodes.len() != config.output_dim {
            return Err(DiffNetError::InvalidConfig(format!(
                "{} node descriptors for output_dim {}",
                nodes.len(),
                config.output_dim
            )));
        }
        let mut hidden = Vec::new();
        let mut width = config.input_dim;
        for &h in &config.hidden_layers {
            hidden.push(HiddenLayer {
                weight: Array2::zeros((width, h)),
                bias: Array1::zeros(h),
                bn: config.use_batch_norm.then(|| BatchNorm {
                    gamma: Array1::ones(h),
                    beta: Array1::zeros(h),
                    running_mean: Array1::zeros(h),
                    running_var: Array1::ones(h),
                }),
            });
            width = h;
        }
        Ok(Self {
            output_weight: Array2::zeros((width, config.output_dim)),
            output_bias: Array1::zeros(config.output_dim),
            config,
            encoder_id: encoder_id.into(),
            nodes,
            gender,
            hidden,
            meta: BTreeMap::new(),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.input_dim / 2
    }

    pub fn node_index(&self, descriptor: &Descriptor) -> Option<usize> {
        self.nodes.iter().position(|d| d == descriptor)
    }

    /// Checks shapes against the config and finiteness of every tensor.
    pub fn validate(&self) -> Result<(), DiffNetError> {
        self.config.validate()?;
        let bad = |m: String| Err(DiffNetError::CorruptModelFile(m));
        if self.nodes.len() != self.config.output_dim || self.hidden.len() != self.config.hidden_layers.len() {
            return bad("layer or node count disagrees with config".into());
        }
        let mut width = self.config.input_dim;
        for (i, (layer, &h)) in self.hidden.iter().zip(&self.config.hidden_layers).enumerate() {
            let bn_ok = match &layer.bn {
                Some(bn) => {
                    self.config.use_batch_norm
                        && [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                            .iter()
                            .all(|t| t.len() == h)
                }
                None => !self.config.use_batch_norm,
            };
            if layer.weight.dim() != (width, h) || layer.bias.len() != h || !bn_ok {
                return bad(format!("hidden layer {i} has inconsistent shapes"));
            }
            width = h;
        }
        if self.output_weight.dim() != (width, self.config.output_dim)
            || self.output_bias.len() != self.config.output_dim
        {
            return bad("output layer has inconsistent shapes".into());
        }
        if self.named_tensors().iter().any(|(_, t)| t.iter().any(|x| !x.is_finite())) {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    /// Trainable tensors in a fixed order, with their names.
    pub fn trainable(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            out.push((format!("hidden.{i}.weight"), l.weight.view().into_dyn()));
            out.push((format!("hidden.{i}.bias"), l.bias.view().into_dyn()));
            if let Some(bn) = &l.bn {
                out.push((format!("hidden.{i}.bn.gamma"), bn.gamma.view().into_dyn()));
                out.push((format!("hidden.{i}.bn.beta"), bn.beta.view().into_dyn()));
            }
        }
        out.push(("output.weight".into(), self.output_weight.view().into_dyn()));
        out.push(("output.bias".into(), self.output_bias.view().into_dyn()));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        let mut out = Vec::new();
        for l in &mut self.hidden {
            out.push(l.weight.view_mut().into_dyn());
            out.push(l.bias.view_mut().into_dyn());
            if let Some(bn) = &mut l.bn {
                out.push(bn.gamma.view_mut().into_dyn());
                out.push(bn.beta.view_mut().into_dyn());
            }
        }
        out.push(self.output_weight.view_mut().into_dyn());
        out.push(self.output_bias.view_mut().into_dyn());
        out
    }

    /// Every tensor, trainable ones first, then normalization statistics.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = self.trainable();
        for (i, l) in self.hidden.iter().enumerate() {
            if let Some(bn) = &l.bn {
                out.push((format!("hidden.{i}.bn.running_mean"), bn.running_mean.view().into_dyn()));
                out.push((format!("hidden.{i}.bn.running_var"), bn.running_var.view().into_dyn()));
            }
        }
        out
    }

    pub(crate) fn named_tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = Vec::new();
        let mut stats = Vec::new();
        for (i, l) in self.hidden.iter_mut().enumerate() {
            out.push((format!("hidden.{i}.weight"), l.weight.view_mut().into_dyn()));
            out.push((format!("hidden.{i}.bias"), l.bias.view_mut().into_dyn()));
            if let Some(bn) = &mut l.bn {
                out.push((format!("hidden.{i}.bn.gamma"), bn.gamma.view_mut().into_dyn()));
                out.push((format!("hidden.{i}.bn.beta"), bn.beta.view_mut().into_dyn()));
                stats.push((format!("hidden.{i}.bn.running_mean"), bn.running_mean.view_mut().into_dyn()));
                stats.push((format!("hidden.{i}.bn.running_var"), bn.running_var.view_mut().into_dyn()));
            }
        }
        out.push(("output.weight".into(), self.output_weight.view_mut().into_dyn()));
        out.push(("output.bias".into(), self.output_bias.view_mut().into_dyn()));
        out.extend(stats);
        out
    }

    fn eps(&self) -> T {
        T::from_f64_lossy(self.config.train.bn_eps)
    }

    /// Inference-mode logits for a batch of concatenated pairs.
    pub fn logits(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, DiffNetError> {
        if x.ncols() != self.config.input_dim {
            return Err(DiffNetError::DimensionMismatch {
                expected: self.config.input_dim,
                found: x.ncols(),
            });
        }
        let eps = self.eps();
        let act = self.config.activation;
        let mut h = x.to_owned();
        for layer in &self.hidden {
            let mut z = h.dot(&layer.weight) + &layer.bias;
            if let Some(bn) = &layer.bn {
                let scale = bn.running_var.mapv(|v| (v + eps).sqrt().recip()) * &bn.gamma;
                z = (z - &bn.running_mean) * &scale + &bn.beta;
            }
            z.mapv_inplace(|y| activate(act, y));
            h = z;
        }
        Ok(h.dot(&self.output_weight) + &self.output_bias)
    }

    /// Inference-mode node probabilities for a batch.
    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>, DiffNetError> {
        Ok(self.logits(x)?.mapv(sigmoid))
    }

    /// Node probabilities for one ordered pair of raw vectors.
    pub fn forward_pair(&self, first: &[T], second: &[T]) -> Result<Vec<T>, DiffNetError> {
        let d = self.embedding_dim();
        for v in [first, second] {
            if v.len() != d {
                return Err(DiffNetError::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
        }
        let x = Array2::from_shape_fn((1, 2 * d), |(_, j)| if j < d { first[j] } else { second[j - d] });
        Ok(self.forward_batch(x.view())?.row(0).to_vec())
    }

    /// `ŷ = forward(e_A, e_B)`; both embeddings must come from the bound encoder.
    pub fn forward(&self, e_a: &Embedding<T>, e_b: &Embedding<T>) -> Result<Vec<T>, DiffNetError> {
        for e in [e_a, e_b] {
            if e.encoder_id != self.encoder_id {
                return Err(DiffNetError::EncoderMismatch {
                    model: self.encoder_id.clone(),
                    embedding: e.encoder_id.clone(),
                });
            }
        }
        self.forward_pair(&e_a.vector, &e_b.vector)
    }

    /// Training-mode pass (batch statistics in normalization layers):
    /// masked mean binary cross-entropy and its gradients. The mean runs over
    /// supervised nodes of the whole batch.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, T>,
        labels: ArrayView2<'_, T>,
        mask: ArrayView2<'_, T>,
    ) -> Result<(T, Gradients<T>), DiffNetError> {
        self.train_step_parts(x, labels, mask).map(|(l, g, _)| (l, g))
    }

    pub(crate) fn train_step_parts(
        &self,
        x: ArrayView2<'_, T>,
        labels: ArrayView2<'_, T>,
        mask: ArrayView2<'_, T>,
    ) -> Result<(T, Gradients<T>, Vec<BatchStats<T>>), DiffNetError> {
        let n = self.config.output_dim;
        if x.ncols() != self.config.input_dim {
            return Err(DiffNetError::DimensionMismatch {
                expected: self.config.input_dim,
                found: x.ncols(),
            });
        }
        if labels.dim() != (x.nrows(), n) || mask.dim() != (x.nrows(), n) {
            return Err(DiffNetError::DimensionMismatch {
                expected: n,
                found: labels.ncols(),
            });
        }
        let supervised = mask.sum();
        if supervised <= T::zero() {
            return Err(DiffNetError::AllMasked { epoch: 0, batch: 0 });
        }
        let b = T::from_usize(x.nrows()).expect("batch size fits the scalar");
        let eps = self.eps();
        let act = self.config.activation;

        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut stats = Vec::new();
        let mut h = x.to_owned();
        for layer in &self.hidden {
            let z = h.dot(&layer.weight) + &layer.bias;
            let (pre_act, xhat, inv_std) = match &layer.bn {
                Some(bn) => {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let centered = z - &mean;
                    let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).expect("non-empty batch");
                    let inv_std = var.mapv(|v| (v + eps).sqrt().recip());
                    let xhat = centered * &inv_std;
                    let y = &xhat * &bn.gamma + &bn.beta;
                    stats.push(BatchStats { mean, var });
                    (y, Some(xhat), Some(inv_std))
                }
                None => (z, None, None),
            };
            let out = pre_act.mapv(|y| activate(act, y));
            caches.push(LayerCache {
                input: h,
                pre_act,
                act: out.clone(),
                xhat,
                inv_std,
            });
            h = out;
        }
        let logits = h.dot(&self.output_weight) + &self.output_bias;

        let mut loss = T::zero();
        let mut dlogits = Array2::zeros(logits.raw_dim());
        ndarray::Zip::from(&mut dlogits)
            .and(&logits)
            .and(&labels)
            .and(&mask)
            .for_each(|d, &z, &y, &m| {
                if m != T::zero() {
                    loss = loss + m * bce_from_logit(z, y);
                    *d = (sigmoid_raw(z) - y) * m / supervised;
                }
            });
        loss = loss / supervised;

        let mut grads: Vec<ArrayD<T>> = Vec::new();
        let grad_wo = h.t().dot(&dlogits);
        let grad_bo = dlogits.sum_axis(Axis(0));
        let mut upstream = dlogits.dot(&self.output_weight.t());
        let mut per_layer = Vec::with_capacity(self.hidden.len());
        for (layer, cache) in self.hidden.iter().zip(caches.iter()).rev() {
            let mut dy = upstream;
            ndarray::Zip::from(&mut dy)
                .and(&cache.pre_act)
                .and(&cache.act)
                .for_each(|g, &y, &a| *g = *g * activation_slope(act, y, a));
            let mut layer_grads = Vec::new();
            let dz = match (&layer.bn, &cache.xhat, &cache.inv_std) {
                (Some(bn), Some(xhat), Some(inv_std)) => {
                    let dgamma = (&dy * xhat).sum_axis(Axis(0));
                    let dbeta = dy.sum_axis(Axis(0));
                    let dxhat = &dy * &bn.gamma;
                    let s1 = dxhat.sum_axis(Axis(0));
                    let s2 = (&dxhat * xhat).sum_axis(Axis(0));
                    let dz = (dxhat.mapv(|v| v * b) - &s1 - xhat * &s2) * inv_std / b;
                    layer_grads.push(dgamma.into_dyn());
                    layer_grads.push(dbeta.into_dyn());
                    dz
                }
                _ => dy,
            };
            let dw = cache.input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            upstream = dz.dot(&layer.weight.t());
            let mut ordered = vec![dw.into_dyn(), db.into_dyn()];
            ordered.extend(layer_grads);
            per_layer.push(ordered);
        }
        for g in per_layer.into_iter().rev() {
            grads.extend(g);
        }
        grads.push(grad_wo.into_dyn());
        grads.push(grad_bo.into_dyn());
        Ok((loss, Gradients { tensors: grads }, stats))
    }

    pub(crate) fn update_running_stats(&mut self, stats: &[BatchStats<T>], batch: usize) {
        let m = T::from_f64_lossy(self.config.train.bn_momentum);
        let keep = T::one() - m;
        let unbias = if batch > 1 {
            T::from_f64_lossy(batch as f64 / (batch - 1) as f64)
        } else {
            T::one()
        };
        let bns = self.hidden.iter_mut().filter_map(|l| l.bn.as_mut());
        for (bn, s) in bns.zip(stats) {
            ndarray::Zip::from(&mut bn.running_mean)
                .and(&s.mean)
                .for_each(|r, &x| *r = keep * *r + m * x);
            ndarray::Zip::from(&mut bn.running_var)
                .and(&s.var)
                .for_each(|r, &x| *r = keep * *r + m * x * unbias);
        }
    }
}

/// Sigmoid without the interior clamp, for gradients.
fn sigmoid_raw<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand_distr::{Distribution, StandardNormal};

    fn nodes(n: usize) -> Vec<Descriptor> {
        crate::corpus::default_vocabulary().names().into_iter().take(n).collect()
    }

    fn tiny(bn: bool, activation: Activation) -> DiffNetModel<f64> {
        let cfg = DiffNetConfig {
            input_dim: 8,
            hidden_layers: vec![8],
            output_dim: 3,
            use_batch_norm: bn,
            activation,
            ..Default::default()
        };
        let mut m = DiffNetModel::new(cfg, "enc", nodes(3), None).unwrap();
        // move away from the symmetric initial point so every parameter matters
        let mut rng = named_rng(5, &["perturb"]);
        for mut t in m.trainable_mut() {
            t.mapv_inplace(|v| {
                let g: f64 = StandardNormal.sample(&mut rng);
                v + 0.3 * g
            });
        }
        m
    }

    fn random_batch(rows: usize, seed: u64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = named_rng(seed, &["batch"]);
        let x = Array::from_shape_fn((rows, 8), |_| StandardNormal.sample(&mut rng));
        let y = Array::from_shape_fn((rows, 3), |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let mut mask = Array::from_shape_fn((rows, 3), |_| if rng.random_bool(0.6) { 1.0 } else { 0.0 });
        mask[[0, 0]] = 1.0;
        (x, y, mask)
    }

    fn check_gradients(model: &DiffNetModel<f64>, seed: u64) {
        let (x, y, mask) = random_batch(5, seed);
        let (_, grads) = model.loss_and_gradients(x.view(), y.view(), mask.view()).unwrap();
        let names: Vec<String> = model.trainable().into_iter().map(|(n, _)| n).collect();
        let h = 1e-6;
        let mut probe = model.clone();
        for (ti, name) in names.iter().enumerate() {
            let len = grads.tensors[ti].len();
            for k in 0..len {
                let eval = |m: &mut DiffNetModel<f64>, delta: f64| {
                    let mut ts = m.trainable_mut();
                    let slot = ts[ti].iter_mut().nth(k).unwrap();
                    *slot += delta;
                    drop(ts);
                    let l = m.loss_and_gradients(x.view(), y.view(), mask.view()).unwrap().0;
                    let mut ts = m.trainable_mut();
                    *ts[ti].iter_mut().nth(k).unwrap() -= delta;
                    l
                };
                let numeric = (eval(&mut probe, h) - eval(&mut probe, -h)) / (2.0 * h);
                let analytic = *grads.tensors[ti].iter().nth(k).unwrap();
                // the floor absorbs round-off in the difference quotient (about 1e-10 here)
                let denom = analytic.abs().max(numeric.abs()).max(1e-4);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "{name}[{k}]: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Softplus), (3, Activation::Tanh)] {
            check_gradients(&tiny(true, act), seed);
            check_gradients(&tiny(false, act), seed + 10);
        }
    }

    #[test]
    fn zero_model_outputs_one_half() {
        let cfg = DiffNetConfig {
            input_dim: 8,
            output_dim: 3,
            ..Default::default()
        };
        let m = DiffNetModel::<f64>::zeroed(cfg, "enc", nodes(3), None).unwrap();
        let y = m.forward_pair(&[0.3, -1.0, 2.0, 5.0], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(y, vec![0.5; 3]);
    }

    #[test]
    fn hand_set_network_matches_hand_arithmetic() {
        // d = 1, one hidden tanh layer of width 2 with identity weights,
        // output = h0 - h1 + 0.5.
        let cfg = DiffNetConfig {
            input_dim: 2,
            hidden_layers: vec![2],
            output_dim: 1,
            use_batch_norm: false,
            ..Default::default()
        };
        let mut m = DiffNetModel::<f64>::zeroed(cfg, "enc", nodes(1), None).unwrap();
        m.hidden[0].weight = array![[1.0, 0.0], [0.0, 1.0]];
        m.output_weight = array![[1.0], [-1.0]];
        m.output_bias = array![0.5];
        let y = m.forward_pair(&[0.5], &[1.0]).unwrap();
        // tanh(0.5) = 0.46211715726000974, tanh(1) = 0.7615941559557649
        // logit = 0.2005230013042449, sigmoid = 0.5499634454260398
        assert!((y[0] - 0.549_963_445_426_039_8).abs() < 1e-12, "{}", y[0]);
        let swapped = m.forward_pair(&[1.0], &[0.5]).unwrap();
        assert!((swapped[0] - 0.689_862_594_963_229_4).abs() < 1e-12, "{}", swapped[0]);
    }

    #[test]
    fn pair_order_matters_and_inference_is_repeatable() {
        let m = tiny(true, Activation::Tanh);
        let a = [0.1, -0.4, 0.9, 0.2];
        let b = [0.7, 0.3, -0.5, 1.1];
        let ab = m.forward_pair(&a, &b).unwrap();
        let ba = m.forward_pair(&b, &a).unwrap();
        assert_ne!(ab, ba);
        assert_eq!(ab, m.forward_pair(&a, &b).unwrap());
        assert!(ab.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn unsupervised_labels_do_not_affect_loss_or_gradients() {
        let m = tiny(true, Activation::Tanh);
        let (x, y, mask) = random_batch(6, 4);
        let base = m.loss_and_gradients(x.view(), y.view(), mask.view()).unwrap();
        let mut y2 = y.clone();
        for ((i, j), &mk) in mask.indexed_iter() {
            if mk == 0.0 {
                y2[[i, j]] = 1.0 - y2[[i, j]];
            }
        }
        let other = m.loss_and_gradients(x.view(), y2.view(), mask.view()).unwrap();
        assert_eq!(base.0.to_bits(), other.0.to_bits());
        assert_eq!(base.1, other.1);
    }

    #[test]
    fn all_masked_batch_is_rejected() {
        let m = tiny(false, Activation::Tanh);
        let (x, y, _) = random_batch(3, 1);
        let zero = Array2::zeros((3, 3));
        assert!(matches!(
            m.loss_and_gradients(x.view(), y.view(), zero.view()),
            Err(DiffNetError::AllMasked { .. })
        ));
    }

    #[test]
    fn dimension_and_encoder_checks() {
        let m = tiny(false, Activation::Tanh);
        assert!(matches!(
            m.forward_pair(&[1.0; 3], &[1.0; 4]),
            Err(DiffNetError::DimensionMismatch { expected: 4, found: 3 })
        ));
        let ea = Embedding::new(vec![1.0; 4], "other", "u1".into()).unwrap();
        let eb = Embedding::new(vec![1.0; 4], "enc", "u2".into()).unwrap();
        assert!(matches!(m.forward(&ea, &eb), Err(DiffNetError::EncoderMismatch { .. })));
        let ea = Embedding::new(vec![1.0; 4], "enc", "u1".into()).unwrap();
        assert_eq!(m.forward(&ea, &eb).unwrap().len(), 3);
    }

    #[test]
    fn outputs_stay_inside_unit_interval_in_single_precision() {
        let cfg = DiffNetConfig {
            input_dim: 8,
            hidden_layers: vec![16],
            output_dim: 3,
            ..Default::default()
        };
        let mut m = DiffNetModel::<f32>::new(cfg, "enc", nodes(3), None).unwrap();
        m.output_bias.fill(60.0);
        let y = m.forward_pair(&[3.0; 4], &[-3.0; 4]).unwrap();
        assert!(y.iter().all(|&p| p > 0.0 && p < 1.0));
        m.output_bias.fill(-200.0);
        let y = m.forward_pair(&[3.0; 4], &[-3.0; 4]).unwrap();
        assert!(y.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
