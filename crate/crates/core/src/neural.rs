//! A small 1-D fully convolutional classifier with a hand-written backward
//! pass.
//!
//! Layout: optional input standardization, then `n_layers` blocks of
//! same-padded convolution + ReLU, global average pooling over time, a dense
//! layer and softmax. All parameters live in one flat vector so optimizers and
//! gradient checks can treat the model uniformly.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{argmax, softmax, Scalar};
use crate::seed;

pub const KERNEL_SIZES: [usize; 4] = [8, 5, 3, 3];
pub const FIRST_FILTERS: [usize; 4] = [4, 16, 64, 128];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcnArchitecture {
    pub filters: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub n_classes: usize,
}

impl FcnArchitecture {
    /// `n_layers` conv blocks, `first_filters` channels doubling per layer,
    /// kernel sizes `[8, 5, 3, 3]` truncated.
    pub fn new(n_layers: usize, first_filters: usize, n_classes: usize) -> Result<Self> {
        if !(1..=4).contains(&n_layers) {
            return Err(invalid(format!("n_layers must be in 1..=4, got {n_layers}")));
        }
        let filters = (0..n_layers).map(|l| first_filters << l).collect();
        Self::custom(filters, KERNEL_SIZES[..n_layers].to_vec(), n_classes)
    }

    pub fn custom(filters: Vec<usize>, kernel_sizes: Vec<usize>, n_classes: usize) -> Result<Self> {
        if filters.is_empty() || filters.len() != kernel_sizes.len() {
            return Err(invalid("need one kernel size per conv layer"));
        }
        if filters.contains(&0) || kernel_sizes.contains(&0) {
            return Err(invalid("filters and kernel sizes must be positive"));
        }
        if n_classes < 2 {
            return Err(invalid("n_classes must be at least 2"));
        }
        Ok(Self { filters, kernel_sizes, n_classes })
    }

    pub fn n_layers(&self) -> usize {
        self.filters.len()
    }

    pub fn max_kernel(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(1)
    }

    fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.filters[layer - 1]
        }
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut conv = Vec::new();
        for l in 0..self.n_layers() {
            let w = at;
            at += self.filters[l] * self.in_channels(l) * self.kernel_sizes[l];
            let b = at;
            at += self.filters[l];
            conv.push((w, b));
        }
        let dense_w = at;
        at += self.n_classes * self.last_channels();
        let dense_b = at;
        at += self.n_classes;
        Layout { conv, dense_w, dense_b, total: at }
    }

    fn last_channels(&self) -> usize {
        *self.filters.last().expect("at least one layer")
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }
}

struct Layout {
    conv: Vec<(usize, usize)>,
    dense_w: usize,
    dense_b: usize,
    total: usize,
}

/// Affine input standardization `z = (x - mean) * inv_std`, fitted on
/// training inputs and applied inside the model so gradients are taken with
/// respect to the raw input. The leading `time_len` positions share one pooled
/// mean and scale (preserving the shape of the series); any trailing positions
/// (extracted features) are standardized individually.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Standardizer<T: Scalar> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

fn inv_sd<T: Scalar>(sum_sq: T, n: T) -> T {
    let sd = (sum_sq / n).sqrt();
    if sd > T::of(1e-12) {
        T::one() / sd
    } else {
        T::one()
    }
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(rows: &[Vec<T>], time_len: usize) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(invalid("cannot fit a standardizer on no data"));
        }
        let t = time_len.min(p);
        let n = T::of_usize(rows.len());
        let mut mean = vec![T::zero(); p];
        let mut inv_std = vec![T::one(); p];
        if t > 0 {
            let cells = n * T::of_usize(t);
            let mu = rows.iter().flat_map(|r| &r[..t]).copied().sum::<T>() / cells;
            let ss: T = rows.iter().flat_map(|r| &r[..t]).map(|&v| (v - mu) * (v - mu)).sum();
            let k = inv_sd(ss, cells);
            mean[..t].iter_mut().for_each(|m| *m = mu);
            inv_std[..t].iter_mut().for_each(|s| *s = k);
        }
        for j in t..p {
            let mu = rows.iter().map(|r| r[j]).sum::<T>() / n;
            let ss: T = rows.iter().map(|r| (r[j] - mu) * (r[j] - mu)).sum();
            mean[j] = mu;
            inv_std[j] = inv_sd(ss, n);
        }
        Ok(Self { mean, inv_std })
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.mean).zip(&self.inv_std).map(|((&v, &m), &s)| (v - m) * s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FcnModel<T: Scalar> {
    pub architecture: FcnArchitecture,
    pub params: Vec<T>,
    pub standardizer: Option<Standardizer<T>>,
    /// Mean training cross-entropy per epoch.
    pub training_log: Vec<T>,
}

/// Everything computed by a forward pass. Maps are stored channel-major
/// (`[c * len + t]`).
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub len: usize,
    pub input: Vec<T>,
    pub pre: Vec<Vec<T>>,
    pub act: Vec<Vec<T>>,
    pub pooled: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T> Forward<T> {
    /// Post-ReLU activations of the last conv layer.
    pub fn last_activation(&self) -> &[T] {
        self.act.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    /// Gradient with respect to the raw (unstandardized) input.
    pub input: Vec<T>,
    /// Gradient with respect to the last conv layer's post-ReLU activations.
    pub last_activation: Vec<T>,
}

fn conv_forward<T: Scalar>(input: &[T], cin: usize, len: usize, w: &[T], b: &[T], cout: usize, k: usize) -> Vec<T> {
    let pad = (k - 1) / 2;
    let mut out = vec![T::zero(); cout * len];
    for o in 0..cout {
        let row = &mut out[o * len..(o + 1) * len];
        row.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let src = &input[i * len..(i + 1) * len];
            for j in 0..k {
                let wv = w[(o * cin + i) * k + j];
                // out[t] += w * src[t + j - pad]
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                for t in lo..hi {
                    row[t] = row[t] + wv * src[t + j - pad];
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    input: &[T],
    dpre: &[T],
    cin: usize,
    len: usize,
    w: &[T],
    cout: usize,
    k: usize,
    dw: &mut [T],
    db: &mut [T],
    dinput: Option<&mut [T]>,
) {
    let pad = (k - 1) / 2;
    for o in 0..cout {
        let g = &dpre[o * len..(o + 1) * len];
        db[o] = db[o] + g.iter().copied().sum::<T>();
        for i in 0..cin {
            let src = &input[i * len..(i + 1) * len];
            for j in 0..k {
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                let mut acc = T::zero();
                for t in lo..hi {
                    acc = acc + g[t] * src[t + j - pad];
                }
                let idx = (o * cin + i) * k + j;
                dw[idx] = dw[idx] + acc;
            }
        }
    }
    if let Some(dinput) = dinput {
        for i in 0..cin {
            let dst = &mut dinput[i * len..(i + 1) * len];
            for o in 0..cout {
                let g = &dpre[o * len..(o + 1) * len];
                for j in 0..k {
                    let wv = w[(o * cin + i) * k + j];
                    let lo = pad.saturating_sub(j);
                    let hi = (len + pad).saturating_sub(j).min(len);
                    for t in lo..hi {
                        dst[t + j - pad] = dst[t + j - pad] + wv * g[t];
                    }
                }
            }
        }
    }
}

impl<T: Scalar> FcnModel<T> {
    /// Uniform(-s, s) initialization with `s = sqrt(1 / fan_in)` per layer.
    pub fn init(architecture: FcnArchitecture, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let lay = architecture.layout();
        let mut params = vec![T::zero(); lay.total];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let s = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = T::of(rng.random_range(-s..s));
            }
        };
        for l in 0..architecture.n_layers() {
            let (w, b) = lay.conv[l];
            let fan_in = architecture.in_channels(l) * architecture.kernel_sizes[l];
            fill(w..b, fan_in, &mut rng);
            fill(b..b + architecture.filters[l], fan_in, &mut rng);
        }
        let c = architecture.last_channels();
        fill(lay.dense_w..lay.dense_b, c, &mut rng);
        fill(lay.dense_b..lay.total, c, &mut rng);
        Self { architecture, params, standardizer: None, training_log: Vec::new() }
    }

    pub fn zeros(architecture: FcnArchitecture) -> Self {
        let n = architecture.n_params();
        Self { architecture, params: vec![T::zero(); n], standardizer: None, training_log: Vec::new() }
    }

    pub fn n_classes(&self) -> usize {
        self.architecture.n_classes
    }

    /// Dense weights as `[class][channel]`.
    pub fn dense_weights(&self) -> &[T] {
        let lay = self.architecture.layout();
        &self.params[lay.dense_w..lay.dense_b]
    }

    pub fn dense_weights_mut(&mut self) -> &mut [T] {
        let lay = self.architecture.layout();
        &mut self.params[lay.dense_w..lay.dense_b]
    }

    pub fn dense_bias_mut(&mut self) -> &mut [T] {
        let lay = self.architecture.layout();
        &mut self.params[lay.dense_b..lay.total]
    }

    /// Kernel weights of one layer as `[out][in][k]` followed by its biases.
    pub fn conv_mut(&mut self, layer: usize) -> (&mut [T], &mut [T]) {
        let lay = self.architecture.layout();
        let (w, b) = lay.conv[layer];
        let nb = self.architecture.filters[layer];
        let (head, tail) = self.params.split_at_mut(b);
        (&mut head[w..], &mut tail[..nb])
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        let k = self.architecture.max_kernel();
        if x.len() < k {
            return Err(invalid(format!("input length {} shorter than kernel size {k}", x.len())));
        }
        if let Some(s) = &self.standardizer {
            if s.mean.len() != x.len() {
                return Err(Error::Dimension { expected: s.mean.len(), got: x.len() });
            }
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.n_classes() {
            return Err(invalid(format!("class {class} out of range for {} classes", self.n_classes())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Forward<T>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[T]) -> Forward<T> {
        let arch = &self.architecture;
        let lay = arch.layout();
        let len = x.len();
        let input = match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        let mut pre = Vec::with_capacity(arch.n_layers());
        let mut act: Vec<Vec<T>> = Vec::with_capacity(arch.n_layers());
        for l in 0..arch.n_layers() {
            let (w, b) = lay.conv[l];
            let cout = arch.filters[l];
            let src = if l == 0 { &input } else { &act[l - 1] };
            let z = conv_forward(
                src,
                arch.in_channels(l),
                len,
                &self.params[w..b],
                &self.params[b..b + cout],
                cout,
                arch.kernel_sizes[l],
            );
            act.push(z.iter().map(|&v| v.max(T::zero())).collect());
            pre.push(z);
        }
        let c = arch.last_channels();
        let last = act.last().expect("at least one layer");
        let inv_len = T::one() / T::of_usize(len);
        let pooled: Vec<T> =
            (0..c).map(|ch| last[ch * len..(ch + 1) * len].iter().copied().sum::<T>() * inv_len).collect();
        let dw = &self.params[lay.dense_w..lay.dense_b];
        let logits: Vec<T> = (0..arch.n_classes)
            .map(|k| {
                let row = &dw[k * c..(k + 1) * c];
                self.params[lay.dense_b + k] + row.iter().zip(&pooled).map(|(&a, &b)| a * b).sum::<T>()
            })
            .collect();
        let probs = softmax(&logits);
        Forward { len, input, pre, act, pooled, logits, probs }
    }

    /// Backpropagates a gradient with respect to the logits.
    pub fn backward(&self, fwd: &Forward<T>, dlogits: &[T]) -> Gradients<T> {
        let mut g = vec![T::zero(); self.params.len()];
        let (input, last_activation) = self.backward_into(fwd, dlogits, &mut g, true);
        Gradients { params: g, input, last_activation }
    }

    fn backward_into(&self, fwd: &Forward<T>, dlogits: &[T], grad: &mut [T], want_input: bool) -> (Vec<T>, Vec<T>) {
        let arch = &self.architecture;
        let lay = arch.layout();
        let len = fwd.len;
        let c = arch.last_channels();
        let dw = &self.params[lay.dense_w..lay.dense_b];
        let mut dpooled = vec![T::zero(); c];
        for (k, &dl) in dlogits.iter().enumerate() {
            grad[lay.dense_b + k] = grad[lay.dense_b + k] + dl;
            for ch in 0..c {
                let idx = lay.dense_w + k * c + ch;
                grad[idx] = grad[idx] + dl * fwd.pooled[ch];
                dpooled[ch] = dpooled[ch] + dl * dw[k * c + ch];
            }
        }
        let inv_len = T::one() / T::of_usize(len);
        let mut dact: Vec<T> = (0..c * len).map(|i| dpooled[i / len] * inv_len).collect();
        let last_activation = dact.clone();
        let mut dinput = Vec::new();
        for l in (0..arch.n_layers()).rev() {
            let cout = arch.filters[l];
            let cin = arch.in_channels(l);
            let dpre: Vec<T> =
                dact.iter().zip(&fwd.pre[l]).map(|(&d, &z)| if z > T::zero() { d } else { T::zero() }).collect();
            let src = if l == 0 { &fwd.input } else { &fwd.act[l - 1] };
            let (w, b) = lay.conv[l];
            let need = l > 0 || want_input;
            let mut dsrc = if need { vec![T::zero(); cin * len] } else { Vec::new() };
            let (head, tail) = grad.split_at_mut(b);
            conv_backward(
                src,
                &dpre,
                cin,
                len,
                &self.params[w..b],
                cout,
                arch.kernel_sizes[l],
                &mut head[w..],
                &mut tail[..cout],
                need.then_some(dsrc.as_mut_slice()),
            );
            if l == 0 {
                dinput = dsrc;
            } else {
                dact = dsrc;
            }
        }
        if want_input {
            if let Some(s) = &self.standardizer {
                dinput.iter_mut().zip(&s.inv_std).for_each(|(d, &k)| *d = *d * k);
            }
        }
        (dinput, last_activation)
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x)?.logits)
    }

    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x)?.probs)
    }

    pub fn predict(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?.logits))
    }

    /// Cross-entropy loss and its gradients with respect to parameters and input.
    pub fn loss_and_gradients(&self, x: &[T], y: usize) -> Result<(T, Gradients<T>)> {
        self.check_class(y)?;
        let fwd = self.forward(x)?;
        let loss = cross_entropy(&fwd.logits, y);
        let dl = logit_grad(&fwd.probs, y);
        Ok((loss, self.backward(&fwd, &dl)))
    }

    /// Gradient of one class's pre-softmax logit with respect to the input.
    pub fn class_input_gradient(&self, x: &[T], class: usize) -> Result<Vec<T>> {
        Ok(self.class_gradients(x, class)?.1.input)
    }

    /// The forward pass and the gradients of one class logit.
    pub fn class_gradients(&self, x: &[T], class: usize) -> Result<(Forward<T>, Gradients<T>)> {
        self.check_class(class)?;
        let fwd = self.forward(x)?;
        let mut dl = vec![T::zero(); self.n_classes()];
        dl[class] = T::one();
        let g = self.backward(&fwd, &dl);
        Ok((fwd, g))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.params.len() != m.architecture.n_params() {
            return Err(Error::Format(format!(
                "weights file has {} parameters, architecture needs {}",
                m.params.len(),
                m.architecture.n_params()
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn cross_entropy<T: Scalar>(logits: &[T], y: usize) -> T {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    m + logits.iter().map(|&v| (v - m).exp()).sum::<T>().ln() - logits[y]
}

fn logit_grad<T: Scalar>(probs: &[T], y: usize) -> Vec<T> {
    let mut d = probs.to_vec();
    d[y] = d[y] - T::one();
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Fit a [`Standardizer`] on the training inputs.
    pub standardize: bool,
    /// Leading positions that share one pooled scale.
    pub time_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 32, standardize: true, time_len: usize::MAX }
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Samples per accumulation chunk; fixes the summation tree independently of
/// the thread count.
const CHUNK: usize = 4;

/// Trains a model with mini-batch gradient descent on the mean batch loss.
pub fn fit_fcn<T: Scalar>(
    x: &[Vec<T>],
    y: &[usize],
    arch: &FcnArchitecture,
    opt: &OptimizerConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<FcnModel<T>> {
    if x.is_empty() || x.len() != y.len() {
        return Err(invalid(format!("{} inputs for {} labels", x.len(), y.len())));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(invalid("training labels contain a single class"));
    }
    if let Some(&c) = y.iter().find(|&&c| c >= arch.n_classes) {
        return Err(invalid(format!("label {c} out of range for {} classes", arch.n_classes)));
    }
    if train.batch_size == 0 || !(opt.lr >= 0.0) {
        return Err(invalid("batch size must be positive and learning rate non-negative"));
    }
    let len = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != len) {
        return Err(Error::Dimension { expected: len, got: r.len() });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite training input"));
    }

    let mut model = FcnModel::init(arch.clone(), seed::derive(seed, "fcn-init"));
    if train.standardize {
        model.standardizer = Some(Standardizer::fit(x, train.time_len)?);
    }
    model.check_input(&x[0])?;
    let mut shuffle = seed::rng(seed::derive(seed, "fcn-shuffle"));
    let np = model.params.len();
    let mut adam = Adam { m: vec![T::zero(); np], v: vec![T::zero(); np], t: 0 };
    let lr = T::of(opt.lr);
    let mut order: Vec<usize> = (0..x.len()).collect();

    for _ in 0..train.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = T::zero();
        for batch in order.chunks(train.batch_size) {
            let m = &model;
            let partials: Vec<(T, Vec<T>)> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = vec![T::zero(); np];
                    let mut loss = T::zero();
                    for &i in chunk {
                        let fwd = m.forward_unchecked(&x[i]);
                        loss = loss + cross_entropy(&fwd.logits, y[i]);
                        m.backward_into(&fwd, &logit_grad(&fwd.probs, y[i]), &mut g, false);
                    }
                    (loss, g)
                })
                .collect();
            let scale = T::one() / T::of_usize(batch.len());
            let mut grad = vec![T::zero(); np];
            for (loss, g) in partials {
                epoch_loss = epoch_loss + loss;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
            }
            grad.iter_mut().for_each(|g| *g = *g * scale);
            match opt.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in model.params.iter_mut().zip(&grad) {
                        *p = *p - lr * *g;
                    }
                }
                OptimizerKind::Adam => {
                    adam.t += 1;
                    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
                    let c1 = T::one() - b1.powi(adam.t);
                    let c2 = T::one() - b2.powi(adam.t);
                    for (((p, &g), m), v) in model.params.iter_mut().zip(&grad).zip(&mut adam.m).zip(&mut adam.v) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + T::of(ADAM_EPS));
                    }
                }
            }
        }
        model.training_log.push(epoch_loss / T::of_usize(x.len()));
    }
    Ok(model)
}
