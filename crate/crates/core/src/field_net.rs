//! Parameterised scalar fields: small dense networks with optional Fourier
//! feature inputs and output wrappers, plus exact parameter gradients.
//!
//! Parameter layout (stable): layers in order (hidden layers, then the output
//! layer), each stored as its weight matrix in row-major `(out, in)` order
//! followed by its bias vector. A learned mean offset, if present, is the last
//! entry.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{gemm, sum_vectors, Execution, CHUNK};
use crate::rng::Stream;

/// Something that can be evaluated at points of a 1-D domain.
pub trait Field: Sync {
    fn value(&self, x: f64) -> f64;

    fn values(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.value(x)).collect()
    }
}

impl<F: Fn(f64) -> f64 + Sync> Field for F {
    fn value(&self, x: f64) -> f64 {
        self(x)
    }
}

/// A field `u_theta(x)` with a flat parameter vector and exact gradients.
pub trait ParamField: Sync {
    fn n_params(&self) -> usize;

    fn values(&self, theta: &[f64], xs: &[f64]) -> Vec<f64>;

    /// Gradient of `sum_i cotangents[i] * u_theta(xs[i])` with respect to theta.
    fn grad(&self, theta: &[f64], xs: &[f64], cotangents: &[f64]) -> Vec<f64>;

    fn bind<'a>(&'a self, theta: &'a [f64]) -> Bound<'a, Self>
    where
        Self: Sized,
    {
        Bound { field: self, theta }
    }
}

/// A [`ParamField`] with its parameters fixed.
pub struct Bound<'a, P: ?Sized> {
    field: &'a P,
    theta: &'a [f64],
}

impl<P: ParamField + ?Sized> Field for Bound<'_, P> {
    fn value(&self, x: f64) -> f64 {
        self.field.values(self.theta, &[x])[0]
    }

    fn values(&self, xs: &[f64]) -> Vec<f64> {
        self.field.values(self.theta, xs)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
    Softplus,
}

impl Activation {
    /// Value and derivative.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Softplus => (softplus(z), sigmoid(z)),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 35.0 {
        z
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Fixed random Fourier feature map `x -> [cos(2 pi B x), sin(2 pi B x)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierFeatures {
    /// Frequency matrix `B`, `n_frequencies x input_dim`, row-major.
    pub frequencies: Vec<f64>,
    pub n_frequencies: usize,
    pub input_dim: usize,
    /// Standard deviation used to draw `B`; informational once drawn.
    pub scale: f64,
    /// Append the raw input after the cosine and sine halves.
    #[serde(default)]
    pub include_input: bool,
}

impl FourierFeatures {
    /// Draws `B` with i.i.d. `N(0, scale^2)` entries.
    pub fn sample(n_frequencies: usize, input_dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = Stream::new(seed).child(0xF00F).rng();
        let frequencies = (0..n_frequencies * input_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        FourierFeatures {
            frequencies,
            n_frequencies,
            input_dim,
            scale,
            include_input: false,
        }
    }

    /// One-dimensional harmonics `k / period`, `k = 1..=n_max`.
    pub fn harmonics(period: f64, n_max: usize) -> Self {
        FourierFeatures {
            frequencies: (1..=n_max).map(|k| k as f64 / period).collect(),
            n_frequencies: n_max,
            input_dim: 1,
            scale: 1.0 / period,
            include_input: false,
        }
    }

    pub fn with_input(mut self) -> Self {
        self.include_input = true;
        self
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_frequencies + if self.include_input { self.input_dim } else { 0 }
    }

    fn map_into(&self, x: &[f64], out: &mut [f64]) {
        let f = self.n_frequencies;
        for k in 0..f {
            let row = &self.frequencies[k * self.input_dim..(k + 1) * self.input_dim];
            let arg: f64 = std::f64::consts::TAU * row.iter().zip(x).map(|(b, xi)| b * xi).sum::<f64>();
            let (s, c) = arg.sin_cos();
            out[k] = c;
            out[f + k] = s;
        }
        if self.include_input {
            out[2 * f..2 * f + self.input_dim].copy_from_slice(x);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanFunction {
    /// `m(x) = slope * x + intercept`.
    Linear { slope: f64, intercept: f64 },
    /// A learnable constant stored as the last parameter.
    Learned,
    /// `m(x) = c + s x` with learnable `(c, s)` stored as the last two parameters.
    LearnedAffine,
}

impl MeanFunction {
    /// Number of trailing parameters this mean adds.
    pub fn n_learned(&self) -> usize {
        match self {
            MeanFunction::Linear { .. } => 0,
            MeanFunction::Learned => 1,
            MeanFunction::LearnedAffine => 2,
        }
    }
}

/// Output transformation applied after the network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Wrapper {
    #[default]
    Identity,
    /// `u = t f`, so `u(0) = 0`.
    TimesT,
    /// `u = t (1 - t) f`, so `u(0) = u(1) = 0`.
    Bridge,
    /// `u = ln(1 + e^f)`.
    Softplus,
    /// `u = m(t) + f`.
    MeanShift { mean: MeanFunction },
}

impl Wrapper {
    /// Links are applied after the field the prior scores.
    pub fn is_link(&self) -> bool {
        matches!(self, Wrapper::Softplus | Wrapper::MeanShift { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub fourier: Option<FourierFeatures>,
    /// Applied in order after the network output.
    #[serde(default)]
    pub wrappers: Vec<Wrapper>,
}

impl Architecture {
    /// One hidden layer of `width` sigmoid units on a 1-D input.
    pub fn single_layer(width: usize) -> Self {
        Architecture {
            input_dim: 1,
            hidden_widths: vec![width],
            activation: Activation::Sigmoid,
            fourier: None,
            wrappers: Vec::new(),
        }
    }

    pub fn with_fourier(mut self, fourier: FourierFeatures) -> Self {
        self.fourier = Some(fourier);
        self
    }

    pub fn with_wrapper(mut self, wrapper: Wrapper) -> Self {
        self.wrappers.push(wrapper);
        self
    }

    fn feature_dim(&self) -> usize {
        self.fourier
            .as_ref()
            .map_or(self.input_dim, FourierFeatures::output_dim)
    }

    /// `(out, in)` for every dense layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.feature_dim();
        for &w in &self.hidden_widths {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes.push((1, fan_in));
        shapes
    }

    fn learned_means(&self) -> impl Iterator<Item = &MeanFunction> {
        self.wrappers.iter().filter_map(|w| match w {
            Wrapper::MeanShift { mean } if mean.n_learned() > 0 => Some(mean),
            _ => None,
        })
    }

    /// Trailing parameters owned by a learned mean.
    pub fn n_mean_params(&self) -> usize {
        self.learned_means().map(MeanFunction::n_learned).sum()
    }

    pub fn n_params(&self) -> usize {
        let net: usize = self.layer_shapes().iter().map(|(o, i)| o * i + o).sum();
        net + self.n_mean_params()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be at least 1".into()));
        }
        if let Some(ff) = &self.fourier {
            if ff.input_dim != self.input_dim || ff.frequencies.len() != ff.n_frequencies * ff.input_dim {
                return Err(Error::Config("Fourier frequency matrix does not match input_dim".into()));
            }
            if ff.n_frequencies == 0 {
                return Err(Error::Config("Fourier layer needs at least one frequency".into()));
            }
        }
        let learned = self.learned_means().count();
        if learned > 1 {
            return Err(Error::Config("at most one learned mean offset is supported".into()));
        }
        Ok(())
    }
}

/// Flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Which output a network evaluation produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    /// All wrappers.
    Full,
    /// Network followed by the leading shape wrappers only: the field the
    /// Mercer prior scores.
    Fluctuation,
}

/// A dense network with wrappers. Immutable; safe to share across threads.
#[derive(Clone, Debug)]
pub struct FieldNet {
    arch: Architecture,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    n_params: usize,
    n_links_start: usize,
    exec: Execution,
}

/// Row-major activations of one chunk of points.
struct Batch {
    n: usize,
    /// `acts[0]` is the network input (`n x in`), `acts[l]` the output of
    /// hidden layer `l` (`n x width`).
    acts: Vec<Vec<f64>>,
    /// Activation derivatives of each hidden layer.
    dacts: Vec<Vec<f64>>,
    /// Network output before wrappers.
    out: Vec<f64>,
}

impl FieldNet {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for &(o, i) in &shapes {
            offsets.push(off);
            off += o * i + o;
        }
        let n_params = arch.n_params();
        let n_links_start = arch
            .wrappers
            .iter()
            .position(Wrapper::is_link)
            .unwrap_or(arch.wrappers.len());
        Ok(FieldNet {
            arch,
            shapes,
            offsets,
            n_params,
            n_links_start,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Zero-mean Gaussian initialisation with standard deviation `1/sqrt(fan_in)`
    /// per layer. A learned mean offset starts at zero.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = Stream::new(seed).child(0x1A17).rng();
        let mut theta = Vec::with_capacity(self.n_params);
        for &(o, i) in &self.shapes {
            let sd = 1.0 / (i as f64).sqrt();
            for _ in 0..(o * i + o) {
                theta.push(sd * rng.sample::<f64, _>(StandardNormal));
            }
        }
        theta.resize(self.n_params, 0.0);
        ParamVector(theta)
    }

    /// Index of the learned mean offset (the intercept) in the parameter vector, if any.
    pub fn mean_offset_index(&self) -> Option<usize> {
        let k = self.arch.n_mean_params();
        (k > 0).then(|| self.n_params - k)
    }

    /// Parameters owned by a learned mean; empty if there is none.
    pub fn mean_params(&self) -> std::ops::Range<usize> {
        self.n_params - self.arch.n_mean_params()..self.n_params
    }

    /// Range of the output layer weights (excluding its bias).
    pub fn output_weight_range(&self) -> std::ops::Range<usize> {
        let last = self.shapes.len() - 1;
        let (o, i) = self.shapes[last];
        let start = self.offsets[last];
        start..start + o * i
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::Config(format!(
                "parameter vector has length {}, architecture needs {}",
                theta.len(),
                self.n_params
            )));
        }
        Ok(())
    }

    fn check_points(&self, xs: &[f64]) -> Result<usize> {
        let d = self.arch.input_dim;
        if xs.len() % d != 0 {
            return Err(Error::Config(format!(
                "points buffer of length {} is not a multiple of input_dim {d}",
                xs.len()
            )));
        }
        Ok(xs.len() / d)
    }

    pub fn forward(&self, theta: &ParamVector, x: &[f64]) -> Result<f64> {
        self.check_theta(&theta.0)?;
        if x.len() != self.arch.input_dim {
            return Err(Error::Config(format!(
                "point has dimension {}, architecture expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(self.eval_many(&theta.0, x, Stage::Full)[0])
    }

    /// Evaluates at `xs`, a flat buffer of `n * input_dim` coordinates.
    pub fn forward_batch(&self, theta: &ParamVector, xs: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(&theta.0)?;
        self.check_points(xs)?;
        Ok(self.eval_many(&theta.0, xs, Stage::Full))
    }

    /// Gradient of `sum_i cotangents[i] * u(xs[i])` with respect to theta.
    pub fn grad_params(&self, theta: &ParamVector, xs: &[f64], cotangents: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(&theta.0)?;
        let n = self.check_points(xs)?;
        if n != cotangents.len() {
            return Err(Error::Config(format!(
                "{n} points but {} cotangents",
                cotangents.len()
            )));
        }
        Ok(self.grad_many(&theta.0, xs, cotangents, Stage::Full))
    }

    /// View of the network that the Mercer prior scores (links removed).
    pub fn fluctuation(&self) -> Fluctuation {
        Fluctuation { net: self.clone() }
    }

    fn n_wrappers(&self, stage: Stage) -> usize {
        match stage {
            Stage::Full => self.arch.wrappers.len(),
            Stage::Fluctuation => self.n_links_start,
        }
    }

    /// Forward pass over a chunk of `n` points.
    fn network(&self, theta: &[f64], xs: &[f64]) -> Batch {
        let d = self.arch.input_dim;
        let n = xs.len() / d;
        let d0 = self.shapes[0].1;
        let mut input = vec![0.0; n * d0];
        match &self.arch.fourier {
            Some(ff) => {
                for p in 0..n {
                    ff.map_into(&xs[p * d..(p + 1) * d], &mut input[p * d0..(p + 1) * d0]);
                }
            }
            None => input.copy_from_slice(xs),
        }
        let act = self.arch.activation;
        let last = self.shapes.len() - 1;
        let mut acts = Vec::with_capacity(last + 1);
        let mut dacts = Vec::with_capacity(last);
        acts.push(input);
        for l in 0..last {
            let (o, i) = self.shapes[l];
            let w = &theta[self.offsets[l]..self.offsets[l] + o * i];
            let b = &theta[self.offsets[l] + o * i..self.offsets[l] + o * i + o];
            let mut z = vec![0.0; n * o];
            for row in z.chunks_exact_mut(o) {
                row.copy_from_slice(b);
            }
            // Z (n x o) += X (n x i) * W^T (i x o); W is row-major (o x i).
            gemm(n, i, o, &acts[l], i, 1, w, 1, i, 1.0, &mut z, o);
            let mut da = vec![0.0; n * o];
            for (zv, dv) in z.iter_mut().zip(da.iter_mut()) {
                let (a, d) = act.eval(*zv);
                *zv = a;
                *dv = d;
            }
            acts.push(z);
            dacts.push(da);
        }
        let (_, i) = self.shapes[last];
        let w = &theta[self.offsets[last]..self.offsets[last] + i];
        let b = theta[self.offsets[last] + i];
        let out = acts[last].chunks_exact(i).map(|a| b + dot(w, a)).collect();
        Batch { n, acts, dacts, out }
    }

    fn eval_chunk(&self, theta: &[f64], xs: &[f64], stage: Stage) -> Vec<f64> {
        let d = self.arch.input_dim;
        let batch = self.network(theta, xs);
        let wrappers = &self.arch.wrappers[..self.n_wrappers(stage)];
        (0..batch.n)
            .map(|p| {
                let t = xs[p * d];
                wrappers
                    .iter()
                    .fold(batch.out[p], |v, w| apply_wrapper(w, v, t, theta))
            })
            .collect()
    }

    fn eval_many(&self, theta: &[f64], xs: &[f64], stage: Stage) -> Vec<f64> {
        let d = self.arch.input_dim;
        let n = xs.len() / d;
        let parts = self.exec.map_chunks(n, CHUNK, |range| {
            self.eval_chunk(theta, &xs[range.start * d..range.end * d], stage)
        });
        parts.into_iter().flatten().collect()
    }

    fn grad_many(&self, theta: &[f64], xs: &[f64], cot: &[f64], stage: Stage) -> Vec<f64> {
        let d = self.arch.input_dim;
        let parts = self.exec.map_chunks(cot.len(), CHUNK, |range| {
            let mut g = vec![0.0; self.n_params];
            self.backprop_chunk(
                theta,
                &xs[range.start * d..range.end * d],
                &cot[range.clone()],
                stage,
                &mut g,
            );
            g
        });
        sum_vectors(parts, self.n_params)
    }

    fn backprop_chunk(&self, theta: &[f64], xs: &[f64], cot: &[f64], stage: Stage, g: &mut [f64]) {
        let d = self.arch.input_dim;
        let batch = self.network(theta, xs);
        let n = batch.n;
        let wrappers = &self.arch.wrappers[..self.n_wrappers(stage)];

        // Cotangent on the raw network output, point by point.
        let mut gout = vec![0.0; n];
        let mut inputs = vec![0.0; wrappers.len()];
        for p in 0..n {
            if cot[p] == 0.0 {
                continue;
            }
            let t = xs[p * d];
            let mut v = batch.out[p];
            for (k, wrapper) in wrappers.iter().enumerate() {
                inputs[k] = v;
                v = apply_wrapper(wrapper, v, t, theta);
            }
            let mut gv = cot[p];
            for (k, wrapper) in wrappers.iter().enumerate().rev() {
                match wrapper {
                    Wrapper::Identity => {}
                    Wrapper::TimesT => gv *= t,
                    Wrapper::Bridge => gv *= t * (1.0 - t),
                    Wrapper::Softplus => gv *= sigmoid(inputs[k]),
                    Wrapper::MeanShift { mean } => {
                        match mean {
                            MeanFunction::Linear { .. } => {}
                            MeanFunction::Learned => g[self.n_params - 1] += gv,
                            MeanFunction::LearnedAffine => {
                                g[self.n_params - 2] += gv;
                                g[self.n_params - 1] += gv * t;
                            }
                        }
                    }
                }
            }
            gout[p] = gv;
        }

        // Output layer.
        let last = self.shapes.len() - 1;
        let (_, i) = self.shapes[last];
        let off = self.offsets[last];
        for (p, &gv) in gout.iter().enumerate() {
            axpy(gv, &batch.acts[last][p * i..(p + 1) * i], &mut g[off..off + i]);
            g[off + i] += gv;
        }
        if last == 0 {
            return;
        }
        let w_out = &theta[off..off + i];
        let mut delta = vec![0.0; n * i];
        for p in 0..n {
            let row = &mut delta[p * i..(p + 1) * i];
            let da = &batch.dacts[last - 1][p * i..(p + 1) * i];
            for j in 0..i {
                row[j] = gout[p] * w_out[j] * da[j];
            }
        }
        for l in (0..last).rev() {
            let (o, i) = self.shapes[l];
            let off = self.offsets[l];
            {
                let (gw, gb) = g[off..off + o * i + o].split_at_mut(o * i);
                // dW (o x i) += delta^T (o x n) * X (n x i)
                gemm(o, n, i, &delta, 1, o, &batch.acts[l], i, 1, 1.0, gw, i);
                for row in delta.chunks_exact(o) {
                    for (b, dv) in gb.iter_mut().zip(row) {
                        *b += dv;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &theta[off..off + o * i];
            // delta_prev (n x i) = delta (n x o) * W (o x i), then times act'.
            let mut prev = vec![0.0; n * i];
            gemm(n, o, i, &delta, o, 1, w, i, 1, 0.0, &mut prev, i);
            for (pv, da) in prev.iter_mut().zip(&batch.dacts[l - 1]) {
                *pv *= da;
            }
            delta = prev;
        }
    }
}

#[inline]
fn apply_wrapper(wrapper: &Wrapper, v: f64, t: f64, theta: &[f64]) -> f64 {
    match wrapper {
        Wrapper::Identity => v,
        Wrapper::TimesT => t * v,
        Wrapper::Bridge => t * (1.0 - t) * v,
        Wrapper::Softplus => softplus(v),
        Wrapper::MeanShift { mean } => match mean {
            MeanFunction::Linear { slope, intercept } => slope * t + intercept + v,
            MeanFunction::Learned => v + theta[theta.len() - 1],
            MeanFunction::LearnedAffine => v + theta[theta.len() - 2] + theta[theta.len() - 1] * t,
        },
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl ParamField for FieldNet {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn values(&self, theta: &[f64], xs: &[f64]) -> Vec<f64> {
        self.eval_many(theta, xs, Stage::Full)
    }

    fn grad(&self, theta: &[f64], xs: &[f64], cotangents: &[f64]) -> Vec<f64> {
        self.grad_many(theta, xs, cotangents, Stage::Full)
    }
}

/// The field scored by the prior: the network with its leading shape wrappers
/// (`TimesT`, `Bridge`), stopping before the first link (`Softplus`,
/// `MeanShift`).
#[derive(Clone, Debug)]
pub struct Fluctuation {
    net: FieldNet,
}

impl ParamField for Fluctuation {
    fn n_params(&self) -> usize {
        self.net.n_params
    }

    fn values(&self, theta: &[f64], xs: &[f64]) -> Vec<f64> {
        self.net.eval_many(theta, xs, Stage::Fluctuation)
    }

    fn grad(&self, theta: &[f64], xs: &[f64], cotangents: &[f64]) -> Vec<f64> {
        self.net.grad_many(theta, xs, cotangents, Stage::Fluctuation)
    }
}

pub type FeatureFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Linear-in-parameters field `u_theta(x) = sum_j theta_j psi_j(x)` over fixed
/// features. Under a Mercer prior its parameter density is exactly Gaussian.
#[derive(Clone)]
pub struct LinearFeatures {
    features: Vec<FeatureFn>,
}

impl LinearFeatures {
    pub fn new(features: Vec<FeatureFn>) -> Self {
        LinearFeatures { features }
    }

    pub fn feature(&self, j: usize, x: f64) -> f64 {
        (self.features[j])(x)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

impl ParamField for LinearFeatures {
    fn n_params(&self) -> usize {
        self.features.len()
    }

    fn values(&self, theta: &[f64], xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&x| self.features.iter().zip(theta).map(|(f, t)| t * f(x)).sum())
            .collect()
    }

    fn grad(&self, _theta: &[f64], xs: &[f64], cotangents: &[f64]) -> Vec<f64> {
        self.features
            .iter()
            .map(|f| xs.iter().zip(cotangents).map(|(&x, c)| c * f(x)).sum())
            .collect()
    }
}

/// JSON document holding a model and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub architecture: Architecture,
    pub parameters: ParamVector,
}

impl ModelDocument {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        doc.architecture.validate()?;
        if doc.parameters.len() != doc.architecture.n_params() {
            return Err(Error::Config(format!(
                "document has {} parameters, architecture needs {}",
                doc.parameters.len(),
                doc.architecture.n_params()
            )));
        }
        Ok(doc)
    }
}
