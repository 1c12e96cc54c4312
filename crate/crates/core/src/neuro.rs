//! Small fully-connected networks with hand-derived backpropagation and Adam.
//!
//! The same code serves the behavior-cloning policy (tanh hidden layers,
//! softmax head) and the reward model (ReLU hidden layers, scalar head).
//! Networks are generic over the float type: training runs in `f32`, while
//! gradient checks instantiate the identical code in `f64`.

use std::fmt::{Debug, Display};
use std::io::{Read, Write};
use std::iter::Sum;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Real:
    LinalgScalar + Float + FromPrimitive + ToPrimitive + ScalarOperand + Debug + Display + Send + Sync + Sum + 'static
{
    const BYTES: u8;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> f64;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("float conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("float conversion")
    }
}

impl Real for f32 {
    const BYTES: u8 = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> f64 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes")) as f64
    }
}

impl Real for f64 {
    const BYTES: u8 = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Outputs are logits; [`DenseNet::forward`] returns probabilities.
    Softmax,
    /// Single linear output.
    Scalar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<T: Real = f32> {
    sizes: Vec<usize>,
    activation: Activation,
    head: Head,
    /// Layer `l` maps `sizes[l]` to `sizes[l + 1]`; stored `(in, out)`.
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
}

/// Intermediate activations recorded by [`DenseNet::forward_tape`].
pub struct Tape<T: Real> {
    /// `layers[0]` is the input batch, `layers[l]` the output of hidden layer `l`.
    layers: Vec<Array2<T>>,
    pub output: Array2<T>,
}

/// Gradient with the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Real> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.zip_mut_with(b, |x, &y| *x = *x + y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.zip_mut_with(b, |x, &y| *x = *x + y);
        }
    }

    pub fn scale(&mut self, k: T) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * k);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * k);
        }
    }

    /// Flattened in checkpoint order: per layer, weights row-major then bias.
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt()
    }
}

impl<T: Real> DenseNet<T> {
    /// Randomly initialised network, weights uniform in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(sizes: &[usize], activation: Activation, head: Head, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation, head)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut net.weights {
            let (fan_in, fan_out) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| T::of(rng.gen_range(-limit..limit)));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], activation: Activation, head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Usage(format!("invalid layer sizes {sizes:?}")));
        }
        if head == Head::Scalar && sizes[sizes.len() - 1] != 1 {
            return Err(Error::Usage("scalar head needs exactly one output".into()));
        }
        let weights = sizes.windows(2).map(|s| Array2::zeros((s[0], s[1]))).collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            head,
            weights,
            biases,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|s| s[0] * s[1] + s[1]).sum()
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<T>] {
        &mut self.biases
    }

    fn activate(&self, z: &mut Array2<T>) {
        match self.activation {
            Activation::Tanh => z.mapv_inplace(|v| v.tanh()),
            Activation::Relu => z.mapv_inplace(|v| v.max(T::zero())),
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_len() {
            return Err(Error::Usage(format!(
                "network expects {} inputs, got {cols}",
                self.input_len()
            )));
        }
        Ok(())
    }

    /// Raw outputs (logits or scalar rewards) for a batch of rows.
    pub fn outputs(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut h = x.dot(&self.weights[0]) + &self.biases[0];
        if last > 0 {
            self.activate(&mut h);
        }
        for l in 1..=last {
            h = h.dot(&self.weights[l]) + &self.biases[l];
            if l < last {
                self.activate(&mut h);
            }
        }
        Ok(h)
    }

    /// Single-input forward pass: the reward for a scalar head, class
    /// probabilities for a softmax head.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let out = self.outputs(row)?;
        let mut v = out.row(0).to_vec();
        if self.head == Head::Softmax {
            softmax_in_place(&mut v);
        }
        Ok(v)
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn argmax(&self, x: &[T]) -> Result<usize> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let out = self.outputs(row)?;
        Ok(argmax(out.row(0).iter().copied()))
    }

    /// Forward pass that keeps what [`DenseNet::backward`] needs.
    pub fn forward_tape(&self, x: Array2<T>) -> Result<Tape<T>> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut layers = Vec::with_capacity(self.weights.len());
        layers.push(x);
        for l in 0..last {
            let mut h = layers[l].dot(&self.weights[l]) + &self.biases[l];
            self.activate(&mut h);
            layers.push(h);
        }
        let output = layers[last].dot(&self.weights[last]) + &self.biases[last];
        Ok(Tape { layers, output })
    }

    /// Gradient of a scalar loss given its derivative with respect to the
    /// raw outputs recorded in `tape`.
    pub fn backward(&self, tape: &Tape<T>, d_output: ArrayView2<T>) -> Gradients<T> {
        let n_layers = self.weights.len();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = d_output.to_owned();
        for l in (0..n_layers).rev() {
            grads.weights[l] = tape.layers[l].t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l].t());
                let h = &tape.layers[l];
                match self.activation {
                    Activation::Tanh => {
                        ndarray::Zip::from(&mut upstream)
                            .and(h)
                            .for_each(|d, &a| *d = *d * (T::one() - a * a));
                    }
                    Activation::Relu => {
                        ndarray::Zip::from(&mut upstream).and(h).for_each(|d, &a| {
                            if a <= T::zero() {
                                *d = T::zero();
                            }
                        });
                    }
                }
                delta = upstream;
            }
        }
        grads
    }

    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Usage(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
            b.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Converts the parameters to another float type.
    pub fn cast<U: Real>(&self) -> DenseNet<U> {
        DenseNet {
            sizes: self.sizes.clone(),
            activation: self.activation,
            head: self.head,
            weights: self.weights.iter().map(|w| w.mapv(|v| U::of(v.f64()))).collect(),
            biases: self.biases.iter().map(|b| b.mapv(|v| U::of(v.f64()))).collect(),
        }
    }

    fn update_params(&mut self, mut f: impl FnMut(usize, &mut T)) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                f(k, v);
                k += 1;
            }
        }
    }
}

pub fn argmax<T: PartialOrd>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in v.iter_mut() {
        *x = *x / total;
    }
}

/// Mean softmax cross-entropy over a batch of logits.
///
/// Returns `(loss, d loss / d logits, number of argmax hits)`.
pub fn softmax_cross_entropy<T: Real>(logits: ArrayView2<T>, labels: &[usize]) -> (f64, Array2<T>, usize) {
    let n = logits.nrows();
    let mut grad = logits.to_owned();
    let mut loss = 0.0;
    let mut correct = 0;
    let inv_n = T::of(1.0 / n as f64);
    for (mut row, &label) in grad.rows_mut().into_iter().zip(labels) {
        if argmax(row.iter().copied()) == label {
            correct += 1;
        }
        let slice = row.as_slice_mut().expect("standard layout");
        softmax_in_place(slice);
        loss -= slice[label].f64().max(1e-300).ln();
        slice[label] = slice[label] - T::one();
        for v in slice.iter_mut() {
            *v = *v * inv_n;
        }
    }
    (loss / n as f64, grad, correct)
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &DenseNet<T>, lr: f64) -> Self {
        let n = net.n_params();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }

    /// Applies one update. Non-finite gradients abort without touching the
    /// network.
    pub fn update(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) -> Result<()> {
        let g = grads.flat();
        if g.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "gradient has {} entries, optimizer expects {}",
                g.len(),
                self.m.len()
            )));
        }
        let bad: Vec<usize> = g.iter().enumerate().filter(|(_, v)| !v.is_finite()).map(|(i, _)| i).collect();
        if !bad.is_empty() {
            return Err(Error::Training(format!(
                "non-finite gradient at optimizer step {}: {} of {} entries (first at parameter {})",
                self.step + 1,
                bad.len(),
                g.len(),
                bad[0]
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        net.update_params(|k, theta| {
            let gk = g[k];
            m[k] = b1 * m[k] + (T::one() - b1) * gk;
            v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        });
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"SPLNET\0\0";
const FORMAT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl<T: Real> DenseNet<T> {
    /// Binary checkpoint: magic, format version, float width, activation and
    /// head tags, a free-form tag string, layer sizes, then every parameter
    /// little-endian in [`DenseNet::params_flat`] order.
    pub fn to_bytes(&self, tag: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.n_params() * T::BYTES as usize);
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, FORMAT_VERSION);
        out.push(T::BYTES);
        out.push(match self.activation {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
        out.push(match self.head {
            Head::Softmax => 0,
            Head::Scalar => 1,
        });
        push_u32(&mut out, tag.len() as u32);
        out.extend_from_slice(tag.as_bytes());
        push_u32(&mut out, self.sizes.len() as u32);
        for &s in &self.sizes {
            push_u32(&mut out, s as u32);
        }
        for p in self.params_flat() {
            p.write_le(&mut out);
        }
        out
    }

    /// Inverse of [`DenseNet::to_bytes`]; parameters stored at a different
    /// width are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let width = r.u8()?;
        if width != 4 && width != 8 {
            return Err(Error::Format(format!("bad float width {width}")));
        }
        let activation = match r.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            x => return Err(Error::Format(format!("bad activation tag {x}"))),
        };
        let head = match r.u8()? {
            0 => Head::Softmax,
            1 => Head::Scalar,
            x => return Err(Error::Format(format!("bad head tag {x}"))),
        };
        let tag_len = r.u32()? as usize;
        let tag = String::from_utf8(r.take(tag_len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let n_sizes = r.u32()? as usize;
        let sizes = (0..n_sizes).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&sizes, activation, head).map_err(|e| Error::Format(e.to_string()))?;
        let params = (0..net.n_params())
            .map(|_| {
                let raw = r.take(width as usize)?;
                Ok(T::of(if width == 4 { f32::read_le(raw) } else { f64::read_le(raw) }))
            })
            .collect::<Result<Vec<T>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        net.set_params_flat(&params)?;
        Ok((net, tag))
    }

    pub fn save(&self, path: &Path, tag: &str) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes(tag))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
