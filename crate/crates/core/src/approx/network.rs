use ndarray::{linalg::general_mat_mul, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Swish,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Swish => z * sigmoid(z),
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a = f(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Swish => {
                let s = sigmoid(z);
                s + a * (1.0 - s)
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Shape of a fully connected network and where each layer lives in the flat parameter vector.
///
/// Weights of layer `l` are stored row-major as an `(in, out)` matrix, followed by the bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    sizes: Vec<usize>,
    activation: Activation,
    offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    pub fn new(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut len = 0;
        for w in sizes.windows(2) {
            offsets.push(len);
            len += w[0] * w[1] + w[1];
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            offsets,
            len,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `(weight range, bias range)` of layer `l` inside the flat vector.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = self.offsets[l];
        (w..w + i * o, w + i * o..w + i * o + o)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Partial derivatives of a scalar loss with respect to every parameter of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRecord {
    pub values: Vec<f64>,
}

impl GradientRecord {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn add_assign(&mut self, other: &GradientRecord) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Intermediate values retained by [`Mlp::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

/// Feed-forward network with a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layout: Layout,
    params: ParamVector,
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`, for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let layout = Layout::new(sizes, activation)?;
        let mut params = ParamVector::zeros(layout.num_params());
        for l in 0..layout.num_layers() {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let (w, b) = layout.layer_ranges(l);
            for v in &mut params.values[w.start..b.end] {
                *v = dist.sample(rng);
            }
        }
        Ok(Self { layout, params })
    }

    pub fn zeroed(sizes: &[usize], activation: Activation) -> Result<Self> {
        let layout = Layout::new(sizes, activation)?;
        let params = ParamVector::zeros(layout.num_params());
        Ok(Self { layout, params })
    }

    pub fn from_parts(layout: Layout, params: ParamVector) -> Result<Self> {
        check_dim(layout.num_params(), params.len())?;
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layout.output_dim()
    }

    pub fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let (w, _) = self.layout.layer_ranges(l);
        let (i, o) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
        ArrayView2::from_shape((i, o), &self.params.values[w]).expect("layout")
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (_, b) = self.layout.layer_ranges(l);
        ArrayView1::from(&self.params.values[b])
    }

    /// Output-layer bias, mutable. Handy for building constant-output networks.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let (_, b) = self.layout.layer_ranges(self.layout.num_layers() - 1);
        &mut self.params.values[b]
    }

    fn affine(&self, l: usize, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let w = self.weights(l);
        let mut z = Array2::zeros((x.nrows(), w.ncols()));
        z.assign(&self.bias(l).broadcast((x.nrows(), w.ncols())).unwrap());
        general_mat_mul(1.0, x, &w, 1.0, &mut z);
        z
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        check_dim(self.layout.input_dim(), x.ncols())
    }

    /// Batched inference; rows are samples.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let act = self.layout.activation;
        let last = self.layout.num_layers() - 1;
        let mut h = self.affine(0, &x);
        for l in 1..=last {
            h.mapv_inplace(|z| act.apply(z));
            h = self.affine(l, &h.view());
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("row");
        Ok(self.forward_batch(xb)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let act = self.layout.activation;
        let n_layers = self.layout.num_layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        inputs.push(x.to_owned());
        let mut out = self.affine(0, &x);
        for l in 1..n_layers {
            let a = out.mapv(|z| act.apply(z));
            pre.push(out);
            out = self.affine(l, &a.view());
            inputs.push(a);
        }
        Ok((out, ForwardCache { inputs, pre }))
    }

    /// Reverse pass. Returns the parameter gradient and, when `want_input` is set, the
    /// gradient with respect to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
        want_input: bool,
    ) -> (GradientRecord, Option<Array2<f64>>) {
        let mut grad = GradientRecord::zeros(self.layout.num_params());
        let d_in = self.backward_impl(cache, d_out, Some(&mut grad), want_input);
        (grad, d_in)
    }

    /// Gradient with respect to the input only; parameter gradients are not formed.
    pub fn input_gradient(&self, cache: &ForwardCache, d_out: ArrayView2<'_, f64>) -> Array2<f64> {
        self.backward_impl(cache, d_out, None, true).expect("input gradient requested")
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
        mut grad: Option<&mut GradientRecord>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let act = self.layout.activation;
        let n_layers = self.layout.num_layers();
        let mut dz = d_out.to_owned();
        for l in (0..n_layers).rev() {
            if let Some(g) = grad.as_deref_mut() {
                let (wr, br) = self.layout.layer_ranges(l);
                let (i, o) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
                let mut gw = ArrayViewMut2::from_shape((i, o), &mut g.values[wr]).expect("layout");
                general_mat_mul(1.0, &cache.inputs[l].t(), &dz, 1.0, &mut gw);
                let gb = dz.sum_axis(Axis(0));
                for (dst, src) in g.values[br].iter_mut().zip(gb.iter()) {
                    *dst += src;
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let mut da = dz.dot(&self.weights(l).t());
            if l == 0 {
                return Some(da);
            }
            let z = &cache.pre[l - 1];
            let a = &cache.inputs[l];
            ndarray::Zip::from(&mut da)
                .and(z)
                .and(a)
                .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            dz = da;
        }
        unreachable!("loop returns at layer 0")
    }

    /// Polyak averaging toward `source`: `self = (1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.params.values.iter_mut().zip(&source.params.values) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }
}

/// Stack row vectors into a batch matrix.
pub fn rows_to_array(rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        check_dim(width, r.len())?;
        out.row_mut(i).assign(&ArrayView1::from(r.as_slice()));
    }
    Ok(out)
}

pub fn concat_cols(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts match")
}

