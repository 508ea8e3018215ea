use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => f64::from(u8::from(a > 0.0)),
        }
    }
}

/// Fully connected network with a flat parameter vector.
///
/// Layer `l` stores its weights row-major as `(out, in)` followed by its
/// bias. Hidden layers use `activation`; the output layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Layer inputs saved by [`Mlp::forward`] for the backward pass.
pub struct Cache {
    acts: Vec<Array2<f64>>,
}

impl Mlp {
    /// Hidden weights uniform in `±1/√fan_in`, zero biases, and an all-zero
    /// output layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("bad layer sizes {sizes:?}")));
        }
        let mut params = Vec::new();
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if l + 1 == layers { 0.0 } else { rng.random_range(-bound..bound) });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn from_params(sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        let want: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if params.len() != want {
            return Err(Error::Shape(format!("expected {want} parameters, got {}", params.len())));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let off: usize = self.sizes[..l + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape((o, i), &self.params[off..off + i * o]).expect("layout");
        let b = ArrayView1::from(&self.params[off + i * o..off + i * o + o]);
        (w, b)
    }

    /// Network output for each row of `x`, plus the cache for backprop.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Cache) {
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers);
        let mut h = x.to_owned();
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t());
            z += &b;
            if l + 1 < layers {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            acts.push(h);
            h = z;
        }
        (h, Cache { acts })
    }

    /// Output only.
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    /// Gradient of `Σ dout ⊙ output` with respect to the parameters.
    pub fn backward(&self, cache: &Cache, dout: Array2<f64>) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = dout;
        let mut off_end = self.params.len();
        for l in (0..layers).rev() {
            let (w, _) = self.layer(l);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = off_end - (i * o + o);
            let input = &cache.acts[l];
            let gw = delta.t().dot(input);
            let gb: Array1<f64> = delta.sum_axis(Axis(0));
            grads[off..off + i * o].copy_from_slice(gw.as_standard_layout().as_slice().expect("contiguous"));
            grads[off + i * o..off_end].copy_from_slice(gb.as_slice().expect("contiguous"));
            if l > 0 {
                let mut next = delta.dot(&w);
                let act = self.activation;
                next.zip_mut_with(input, |d, a| *d *= act.deriv_from_output(*a));
                delta = next;
            }
            off_end = off;
        }
        grads
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Parameters of layer `l` as `(weights, bias)` slices; mainly for
    /// inspection in tests.
    pub fn layer_params(&self, l: usize) -> (Array2<f64>, Array1<f64>) {
        let (w, b) = self.layer(l);
        (w.to_owned(), b.to_owned())
    }
}

/// Copies `src` into columns `at..` of every row of `dst`.
pub(crate) fn put_cols(dst: &mut Array2<f64>, at: usize, src: ArrayView2<f64>) {
    dst.slice_mut(s![.., at..at + src.ncols()]).assign(&src);
}
