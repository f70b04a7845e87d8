use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

use super::params::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    XavierUniform,
}

/// Architecture of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width first, output width last.
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: Activation,
    #[serde(default)]
    pub init_scheme: InitScheme,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Self {
        MlpSpec {
            layer_widths,
            hidden_activation: Activation::Tanh,
            init_scheme: InitScheme::XavierUniform,
        }
    }

    /// `input -> hidden... -> output`
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut w = Vec::with_capacity(hidden.len() + 2);
        w.push(input);
        w.extend_from_slice(hidden);
        w.push(output);
        Self::new(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least two layer widths, got {}",
                self.layer_widths.len()
            )));
        }
        if let Some(i) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("layer width {i} is zero")));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Sum over layers of `fan_in * fan_out + fan_out`.
    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Multilayer perceptron; the final layer has no activation.
///
/// Parameters live in a [`ParamStore`] as `layer{i}.weight` (shape
/// `[fan_out, fan_in]`, row-major) followed by `layer{i}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    spec: MlpSpec,
    pub params: ParamStore<T>,
}

/// Per-layer activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    /// `layers[0]` is the input, `layers[l]` the post-activation output of
    /// hidden layer `l - 1`.
    layers: Vec<Vec<T>>,
    pub output: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<T: Scalar> Mlp<T> {
    /// Xavier-uniform weights from `seed`'s init stream, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Stream::Init);
        Self::init_with_rng(spec, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (l, w) in spec.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| T::of(rng::uniform(rng, -limit, limit)))
                .collect();
            params.insert(
                format!("layer{l}.weight"),
                Tensor::from_vec(&[fan_out, fan_in], weights)?,
            )?;
            params.insert(format!("layer{l}.bias"), Tensor::zeros(&[fan_out]))?;
        }
        Ok(Mlp { spec, params })
    }

    /// All weights and biases zero.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (l, w) in spec.layer_widths.windows(2).enumerate() {
            params.insert(format!("layer{l}.weight"), Tensor::zeros(&[w[1], w[0]]))?;
            params.insert(format!("layer{l}.bias"), Tensor::zeros(&[w[1]]))?;
        }
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: ParamStore<T>) -> Result<Self> {
        let expected = Self::zeros(spec.clone())?;
        expected.params.ensure_congruent(&params)?;
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    #[inline]
    fn weight(&self, l: usize) -> &[T] {
        &self.params.at(2 * l).data
    }

    #[inline]
    fn bias(&self, l: usize) -> &[T] {
        &self.params.at(2 * l + 1).data
    }

    /// Single-input forward pass returning the final-layer pre-activation.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_batch(input, 1)?.output)
    }

    /// Forward over `batch` row-major inputs.
    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<ForwardCache<T>> {
        check_len(batch * self.input_width(), inputs.len(), "mlp input")?;
        let n_layers = self.spec.num_layers();
        let mut layers = Vec::with_capacity(n_layers);
        layers.push(inputs.to_vec());
        let mut output = Vec::new();
        for l in 0..n_layers {
            let fan_in = self.spec.layer_widths[l];
            let fan_out = self.spec.layer_widths[l + 1];
            let (w, b) = (self.weight(l), self.bias(l));
            let x = layers.last().expect("input present");
            let mut z = vec![T::zero(); batch * fan_out];
            for s in 0..batch {
                let xs = &x[s * fan_in..(s + 1) * fan_in];
                let zs = &mut z[s * fan_out..(s + 1) * fan_out];
                for j in 0..fan_out {
                    zs[j] = b[j] + dot(&w[j * fan_in..(j + 1) * fan_in], xs);
                }
            }
            if l + 1 == n_layers {
                output = z;
            } else {
                match self.spec.hidden_activation {
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                    Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(T::zero())),
                }
                layers.push(z);
            }
        }
        Ok(ForwardCache {
            batch,
            layers,
            output,
        })
    }

    /// Reverse-mode gradient of `<upstream, output>` summed over the batch.
    ///
    /// Parameter gradients are accumulated into `grads` when given; the
    /// returned vector holds the per-sample input gradients.
    pub fn backward_into(
        &self,
        cache: &ForwardCache<T>,
        upstream: &[T],
        mut grads: Option<&mut ParamStore<T>>,
    ) -> Result<Vec<T>> {
        let batch = cache.batch;
        check_len(batch * self.output_width(), upstream.len(), "mlp upstream")?;
        if let Some(g) = grads.as_deref() {
            self.params.ensure_congruent(g)?;
        }
        let n_layers = self.spec.num_layers();
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let fan_in = self.spec.layer_widths[l];
            let fan_out = self.spec.layer_widths[l + 1];
            let x = &cache.layers[l];
            if let Some(g) = grads.as_deref_mut() {
                {
                    let gw = &mut g.at_mut(2 * l).data;
                    for s in 0..batch {
                        let xs = &x[s * fan_in..(s + 1) * fan_in];
                        for j in 0..fan_out {
                            let d = delta[s * fan_out + j];
                            if d != T::zero() {
                                axpy(d, xs, &mut gw[j * fan_in..(j + 1) * fan_in]);
                            }
                        }
                    }
                }
                let gb = &mut g.at_mut(2 * l + 1).data;
                for s in 0..batch {
                    for j in 0..fan_out {
                        gb[j] += delta[s * fan_out + j];
                    }
                }
            }
            let w = self.weight(l);
            let mut dx = vec![T::zero(); batch * fan_in];
            for s in 0..batch {
                let dxs = &mut dx[s * fan_in..(s + 1) * fan_in];
                for j in 0..fan_out {
                    let d = delta[s * fan_out + j];
                    if d != T::zero() {
                        axpy(d, &w[j * fan_in..(j + 1) * fan_in], dxs);
                    }
                }
            }
            if l > 0 {
                // x holds this layer's input, i.e. the previous hidden activation.
                match self.spec.hidden_activation {
                    Activation::Tanh => {
                        for (d, &a) in dx.iter_mut().zip(x) {
                            *d *= T::one() - a * a;
                        }
                    }
                    Activation::Relu => {
                        for (d, &a) in dx.iter_mut().zip(x) {
                            if a <= T::zero() {
                                *d = T::zero();
                            }
                        }
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Parameter gradients and input gradient for a single input.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> Result<(ParamStore<T>, Vec<T>)> {
        let cache = self.forward_batch(input, 1)?;
        let mut grads = self.params.zeros_like();
        let input_grad = self.backward_into(&cache, upstream, Some(&mut grads))?;
        Ok((grads, input_grad))
    }
}

/// Dot product with eight independent accumulators.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, rel_error};
    use proptest::prelude::*;

    fn random_input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, Stream::Eval);
        (0..n).map(|_| rng::uniform(&mut rng, -1.5, 1.5)).collect()
    }

    /// Straight-line re-implementation: nested loops over explicit matrices.
    fn oracle_forward(spec: &MlpSpec, p: &ParamStore<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = spec.num_layers();
        for l in 0..n {
            let w = p.get(&format!("layer{l}.weight")).unwrap();
            let b = p.get(&format!("layer{l}.bias")).unwrap();
            let (rows, cols) = (w.shape[0], w.shape[1]);
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                let mut s = b.data[r];
                for c in 0..cols {
                    s += w.data[r * cols + c] * h[c];
                }
                out[r] = if l + 1 < n {
                    match spec.hidden_activation {
                        Activation::Tanh => s.tanh(),
                        Activation::Relu => s.max(0.0),
                    }
                } else {
                    s
                };
            }
            h = out;
        }
        h
    }

    #[test]
    fn parameter_count_formula() {
        let spec = MlpSpec::new(vec![2, 4, 1]);
        assert_eq!(spec.param_count(), 17);
        let net = Mlp::<f32>::init(spec, 0).unwrap();
        assert_eq!(net.params.numel(), 17);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            Mlp::<f32>::init(MlpSpec::new(vec![2, 0, 1]), 0),
            Err(Error::Config(_))
        ));
        assert!(Mlp::<f32>::init(MlpSpec::new(vec![3]), 0).is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = MlpSpec::new(vec![3, 8, 2]);
        let a = Mlp::<f32>::init(spec.clone(), 7).unwrap();
        let b = Mlp::<f32>::init(spec.clone(), 7).unwrap();
        let c = Mlp::<f32>::init(spec, 8).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        assert!(a.params.flat().zip(c.params.flat()).any(|(x, y)| x != y));
        assert!(a.params.get("layer0.bias").unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(MlpSpec::new(vec![3, 5, 2])).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::<f64>::zeros(MlpSpec::new(vec![3, 3])).unwrap();
        let w = &mut net.params.get_mut("layer0.weight").unwrap().data;
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.2, 4.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
        // input_grad = W^T upstream
        let (_, gx) = net.backward(&x, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(gx, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn linear_layer_input_grad_is_transpose_product() {
        let net = Mlp::<f64>::init(MlpSpec::new(vec![3, 2]), 3).unwrap();
        let up = [0.7, -1.1];
        let (_, gx) = net.backward(&[0.1, 0.2, 0.3], &up).unwrap();
        let w = &net.params.get("layer0.weight").unwrap().data;
        for i in 0..3 {
            let expect = w[i] * up[0] + w[3 + i] * up[1];
            assert!((gx[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let net = Mlp::<f32>::init(MlpSpec::new(vec![3, 4, 1]), 0).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            net.backward(&[1.0, 2.0, 3.0], &[1.0, 1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::<f64>::init(MlpSpec::new(vec![3, 6, 2]), 11).unwrap();
        let (g, gx) = net.backward(&[0.5, -0.5, 1.0], &[0.0, 0.0]).unwrap();
        assert!(g.flat().all(|v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Relu), (3, Activation::Tanh)] {
            let mut spec = MlpSpec::new(vec![5, 9, 7, 3]);
            spec.hidden_activation = act;
            let net = Mlp::<f64>::init(spec.clone(), seed).unwrap();
            let mut net = net;
            // nonzero biases exercise the bias path
            for (i, v) in net.params.flat_mut().enumerate() {
                if i % 7 == 0 {
                    *v += 0.05;
                }
            }
            let x = random_input(5, seed);
            let got = net.forward(&x).unwrap();
            let want = oracle_forward(&spec, &net.params, &x);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn batched_forward_matches_single() {
        let net = Mlp::<f32>::init(MlpSpec::new(vec![4, 16, 3]), 5).unwrap();
        let xs: Vec<f32> = random_input(12, 1).iter().map(|&v| v as f32).collect();
        let batch = net.forward_batch(&xs, 3).unwrap();
        for s in 0..3 {
            let single = net.forward(&xs[s * 4..(s + 1) * 4]).unwrap();
            assert_eq!(&batch.output[s * 3..(s + 1) * 3], single.as_slice());
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_random_nets() {
        for case in 0..10u64 {
            let widths = vec![
                1 + (case as usize % 4),
                3 + (case as usize * 5) % 9,
                2 + (case as usize * 3) % 7,
                1 + (case as usize % 3),
            ];
            let net = Mlp::<f64>::init(MlpSpec::new(widths.clone()), 100 + case).unwrap();
            let x = random_input(widths[0], case);
            let up = random_input(*widths.last().unwrap(), 50 + case);
            let (g, gx) = net.backward(&x, &up).unwrap();
            let objective = |n: &Mlp<f64>, x: &[f64]| -> f64 {
                n.forward(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            for i in 0..net.params.numel() {
                let fd = central_difference(1e-5, |h| {
                    let mut p = net.clone();
                    let v = p.params.flat_get(i);
                    p.params.flat_set(i, v + h);
                    objective(&p, &x)
                });
                let err = rel_error(g.flat_get(i), fd);
                assert!(err < 1e-4, "case {case} param {i}: {} vs {fd}", g.flat_get(i));
            }
            for i in 0..x.len() {
                let fd = central_difference(1e-5, |h| {
                    let mut xp = x.clone();
                    xp[i] += h;
                    objective(&net, &xp)
                });
                assert!(rel_error(gx[i], fd) < 1e-4);
            }
        }
    }

    proptest! {
        #[test]
        fn param_count_holds_for_arbitrary_widths(widths in prop::collection::vec(1usize..12, 2..6)) {
            let spec = MlpSpec::new(widths);
            let net = Mlp::<f32>::zeros(spec.clone()).unwrap();
            prop_assert_eq!(net.params.numel(), spec.param_count());
        }

        #[test]
        fn forward_and_backward_are_deterministic(seed in 0u64..1000) {
            let net = Mlp::<f32>::init(MlpSpec::new(vec![3, 10, 2]), seed).unwrap();
            let x = [0.1f32, -0.4, 0.9];
            let (g1, x1) = net.backward(&x, &[1.0, -1.0]).unwrap();
            let (g2, x2) = net.backward(&x, &[1.0, -1.0]).unwrap();
            prop_assert_eq!(g1.checksum(), g2.checksum());
            prop_assert_eq!(x1, x2);
        }
    }
}
