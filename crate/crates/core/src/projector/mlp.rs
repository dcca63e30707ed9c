use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            t => Err(Error::format(format!("unknown activation tag {t}"))),
        }
    }
}

/// Affine layer `y = act(x W + b)` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    /// PyTorch-style `U(-1/sqrt(in), 1/sqrt(in))` for weights and bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = || T::of((2.0 * rng.uniform() - 1.0) * bound);
        let weight = Matrix::from_fn(input, output, |_, _| draw());
        let bias = Matrix::from_fn(1, output, |_, _| draw());
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Per-layer inputs and pre-activations from a forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    inputs: Vec<Matrix<T>>,
    pre: Vec<Matrix<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads<T> {
    pub weight: Vec<Matrix<T>>,
    pub bias: Vec<Matrix<T>>,
}

impl<T: Real> MlpGrads<T> {
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            a.axpy(T::one(), b);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.axpy(T::one(), b);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|m| m.scale(s));
    }

    /// Gradient blocks in the same order as [`Mlp::params_mut`].
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        self.weight
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }
}

impl<T: Real> Mlp<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.output_dim()) {
                return Err(Error::config(format!("layer {k}: bias shape {:?}", l.bias.shape())));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::config(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `input -> hidden (ReLU) -> output` with `hidden = output`.
    pub fn two_layer(input: usize, output: usize, rng: &mut RngStream) -> Self {
        Self {
            layers: vec![
                Dense::init(input, output, Activation::Relu, rng),
                Dense::init(output, output, Activation::Identity, rng),
            ],
        }
    }

    pub fn linear(input: usize, output: usize, rng: &mut RngStream) -> Self {
        Self {
            layers: vec![Dense::init(input, output, Activation::Identity, rng)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, MlpCache<T>)> {
        if x.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "projector expects input dim {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = h.matmul(&layer.weight)?;
            let b = layer.bias.row(0);
            for r in 0..z.rows() {
                for (v, &bb) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bb;
                }
            }
            let out = match layer.activation {
                Activation::Identity => z.clone(),
                Activation::Relu => z.map(|v| if v > T::zero() { v } else { T::zero() }),
            };
            inputs.push(std::mem::replace(&mut h, out));
            pre.push(z);
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Returns the input gradient and parameter gradients.
    pub fn backward(&self, cache: &MlpCache<T>, grad_out: &Matrix<T>) -> Result<(Matrix<T>, MlpGrads<T>)> {
        let mut g = grad_out.clone();
        let n = self.layers.len();
        let mut wg = Vec::with_capacity(n);
        let mut bg = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            if layer.activation == Activation::Relu {
                let z = &cache.pre[k];
                for (gv, &zv) in g.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            wg.push(cache.inputs[k].matmul_tn(&g)?);
            let mut b = Matrix::zeros(1, g.cols());
            for r in 0..g.rows() {
                for (acc, &v) in b.row_mut(0).iter_mut().zip(g.row(r)) {
                    *acc += v;
                }
            }
            bg.push(b);
            g = g.matmul_nt(&layer.weight)?;
        }
        wg.reverse();
        bg.reverse();
        Ok((g, MlpGrads { weight: wg, bias: bg }))
    }

    pub fn zero_grads(&self) -> MlpGrads<T> {
        MlpGrads {
            weight: self.layers.iter().map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols())).collect(),
            bias: self.layers.iter().map(|l| Matrix::zeros(1, l.output_dim())).collect(),
        }
    }

    /// Parameter blocks in a fixed order: `W0, b0, W1, b1, ...`.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Matrix<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

/// Forward pass of a single projector over a batch of student features.
pub fn project<T: Real>(projector: &Mlp<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    Ok(projector.forward(x)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, StreamTag};

    #[test]
    fn identity_layer() {
        let mlp = Mlp::new(vec![Dense {
            weight: Matrix::<f64>::identity(3),
            bias: Matrix::zeros(1, 3),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64 - 2.0);
        assert_eq!(project(&mlp, &x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let b = Matrix::<f64>::from_vec(1, 2, vec![0.5, -1.5]).unwrap();
        let mlp = Mlp::new(vec![Dense {
            weight: Matrix::zeros(4, 2),
            bias: b.clone(),
            activation: Activation::Identity,
        }])
        .unwrap();
        let y = project(&mlp, &Matrix::from_fn(3, 4, |r, c| (r + c) as f64)).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), b.row(0));
        }
        assert!(matches!(project(&mlp, &Matrix::zeros(1, 3)), Err(Error::Config(_))));
    }

    #[test]
    fn two_layer_matches_explicit_matmul() {
        let mut rng = RngStream::new(1, StreamTag::Init);
        let mlp = Mlp::<f64>::two_layer(3, 5, &mut rng);
        let x = Matrix::from_fn(4, 3, |_, _| rng.normal());
        let y = project(&mlp, &x).unwrap();
        for r in 0..4 {
            let mut h = vec![0.0; 5];
            for (o, hv) in h.iter_mut().enumerate() {
                let mut s = mlp.layers[0].bias.get(0, o);
                for k in 0..3 {
                    s += x.get(r, k) * mlp.layers[0].weight.get(k, o);
                }
                *hv = s.max(0.0);
            }
            for o in 0..5 {
                let mut s = mlp.layers[1].bias.get(0, o);
                for (k, hv) in h.iter().enumerate() {
                    s += hv * mlp.layers[1].weight.get(k, o);
                }
                assert!((y.get(r, o) - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(2, StreamTag::Init);
        let mlp = Mlp::<f64>::two_layer(3, 4, &mut rng);
        let x = Matrix::from_fn(5, 3, |_, _| rng.normal());
        let g = Matrix::from_fn(5, 4, |_, _| rng.normal());
        let loss = |m: &Mlp<f64>, x: &Matrix<f64>| {
            crate::numerics::dot(project(m, x).unwrap().as_slice(), g.as_slice())
        };
        let (_, cache) = mlp.forward(&x).unwrap();
        let (gx, grads) = mlp.backward(&cache, &g).unwrap();
        let err = finite_diff_check(|p| loss(&mlp, p), &gx, &x, 1e-5).unwrap();
        assert!(err < 1e-4, "input {err}");
        let tensors: Vec<Matrix<f64>> = grads.tensors().into_iter().cloned().collect();
        for (k, an) in tensors.iter().enumerate() {
            let base = mlp.params()[k].clone();
            let err = finite_diff_check(
                |p| {
                    let mut m = mlp.clone();
                    *m.params_mut()[k] = p.clone();
                    loss(&m, &x)
                },
                an,
                &base,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "block {k}: {err}");
        }
    }

    #[test]
    fn rejects_unchained_layers() {
        let mut rng = RngStream::new(3, StreamTag::Init);
        let a = Dense::<f64>::init(2, 3, Activation::Relu, &mut rng);
        let b = Dense::<f64>::init(4, 1, Activation::Identity, &mut rng);
        assert!(Mlp::new(vec![a, b]).is_err());
        assert!(Mlp::<f64>::new(vec![]).is_err());
    }
}
