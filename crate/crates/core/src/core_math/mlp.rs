use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::matrix::{affine, Matrix};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const MLP_FORMAT_VERSION: u32 = 1;

/// One affine layer. `weight` is `out×in`, `bias` is `1×out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Multilayer perceptron: ReLU after every layer but the last, identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    /// He-initialized weights, zero biases. `widths` lists every layer width
    /// including input and output, so `[3, 64, 64, 2]` has two hidden layers.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::arg(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (inp, out) = (w[0], w[1]);
                let std = (2.0 / inp as f64).sqrt();
                let data = (0..inp * out).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
                Layer { weight: Matrix::from_vec(out, inp, data).expect("sized above"), bias: Matrix::zeros(1, out) }
            })
            .collect();
        Ok(MlpParams { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let p = MlpParams { layers };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("MLP without layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::shape(format!(
                    "layer {i}: bias length {} for {} outputs",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::Numeric { location: format!("MLP layer {i} parameters") });
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Number of parameter tensors (weight and bias per layer).
    pub fn tensor_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Forward pass on a batch of row inputs.
    pub fn forward_batch(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::shape(format!("MLP expects width {}, got {}", self.in_dim(), input.cols())));
        }
        let last = self.layers.len() - 1;
        let mut h = affine(input, &self.layers[0].weight, &self.layers[0].bias);
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = affine(&h, &layer.weight, &layer.bias);
            }
            if i < last {
                h.as_mut_slice().iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v = 0.0
                    }
                });
            }
        }
        Ok(h)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(input))?.into_vec())
    }

    /// Registers parameters on a tape. With `first_slot = Some(s)` the tensors
    /// become differentiable params in slots `s..s + tensor_count()`, in the
    /// order of [`MlpParams::params`]; with `None` they are constants.
    pub fn on_tape(&self, tape: &mut Tape, first_slot: Option<usize>) -> MlpVars {
        let vars = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match first_slot {
                Some(s) => (tape.param(s + 2 * i, &l.weight), tape.param(s + 2 * i + 1, &l.bias)),
                None => (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())),
            })
            .collect();
        MlpVars { layers: vars }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MlpDocument { format_version: MLP_FORMAT_VERSION, layers: self.layers.clone() })
            .expect("matrices always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MlpDocument =
            serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        if doc.format_version != MLP_FORMAT_VERSION {
            return Err(Error::Version { found: doc.format_version, expected: MLP_FORMAT_VERSION });
        }
        MlpParams::from_layers(doc.layers)
    }
}

#[derive(Serialize, Deserialize)]
struct MlpDocument {
    format_version: u32,
    layers: Vec<Layer>,
}

/// Tape handles for an [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(h, w, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_emit_bias() {
        let layer = Layer { weight: Matrix::zeros(2, 3), bias: Matrix::row_vector(&[0.25, -1.5]) };
        let mlp = MlpParams::from_layers(vec![layer]).unwrap();
        assert_eq!(mlp.forward(&[9.0, -3.0, 1.0]).unwrap(), vec![0.25, -1.5]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mlp =
            MlpParams::from_layers(vec![Layer { weight: Matrix::identity(2), bias: Matrix::zeros(1, 2) }]).unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn forward_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = MlpParams::new(&[3, 5, 4, 2], &mut rng).unwrap();
        let x = [0.3, -1.2, 0.7];

        // Independent evaluation with explicit loops.
        let mut h: Vec<f64> = x.to_vec();
        for (i, l) in mlp.layers().iter().enumerate() {
            let mut next = vec![0.0; l.out_dim()];
            for o in 0..l.out_dim() {
                let mut s = l.bias.get(0, o);
                for k in 0..l.in_dim() {
                    s += l.weight.get(o, k) * h[k];
                }
                next[o] = if i + 1 < mlp.layers().len() { s.max(0.0) } else { s };
            }
            h = next;
        }
        let got = mlp.forward(&x).unwrap();
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_is_bitwise_repeatable_and_tape_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp = MlpParams::new(&[2, 8, 8, 3], &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2], [-0.4, 1.0]]).unwrap();
        let a = mlp.forward_batch(&x).unwrap();
        let b = mlp.forward_batch(&x).unwrap();
        assert_eq!(a, b);

        let mut tape = Tape::new();
        let vars = mlp.on_tape(&mut tape, None);
        let xv = tape.constant(x);
        let y = vars.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y), &a);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = MlpParams::new(&[2, 4, 1], &mut rng).unwrap();
        assert!(matches!(mlp.forward(&[1.0]), Err(Error::Shape(_))));
        let bad = vec![
            Layer { weight: Matrix::zeros(3, 2), bias: Matrix::zeros(1, 3) },
            Layer { weight: Matrix::zeros(1, 4), bias: Matrix::zeros(1, 1) },
        ];
        assert!(MlpParams::from_layers(bad).is_err());
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = MlpParams::new(&[2, 3, 1], &mut rng).unwrap();
        let text = mlp.to_json();
        assert_eq!(MlpParams::from_json(&text).unwrap(), mlp);
        let bumped = text.replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(MlpParams::from_json(&bumped), Err(Error::Version { found: 9, .. })));
    }
}
