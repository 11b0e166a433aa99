use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Number of logits produced by every model (one per class).
pub const OUTPUT_DIM: usize = 2;

/// Fully connected layer, `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `±sqrt(1/fan_in)` for weights and biases.
    fn init(inputs: usize, outputs: usize, rng: &mut rng::Rng) -> Self {
        let bound = (1.0 / inputs as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weight = Array2::from_shape_simple_fn((inputs, outputs), &mut draw);
        let bias = Array1::from_shape_simple_fn(outputs, &mut draw);
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight);
        out += &self.bias;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    /// One hidden layer with a rectifier.
    Mlp { hidden: usize },
}

/// A two-logit classifier: either a linear head or a one-hidden-layer ReLU
/// network. The same type doubles as the container for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    hidden: Option<Dense>,
    output: Dense,
}

/// Intermediate values kept from the forward pass for backpropagation.
pub(crate) struct ForwardCache {
    pub hidden_pre: Option<Array2<f64>>,
    pub hidden_act: Option<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl Model {
    pub fn new(kind: ModelKind, input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        let mut rng = rng::stream(seed, 0x1417);
        match kind {
            ModelKind::Linear => Ok(Self {
                hidden: None,
                output: Dense::init(input_dim, OUTPUT_DIM, &mut rng),
            }),
            ModelKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::Config("hidden_dim must be positive for an MLP".into()));
                }
                let h = Dense::init(input_dim, hidden, &mut rng);
                let o = Dense::init(hidden, OUTPUT_DIM, &mut rng);
                Ok(Self {
                    hidden: Some(h),
                    output: o,
                })
            }
        }
    }

    pub fn linear(input_dim: usize, seed: u64) -> Result<Self> {
        Self::new(ModelKind::Linear, input_dim, seed)
    }

    pub fn mlp(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        Self::new(ModelKind::Mlp { hidden }, input_dim, seed)
    }

    /// Assembles a model from explicit layers, checking that they chain.
    pub fn from_layers(hidden: Option<Dense>, output: Dense) -> Result<Self> {
        if output.outputs() != OUTPUT_DIM || output.bias.len() != OUTPUT_DIM {
            return Err(Error::Shape(format!(
                "output layer must produce {OUTPUT_DIM} logits"
            )));
        }
        if let Some(h) = &hidden {
            if h.outputs() == 0 || h.bias.len() != h.outputs() || h.outputs() != output.inputs() {
                return Err(Error::Shape("hidden layer does not feed the output layer".into()));
            }
        }
        let model = Self { hidden, output };
        if !model.is_finite() {
            return Err(Error::Input("parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self
                .hidden
                .as_ref()
                .map(|h| Dense::zeros(h.inputs(), h.outputs())),
            output: Dense::zeros(self.output.inputs(), OUTPUT_DIM),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match &self.hidden {
            None => ModelKind::Linear,
            Some(h) => ModelKind::Mlp { hidden: h.outputs() },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .as_ref()
            .map_or(self.output.inputs(), |h| h.inputs())
    }

    /// 0 for a linear model.
    pub fn hidden_dim(&self) -> usize {
        self.hidden.as_ref().map_or(0, |h| h.outputs())
    }

    pub fn hidden_layer(&self) -> Option<&Dense> {
        self.hidden.as_ref()
    }

    pub fn output_layer(&self) -> &Dense {
        &self.output
    }

    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(batch)?.logits)
    }

    pub(crate) fn forward_cached(&self, batch: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} input features, batch has {}",
                self.input_dim(),
                batch.ncols()
            )));
        }
        match &self.hidden {
            None => Ok(ForwardCache {
                hidden_pre: None,
                hidden_act: None,
                logits: self.output.apply(&batch),
            }),
            Some(h) => {
                let pre = h.apply(&batch);
                let act = pre.mapv(|v| v.max(0.0));
                let logits = self.output.apply(&act.view());
                Ok(ForwardCache {
                    hidden_pre: Some(pre),
                    hidden_act: Some(act),
                    logits,
                })
            }
        }
    }

    /// Parameter tensors in a fixed order with their names and dims.
    pub fn named_tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            out.push(("hidden.weight", h.weight.shape().to_vec(), std_slice(h.weight.as_slice())));
            out.push(("hidden.bias", h.bias.shape().to_vec(), std_slice(h.bias.as_slice())));
        }
        out.push((
            "output.weight",
            self.output.weight.shape().to_vec(),
            std_slice(self.output.weight.as_slice()),
        ));
        out.push((
            "output.bias",
            self.output.bias.shape().to_vec(),
            std_slice(self.output.bias.as_slice()),
        ));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &mut self.hidden {
            out.push(h.weight.as_slice_mut().expect("standard layout"));
            out.push(h.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, s)| s.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.named_tensors()
            .into_iter()
            .flat_map(|(_, _, s)| s.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn scaled_add(&mut self, alpha: f64, other: &Model) {
        if let (Some(h), Some(oh)) = (&mut self.hidden, &other.hidden) {
            h.weight.scaled_add(alpha, &oh.weight);
            h.bias.scaled_add(alpha, &oh.bias);
        }
        self.output.weight.scaled_add(alpha, &other.output.weight);
        self.output.bias.scaled_add(alpha, &other.output.bias);
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn hidden_mut(&mut self) -> Option<&mut Dense> {
        self.hidden.as_mut()
    }

    pub(crate) fn output_mut(&mut self) -> &mut Dense {
        &mut self.output
    }
}

fn std_slice(s: Option<&[f64]>) -> &[f64] {
    s.expect("parameters are stored in standard layout")
}

/// Sums rows of a matrix into a vector (bias gradients).
pub(crate) fn column_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    /// Straightforward triple-loop product used as an independent oracle.
    fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut acc = 0.0;
                for k in 0..a.ncols() {
                    acc += a[[i, k]] * b[[k, j]];
                }
                out[[i, j]] = acc;
            }
        }
        out
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = Model::mlp(3, 4, 1).unwrap().zeros_like();
        let z = m.forward(array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]].view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_head() {
        let out = Dense {
            weight: array![[1.0, 0.0], [0.0, 1.0]],
            bias: array![0.0, 0.0],
        };
        let m = Model::from_layers(None, out).unwrap();
        let z = m.forward(array![[1.0, 0.0]].view()).unwrap();
        assert_eq!(z, array![[1.0, 0.0]]);
    }

    #[test]
    fn forward_matches_naive_matmul() {
        let m = Model::mlp(5, 7, 42).unwrap();
        let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let h = m.hidden_layer().unwrap();
        let mut pre = naive_matmul(&x, &h.weight);
        for mut row in pre.rows_mut() {
            for (v, b) in row.iter_mut().zip(h.bias.iter()) {
                *v = (*v + b).max(0.0);
            }
        }
        let mut want = naive_matmul(&pre, &m.output_layer().weight);
        for mut row in want.rows_mut() {
            for (v, b) in row.iter_mut().zip(m.output_layer().bias.iter()) {
                *v += b;
            }
        }
        let got = m.forward(x.view()).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = Model::linear(3, 0).unwrap();
        assert!(matches!(
            m.forward(Array2::zeros((2, 4)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Model::mlp(16, 8, 9).unwrap();
        assert_eq!(a, Model::mlp(16, 8, 9).unwrap());
        assert_ne!(a, Model::mlp(16, 8, 10).unwrap());
        let w = &a.hidden_layer().unwrap().weight;
        assert!(w.iter().all(|v| v.abs() <= 0.25));
        assert_eq!(a.kind(), ModelKind::Mlp { hidden: 8 });
        assert_eq!(a.num_params(), 16 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut m = Model::mlp(3, 2, 5).unwrap();
        let p = m.flat_params();
        let mut q = p.clone();
        q[0] += 1.0;
        m.set_flat_params(&q).unwrap();
        assert_eq!(m.flat_params(), q);
        assert!(m.set_flat_params(&p[1..]).is_err());
    }
}
