use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::probkit::RandomSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Weights drawn from `U(-1/√fan_in, 1/√fan_in)`.
fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut RandomSource) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
        .collect();
    Tensor::new(rows, cols, values).expect("length matches")
}

/// Fully connected layer `act(x · Wᵀ + b)`; `x` holds one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut RandomSource) -> Self {
        Self {
            weights: uniform_init(outputs, inputs, inputs, rng),
            bias: Tensor::zeros(1, outputs),
            activation,
        }
    }

    pub fn from_parts(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if bias.shape() != [1, weights.rows()] {
            return Err(Error::Shape(format!(
                "bias {:?} for weights {:?}",
                bias.shape(),
                weights.shape()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundDense<'t> {
        BoundDense {
            weights: tape.param(self.weights.clone()),
            bias: tape.param(self.bias.clone()),
            activation: self.activation,
        }
    }

    pub fn parameters(&self) -> [&Tensor; 2] {
        [&self.weights, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weights, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDense<'t> {
    pub weights: Var<'t>,
    pub bias: Var<'t>,
    pub activation: Activation,
}

impl<'t> BoundDense<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let y = x.affine(self.weights, Some(self.bias))?;
        match self.activation {
            Activation::Tanh => y.tanh(),
            Activation::Identity => Ok(y),
        }
    }

    pub fn vars(&self) -> [Var<'t>; 2] {
        [self.weights, self.bias]
    }
}

/// Elman cell `h = tanh(W·h_prev + U·x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCell {
    /// hidden × hidden
    pub recurrent: Tensor,
    /// hidden × input
    pub input: Tensor,
    pub bias: Tensor,
}

impl RnnCell {
    pub fn new(inputs: usize, hidden: usize, rng: &mut RandomSource) -> Self {
        Self {
            recurrent: uniform_init(hidden, hidden, hidden, rng),
            input: uniform_init(hidden, inputs, inputs, rng),
            bias: Tensor::zeros(1, hidden),
        }
    }

    pub fn from_parts(recurrent: Tensor, input: Tensor, bias: Tensor) -> Result<Self> {
        let h = recurrent.rows();
        if recurrent.cols() != h || input.rows() != h || bias.shape() != [1, h] {
            return Err(Error::Shape(format!(
                "rnn cell W {:?}, U {:?}, b {:?}",
                recurrent.shape(),
                input.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            recurrent,
            input,
            bias,
        })
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.rows()
    }

    pub fn inputs(&self) -> usize {
        self.input.cols()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundRnn<'t> {
        BoundRnn {
            recurrent: tape.param(self.recurrent.clone()),
            input: tape.param(self.input.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }

    pub fn parameters(&self) -> [&Tensor; 3] {
        [&self.recurrent, &self.input, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.recurrent, &mut self.input, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundRnn<'t> {
    pub recurrent: Var<'t>,
    pub input: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> BoundRnn<'t> {
    pub fn step(&self, h_prev: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let rec = h_prev.affine(self.recurrent, None)?;
        let inp = x.affine(self.input, Some(self.bias))?;
        rec.add(inp)?.tanh()
    }

    pub fn vars(&self) -> [Var<'t>; 3] {
        [self.recurrent, self.input, self.bias]
    }
}

/// One recurrent step on plain values.
pub fn rnn_step(cell: &RnnCell, h_prev: &Tensor, x: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let bound = cell.bind(&tape);
    let h = tape.constant(h_prev.clone());
    let x = tape.constant(x.clone());
    Ok(bound.step(h, x)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_outputs_zero() {
        let cell = RnnCell::from_parts(Tensor::zeros(3, 3), Tensor::zeros(3, 2), Tensor::zeros(1, 3)).unwrap();
        let h = rnn_step(&cell, &Tensor::row(vec![0.4, -0.9, 2.0]), &Tensor::row(vec![5.0, -5.0])).unwrap();
        assert_eq!(h, Tensor::zeros(1, 3));
    }

    #[test]
    fn identity_input_linearizes() {
        let cell = RnnCell::from_parts(Tensor::zeros(2, 2), Tensor::identity(2), Tensor::zeros(1, 2)).unwrap();
        let x = Tensor::row(vec![1e-4, -2e-4]);
        let h = rnn_step(&cell, &Tensor::zeros(1, 2), &x).unwrap();
        for (a, b) in h.values().iter().zip(x.values()) {
            // tanh(x) = x - x³/3 + ...
            assert!((a - b).abs() <= b.abs().powi(3));
        }
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let mut rng = RandomSource::new(7);
        let layer = DenseLayer::new(16, 8, Activation::Tanh, &mut rng);
        assert!(layer.weights.values().iter().all(|w| w.abs() <= 0.25));
        assert_eq!(layer.bias, Tensor::zeros(1, 8));
    }

    #[test]
    fn rnn_shape_mismatch_rejected() {
        assert!(RnnCell::from_parts(Tensor::zeros(3, 3), Tensor::zeros(2, 2), Tensor::zeros(1, 3)).is_err());
    }
}
