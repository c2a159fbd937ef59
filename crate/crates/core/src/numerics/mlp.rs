use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{DenseMatrix, Tape, Var};
use crate::error::{Error, Result};

/// Two-layer perceptron `W2 · relu(W1 · x + b1) + b2` with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    /// `in × hidden`
    pub w1: DenseMatrix,
    /// `1 × hidden`
    pub b1: DenseMatrix,
    /// `hidden × 1`
    pub w2: DenseMatrix,
    /// `1 × 1`
    pub b2: DenseMatrix,
}

/// The four parameter tensors of an [`Mlp2`] once placed on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp2Vars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp2 {
    /// Xavier-normal weights, zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let n1 = Normal::new(0.0, (2.0 / (input + hidden) as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (2.0 / (hidden + 1) as f64).sqrt()).unwrap();
        Self {
            w1: DenseMatrix::from_fn(input, hidden, |_, _| n1.sample(rng)),
            b1: DenseMatrix::zeros(1, hidden),
            w2: DenseMatrix::from_fn(hidden, 1, |_, _| n2.sample(rng)),
            b2: DenseMatrix::zeros(1, 1),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.rows()
    }

    pub fn on_tape(&self, tape: &mut Tape) -> Mlp2Vars {
        Mlp2Vars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    /// Logits without recording gradients.
    pub fn forward(&self, input: &DenseMatrix) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let vars = self.on_tape(&mut tape);
        let x = tape.leaf(input.clone());
        let out = mlp2_forward(&mut tape, x, &vars)?;
        Ok(tape.value(out).clone())
    }
}

/// One logit per input row.
pub fn mlp2_forward(tape: &mut Tape, input: Var, params: &Mlp2Vars) -> Result<Var> {
    let width = tape.value(params.w1).rows();
    if tape.value(input).cols() != width {
        return Err(Error::shape(
            "mlp2_forward",
            format!(
                "input width {} but W1 expects {width}",
                tape.value(input).cols()
            ),
        ));
    }
    let h = tape.matmul(input, params.w1)?;
    let h = tape.add_row(h, params.b1)?;
    let h = tape.relu(h);
    let o = tape.matmul(h, params.w2)?;
    tape.add_row(o, params.b2)
}
