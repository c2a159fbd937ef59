#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgil::numerics::{DenseMatrix, Tape, Var};

pub const H: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * r.random::<f64>() - 1.0))
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Largest relative error between the tape gradient of `f` and central
/// differences over every entry of every input.
pub fn max_fd_error(inputs: &[DenseMatrix], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[DenseMatrix]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let g = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(x.rows(), x.cols()));
        for e in 0..x.data().len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(g.data()[e], numeric, 1e-6));
        }
    }
    worst
}

/// Scalar `Σ out ⊙ R` for a fixed random `R`, to check matrix-valued ops.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).shape();
    let w = tape.leaf(random_matrix(&mut rng(seed), r, c, 1.0));
    let d = tape.row_dot(out, w).unwrap();
    tape.sum(d)
}

/// Random rows rescaled to norms in `[0.8, 1.6]`, keeping cosine curvature
/// small enough for `h = 1e-3` differences.
pub fn unit_rows(r: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let mut m = random_matrix(r, rows, cols, 1.0);
    for i in 0..rows {
        let target = 0.8 + 0.8 * r.random::<f64>();
        let row = m.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in row.iter_mut() {
            *v *= target / norm;
        }
    }
    m
}
