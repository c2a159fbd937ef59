//! Central finite differences against the tape's reverse-mode gradients.

mod common;

use std::sync::Arc;

use common::{max_fd_error, project, random_matrix, rng, unit_rows};
use rand::Rng;
use sgil::numerics::{mlp2_forward, CsrPattern, DenseMatrix, Mlp2};

const TOL: f64 = 1e-4;

fn random_pattern(seed: u64, dim: usize, density: f64) -> Arc<CsrPattern> {
    let mut r = rng(seed);
    let mut entries = Vec::new();
    for a in 0..dim as u32 {
        for b in 0..dim as u32 {
            if r.random::<f64>() < density {
                entries.push((a, b));
            }
        }
    }
    Arc::new(CsrPattern::from_sorted_entries(dim, &entries).unwrap())
}

fn positive_column(seed: u64, n: usize) -> DenseMatrix {
    let mut r = rng(seed);
    DenseMatrix::column((0..n).map(|_| 0.2 + r.random::<f64>()).collect())
}

#[test]
fn dense_products() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, 3, 4, 1.0);
        let b = random_matrix(&mut r, 4, 2, 1.0);
        let bt = random_matrix(&mut r, 5, 4, 1.0);
        let bias = random_matrix(&mut r, 1, 2, 1.0);
        let e = max_fd_error(&[a.clone(), b, bias], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            let m = t.add_row(m, v[2]).unwrap();
            project(t, m, seed)
        });
        assert!(e < 1e-8, "matmul/add_row {e}");
        let e = max_fd_error(&[a.clone(), bt], |t, v| {
            let m = t.matmul_t(v[0], v[1]).unwrap();
            project(t, m, seed)
        });
        assert!(e < 1e-8, "matmul_t {e}");
    }
}

#[test]
fn elementwise_and_structural() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let x = random_matrix(&mut r, 4, 3, 1.0);
        let y = random_matrix(&mut r, 2, 3, 1.0);
        let z = random_matrix(&mut r, 4, 2, 1.0);
        let e = max_fd_error(std::slice::from_ref(&x), |t, v| {
            let a = t.tanh(v[0]);
            let b = t.relu(a);
            project(t, b, seed)
        });
        assert!(e < TOL, "tanh/relu {e}");
        let e = max_fd_error(&[x.clone(), y.clone(), z], |t, v| {
            let g = t.gather_rows(v[0], vec![3, 0, 3, 1]).unwrap();
            let c = t.concat_cols(g, v[2]).unwrap();
            let s = t.slice_rows(c, 1, 3).unwrap();
            let cc = t.concat_cols(s, v[1]).unwrap();
            let s2 = t.gather_rows(cc, vec![1, 0]).unwrap();
            let both = t.concat_rows(s2, s2).unwrap();
            project(t, both, seed)
        });
        assert!(e < 1e-8, "gather/slice/concat {e}");
        let e = max_fd_error(&[x.clone(), x.map(|v| v * 0.5 + 0.1)], |t, v| {
            let c = t
                .combine(vec![(v[0], 0.7), (v[1], -1.3), (v[0], 0.2)])
                .unwrap();
            let s = t.scale(c, 2.5);
            let a = t.add(s, v[1]).unwrap();
            project(t, a, seed)
        });
        assert!(e < 1e-8, "combine {e}");
        let src = DenseMatrix::column(vec![0.3, -0.2, 0.9]);
        let e = max_fd_error(&[src], |t, v| {
            let s = t
                .scatter(v[0], vec![1.0, 0.0, 2.0, 0.0, 0.0], vec![1, 3, 4])
                .unwrap();
            project(t, s, seed)
        });
        assert!(e < 1e-8, "scatter {e}");
    }
}

#[test]
fn sparse_kernels() {
    for seed in 0..5 {
        let pattern = random_pattern(seed, 6, 0.4);
        let nnz = pattern.nnz();
        let w = positive_column(seed + 7, nnz);
        let x = random_matrix(&mut rng(seed + 9), 6, 3, 1.0);
        let p = Arc::clone(&pattern);
        let e = max_fd_error(&[w.clone(), x.clone()], move |t, v| {
            let y = t.spmm(Arc::clone(&p), v[0], v[1]).unwrap();
            project(t, y, seed)
        });
        assert!(e < 1e-6, "spmm {e}");
        let p = Arc::clone(&pattern);
        let e = max_fd_error(&[w, x], move |t, v| {
            let n = t.sym_normalize(Arc::clone(&p), v[0]).unwrap();
            let y = t.spmm(Arc::clone(&p), n, v[1]).unwrap();
            let y = t.spmm(Arc::clone(&p), n, y).unwrap();
            project(t, y, seed)
        });
        assert!(e < TOL, "sym_normalize {e}");
    }
}

#[test]
fn relaxation_and_clamp() {
    for seed in 0..5 {
        let mut r = rng(200 + seed);
        let logits = random_matrix(&mut r, 8, 1, 2.0);
        let noise: Vec<f64> = (0..8).map(|_| 2.0 * r.random::<f64>() - 1.0).collect();
        let e = max_fd_error(std::slice::from_ref(&logits), |t, v| {
            let s = t.concrete_relax(v[0], &noise, 0.7).unwrap();
            project(t, s, seed)
        });
        assert!(e < TOL, "concrete_relax {e}");
        // samples kept clear of the clamp boundary 1 − ε by at least 0.02
        let eps = 0.5;
        let relaxed = sgil::environments::concrete_relax(logits.data(), &noise, 0.7).unwrap();
        if relaxed.iter().all(|&s| (s + eps - 1.0).abs() > 0.02) {
            let e = max_fd_error(&[logits], |t, v| {
                let s = t.concrete_relax(v[0], &noise, 0.7).unwrap();
                let c = t.bias_clamp(s, eps);
                project(t, c, seed)
            });
            assert!(e < TOL, "bias_clamp {e}");
        }
    }
}

#[test]
fn normalization_and_losses() {
    for seed in 0..5 {
        let mut r = rng(300 + seed);
        let p = unit_rows(&mut r, 4, 3);
        let q = unit_rows(&mut r, 5, 3);
        let e = max_fd_error(&[p.clone(), q.clone()], |t, v| {
            let a = t.row_normalize(v[0]);
            let b = t.row_normalize(v[1]);
            let s = t.matmul_t(a, b).unwrap();
            let s = t.scale(s, 5.0);
            t.softmax_xent(s, vec![0, 4, 2, 2]).unwrap()
        });
        assert!(e < TOL, "normalized softmax {e}");
        let q4 = random_matrix(&mut r, 4, 3, 1.0);
        let e = max_fd_error(&[p.clone(), q4], |t, v| {
            let d = t.row_dot(v[0], v[1]).unwrap();
            let n = t.neg_log_sigmoid_sum(d);
            let s = t.sum_squares(v[0]);
            t.combine(vec![(n, 1.0), (s, 0.1)]).unwrap()
        });
        assert!(e < TOL, "bpr pieces {e}");
        let ls: Vec<DenseMatrix> = (0..4)
            .map(|_| DenseMatrix::scalar(r.random::<f64>()))
            .collect();
        let e = max_fd_error(&ls, |t, v| t.variance(v.to_vec()).unwrap());
        assert!(e < TOL, "variance {e}");
        let y = random_matrix(&mut r, 4, 2, 1.0);
        let e = max_fd_error(&[p, y], |t, v| t.hsic(v[0], v[1], 1.3).unwrap());
        assert!(e < TOL, "hsic {e}");
    }
}

#[test]
fn mlp_parameters_and_input() {
    for seed in 0..5 {
        let mut r = rng(400 + seed);
        let mlp = Mlp2::init(6, 5, &mut r);
        let mlp = Mlp2 {
            b1: random_matrix(&mut r, 1, 5, 0.5),
            b2: random_matrix(&mut r, 1, 1, 0.5),
            ..mlp
        };
        let x = random_matrix(&mut r, 7, 6, 1.0);
        let inputs = [x, mlp.w1, mlp.b1, mlp.w2, mlp.b2];
        let e = max_fd_error(&inputs, |t, v| {
            let params = sgil::numerics::Mlp2Vars {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            let o = mlp2_forward(t, v[0], &params).unwrap();
            project(t, o, seed)
        });
        assert!(e < TOL, "mlp {e}");
    }
}
