use std::sync::atomic::{AtomicU64, Ordering};

use cogt::tensor::{grad_check, Graph, ParamSet, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn params(rng: &mut ChaCha8Rng, shapes: &[(usize, usize)]) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        p.push(format!("p{i}"), random_matrix(rng, r, c));
    }
    p
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, x: Var) -> Result<Var, TensorError> {
    let len = g.value(x).len();
    let shape = g.value(x).shape().to_vec();
    let w = g.constant(Tensor::new(shape, (0..len).map(|i| ((i as f64) * 0.7).sin() + 0.3).collect())?);
    let prod = g.mul(x, w)?;
    Ok(g.sum(prod))
}

fn check<F>(shapes: &[(usize, usize)], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = params(&mut rng, shapes);
    let report = grad_check(f, &p, 1e-5, 1e-6).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn matmul_gradient() {
    check(&[(3, 4), (4, 2)], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        weighted_sum(g, y)
    });
}

#[test]
fn add_mul_scale_bias_gradients() {
    check(&[(3, 4), (3, 4), (1, 4)], |g, v| {
        let a = g.add(v[0], v[1])?;
        let m = g.mul(a, v[0])?;
        let s = g.scale(m, 1.7);
        let b = g.add_bias(s, v[2])?;
        weighted_sum(g, b)
    });
}

#[test]
fn layernorm_gradient() {
    check(&[(3, 4), (1, 4), (1, 4)], |g, v| {
        let y = g.layernorm(v[0], v[1], v[2])?;
        weighted_sum(g, y)
    });
}

#[test]
fn masked_softmax_gradient() {
    let mask = vec![
        true, false, true, true, //
        false, true, false, false, //
        true, true, true, true,
    ];
    check(&[(3, 4)], move |g, v| {
        let y = g.softmax_masked(v[0], &mask)?;
        weighted_sum(g, y)
    });
}

#[test]
fn gelu_gradient() {
    check(&[(3, 4)], |g, v| {
        let y = g.gelu(v[0]);
        weighted_sum(g, y)
    });
}

#[test]
fn embedding_gradient() {
    check(&[(3, 4)], |g, v| {
        let y = g.embedding(v[0], &[2, 0, 2, 1])?;
        weighted_sum(g, y)
    });
}

#[test]
fn cross_entropy_gradient() {
    check(&[(3, 4)], |g, v| {
        let y = g.cross_entropy(v[0], &[3, 0, 1])?;
        weighted_sum(g, y)
    });
}

#[test]
fn dropout_gradient_with_fixed_key() {
    check(&[(3, 4)], |g, v| {
        g.set_dropout_key(9);
        let y = g.dropout(v[0], 0.5, true);
        weighted_sum(g, y)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_matrix(&mut rng, 3, 4);
    let run = |key: u64| {
        let mut g = Graph::with_dropout_key(key);
        let xv = g.param(x.clone());
        let y = g.dropout(xv, 0.5, true);
        g.value(y).clone()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
    // kept entries are scaled by 1/(1-p)
    for (&out, &inp) in run(9).data().iter().zip(x.data()) {
        assert!(out == 0.0 || (out - 2.0 * inp).abs() < 1e-15);
    }
    let mut g = Graph::<f64>::new();
    let xv = g.param(x.clone());
    assert_eq!(g.dropout(xv, 0.5, false), xv);
}

#[test]
fn slicing_and_concatenation_gradients() {
    check(&[(3, 4), (3, 2), (2, 4)], |g, v| {
        let s = g.slice_cols(v[0], 1, 2)?;
        let c = g.concat_cols(&[s, v[1], v[0]])?;
        let t = g.transpose(v[0])?;
        let tt = g.transpose(t)?;
        let r = g.concat_rows(&[tt, v[2]])?;
        let sel = g.select_rows(r, &[4, 0, 0, 2])?;
        let a = weighted_sum(g, c)?;
        let b = weighted_sum(g, sel)?;
        g.add(a, b)
    });
}

#[test]
fn matmul_sum_passes_tight_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = params(&mut rng, &[(2, 2), (2, 2)]);
    let report = grad_check(
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            Ok(g.sum(y))
        },
        &p,
        1e-5,
        1e-7,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn unseeded_dropout_is_nondeterministic() {
    static CALLS: AtomicU64 = AtomicU64::new(0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = params(&mut rng, &[(3, 4)]);
    let result = grad_check(
        |g, v| {
            g.set_dropout_key(CALLS.fetch_add(1, Ordering::SeqCst));
            let y = g.dropout(v[0], 0.5, true);
            weighted_sum(g, y)
        },
        &p,
        1e-5,
        1e-4,
    );
    assert!(matches!(result, Err(TensorError::NonDeterministicFunction { .. })));
}

#[test]
fn softmax_masked_example_and_empty_row() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap());
    let y = g.softmax_masked(x, &[true, false, true]).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.0, 0.5]);
    assert_eq!(
        g.softmax_masked(x, &[false, false, false]),
        Err(TensorError::EmptyMaskRow { row: 0 })
    );
}

#[test]
fn layernorm_of_constant_row_is_bias() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::matrix(1, 4, vec![3.0; 4]).unwrap());
    let gamma = g.constant(Tensor::vector(vec![2.0, -1.0, 0.5, 4.0]));
    let beta = g.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]));
    let y = g.layernorm(x, gamma, beta).unwrap();
    assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3, 0.4]);
}

#[test]
fn shape_mismatch_is_reported() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    let b = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
    assert!(matches!(g.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
    let c = g.constant(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
    assert!(matches!(g.add(a, c), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn f32_and_f64_forward_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = params(&mut rng, &[(6, 16), (16, 16), (1, 16), (1, 16)]);
    fn run<T: cogt::tensor::Real>(p: &ParamSet<T>) -> Vec<f64> {
        let mut g = Graph::<T>::new();
        let v: Vec<Var> = p.iter().map(|(_, t)| g.param(t.clone())).collect();
        let h = g.matmul(v[0], v[1]).unwrap();
        let h = g.layernorm(h, v[2], v[3]).unwrap();
        let h = g.gelu(h);
        let mask = vec![true; 36];
        let hs = g.slice_cols(h, 0, 6).unwrap();
        let y = g.softmax_masked(hs, &mask).unwrap();
        g.value(y).data().iter().map(|v| v.to_f64().unwrap()).collect()
    }
    let a = run(&p);
    let b = run(&p.cast::<f32>());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-4 * x.abs().max(1e-3), "{x} vs {y}");
    }
}

// Random small graphs: the gradient of a sum of two losses is the sum of the
// gradients of each loss.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn backward_is_linear(seed in 0u64..10_000, rows in 1usize..5, cols in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, rows, cols);
        let w = random_matrix(&mut rng, cols, cols);
        let targets: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..cols)).collect();
        let build = |which: u8| {
            let mut g = Graph::<f64>::new();
            let x = g.param(a.clone());
            let wv = g.param(w.clone());
            let h = g.matmul(x, wv).unwrap();
            let h = g.gelu(h);
            let l1 = {
                let ce = g.cross_entropy(h, &targets).unwrap();
                g.sum(ce)
            };
            let l2 = {
                let sq = g.mul(h, h).unwrap();
                let s = g.sum(sq);
                g.scale(s, 0.3)
            };
            let loss = match which {
                0 => l1,
                1 => l2,
                _ => g.add(l1, l2).unwrap(),
            };
            let grads = g.backward(loss);
            (grads.get(x).unwrap().to_vec(), grads.get(wv).unwrap().to_vec())
        };
        let (x1, w1) = build(0);
        let (x2, w2) = build(1);
        let (x3, w3) = build(2);
        for i in 0..x3.len() {
            prop_assert!((x1[i] + x2[i] - x3[i]).abs() < 1e-12);
        }
        for i in 0..w3.len() {
            prop_assert!((w1[i] + w2[i] - w3[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_rows_normalize(seed in 0u64..10_000, rows in 1usize..6, cols in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, rows, cols);
        let mut mask: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(0.5)).collect();
        for r in 0..rows {
            mask[r * cols + rng.gen_range(0..cols)] = true;
        }
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.scale_for_test(5.0));
        let y = g.softmax_masked(xv, &mask).unwrap();
        let out = g.value(y).data();
        for r in 0..rows {
            let mut total = 0.0;
            for c in 0..cols {
                let v = out[r * cols + c];
                if mask[r * cols + c] { total += v } else { prop_assert_eq!(v, 0.0) }
            }
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }
}

trait ScaleForTest {
    fn scale_for_test(&self, f: f64) -> Self;
}

impl ScaleForTest for Tensor<f64> {
    fn scale_for_test(&self, f: f64) -> Self {
        Tensor::new(self.shape().to_vec(), self.data().iter().map(|v| v * f).collect()).unwrap()
    }
}
