mod common;

use blindvae::rng::Pcg32;
use blindvae::tensor::{grad_check, Graph, Tensor, Var};
use blindvae::Error;
use common::{op_cases, op_grad_error, random_tensor, weighted_sum};
use proptest::prelude::*;

#[test]
fn every_op_matches_finite_differences_over_ten_seeds() {
    for (name, f, shapes) in op_cases() {
        for seed in 0..10 {
            let err = op_grad_error(&f, &shapes, seed);
            assert!(err <= 1e-5, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn matmul_gradients_at_step_1e5() {
    let mut rng = Pcg32::new(11);
    let inputs = [random_tensor(&[4, 5], &mut rng), random_tensor(&[5, 2], &mut rng)];
    let err = grad_check(
        |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 0)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn identity_sum_is_exact() {
    let mut rng = Pcg32::new(1);
    let x = random_tensor(&[3, 4], &mut rng);
    // Linear, so a coarse step has no truncation error and less rounding.
    let err = grad_check(|g: &mut Graph<f64>, v: &[Var]| g.sum(v[0]), &[x], 1e-3).unwrap();
    assert!(err <= 1e-10, "{err:e}");
}

#[test]
fn sigmoid_chain() {
    let mut rng = Pcg32::new(2);
    let x = random_tensor(&[10], &mut rng);
    let err = grad_check(
        |g: &mut Graph<f64>, v: &[Var]| {
            let mut h = v[0];
            for _ in 0..3 {
                h = g.sigmoid(h)?;
                h = g.scale(h, 3.0)?;
            }
            weighted_sum(g, h, 5)
        },
        &[x],
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn conv_stack() {
    let mut rng = Pcg32::new(3);
    let inputs = [
        random_tensor(&[1, 3, 8, 8], &mut rng),
        random_tensor(&[4, 3, 4, 4], &mut rng),
        random_tensor(&[5, 4, 3, 3], &mut rng),
    ];
    let err = grad_check(
        |g: &mut Graph<f64>, v: &[Var]| {
            let h = g.conv2d(v[0], v[1], 2, 1)?;
            let h = g.sigmoid(h)?;
            let h = g.conv2d(h, v[2], 1, 1)?;
            weighted_sum(g, h, 7)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-5, "{err:e}");
}

/// Direct four-loop cross-correlation, used as an oracle for the im2col path.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (&[n, c, h, w], &[f, _, kh, kw]) = (x.shape(), k.shape()) else { unreachable!() };
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let yy = (y * stride + i) as isize - pad as isize;
                                let xx = (xo * stride + j) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((b * c + ch) * h + yy as usize) * w + xx as usize]
                                    * k.data()[((o * c + ch) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * f + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_agrees_with_direct_loops() {
    let mut rng = Pcg32::new(4);
    for (stride, pad) in [(1, 0), (2, 1), (1, 2), (3, 1)] {
        let x = random_tensor(&[2, 3, 9, 7], &mut rng);
        let k = random_tensor(&[4, 3, 3, 4], &mut rng);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d(xv, kv, stride, pad).unwrap();
        let want = naive_conv(&x, &k, stride, pad);
        for (a, b) in g.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn adjoint_identity_for_ten_settings() {
    let mut rng = Pcg32::new(2024);
    for setting in 0..10 {
        let stride = 1 + rng.below(3) as usize;
        let k = 1 + rng.below(4) as usize;
        let pad = rng.below(((k - 1) / 2 + 1) as u32) as usize;
        let (c, f) = (1 + rng.below(3) as usize, 1 + rng.below(4) as usize);
        // Sizes the stride tiles exactly, so the transpose restores them.
        let h = rng.below(5) as usize * stride + k - 2 * pad;
        let w = rng.below(5) as usize * stride + k - 2 * pad;
        let x = random_tensor(&[2, c, h, w], &mut rng);
        let kernel = random_tensor(&[f, c, k, k], &mut rng);

        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(kernel));
        let cx = g.conv2d(xv, kv, stride, pad).unwrap();
        let y = random_tensor(g.shape(cx), &mut rng);
        let lhs = g.value(cx).dot(&y).unwrap();
        let yv = g.constant(y);
        let ty = g.conv_transpose2d(yv, kv, stride, pad).unwrap();
        assert_eq!(g.shape(ty), x.shape(), "setting {setting}");
        let rhs = x.dot(g.value(ty)).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        assert!(rel <= 1e-5, "setting {setting}: {lhs} vs {rhs}");
    }
}

#[test]
fn conv_transpose_of_zero_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(vec![1, 4, 3, 3]));
    let mut rng = Pcg32::new(0);
    let k = g.constant(random_tensor(&[4, 2, 4, 4], &mut rng));
    let y = g.conv_transpose2d(x, k, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 6, 6]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_kernel_gives_zero_output() {
    let mut g = Graph::<f64>::new();
    let mut rng = Pcg32::new(0);
    let x = g.constant(random_tensor(&[1, 3, 8, 8], &mut rng));
    let k = g.constant(Tensor::zeros(vec![2, 3, 3, 3]));
    let y = g.conv2d(x, k, 1, 1).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn concat_single_part_and_gradient_split() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::from_f64(vec![48], &[0.5; 48]).unwrap());
    let b = g.param(Tensor::from_f64(vec![7], &[0.1; 7]).unwrap());
    let single = g.concat(&[a], 0).unwrap();
    assert_eq!(g.value(single), g.value(a));
    let c = g.concat(&[a, b], 0).unwrap();
    let s = g.sum(c).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[1.0; 48]);
    assert_eq!(grads.get(b).unwrap().data(), &[1.0; 7]);
}

#[test]
fn concat_axis_out_of_range() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(g.concat(&[a, a], 2), Err(Error::Dimension { .. })));
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::full(vec![2, 3, 4], 1.7));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

fn build_and_differentiate(seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (_, f, shapes) = op_cases().into_iter().nth(2).unwrap();
    let mut rng = Pcg32::new(seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = shapes.iter().map(|s| g.param(random_tensor(s, &mut rng))).collect();
    let loss = f(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();
    (
        g.value(loss).data().to_vec(),
        vars.iter().map(|&v| grads.get(v).unwrap().data().to_vec()).collect(),
    )
}

#[test]
fn tape_replay_is_bit_identical() {
    for seed in 0..5 {
        assert_eq!(build_and_differentiate(seed), build_and_differentiate(seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pointwise_ops_stay_finite(values in prop::collection::vec(-80.0f64..80.0, 1..40)) {
        let n = values.len();
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![n], values).unwrap());
        let outs = [
            g.relu(x).unwrap(),
            g.leaky_relu(x, 0.01).unwrap(),
            g.sigmoid(x).unwrap(),
            g.exp(x).unwrap(),
        ];
        for o in outs {
            prop_assert!(g.value(o).is_finite());
        }
        let sig = g.value(outs[2]);
        prop_assert!(sig.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let total = g.concat(&outs, 0).unwrap();
        let loss = g.sum(total).unwrap();
        let grads = g.backward(loss).unwrap();
        prop_assert!(grads.get(x).unwrap().is_finite());
    }

    #[test]
    fn matmul_gradients_hold_for_random_shapes(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let mut rng = Pcg32::new(seed);
        let inputs = [random_tensor(&[m, k], &mut rng), random_tensor(&[k, n], &mut rng)];
        let err = grad_check(|g: &mut Graph<f64>, v: &[Var]| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, seed)
        }, &inputs, 1e-6).unwrap();
        prop_assert!(err <= 1e-5, "{}", err);
    }

    #[test]
    fn conv_output_shape_formula(h in 3usize..12, w in 3usize..12, k in 1usize..4, stride in 1usize..4, pad in 0usize..2) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, h, w]));
        let kern = g.constant(Tensor::zeros(vec![3, 2, k, k]));
        let y = g.conv2d(x, kern, stride, pad).unwrap();
        prop_assert_eq!(g.shape(y), &[1, 3, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1]);
    }

    #[test]
    fn tape_parents_precede_children(seed in 0u64..200) {
        let (_, f, shapes) = &op_cases()[1];
        let mut rng = Pcg32::new(seed);
        let mut g = Graph::new();
        let vars: Vec<Var> = shapes.iter().map(|s| g.param(random_tensor(s, &mut rng))).collect();
        let loss = f(&mut g, &vars).unwrap();
        prop_assert_eq!(loss.index() + 1, g.len());
        for (v, node) in g.nodes() {
            for p in &node.parents {
                prop_assert!(p.index() < v.index());
            }
        }
    }
}
