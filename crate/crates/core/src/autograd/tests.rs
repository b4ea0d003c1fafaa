use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random point away from zero so ReLU/max kinks stay out of the stencil.
fn random_off_kink(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn matmul_identity() {
    let g = Graph::new();
    let i = g.constant(Tensor::identity(2));
    let b = g.constant(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap());
    assert_eq!(i.matmul(b).unwrap().to_vec(), vec![1., 2., 3., 4.]);
}

#[test]
fn matmul_row_by_column() {
    let g = Graph::new();
    let a = g.constant(Tensor::matrix(1, 2, vec![1., 2.]).unwrap());
    let b = g.constant(Tensor::matrix(2, 1, vec![3., 4.]).unwrap());
    let c = a.matmul(b).unwrap();
    assert_eq!(c.shape(), vec![1, 1]);
    assert_eq!(c.item(), 11.0);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    let err = a.matmul(b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = random(&mut rng, vec![4, 2]);
    let a = random(&mut rng, vec![3, 4]);
    let proj = random(&mut rng, vec![3, 2]);
    // d/da
    let err = finite_difference_check(
        |g, x| {
            let y = x.matmul(g.constant(b.clone()))?;
            Ok(y.mul(g.constant(proj.clone()))?.sum())
        },
        &a,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
    // d/db
    let err = finite_difference_check(
        |g, x| {
            let y = g.constant(a.clone()).matmul(x)?;
            Ok(y.mul(g.constant(proj.clone()))?.sum())
        },
        &b,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn elementwise_examples() {
    let g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1., 2.]));
    let z = g.constant(Tensor::vector(vec![0., 0.]));
    assert_eq!(a.add(z).unwrap().to_vec(), vec![1., 2.]);

    let b = g.constant(Tensor::vector(vec![2., 3.]));
    assert_eq!(b.mul(g.scalar(0.5)).unwrap().to_vec(), vec![1., 1.5]);

    let x = g.input(Tensor::vector(vec![1., 5.]));
    let y = g.input(Tensor::vector(vec![4., 2.]));
    let m = x.max2(y).unwrap();
    assert_eq!(m.to_vec(), vec![4., 5.]);
    let grads = g.backward(m.sum()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0., 1.]);
    assert_eq!(grads.get(y).unwrap(), &[1., 0.]);
}

#[test]
fn elementwise_errors() {
    let g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1., 2.]));
    let b = g.constant(Tensor::vector(vec![1., 2., 3.]));
    assert!(matches!(a.add(b), Err(Error::Dimension(_))));
    let z = g.constant(Tensor::vector(vec![1., 1e-13]));
    assert!(matches!(a.div(z), Err(Error::NumericGuard(_))));
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let other = random_off_kink(&mut rng, vec![3, 2]);
    let x = random_off_kink(&mut rng, vec![3, 2]);
    for kind in [
        BinaryKind::Add,
        BinaryKind::Sub,
        BinaryKind::Mul,
        BinaryKind::Div,
    ] {
        let err = finite_difference_check(
            |g, x| {
                let o = g.constant(other.clone());
                Ok(x.binary(o, kind)?.square().sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{kind:?} lhs: {err}");
        let err = finite_difference_check(
            |g, x| {
                let o = g.constant(other.clone());
                Ok(o.binary(x, kind)?.square().sum())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{kind:?} rhs: {err}");
    }
    // scalar broadcast on either side
    let s = Tensor::scalar(0.7);
    let err = finite_difference_check(
        |g, x| {
            let t = g.constant(other.clone());
            Ok(t.mul(x)?.square().sum())
        },
        &s,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn relu_examples() {
    let g = Graph::new();
    let x = g.input(Tensor::vector(vec![-1., 0., 2.]));
    let y = x.relu();
    assert_eq!(y.to_vec(), vec![0., 0., 2.]);
    let grads = g.backward(y.sum()).unwrap();
    // subgradient at 0 is 0
    assert_eq!(grads.get(x).unwrap(), &[0., 0., 1.]);

    let g = Graph::new();
    let x = g.input(Tensor::vector(vec![-1., -2., -0.5]));
    let y = x.relu();
    assert_eq!(y.to_vec(), vec![0., 0., 0.]);
    assert_eq!(g.backward(y.sum()).unwrap().tensor(x).data(), &[0., 0., 0.]);
}

#[test]
fn relu_finite_differences_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_off_kink(&mut rng, vec![4, 5]);
    let w = random(&mut rng, vec![4, 5]);
    let err = finite_difference_check(
        |g, x| Ok(x.relu().mul(g.constant(w.clone()))?.sum()),
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn reduce_max_examples() {
    let g = Graph::new();
    let x = g.input(Tensor::matrix(2, 2, vec![1., 3., 5., 2.]).unwrap());
    let y = x.reduce_max().unwrap();
    assert_eq!(y.shape(), vec![2]);
    assert_eq!(y.to_vec(), vec![3., 5.]);

    // single column: gradient passes through
    let g = Graph::new();
    let x = g.input(Tensor::matrix(3, 1, vec![1., -2., 7.]).unwrap());
    let y = x.reduce_max().unwrap();
    assert_eq!(y.to_vec(), vec![1., -2., 7.]);
    let w = g.constant(Tensor::vector(vec![2., 3., 4.]));
    let grads = g.backward(y.mul(w).unwrap().sum()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2., 3., 4.]);

    // ties go to the first column
    let g = Graph::new();
    let x = g.input(Tensor::matrix(1, 2, vec![2., 2.]).unwrap());
    let grads = g.backward(x.reduce_max().unwrap().sum()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1., 0.]);
}

#[test]
fn reduce_max_empty_axis_is_an_error() {
    let g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![2, 0]));
    assert!(matches!(x.reduce_max(), Err(Error::Dimension(_))));
}

#[test]
fn softmax_cross_entropy_examples() {
    let g = Graph::new();
    let z = g.constant(Tensor::vector(vec![0., 0.]));
    let l = z.softmax_cross_entropy(0).unwrap();
    assert!((l.item() - std::f64::consts::LN_2).abs() < 1e-12);

    let z = g.constant(Tensor::vector(vec![1000., 0.]));
    let l = z.softmax_cross_entropy(0).unwrap();
    assert!(l.item().is_finite() && l.item().abs() < 1e-12);

    assert!(matches!(z.softmax_cross_entropy(2), Err(Error::Index(_))));
}

#[test]
fn softmax_cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = random(&mut rng, vec![5]);
    let err =
        finite_difference_check(|_, x| x.softmax_cross_entropy(3), &z, 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn backward_square() {
    let g = Graph::new();
    let x = g.input(Tensor::scalar(3.0));
    let grads = g.backward(x.square()).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[6.0]);
}

#[test]
fn backward_hand_chain_rule() {
    // loss = sum(relu(W x)), W = [[1, -2], [3, 1]], x = [1, 1]
    // W x = [-1, 4] → relu = [0, 4]; dL/dx = Wᵀ·[0, 1] = [3, 1]; dL/dW = [[0,0],[1,1]]
    let g = Graph::new();
    let w = g.input(Tensor::matrix(2, 2, vec![1., -2., 3., 1.]).unwrap());
    let x = g.input(Tensor::matrix(2, 1, vec![1., 1.]).unwrap());
    let loss = w.matmul(x).unwrap().relu().sum();
    assert_eq!(loss.item(), 4.0);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[3., 1.]);
    assert_eq!(grads.get(w).unwrap(), &[0., 0., 1., 1.]);
}

#[test]
fn backward_diamond_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_off_kink(&mut rng, vec![3]);
    let err = finite_difference_check(
        |_, x| {
            let a = x.exp();
            let b = x.square();
            Ok(a.mul(b)?.add(x)?.sum())
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");

    let g = Graph::new();
    let v = g.input(Tensor::scalar(2.0));
    let loss = v.add(v).unwrap().mul(v).unwrap(); // 2v² → 4v
    assert_eq!(g.backward(loss).unwrap().get(v).unwrap(), &[8.0]);
}

#[test]
fn backward_rejects_non_scalar_and_leaves_unreached_zero() {
    let g = Graph::new();
    let x = g.input(Tensor::vector(vec![1., 2.]));
    let unused = g.input(Tensor::vector(vec![5., 5.]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    let grads = g.backward(x.sum()).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.tensor(unused).data(), &[0., 0.]);
}

#[test]
fn optimizer_examples() {
    let mut p = ParameterSet::new();
    p.insert("w", Tensor::scalar(1.0)).unwrap();
    p.accumulate("w", &[2.0]).unwrap();
    let mut sgd = OptimizerState::sgd(0.1).unwrap();
    sgd.step(&mut p).unwrap();
    assert!((p.get("w").unwrap().data()[0] - 0.8).abs() < 1e-15);
    assert_eq!(sgd.step_count(), 1);
    assert!(p.parameter("w").unwrap().grad.is_none());

    let mut p = ParameterSet::new();
    p.insert("w", Tensor::scalar(1.0)).unwrap();
    p.accumulate("w", &[1.0]).unwrap();
    let mut adam = OptimizerState::adam(0.001).unwrap();
    adam.step(&mut p).unwrap();
    // step 1: m̂ = g, v̂ = g² → Δ = lr·g/(|g| + ε)
    let expected = 1.0 - 0.001 / (1.0 + 1e-8);
    assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);

    let mut p = ParameterSet::new();
    p.insert("w", Tensor::vector(vec![0.3, -0.2])).unwrap();
    p.accumulate("w", &[0.0, 0.0]).unwrap();
    OptimizerState::adam(0.01).unwrap().step(&mut p).unwrap();
    assert_eq!(p.get("w").unwrap().data(), &[0.3, -0.2]);
}

#[test]
fn optimizer_missing_gradient_names_path() {
    let mut p = ParameterSet::new();
    p.insert("block.w", Tensor::scalar(1.0)).unwrap();
    let err = OptimizerState::sgd(0.1).unwrap().step(&mut p).unwrap_err();
    assert!(err.to_string().contains("block.w"), "{err}");
}

#[test]
fn parameter_paths_are_unique_and_sorted() {
    let mut p = ParameterSet::new();
    p.insert("b", Tensor::scalar(0.)).unwrap();
    p.insert("a.z", Tensor::scalar(0.)).unwrap();
    p.insert("a.b", Tensor::scalar(0.)).unwrap();
    assert!(p.insert("b", Tensor::scalar(1.)).is_err());
    assert_eq!(p.paths().collect::<Vec<_>>(), vec!["a.b", "a.z", "b"]);
}

#[test]
fn finite_difference_check_oracle_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, vec![6]);
    let w = random(&mut rng, vec![6]);
    let linear = finite_difference_check(|g, x| Ok(x.mul(g.constant(w.clone()))?.sum()), &x, 1e-5)
        .unwrap();
    assert!(linear < 1e-9, "{linear}");
    let quad = finite_difference_check(|_, x| Ok(x.square().sum()), &x, 1e-5).unwrap();
    assert!(quad < 1e-6, "{quad}");
    let xr = random_off_kink(&mut rng, vec![6]);
    let relu = finite_difference_check(
        |g, x| Ok(x.relu().mul(g.constant(w.clone()))?.sum()),
        &xr,
        1e-5,
    )
    .unwrap();
    assert!(relu < 1e-4, "{relu}");
}

#[test]
fn fused_kernels_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let proj = |rng: &mut ChaCha8Rng, shape: Vec<usize>| random(rng, shape);

    // gather with repeated indices + concat + column bias + column scaling
    let x = random(&mut rng, vec![3, 5]);
    let other = random(&mut rng, vec![2, 7]);
    let bias = random(&mut rng, vec![5]);
    let cw = random(&mut rng, vec![7]);
    let p = proj(&mut rng, vec![5, 7]);
    let err = finite_difference_check(
        |g, x| {
            let gathered = x.gather_cols(vec![0, 4, 4, 2, 1, 0, 3])?;
            let stacked = concat_rows(&[gathered, g.constant(other.clone())])?;
            let biased = stacked.add_column(g.constant(bias.clone()))?;
            let scaled = biased.scale_columns(g.constant(cw.clone()))?;
            Ok(scaled.mul(g.constant(p.clone()))?.sum())
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "gather/concat: {err}");

    // column weights of scale_columns and the bias itself
    let a = random(&mut rng, vec![3, 4]);
    let p = proj(&mut rng, vec![3, 4]);
    let w = random(&mut rng, vec![4]);
    let err = finite_difference_check(
        |g, w| Ok(g.constant(a.clone()).scale_columns(w)?.mul(g.constant(p.clone()))?.sum()),
        &w,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "scale_columns weights: {err}");
    let b = random(&mut rng, vec![3]);
    let err = finite_difference_check(
        |g, b| Ok(g.constant(a.clone()).add_column(b)?.square().sum()),
        &b,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "bias: {err}");

    // transpose, sum_rows, exp, affine
    let x = random(&mut rng, vec![3, 4]);
    let p = proj(&mut rng, vec![1, 3]);
    let err = finite_difference_check(
        |g, x| {
            let t = x.transpose().affine(0.5, 0.1).exp();
            Ok(t.sum_rows().mul(g.constant(p.clone()))?.sum())
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "transpose/sum_rows: {err}");
}

#[test]
fn grouped_matmul_t_matches_finite_differences_and_dense_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (d, k, m, mw) = (3, 4, 2, 5);
    let f = random(&mut rng, vec![d, m * k]);
    let w = random(&mut rng, vec![mw, m * k]);
    let p = random(&mut rng, vec![d, m * mw]);

    let g = Graph::new();
    let out = g
        .constant(f.clone())
        .grouped_matmul_t(g.constant(w.clone()), k)
        .unwrap();
    for c in 0..m {
        for i in 0..d {
            for b in 0..mw {
                let dense: f64 = (0..k).map(|j| f.at(i, c * k + j) * w.at(b, c * k + j)).sum();
                let got = out.value().at(i, c * mw + b);
                assert!((dense - got).abs() < 1e-12);
            }
        }
    }

    let err = finite_difference_check(
        |g, x| {
            Ok(x.grouped_matmul_t(g.constant(w.clone()), k)?
                .mul(g.constant(p.clone()))?
                .sum())
        },
        &f,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "d/dF: {err}");
    let err = finite_difference_check(
        |g, x| {
            Ok(g.constant(f.clone())
                .grouped_matmul_t(x, k)?
                .mul(g.constant(p.clone()))?
                .sum())
        },
        &w,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "d/dW: {err}");
}

fn orientation_loss<'g>(
    g: &'g Graph,
    f: Var<'g>,
    which: Option<(usize, Var<'g>)>,
    ws: &[Tensor],
    bs: &[Tensor],
    p: &Tensor,
) -> crate::Result<Var<'g>> {
    let mut wv: Vec<_> = ws.iter().map(|t| g.constant(t.clone())).collect();
    let mut bv: Vec<_> = bs.iter().map(|t| g.constant(t.clone())).collect();
    if let Some((slot, v)) = which {
        if slot < 3 {
            wv[slot] = v;
        } else {
            bv[slot - 3] = v;
        }
    }
    let out = f.orientation_conv([wv[0], wv[1], wv[2]], [bv[0], bv[1], bv[2]])?;
    Ok(out.mul(g.constant(p.clone()))?.sum())
}

#[test]
fn orientation_conv_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (d, m) = (3, 2);
    // strictly positive cube and weights keep every stage active
    let pos = |rng: &mut ChaCha8Rng, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap()
    };
    let f = pos(&mut rng, vec![d, 8 * m]);
    let ws: Vec<Tensor> = (0..3).map(|_| pos(&mut rng, vec![d, 2])).collect();
    let bs: Vec<Tensor> = (0..3).map(|_| random(&mut rng, vec![d])).collect();
    let p = random(&mut rng, vec![d, m]);
    let err = finite_difference_check(|g, x| orientation_loss(g, x, None, &ws, &bs, &p), &f, 1e-5).unwrap();
    assert!(err < 1e-4, "d/dF: {err}");
    for slot in 0..6 {
        let at = if slot < 3 { ws[slot].clone() } else { bs[slot - 3].clone() };
        let err = finite_difference_check(
            |g, x| orientation_loss(g, g.constant(f.clone()), Some((slot, x)), &ws, &bs, &p),
            &at,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "slot {slot}: {err}");
    }
}

#[test]
fn group_kde_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (k, m) = (4, 3);
    let coords = random(&mut rng, vec![3, m * k]);
    let p = random(&mut rng, vec![1, m * k]);
    let err = finite_difference_check(
        |g, x| Ok(x.group_kde(k, 0.7)?.mul(g.constant(p.clone()))?.sum()),
        &coords,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, vec![6, 8]);
        let x = random(&mut rng, vec![8, 5]);
        let g = Graph::new();
        let av = g.input(a);
        let xv = g.input(x);
        let y = av.matmul(xv).unwrap().relu().reduce_max_groups(5).unwrap();
        let loss = y.square().sum();
        let grads = g.backward(loss).unwrap();
        (loss.item().to_bits(), grads.tensor(av), grads.tensor(xv))
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn backward_is_linear(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_off_kink(&mut rng, vec![2, 3]);
        let w = random(&mut rng, vec![3, 2]);
        let grad_of = |which: u8| {
            let g = Graph::new();
            let xv = g.input(x.clone());
            let f = || xv.matmul(g.constant(w.clone())).unwrap().relu().sum();
            let h = || xv.exp().sum();
            let loss = match which {
                0 => f(),
                1 => h(),
                _ => f().add(h()).unwrap(),
            };
            g.backward(loss).unwrap().tensor(xv)
        };
        let (gf, gh, gs) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gs.numel() {
            prop_assert!((gs.data()[i] - gf.data()[i] - gh.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_max_gradient_is_one_hot(seed in 0u64..1000, rows in 1usize..5, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, vec![rows, k]);
        let up = random(&mut rng, vec![rows]);
        let g = Graph::new();
        let xv = g.input(x);
        let y = xv.reduce_max().unwrap();
        let loss = y.mul(g.constant(up.clone())).unwrap().sum();
        let grad = g.backward(loss).unwrap().tensor(xv);
        for r in 0..rows {
            let row = &grad.data()[r * k..(r + 1) * k];
            prop_assert_eq!(row.iter().filter(|v| **v != 0.0).count() <= 1, true);
            prop_assert!((row.iter().sum::<f64>() - up.data()[r]).abs() < 1e-15);
        }
    }

    #[test]
    fn smooth_ops_pass_finite_difference_checks(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, vec![3, 4]);
        let w = random(&mut rng, vec![4, 3]);
        let err = finite_difference_check(
            |g, x| Ok(x.matmul(g.constant(w.clone()))?.exp().affine(0.3, -0.1).square().sum()),
            &x,
            1e-5,
        ).unwrap();
        prop_assert!(err < 1e-4, "{}", err);
    }
}
