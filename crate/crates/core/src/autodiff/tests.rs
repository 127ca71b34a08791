use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Entries bounded away from zero so kinks are never straddled by ±eps.
fn rand_away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = rand_tensor(shape, seed);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// `Σ r ⊙ y` with a fixed random `r`, so every output element matters.
fn weighted_sum(g: &mut Graph<f64>, y: NodeId, seed: u64) -> Result<NodeId> {
    let r = rand_tensor(g.shape(y), seed ^ 0xA5A5);
    let r = g.input(r);
    let p = g.mul(y, r)?;
    Ok(g.sum_all(p))
}

/// Brute-force direct convolution used as an independent oracle.
fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let k = ws[2];
    let od = (xs[2] + 2 * pad - k) / stride + 1;
    let oh = (xs[3] + 2 * pad - k) / stride + 1;
    let ow = (xs[4] + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(vec![xs[0], ws[0], od, oh, ow]);
    let xi = |n: usize, c: usize, d: i64, h: i64, ww: i64| -> f64 {
        if d < 0 || h < 0 || ww < 0 || d >= xs[2] as i64 || h >= xs[3] as i64 || ww >= xs[4] as i64
        {
            return 0.0;
        }
        x.data()
            [(((n * xs[1] + c) * xs[2] + d as usize) * xs[3] + h as usize) * xs[4] + ww as usize]
    };
    let mut idx = 0;
    for n in 0..xs[0] {
        for co in 0..ws[0] {
            for a in 0..od {
                for bb in 0..oh {
                    for c in 0..ow {
                        let mut acc = b.map_or(0.0, |b| b[co]);
                        for ci in 0..xs[1] {
                            for kd in 0..k {
                                for kh in 0..k {
                                    for kw in 0..k {
                                        let wv = w.data()
                                            [(((co * ws[1] + ci) * k + kd) * k + kh) * k + kw];
                                        acc += wv
                                            * xi(
                                                n,
                                                ci,
                                                (a * stride + kd) as i64 - pad as i64,
                                                (bb * stride + kh) as i64 - pad as i64,
                                                (c * stride + kw) as i64 - pad as i64,
                                            );
                                    }
                                }
                            }
                        }
                        out.data_mut()[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn identity_kernel_conv_is_identity() {
    let x = rand_tensor(&[2, 3, 4, 5, 6], 1);
    let mut w = Tensor::zeros(vec![3, 3, 3, 3, 3]);
    for c in 0..3 {
        w.data_mut()[(c * 3 + c) * 27 + 13] = 1.0;
    }
    let mut g = Graph::new();
    let xi = g.input(x.clone());
    let wi = g.input(w);
    let y = g.conv3d(xi, wi, None, 1, 1).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_matches_brute_force() {
    for (stride, pad, dims) in [
        (1, 1, [5, 4, 6]),
        (2, 1, [6, 6, 4]),
        (2, 0, [5, 7, 3]),
        (1, 0, [3, 3, 4]),
    ] {
        let x = rand_tensor(&[2, 3, dims[0], dims[1], dims[2]], 2);
        let w = rand_tensor(&[4, 3, 3, 3, 3], 3);
        let b = rand_tensor(&[4], 4);
        let mut g = Graph::new();
        let (xi, wi, bi) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let y = g.conv3d(xi, wi, Some(bi), stride, pad).unwrap();
        let oracle = naive_conv(&x, &w, Some(b.data()), stride, pad);
        assert_eq!(g.shape(y), oracle.shape());
        for (a, o) in g.value(y).data().iter().zip(oracle.data()) {
            assert!((a - o).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_adjoint_identity() {
    for (stride, pad) in [(1, 1), (2, 1), (2, 0)] {
        let x = rand_tensor(&[2, 3, 6, 5, 4], 10);
        let w = rand_tensor(&[2, 3, 3, 3, 3], 11);
        let mut g = Graph::new();
        let (xi, wi) = (g.input(x.clone()), g.input(w.clone()));
        let y = g.conv3d(xi, wi, None, stride, pad).unwrap();
        let probe = rand_tensor(g.shape(y), 12);
        let lhs: f64 = g
            .value(y)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum();
        let geom = match &g.nodes[y.0].op {
            Op::Conv3d { geom, .. } => *geom,
            _ => unreachable!(),
        };
        let mut back = vec![0.0; x.len()];
        kernels::conv3d_backward_input(&geom, probe.data(), w.data(), &mut back);
        let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn relu_kills_negatives_and_softmax_normalizes() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_f64(vec![4], &[-1.0, -0.5, -3.0, -1e-9]).unwrap());
    let y = g.relu(x);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let logits = Tensor::<f32>::uniform(vec![3, 7, 5], 10.0, &mut ChaCha8Rng::seed_from_u64(4));
    let mut g = Graph::new();
    let l = g.input(logits);
    for axis in 0..3 {
        let s = g.softmax(l, axis).unwrap();
        let shape = g.shape(s).to_vec();
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        for o in 0..outer {
            for i in 0..inner {
                let total: f32 = (0..shape[axis])
                    .map(|a| g.value(s).data()[(o * shape[axis] + a) * inner + i])
                    .sum();
                assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn simple_gradients() {
    let x = rand_tensor(&[3, 4], 5);
    let mut g = Graph::new();
    let xi = g.leaf(x.clone(), true);
    let s = g.sum_all(xi);
    let gr = g.backward(s).unwrap();
    assert!(gr.node(xi).unwrap().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let xi = g.leaf(x.clone(), true);
    let sq = g.mul(xi, xi).unwrap();
    let s = g.sum_all(sq);
    let gr = g.backward(s).unwrap();
    for (a, b) in gr.node(xi).unwrap().iter().zip(x.data()) {
        assert_eq!(*a, 2.0 * b);
    }
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(rand_tensor(&[2, 2], 1), true);
    assert!(matches!(g.backward(x), Err(Error::NotScalarLoss(_))));
}

#[test]
fn shape_errors_name_the_node() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(vec![2, 3]));
    let b = g.input(Tensor::zeros(vec![3, 2]));
    match g.add(a, b) {
        Err(Error::ShapeMismatch { node: Some(2), .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(g.bmm(a, b).is_err());
    let w = g.input(Tensor::zeros(vec![4, 2]));
    assert!(g.linear(a, w, None).is_err());
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x = rand_tensor(&[2, 5], 8);
    let build = |g: &mut Graph<f64>, c: f64| {
        let xi = g.leaf(x.clone(), true);
        let t = g.leaky_relu(xi, 0.1);
        let s = weighted_sum(g, t, 3).unwrap();
        let s = g.scale(s, c);
        (xi, s)
    };
    let mut g1 = Graph::new();
    let (x1, l1) = build(&mut g1, 1.0);
    let mut g2 = Graph::new();
    let (x2, l2) = build(&mut g2, 2.5);
    let a = g1.backward(l1).unwrap();
    let b = g2.backward(l2).unwrap();
    for (u, v) in a.node(x1).unwrap().iter().zip(b.node(x2).unwrap()) {
        assert!((2.5 * u - v).abs() < 1e-14);
    }
}

fn conv_loss(g: &mut Graph<f64>, x: NodeId, stride: usize, cin: usize) -> Result<NodeId> {
    let w = g.input(rand_tensor(&[3, cin, 3, 3, 3], 21));
    let b = g.input(rand_tensor(&[3], 22));
    let y = g.conv3d(x, w, Some(b), stride, 1)?;
    weighted_sum(g, y, 23)
}

#[test]
fn primitive_gradient_checks() {
    let eps = 1e-5;
    let shapes: [[usize; 5]; 5] = [
        [1, 2, 4, 4, 4],
        [2, 1, 2, 4, 6],
        [1, 3, 3, 5, 4],
        [2, 2, 6, 2, 2],
        [1, 1, 8, 4, 2],
    ];
    for (s, shape) in shapes.iter().enumerate() {
        let seed = 100 + s as u64;
        let x = rand_tensor(shape, seed);
        let cin = shape[1];
        for stride in [1, 2] {
            let e = grad_check(|g, x| conv_loss(g, x, stride, cin), &x, eps, 64).unwrap();
            assert!(e < 1e-5, "conv stride {stride} on {shape:?}: {e}");
        }
        let e = grad_check(
            |g, x| {
                let y = g.upsample2(x)?;
                weighted_sum(g, y, seed)
            },
            &x,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "upsample {e}");

        let xa = rand_away_from_zero(shape, seed);
        let e = grad_check(
            |g, x| {
                let y = g.relu(x);
                weighted_sum(g, y, seed)
            },
            &xa,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "relu {e}");
        let e = grad_check(
            |g, x| {
                let y = g.leaky_relu(x, 0.1);
                weighted_sum(g, y, seed)
            },
            &xa,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "leaky {e}");

        let e = grad_check(
            |g, x| {
                let y = g.global_avg_pool(x)?;
                weighted_sum(g, y, seed)
            },
            &x,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "gap {e}");
        let e = grad_check(
            |g, x| {
                let other = g.input(rand_tensor(g.shape(x), seed + 1));
                let c = g.concat(&[x, other, x], 1)?;
                weighted_sum(g, c, seed)
            },
            &x,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "concat {e}");
        let e = grad_check(
            |g, x| {
                let other = g.input(rand_tensor(g.shape(x), seed + 2));
                let a = g.add(x, other)?;
                let m = g.mul(a, x)?;
                let d = g.sub(m, other)?;
                let r = g.reshape(d, vec![shape[0], shape[1] * shape[2], shape[3] * shape[4]])?;
                let sc = g.scale(r, -0.7);
                weighted_sum(g, sc, seed)
            },
            &x,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "elementwise {e}");

        // matrix-shaped primitives on a 3-d view of the same data
        let (b, m, n) = (shape[0], shape[1] * shape[2], shape[3] * shape[4]);
        let x3 = x.clone().reshaped(vec![b, m, n]).unwrap();
        for axis in 0..3 {
            let e = grad_check(
                |g, x| {
                    let y = g.softmax(x, axis)?;
                    weighted_sum(g, y, seed)
                },
                &x3,
                eps,
                64,
            )
            .unwrap();
            assert!(e < 1e-4, "softmax axis {axis}: {e}");
        }
        let e = grad_check(
            |g, x| {
                let y = g.transpose(x)?;
                weighted_sum(g, y, seed)
            },
            &x3,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "transpose {e}");
        let e = grad_check(
            |g, x| {
                let rhs = g.input(rand_tensor(&[b, n, 3], seed + 3));
                let y = g.bmm(x, rhs)?;
                weighted_sum(g, y, seed)
            },
            &x3,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "bmm lhs {e}");
        let e = grad_check(
            |g, x| {
                let lhs = g.input(rand_tensor(&[b, 2, m], seed + 4));
                let y = g.bmm(lhs, x)?;
                weighted_sum(g, y, seed)
            },
            &x3,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-4, "bmm rhs {e}");

        let x2 = x
            .clone()
            .reshaped(vec![shape[0], x.len() / shape[0]])
            .unwrap();
        let fin = x2.shape()[1];
        let e = grad_check(
            |g, x| {
                let w = g.input(rand_tensor(&[5, fin], seed + 5));
                let bias = g.input(rand_tensor(&[5], seed + 6));
                let y = g.linear(x, w, Some(bias))?;
                weighted_sum(g, y, seed)
            },
            &x2,
            eps,
            64,
        )
        .unwrap();
        assert!(e < 1e-6, "linear {e}");
    }
}

#[test]
fn parameter_gradient_checks() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", rand_tensor(&[3, 2, 3, 3, 3], 1));
    let b = store.add("b", rand_tensor(&[3], 2));
    let fw = store.add("fw", rand_tensor(&[4, 3], 3));
    let fb = store.add("fb", rand_tensor(&[4], 4));
    let x = rand_tensor(&[2, 2, 4, 4, 4], 5);
    let e = grad_check_params(
        &store,
        |g, s| {
            let xi = g.input(x.clone());
            let (w, b, fw, fb) = (g.param(s, w), g.param(s, b), g.param(s, fw), g.param(s, fb));
            let y = g.conv3d(xi, w, Some(b), 2, 1)?;
            let p = g.global_avg_pool(y)?;
            let z = g.linear(p, fw, Some(fb))?;
            weighted_sum(g, z, 9)
        },
        1e-5,
        40,
    )
    .unwrap();
    assert!(e < 1e-5, "{e}");
}

#[test]
fn attention_core_gradient_check() {
    // softmax(Qᵀ K) applied to V, the shape of a non-local link
    let x = rand_tensor(&[1, 4, 6], 31);
    let k = rand_tensor(&[1, 4, 5], 32);
    let e = grad_check(
        |g, q| {
            let kk = g.input(k.clone());
            let qt = g.transpose(q)?;
            let scores = g.bmm(qt, kk)?;
            let a = g.softmax(scores, 2)?;
            let at = g.transpose(a)?;
            let y = g.bmm(kk, at)?;
            weighted_sum(g, y, 33)
        },
        &x,
        1e-5,
        64,
    )
    .unwrap();
    assert!(e < 1e-4, "{e}");
}

#[test]
fn shared_leaf_accumulates() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", Tensor::from_f64(vec![2], &[1.5, -2.0]).unwrap());
    let mut g = Graph::new();
    let a = g.param(&store, p);
    let b = g.param(&store, p);
    assert_eq!(a, b);
    let s = g.add(a, b).unwrap();
    let l = g.sum_all(s);
    let gr = g.backward(l).unwrap();
    assert_eq!(gr.param(p).unwrap(), &[2.0, 2.0]);
}

#[test]
fn sgd_momentum_examples() {
    let mut store = ParamStore::<f64>::new();
    store.add("p", Tensor::from_f64(vec![3], &[1.0, 2.0, 3.0]).unwrap());
    let before = store.clone();
    let mut opt = SgdMomentum::new(&store, 0.1, 0.9);
    opt.step(&mut store, &[Tensor::zeros(vec![3])]).unwrap();
    assert_eq!(store, before);

    let g = Tensor::from_f64(vec![3], &[0.5, -1.0, 2.0]).unwrap();
    let (lr, mu) = (1e-4, 0.9);
    let mut opt = SgdMomentum::new(&store, lr, mu);
    opt.step(&mut store, std::slice::from_ref(&g)).unwrap();
    for i in 0..3 {
        assert!(
            (store.tensors()[0].data()[i] - (before.tensors()[0].data()[i] - lr * g.data()[i]))
                .abs()
                < 1e-15
        );
    }
    opt.step(&mut store, std::slice::from_ref(&g)).unwrap();
    for i in 0..3 {
        let total = before.tensors()[0].data()[i] - store.tensors()[0].data()[i];
        assert!((total - lr * g.data()[i] * (1.0 + (1.0 + mu))).abs() < 1e-15);
    }
    assert!(opt.step(&mut store, &[Tensor::zeros(vec![4])]).is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Tensor::<f32>::uniform(vec![2, 3, 8, 8, 8], 1.0, &mut rng);
        let w = Tensor::<f32>::uniform(vec![4, 3, 3, 3, 3], 0.5, &mut rng);
        let mut g = Graph::new();
        let xi = g.leaf(x, true);
        let wi = g.leaf(w, true);
        let y = g.conv3d(xi, wi, None, 2, 1).unwrap();
        let r = g.reshape(y, vec![2, 4, 64]).unwrap();
        let sm = g.softmax(r, 2).unwrap();
        let l = g.sum_all(sm);
        let l2 = g.mul(l, l).unwrap();
        let gr = g.backward(l2).unwrap();
        (gr.node(xi).unwrap().to_vec(), gr.node(wi).unwrap().to_vec())
    };
    let pool = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
    };
    let a = pool(1).install(run);
    let b = pool(4).install(run);
    assert_eq!(a, b);
}
