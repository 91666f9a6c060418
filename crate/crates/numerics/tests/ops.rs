use ficm_numerics::{he_normal, Graph, NumericsError, ParamStore, Rng, Tensor, Var};
use ficm_testkit::*;

type BuildFn<'a> = &'a dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

/// Gradient check of `loss = sum(op(inputs) * R)` w.r.t. every input
/// coordinate, with `R` a fixed random weighting.
fn check_op(inputs: &[Tensor<f64>], build: BuildFn<'_>, seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut g, &vars);
    let weights = random_tensor(&mut rng, g.shape(out));
    let loss_of = |g: &mut Graph<f64>, out: Var| {
        let r = g.constant(weights.clone());
        let p = g.mul(out, r).unwrap();
        g.sum(p)
    };
    let loss = loss_of(&mut g, out);
    g.backward(loss).unwrap();

    let mut total = GradCheck {
        checked: 0,
        passed: 0,
        worst_rel: 0.0,
    };
    for k in 0..inputs.len() {
        let analytic = g.grad(vars[k]).unwrap().to_vec();
        let f = |x: &[f64]| {
            let mut h = Graph::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if j == k {
                        h.input(Tensor::new(t.shape(), x.to_vec()).unwrap())
                    } else {
                        h.input(t.clone())
                    }
                })
                .collect();
            let o = build(&mut h, &vs);
            let l = loss_of(&mut h, o);
            h.value(l).item()
        };
        let coords: Vec<usize> = (0..inputs[k].numel()).collect();
        let r = finite_difference_check(f, inputs[k].data(), &analytic, &coords, 1e-5, 1e-4);
        total.checked += r.checked;
        total.passed += r.passed;
        total.worst_rel = total.worst_rel.max(r.worst_rel);
    }
    total
}

fn assert_all_pass(r: &GradCheck, what: &str) {
    assert_eq!(r.passed, r.checked, "{what}: worst rel err {}", r.worst_rel);
}

/// Uniform values kept away from integer grid lines (bilinear kinks).
fn off_grid(rng: &mut Rng, hi: usize) -> f64 {
    let base = rng.below(hi.max(1)) as f64;
    (base + rng.range_f64(0.1, 0.9)).min(hi as f64 - 0.05)
}

// ---------------------------------------------------------------- conv2d

#[test]
fn conv2d_identity_kernel_returns_input() {
    let mut rng = Rng::new(1);
    let x = random_tensor(&mut rng, &[1, 3, 3]);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let k = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(xv, k, b, 1, 0).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv2d_zero_input_yields_bias() {
    let mut rng = Rng::new(2);
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[2, 5, 5]));
    let k = g.constant(random_tensor(&mut rng, &[3, 2, 3, 3]));
    let b = g.constant(Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
    let y = g.conv2d(x, k, b, 1, 1).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[3, 5, 5]);
    for c in 0..3 {
        for p in 0..25 {
            assert_eq!(out.data()[c * 25 + p], [0.5, -1.0, 2.0][c]);
        }
    }
}

#[test]
fn conv2d_strided_padded_matches_loop_oracle() {
    let mut rng = Rng::new(3);
    let x = random_tensor(&mut rng, &[2, 5, 5]);
    let k = random_tensor(&mut rng, &[3, 2, 3, 3]);
    let b = random_tensor(&mut rng, &[3]);
    let mut g = Graph::new();
    let (xv, kv, bv) = (g.input(x.clone()), g.input(k.clone()), g.input(b.clone()));
    let y = g.conv2d(xv, kv, bv, 2, 1).unwrap();
    let (want, oh, ow) = conv2d_naive(x.data(), (2, 5, 5), k.data(), (3, 3, 3), b.data(), 2, 1);
    assert_eq!(g.shape(y), &[3, oh, ow]);
    assert_eq!((oh, ow), (3, 3));
    assert!(max_abs_diff(g.value(y).data(), &want) <= 1e-10);
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[2, 5, 5]));
    let k = g.input(Tensor::zeros(&[1, 3, 3, 3]));
    let b = g.input(Tensor::zeros(&[1]));
    let err = g.conv2d(x, k, b, 1, 0).unwrap_err();
    assert!(matches!(err, NumericsError::Shape { op: "conv2d", .. }), "{err}");
    let k_big = g.input(Tensor::zeros(&[1, 2, 9, 9]));
    assert!(g.conv2d(x, k_big, b, 1, 0).is_err());
    let k_ok = g.input(Tensor::zeros(&[1, 2, 3, 3]));
    assert!(g.conv2d(x, k_ok, b, 0, 0).is_err());
}

#[test]
fn conv2d_batched_equals_per_sample() {
    let mut rng = Rng::new(4);
    let x = random_tensor(&mut rng, &[3, 2, 6, 7]);
    let k = random_tensor(&mut rng, &[4, 2, 3, 3]);
    let b = random_tensor(&mut rng, &[4]);
    let mut g = Graph::new();
    let (xv, kv, bv) = (g.input(x.clone()), g.input(k.clone()), g.input(b.clone()));
    let y = g.conv2d(xv, kv, bv, 2, 1).unwrap();
    let per = g.value(y).numel() / 3;
    for s in 0..3 {
        let xs = &x.data()[s * 84..(s + 1) * 84];
        let (want, _, _) = conv2d_naive(xs, (2, 6, 7), k.data(), (4, 3, 3), b.data(), 2, 1);
        assert!(max_abs_diff(&g.value(y).data()[s * per..(s + 1) * per], &want) <= 1e-10);
    }
}

// ------------------------------------------------------------ leaky_relu

#[test]
fn leaky_relu_definition() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[3], vec![0.0, -2.0, 1.5]).unwrap());
    let y = g.leaky_relu(x, 0.1).unwrap();
    let v = g.value(y).data();
    assert_eq!(v[0], 0.0);
    assert!((v[1] + 0.2).abs() < 1e-15);
    assert_eq!(v[2], 1.5);
    assert!(g.leaky_relu(x, 1.0).is_err());
}

#[test]
fn leaky_relu_gradient_matches_central_differences() {
    let mut rng = Rng::new(5);
    let x = Tensor::from_fn(&[40], |_| {
        let v = rng.range_f64(0.01, 1.0);
        if rng.uniform() < 0.5 {
            -v
        } else {
            v
        }
    });
    let mut g = Graph::new();
    let xv = g.input(x.clone().with_requires_grad(true));
    let y = g.leaky_relu(xv, 0.1).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    let analytic = g.grad(xv).unwrap().to_vec();
    let f = |p: &[f64]| p.iter().map(|&v| if v >= 0.0 { v } else { 0.1 * v }).sum::<f64>();
    let coords: Vec<usize> = (0..40).collect();
    let r = finite_difference_check(f, x.data(), &analytic, &coords, 1e-5, 1e-6);
    assert_all_pass(&r, "leaky_relu");
}

#[test]
fn leaky_relu_subgradient_at_zero_is_one() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[1]).with_requires_grad(true));
    let y = g.leaky_relu(x, 0.2).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);
}

// ------------------------------------------------------------ upsample2x

#[test]
fn upsample_constant_and_degenerate() {
    let mut g = Graph::<f64>::new();
    let c = g.input(Tensor::full(&[2, 3, 4], 0.7));
    let u = g.upsample2x(c).unwrap();
    assert_eq!(g.shape(u), &[2, 6, 8]);
    assert!(g.value(u).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    let one = g.input(Tensor::full(&[1, 1, 1], 3.25));
    let u1 = g.upsample2x(one).unwrap();
    assert_eq!(g.value(u1).data(), &[3.25; 4]);
}

#[test]
fn upsample_2x2_matches_closed_form_weights() {
    // Source [[a, b], [c, d]]: interior weights are 3/4 and 1/4 per axis,
    // border rows/columns clamp.
    let (a, b, c, d) = (1.0, 2.0, 5.0, -3.0);
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(&[1, 2, 2], vec![a, b, c, d]).unwrap());
    let u = g.upsample2x(x).unwrap();
    let lerp = |p: f64, q: f64, t: f64| p * (1.0 - t) + q * t;
    let row = |p: f64, q: f64| [p, lerp(p, q, 0.25), lerp(p, q, 0.75), q];
    let top = row(a, b);
    let bot = row(c, d);
    let mut want = Vec::new();
    for t in [0.0, 0.25, 0.75, 1.0] {
        for k in 0..4 {
            want.push(lerp(top[k], bot[k], t));
        }
    }
    assert!(max_abs_diff(g.value(u).data(), &want) <= 1e-12);
}

// ------------------------------------------------------- bilinear_sample

fn identity_grid(n: usize, h: usize, w: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[n, 2, h, w]);
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                t.set(&[s, 0, y, x], x as f64);
                t.set(&[s, 1, y, x], y as f64);
            }
        }
    }
    t
}

#[test]
fn sample_identity_grid_is_exact() {
    let mut rng = Rng::new(6);
    let src = random_tensor(&mut rng, &[2, 3, 5, 7]);
    let mut g = Graph::new();
    let s = g.input(src.clone());
    let c = g.input(identity_grid(2, 5, 7));
    let y = g.bilinear_sample(s, c).unwrap();
    assert_eq!(g.value(y).data(), src.data());
}

#[test]
fn sample_constant_source_any_coords() {
    let mut rng = Rng::new(7);
    let mut g = Graph::new();
    let s = g.input(Tensor::full(&[1, 2, 4, 4], 0.3));
    let coords = Tensor::from_fn(&[1, 2, 4, 4], |_| rng.range_f64(-3.0, 7.0));
    let c = g.input(coords);
    let y = g.bilinear_sample(s, c).unwrap();
    assert!(g.value(y).data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
}

#[test]
fn sample_ramp_midpoint_is_corner_average() {
    let ramp: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
    let mut g = Graph::new();
    let s = g.input(Tensor::new(&[1, 3, 3], ramp.clone()).unwrap());
    let mut coords = Tensor::zeros(&[2, 3, 3]);
    coords.data_mut()[..9].fill(0.5);
    coords.data_mut()[9..].fill(0.5);
    let c = g.input(coords);
    let y = g.bilinear_sample(s, c).unwrap();
    let corners = (ramp[0] + ramp[1] + ramp[3] + ramp[4]) / 4.0;
    assert!((g.value(y).data()[0] - corners).abs() < 1e-15);
    assert!((bilinear_at(&ramp, 3, 3, 0, 0.5, 0.5) - corners).abs() < 1e-15);
}

#[test]
fn sample_clamps_outside_coordinates_to_border() {
    let src: Vec<f64> = (0..4).map(|i| i as f64).collect();
    let mut g = Graph::new();
    let s = g.input(Tensor::new(&[1, 2, 2], src).unwrap());
    let c = g.input(Tensor::new(&[2, 2, 2], vec![-5.0, 9.0, 0.0, 1.0, -1.0, -1.0, 4.0, 4.0]).unwrap());
    let y = g.bilinear_sample(s, c).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 1.0, 2.0, 3.0]);
}

// ------------------------------------------------------------------- mse

#[test]
fn mse_examples() {
    let mut rng = Rng::new(8);
    let a = random_tensor(&mut rng, &[3, 4]);
    let mut g = Graph::new();
    let av = g.input(a.clone());
    let same = g.mse(av, av).unwrap();
    assert_eq!(g.value(same).item(), 0.0);
    let shifted = g.input(a.map(|v| v + 2.0));
    let four = g.mse(shifted, av).unwrap();
    assert!((g.value(four).item() - 4.0).abs() < 1e-12);
    let b = random_tensor(&mut rng, &[3, 4]);
    let bv = g.input(b.clone());
    let m = g.mse(av, bv).unwrap();
    assert!((g.value(m).item() - mse_naive(a.data(), b.data())).abs() <= 1e-12);
    let wrong = g.input(Tensor::zeros(&[4, 3]));
    assert!(matches!(g.mse(av, wrong), Err(NumericsError::Shape { op: "mse", .. })));
}

// -------------------------------------------------------------- backward

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[2, 3], 0.4).with_requires_grad(true));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_of_quadratic() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::scalar(3.0).with_requires_grad(true));
    let z = g.constant(Tensor::zeros(&[1]));
    let l = g.mse(x, z).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[2]).with_requires_grad(true));
    assert_eq!(g.backward(x), Err(NumericsError::NonScalarLoss(vec![2])));
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::scalar(2.0));
    let mut g = Graph::new();
    let a = g.param(&store, w).unwrap();
    let b = g.param(&store, w).unwrap();
    assert_eq!(a, b);
    let p = g.mul(a, b).unwrap();
    let l = g.sum(p);
    g.backward_into(l, &mut store).unwrap();
    assert_eq!(store.get(w).grad().unwrap(), &[4.0]);
    // A second sweep adds on top.
    let mut g2 = Graph::new();
    let a = g2.param(&store, w).unwrap();
    let l = g2.sum(a);
    g2.backward_into(l, &mut store).unwrap();
    assert_eq!(store.get(w).grad().unwrap(), &[5.0]);
}

#[test]
fn graph_refuses_parameters_from_two_stores() {
    let mut s1 = ParamStore::<f64>::new();
    let mut s2 = ParamStore::<f64>::new();
    let a = s1.add("a", Tensor::scalar(1.0));
    let b = s2.add("b", Tensor::scalar(1.0));
    let mut g = Graph::new();
    g.param(&s1, a).unwrap();
    assert_eq!(g.param(&s2, b), Err(NumericsError::ForeignStore));
}

#[test]
fn two_layer_conv_net_gradients_match_finite_differences() {
    let mut rng = Rng::new(9);
    let mut store = ParamStore::<f64>::new();
    let k1 = store.add("k1", he_normal(&mut rng, &[3, 2, 3, 3], 18, 1.0));
    let b1 = store.add("b1", random_tensor(&mut rng, &[3]));
    let k2 = store.add("k2", he_normal(&mut rng, &[2, 3, 3, 3], 27, 1.0));
    let b2 = store.add("b2", random_tensor(&mut rng, &[2]));
    let x = random_tensor(&mut rng, &[2, 2, 7, 6]);
    let target = random_tensor(&mut rng, &[2, 2, 4, 3]);

    let forward = |store: &ParamStore<f64>, g: &mut Graph<f64>| {
        let xv = g.constant(x.clone());
        let t = g.constant(target.clone());
        let (k1, b1, k2, b2) = (
            g.param(store, k1).unwrap(),
            g.param(store, b1).unwrap(),
            g.param(store, k2).unwrap(),
            g.param(store, b2).unwrap(),
        );
        let h = g.conv2d(xv, k1, b1, 1, 1).unwrap();
        let h = g.leaky_relu(h, 0.1).unwrap();
        let y = g.conv2d(h, k2, b2, 2, 1).unwrap();
        g.mse(y, t).unwrap()
    };
    let mut g = Graph::new();
    let l = forward(&store, &mut g);
    g.backward_into(l, &mut store).unwrap();

    let mut checked = 0;
    let mut passed = 0;
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = store.get(id).grad().unwrap().to_vec();
        let values = store.get(id).data().to_vec();
        let f = |p: &[f64]| {
            let mut s = store.clone();
            s.get_mut(id).data_mut().copy_from_slice(p);
            let mut g = Graph::new();
            let l = forward(&s, &mut g);
            g.value(l).item()
        };
        let coords: Vec<usize> = (0..values.len()).collect();
        let r = finite_difference_check(f, &values, &analytic, &coords, 1e-5, 1e-4);
        checked += r.checked;
        passed += r.passed;
    }
    assert!(passed as f64 >= 0.99 * checked as f64, "{passed}/{checked}");
}

// ---------------------------------------------------------------- concat

#[test]
fn concat_single_part_is_identity() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[2, 3, 3], 1.0));
    assert_eq!(g.concat(&[x], 0).unwrap(), x);
}

#[test]
fn concat_channels_keeps_slices() {
    let mut rng = Rng::new(10);
    let a = random_tensor(&mut rng, &[1, 4, 4]);
    let b = random_tensor(&mut rng, &[2, 4, 4]);
    let mut g = Graph::new();
    let (av, bv) = (
        g.input(a.clone().with_requires_grad(true)),
        g.input(b.clone().with_requires_grad(true)),
    );
    let c = g.concat_channels(av, bv).unwrap();
    assert_eq!(g.shape(c), &[3, 4, 4]);
    assert_eq!(&g.value(c).data()[..16], a.data());
    assert_eq!(&g.value(c).data()[16..], b.data());
    let s = g.sum(c);
    g.backward(s).unwrap();
    assert_eq!(g.grad(av).unwrap(), &[1.0; 16]);
    assert_eq!(g.grad(bv).unwrap(), &[1.0; 32]);
    let bad = g.input(Tensor::zeros(&[1, 4, 5]));
    assert!(g.concat_channels(av, bad).is_err());
}

#[test]
fn concat_backward_matches_finite_differences() {
    let mut rng = Rng::new(11);
    let inputs = [random_tensor(&mut rng, &[2, 1, 3, 3]), random_tensor(&mut rng, &[2, 2, 3, 3])];
    let r = check_op(&inputs, &|g, v| g.concat_channels(v[0], v[1]).unwrap(), 12);
    assert_all_pass(&r, "concat");
}

// ---------------------------------------------------- per-op grad checks

#[test]
fn gradient_soundness_for_every_differentiable_op() {
    let mut rng = Rng::new(13);
    let img = |rng: &mut Rng, s: &[usize]| random_tensor(rng, s);

    let conv_in = [img(&mut rng, &[2, 2, 5, 6]), img(&mut rng, &[3, 2, 3, 3]), img(&mut rng, &[3])];
    assert_all_pass(&check_op(&conv_in, &|g, v| g.conv2d(v[0], v[1], v[2], 2, 1).unwrap(), 1), "conv2d");

    let up = [img(&mut rng, &[2, 3, 3, 4])];
    assert_all_pass(&check_op(&up, &|g, v| g.upsample2x(v[0]).unwrap(), 2), "upsample2x");

    let crop = [img(&mut rng, &[1, 2, 5, 5])];
    assert_all_pass(&check_op(&crop, &|g, v| g.crop(v[0], 3, 4).unwrap(), 3), "crop");

    let src = img(&mut rng, &[1, 2, 5, 6]);
    let mut coords = Tensor::zeros(&[1, 2, 5, 6]);
    for p in 0..30 {
        coords.data_mut()[p] = off_grid(&mut rng, 5);
        coords.data_mut()[30 + p] = off_grid(&mut rng, 4);
    }
    let samp = [src, coords];
    assert_all_pass(&check_op(&samp, &|g, v| g.bilinear_sample(v[0], v[1]).unwrap(), 4), "bilinear_sample");

    let corr = [img(&mut rng, &[1, 3, 5, 5]), img(&mut rng, &[1, 3, 5, 5])];
    assert_all_pass(&check_op(&corr, &|g, v| g.correlation(v[0], v[1], 2, 1).unwrap(), 5), "correlation");
    let narrow = [img(&mut rng, &[1, 2, 2, 2]), img(&mut rng, &[1, 2, 2, 2])];
    assert_all_pass(&check_op(&narrow, &|g, v| g.correlation(v[0], v[1], 3, 1).unwrap(), 5), "correlation wider than map");

    let lin = [img(&mut rng, &[3, 4]), img(&mut rng, &[5, 4]), img(&mut rng, &[5])];
    assert_all_pass(&check_op(&lin, &|g, v| g.linear(v[0], v[1], v[2]).unwrap(), 6), "linear");

    let two = [img(&mut rng, &[3, 4]), img(&mut rng, &[3, 4])];
    assert_all_pass(&check_op(&two, &|g, v| g.add(v[0], v[1]).unwrap(), 7), "add");
    assert_all_pass(&check_op(&two, &|g, v| g.sub(v[0], v[1]).unwrap(), 8), "sub");
    assert_all_pass(&check_op(&two, &|g, v| g.mul(v[0], v[1]).unwrap(), 9), "mul");
    assert_all_pass(&check_op(&two, &|g, v| g.minimum(v[0], v[1]).unwrap(), 10), "minimum");
    assert_all_pass(&check_op(&two, &|g, v| g.mse(v[0], v[1]).unwrap(), 11), "mse");

    let one = [img(&mut rng, &[3, 4])];
    assert_all_pass(&check_op(&one, &|g, v| g.exp(v[0]), 12), "exp");
    assert_all_pass(&check_op(&one, &|g, v| g.scale(v[0], 1.7), 13), "scale");
    assert_all_pass(&check_op(&one, &|g, v| g.add_scalar(v[0], 0.3), 14), "add_scalar");
    assert_all_pass(&check_op(&one, &|g, v| g.clamp(v[0], -0.5, 0.5), 15), "clamp");
    assert_all_pass(&check_op(&one, &|g, v| g.mean(v[0]), 16), "mean");
    assert_all_pass(&check_op(&one, &|g, v| g.log_softmax(v[0]).unwrap(), 17), "log_softmax");
    assert_all_pass(&check_op(&one, &|g, v| g.gather(v[0], &[1, 0, 3]).unwrap(), 18), "gather");
    assert_all_pass(&check_op(&one, &|g, v| g.reshape(v[0], &[2, 6]).unwrap(), 19), "reshape");

    let pos = [Tensor::from_fn(&[6], |i| 0.5 + i as f64)];
    assert_all_pass(&check_op(&pos, &|g, v| g.log(v[0]), 20), "log");
}

// ---------------------------------------------- oracle equivalence sweep

#[test]
fn oracle_equivalence_over_fifty_random_shapes() {
    let mut rng = Rng::new(14);
    for trial in 0..50 {
        let c = 1 + rng.below(3);
        let h = 3 + rng.below(6);
        let w = 3 + rng.below(6);
        let x = random_tensor(&mut rng, &[c, h, w]);

        // conv2d
        let o = 1 + rng.below(3);
        let kh = 1 + rng.below(3);
        let kw = 1 + rng.below(3);
        let stride = 1 + rng.below(2);
        let pad = rng.below(2);
        let k = random_tensor(&mut rng, &[o, c, kh, kw]);
        let b = random_tensor(&mut rng, &[o]);
        let mut g = Graph::new();
        let (xv, kv, bv) = (g.input(x.clone()), g.input(k.clone()), g.input(b.clone()));
        let y = g.conv2d(xv, kv, bv, stride, pad).unwrap();
        let (want, _, _) = conv2d_naive(x.data(), (c, h, w), k.data(), (o, kh, kw), b.data(), stride, pad);
        assert!(max_abs_diff(g.value(y).data(), &want) <= 1e-10, "conv trial {trial}");

        // upsample2x
        let u = g.upsample2x(xv).unwrap();
        assert!(max_abs_diff(g.value(u).data(), &upsample2x_naive(x.data(), (c, h, w))) <= 1e-10);

        // bilinear_sample, including out-of-range coordinates
        let coords = Tensor::from_fn(&[2, h, w], |_| rng.range_f64(-2.0, (h.max(w) + 2) as f64));
        let cv = g.input(coords.clone());
        let s = g.bilinear_sample(xv, cv).unwrap();
        let want = bilinear_sample_naive(x.data(), (c, h, w), coords.data(), (h, w));
        assert!(max_abs_diff(g.value(s).data(), &want) <= 1e-10, "sample trial {trial}");

        // correlation
        let x2 = random_tensor(&mut rng, &[c, h, w]);
        let x2v = g.input(x2.clone());
        let md = 1 + rng.below(4);
        let cr = g.correlation(xv, x2v, md, 1).unwrap();
        let want = correlation_naive(x.data(), x2.data(), (c, h, w), md, 1);
        assert!(max_abs_diff(g.value(cr).data(), &want) <= 1e-10, "corr trial {trial}");

        // mse
        let m = g.mse(xv, x2v).unwrap();
        assert!((g.value(m).item() - mse_naive(x.data(), x2.data())).abs() <= 1e-10);
    }
}

// ---------------------------------------------------------- determinism

#[test]
fn identical_inputs_give_bit_identical_outputs() {
    let run = || {
        let mut rng = Rng::new(15);
        let x = Tensor::<f32>::from_fn(&[4, 3, 12, 12], |_| rng.uniform() as f32);
        let k = Tensor::<f32>::from_fn(&[8, 3, 3, 3], |_| rng.normal() as f32);
        let mut g = Graph::new();
        let (xv, kv) = (g.input(x), g.input(k.with_requires_grad(true)));
        let b = g.constant(Tensor::zeros(&[8]));
        let y = g.conv2d(xv, kv, b, 2, 1).unwrap();
        let y = g.leaky_relu(y, 0.1).unwrap();
        let u = g.upsample2x(y).unwrap();
        let l = g.mean(u);
        g.backward(l).unwrap();
        (g.value(u).clone(), g.grad(kv).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

mod props {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn finite_inputs_stay_finite(seed in 0u64..10_000, h in 2usize..9, w in 2usize..9) {
            let mut rng = Rng::new(seed);
            let x = Tensor::<f64>::from_fn(&[1, 2, h, w], |_| rng.range_f64(-50.0, 50.0));
            let mut store = ParamStore::new();
            let k = store.add("k", he_normal(&mut rng, &[3, 2, 3, 3], 18, 1.0));
            let b = store.add("b", Tensor::zeros(&[3]));
            let mut g = Graph::new();
            let xv = g.constant(x);
            let (kv, bv) = (g.param(&store, k).unwrap(), g.param(&store, b).unwrap());
            let y = g.conv2d(xv, kv, bv, 1, 1).unwrap();
            let y = g.leaky_relu(y, 0.1).unwrap();
            let y = g.upsample2x(y).unwrap();
            let y = g.crop(y, h, w).unwrap();
            let flat = g.flatten(y).unwrap();
            let ls = g.log_softmax(flat).unwrap();
            let l = g.mean(ls);
            g.backward_into(l, &mut store).unwrap();
            prop_assert!(g.value(l).all_finite());
            prop_assert!(store.tensors().iter().all(|t| t.all_finite()));
        }

        #[test]
        fn zero_flow_sampling_is_exact(seed in 0u64..10_000, h in 1usize..8, w in 1usize..8) {
            let mut rng = Rng::new(seed);
            let src = Tensor::<f64>::from_fn(&[1, 3, h, w], |_| rng.uniform());
            let mut g = Graph::new();
            let s = g.input(src.clone());
            let c = g.input(identity_grid(1, h, w));
            let y = g.bilinear_sample(s, c).unwrap();
            prop_assert_eq!(g.value(y).data(), src.data());
        }
    }
}

#[test]
fn inference_graph_matches_tracked_values_without_gradients() {
    let mut rng = Rng::new(90);
    let x = random_tensor(&mut rng, &[2, 6, 6]).with_requires_grad(true);
    let k = random_tensor(&mut rng, &[3, 2, 3, 3]).with_requires_grad(true);
    let b = random_tensor(&mut rng, &[3]);
    let run = |mut g: Graph<f64>| {
        let (xv, kv, bv) = (g.input(x.clone()), g.input(k.clone()), g.input(b.clone()));
        let y = g.conv2d(xv, kv, bv, 1, 1).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        (g.value(y).clone(), g.grad(xv).is_some())
    };
    let (tracked, has_grad) = run(Graph::new());
    let (inferred, inf_grad) = run(Graph::inference());
    assert_eq!(tracked, inferred);
    assert!(has_grad && !inf_grad);
}
