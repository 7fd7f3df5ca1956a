use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::rng;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, 99);
    Tensor::from_fn(shape.to_vec(), |_| rng::uniform(&mut r, -1.0, 1.0))
}

/// Random values with magnitude in [0.2, 1], so kinks at zero stay far from `h`.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, 98);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng::uniform(&mut r, 0.2, 1.0);
        if rng::unit(&mut r) < 0.5 { -m } else { m }
    })
}

/// Scalar probe `sum(out * w)` with fixed pseudo-random weights.
fn probe(tape: &mut Tape<f64>, out: Var) -> Var {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(random(&shape, 4242));
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

fn eval(inputs: &[Tensor<f64>], build: &Build) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.value(out).clone()
}

/// Largest elementwise `|autodiff - fd| / (|fd| + 1e-8)` with central differences, h = 1e-5.
fn grad_error(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let l = probe(&mut tape, out);
    tape.backward(l).unwrap();
    let w = random(tape.shape(out), 4242);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).unwrap().to_vec();
        for (i, &a) in analytic.iter().enumerate().take(t.numel()) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            // Difference the outputs before weighting so unaffected elements
            // cancel exactly instead of through the summed loss.
            let (yp, ym) = (eval(&plus, build), eval(&minus, build));
            let fd = yp
                .data()
                .iter()
                .zip(ym.data())
                .zip(w.data())
                .map(|((p, m), wv)| wv * (p - m))
                .sum::<f64>()
                / (2.0 * h);
            worst = worst.max((a - fd).abs() / (fd.abs() + 1e-8));
        }
    }
    worst
}

fn check(name: &str, make: impl Fn(u64) -> Vec<Tensor<f64>>, build: &Build) {
    for seed in 0..5 {
        let err = grad_error(&make(seed), build);
        assert!(err < 1e-6, "{name} seed {seed}: relative gradient error {err:e}");
    }
}

#[test]
fn gradients_of_arithmetic_broadcast() {
    check("add", |s| vec![random(&[2, 3, 4], s), random(&[1, 3, 1], s + 10)], &|t, v| t.add(v[0], v[1]));
    check("sub", |s| vec![random(&[2, 1, 4], s), random(&[2, 3, 4], s + 10)], &|t, v| t.sub(v[0], v[1]));
    check("mul", |s| vec![random(&[2, 3, 2, 2], s), random(&[2, 3, 1, 1], s + 10)], &|t, v| t.mul(v[0], v[1]));
    check("mul_self", |s| vec![random(&[3, 2, 2], s)], &|t, v| t.mul(v[0], v[0]));
    check("scale", |s| vec![random(&[2, 2, 3], s)], &|t, v| Ok(t.scale(v[0], -1.7)));
}

#[test]
fn gradients_of_pointwise() {
    check("abs", |s| vec![away_from_zero(&[2, 3, 4], s)], &|t, v| Ok(t.abs(v[0])));
    check("square", |s| vec![random(&[2, 3, 4], s)], &|t, v| Ok(t.square(v[0])));
    check("relu", |s| vec![away_from_zero(&[2, 3, 2, 2], s)], &|t, v| Ok(t.relu(v[0])));
    check("sigmoid", |s| vec![random(&[2, 3, 2, 2], s).map(|x| 4.0 * x)], &|t, v| Ok(t.sigmoid(v[0])));
}

#[test]
fn gradients_of_reductions() {
    check("sum", |s| vec![random(&[2, 3, 4], s)], &|t, v| Ok(t.sum(v[0])));
    check("mean", |s| vec![random(&[2, 3, 4], s)], &|t, v| Ok(t.mean(v[0])));
    check("sum_axis", |s| vec![random(&[2, 3, 4, 2], s)], &|t, v| t.sum_axis(v[0], 2));
    check("global_avg_pool", |s| vec![random(&[2, 3, 3, 2], s)], &|t, v| t.global_avg_pool2d(v[0]));
    check("median_odd", |s| vec![random(&[2, 5, 3, 2], s)], &|t, v| t.median(v[0], 1));
    check("median_even", |s| vec![random(&[2, 4, 3], s)], &|t, v| t.median(v[0], 1));
}

#[test]
fn gradients_of_linear_algebra_and_layout() {
    check("matmul", |s| vec![random(&[3, 4], s), random(&[4, 5], s + 10)], &|t, v| t.matmul(v[0], v[1]));
    check("matmul_nt", |s| vec![random(&[3, 4], s), random(&[5, 4], s + 10)], &|t, v| t.matmul_nt(v[0], v[1]));
    check("bmm", |s| vec![random(&[2, 3, 4], s), random(&[2, 4, 2], s + 10)], &|t, v| t.matmul(v[0], v[1]));
    check("bmm_nt", |s| vec![random(&[2, 3, 4], s), random(&[2, 5, 4], s + 10)], &|t, v| t.matmul_nt(v[0], v[1]));
    check("reshape", |s| vec![random(&[2, 3, 4], s)], &|t, v| t.reshape(v[0], &[4, 6]));
    check("permute", |s| vec![random(&[2, 3, 4, 2], s)], &|t, v| t.permute(v[0], &[2, 0, 3, 1]));
    check("transpose", |s| vec![random(&[2, 3, 4], s)], &|t, v| t.transpose(v[0], 0, 2));
    check("concat", |s| vec![random(&[2, 1, 3], s), random(&[2, 2, 3], s + 10)], &|t, v| t.concat(&[v[0], v[1], v[0]], 1));
    check("narrow", |s| vec![random(&[2, 5, 3], s)], &|t, v| t.narrow(v[0], 1, 1, 3));
}

#[test]
fn gradients_of_normalization() {
    check("softmax_last", |s| vec![random(&[2, 3, 5], s)], &|t, v| t.softmax(v[0], 2));
    check("softmax_mid", |s| vec![random(&[2, 4, 3], s)], &|t, v| t.softmax(v[0], 1));
    check(
        "layer_norm",
        |s| vec![random(&[2, 3, 6], s), random(&[6], s + 10), random(&[6], s + 20)],
        &|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
    );
}

#[test]
fn gradients_of_convolution_and_shuffle() {
    check(
        "conv2d_same",
        |s| vec![random(&[2, 3, 5, 4], s), random(&[2, 3, 3, 3], s + 10), random(&[2], s + 20)],
        &|t, v| t.conv2d(v[0], v[1], Some(v[2]), Conv2dArgs::same(3)),
    );
    check(
        "conv2d_strided",
        |s| vec![random(&[1, 2, 6, 5], s), random(&[3, 2, 3, 1], s + 10)],
        &|t, v| t.conv2d(v[0], v[1], None, Conv2dArgs { stride: 2, padding: 1, groups: 1 }),
    );
    check(
        "depthwise",
        |s| vec![random(&[2, 3, 4, 4], s), random(&[3, 1, 3, 3], s + 10), random(&[3], s + 20)],
        &|t, v| t.depthwise_conv2d(v[0], v[1], Some(v[2]), 1, 1),
    );
    check("pixel_shuffle", |s| vec![random(&[1, 8, 2, 3], s)], &|t, v| t.pixel_shuffle(v[0], 2));
    check("pixel_unshuffle", |s| vec![random(&[2, 1, 3, 6], s)], &|t, v| t.pixel_unshuffle(v[0], 3));
}

fn run1(x: Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let out = f(&mut tape, v).unwrap();
    tape.value(out).clone()
}

#[test]
fn conv2d_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full([1, 1, 1, 1], 1.0));
    let w = tape.constant(Tensor::full([1, 1, 1, 1], 1.0));
    let b = tape.constant(Tensor::zeros([1]));
    let y = tape.conv2d(x, w, Some(b), Conv2dArgs::same(1)).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0]);

    let x = tape.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let w = tape.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let y = tape.conv2d(x, w, None, Conv2dArgs::same(3)).unwrap();
    let out = tape.value(y);
    assert_eq!(out.at(&[0, 0, 1, 1]), 9.0);
    for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
        assert_eq!(out.at(&[0, 0, r, c]), 4.0);
    }

    let x = tape.constant(random(&[2, 3, 4, 5], 1));
    let w = tape.constant(Tensor::zeros([2, 3, 3, 3]));
    let b = tape.constant(Tensor::full([2], 0.75));
    let y = tape.conv2d(x, w, Some(b), Conv2dArgs::same(3)).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.75));
}

#[test]
fn conv2d_output_size_and_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(random(&[1, 2, 7, 6], 3));
    let w = tape.constant(random(&[4, 2, 3, 3], 4));
    let y = tape.conv2d(x, w, None, Conv2dArgs { stride: 2, padding: 0, groups: 1 }).unwrap();
    assert_eq!(tape.shape(y), &[1, 4, 3, 2]);

    let bad = tape.constant(random(&[4, 3, 3, 3], 5));
    let err = tape.conv2d(x, bad, None, Conv2dArgs::same(3)).unwrap_err();
    assert!(matches!(err, Error::Shape { op: "conv2d", .. }), "{err}");
    let even = tape.constant(random(&[4, 2, 2, 2], 5));
    assert!(tape.conv2d(x, even, None, Conv2dArgs::same(3)).is_err());
}

#[test]
fn depthwise_is_per_channel() {
    let x = random(&[1, 2, 4, 4], 8);
    let mut w = Tensor::<f64>::zeros([2, 1, 3, 3]);
    w.data_mut()[9 + 4] = 1.0; // channel 1: identity tap at the kernel centre
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w);
    let y = tape.depthwise_conv2d(xv, wv, None, 1, 1).unwrap();
    let out = tape.value(y).data();
    assert!(out[..16].iter().all(|&v| v == 0.0));
    assert_eq!(&out[16..], &x.data()[16..]);

    let wrong = tape.constant(Tensor::zeros([3, 1, 3, 3]));
    assert!(tape.depthwise_conv2d(xv, wrong, None, 1, 1).is_err());
}

#[test]
fn depthwise_matches_block_diagonal_dense_conv() {
    for seed in 0..3 {
        let x = random(&[2, 2, 5, 6], seed);
        let dw = random(&[2, 1, 3, 3], seed + 50);
        // Dense weight [2, 2, 3, 3] with zero off-diagonal channel blocks.
        let mut dense = Tensor::<f64>::zeros([2, 2, 3, 3]);
        for c in 0..2 {
            for k in 0..9 {
                dense.data_mut()[(c * 2 + c) * 9 + k] = dw.data()[c * 9 + k];
            }
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (a, b) = (tape.constant(dw), tape.constant(dense));
        let y1 = tape.depthwise_conv2d(xv, a, None, 1, 1).unwrap();
        let y2 = tape.conv2d(xv, b, None, Conv2dArgs::same(3)).unwrap();
        assert!(tape.value(y1).max_abs_diff(tape.value(y2)) < 1e-12);
    }
}

#[test]
fn depthwise_separable_parameter_ratio() {
    let (c, k) = (64usize, 3usize);
    let separable = c * k * k + c + c * c + c;
    let dense = c * c * k * k + c;
    assert!((separable as f64) / (dense as f64) < 1.0 / 7.0);
}

#[test]
fn softmax_examples() {
    let y = run1(Tensor::new([2], vec![0.0, 0.0]).unwrap(), |t, v| t.softmax(v, 0));
    assert_eq!(y.data(), &[0.5, 0.5]);
    let y = run1(random(&[3, 7, 4], 2).map(|v| 30.0 * v), |t, v| t.softmax(v, 1));
    for o in 0..3 {
        for i in 0..4 {
            let s: f64 = (0..7).map(|k| y.at(&[o, k, i])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_of_constant_is_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full([2, 5], 3.25));
    let g = tape.constant(Tensor::full([5], 1.0));
    let b = tape.constant(Tensor::zeros([5]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn global_avg_pool_example() {
    let y = run1(Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), |t, v| t.global_avg_pool2d(v));
    assert_eq!(y.data(), &[2.5]);
}

#[test]
fn pixel_shuffle_layout() {
    let x = Tensor::from_fn([1, 9, 1, 1], |i| i as f64);
    let y = run1(x, |t, v| t.pixel_shuffle(v, 3));
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);

    let mut tape = Tape::<f64>::new();
    let bad = tape.constant(Tensor::zeros([1, 8, 2, 2]));
    assert!(tape.pixel_shuffle(bad, 3).is_err());
}

#[test]
fn backward_examples_and_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(random(&[2, 3], 1));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new([2], vec![1.0, 2.0]).unwrap());
    let sq = tape.square(x);
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);

    assert!(matches!(tape.backward(sq), Err(Error::NonScalarLoss(_))));

    let c = tape.constant(Tensor::full([3], 1.0));
    let cs = tape.sum(c);
    assert_eq!(tape.backward(cs), Err(Error::Detached));
}

#[test]
fn unreachable_leaves_still_get_a_gradient_buffer() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(random(&[3], 1));
    let unused = tape.leaf(random(&[2, 2], 2));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(unused).unwrap(), &[0.0; 4]);
}

#[test]
fn reused_tensor_accumulates() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new([2], vec![3.0, -1.0]).unwrap());
    let y = tape.add(x, x).unwrap();
    let z = tape.mul(y, x).unwrap(); // 2x^2
    let s = tape.sum(z);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[12.0, -4.0]);
}

#[test]
fn deterministic_outputs_and_gradients() {
    let run = || {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(random(&[1, 2, 5, 5], 3));
        let w = tape.leaf(random(&[4, 2, 3, 3], 4));
        let y = tape.conv2d(x, w, None, Conv2dArgs::same(3)).unwrap();
        let y = tape.sigmoid(y);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        (tape.value(y).clone(), tape.grad(x).unwrap().to_vec(), tape.grad(w).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn median_examples() {
    let x = Tensor::new([3, 1], vec![5.0, 1.0, 3.0]).unwrap();
    assert_eq!(run1(x, |t, v| t.median(v, 0)).data(), &[3.0]);
    let x = Tensor::new([4], vec![4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!(run1(x, |t, v| t.median(v, 0)).data(), &[2.5]);
    let mut tape = Tape::<f64>::new();
    let e = tape.constant(Tensor::zeros([2, 0, 3]));
    assert_eq!(tape.median(e, 1), Err(Error::Empty("median")));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pixel_shuffle_is_a_permutation(c in 1usize..3, r in 1usize..4, h in 1usize..4, w in 1usize..4, seed in 0u64..1000) {
            let x = random(&[2, c * r * r, h, w], seed);
            let y = run1(x.clone(), |t, v| t.pixel_shuffle(v, r));
            let mut a = x.data().to_vec();
            let mut b = y.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
            let back = run1(y, |t, v| t.pixel_unshuffle(v, r));
            prop_assert_eq!(back, x);
        }

        #[test]
        fn concat_then_split_is_identity(a in 1usize..4, b in 1usize..4, axis in 0usize..3, seed in 0u64..1000) {
            let mut sa = vec![2, 3, 2];
            let mut sb = sa.clone();
            sa[axis] = a;
            sb[axis] = b;
            let (x, y) = (random(&sa, seed), random(&sb, seed + 1));
            let mut tape = Tape::new();
            let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
            let c = tape.concat(&[xv, yv], axis).unwrap();
            let parts = tape.split(c, axis, &[a, b]).unwrap();
            prop_assert_eq!(tape.value(parts[0]), &x);
            prop_assert_eq!(tape.value(parts[1]), &y);
        }
    }
}
