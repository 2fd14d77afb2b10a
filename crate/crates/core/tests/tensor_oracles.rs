mod common;

use common::*;
use hrcnn::tensor::*;
use proptest::prelude::*;
use rand::Rng;

const FD_STEP: f64 = 1e-5;

#[test]
fn conv2d_matches_loop_oracle() {
    let mut r = rng(1);
    let x = random_tensor(&mut r, &[1, 4, 4]);
    let w = random_tensor(&mut r, &[2, 1, 3, 3]);
    let bias = [0.0, 0.0];
    let spec = ConvSpec::same(2, 1, 3);
    let got = conv2d(&x, &w, &bias, &spec).unwrap();
    let want = naive_conv2d(&x, &w, &bias, &spec);
    assert_eq!(got.shape(), want.shape());
    assert!(max_abs_diff(got.data(), want.data()) < 1e-12);
}

#[test]
fn conv2d_matches_loop_oracle_over_geometries() {
    let mut r = rng(2);
    for case in 0..40 {
        let ci = r.gen_range(1..4);
        let co = r.gen_range(1..4);
        let k = r.gen_range(1..6);
        let stride = r.gen_range(1..4);
        let pad = r.gen_range(0..=k / 2);
        // pick an input extent the stride tiles exactly
        let steps = r.gen_range(1..5);
        let h = (steps - 1) * stride + k - 2 * pad;
        let w_ext = h + if stride == 1 { r.gen_range(0..3) } else { 0 };
        if h == 0 {
            continue;
        }
        let spec = ConvSpec::new(co, ci, k, k)
            .with_stride(stride)
            .with_padding(pad);
        let x = random_tensor(&mut r, &[ci, h, w_ext]);
        let w = random_tensor(&mut r, &[co, ci, k, k]);
        let b: Vec<f64> = (0..co).map(|_| r.gen_range(-1.0..1.0)).collect();
        let got = conv2d(&x, &w, &b, &spec).unwrap();
        let want = naive_conv2d(&x, &w, &b, &spec);
        assert_eq!(got.shape(), want.shape(), "case {case}");
        assert!(max_abs_diff(got.data(), want.data()) < 1e-12, "case {case}");

        let gx = random_tensor(&mut r, got.shape());
        let tr = conv_transpose2d(
            &gx,
            &w,
            &vec![0.0; ci],
            &ConvSpec {
                out_channels: ci,
                in_channels: co,
                ..spec
            },
        );
        let tr_want = naive_conv_transpose2d(
            &gx,
            &w,
            &vec![0.0; ci],
            &ConvSpec {
                out_channels: ci,
                in_channels: co,
                ..spec
            },
        );
        let tr = tr.unwrap();
        assert_eq!(tr.shape(), tr_want.shape(), "case {case}");
        assert!(
            max_abs_diff(tr.data(), tr_want.data()) < 1e-12,
            "case {case}"
        );
    }
}

fn transpose_spec(spec: &ConvSpec) -> ConvSpec {
    ConvSpec {
        out_channels: spec.in_channels,
        in_channels: spec.out_channels,
        ..*spec
    }
}

/// `<conv2d(x; W), y> == <x, conv_transpose2d(y; W)>` over random geometries.
#[test]
fn adjoint_identity_over_random_geometries() {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..120u64 {
        let mut r = rng(1000 + seed);
        let ci = r.gen_range(1..5);
        let co = r.gen_range(1..5);
        let k = r.gen_range(1..9);
        let stride = r.gen_range(1..=k.min(8));
        let pad = r.gen_range(0..=(k - 1) / 2);
        let steps = r.gen_range(1..6);
        let h = (steps - 1) * stride + k - 2 * pad;
        let spec = ConvSpec::square(co, ci, k)
            .with_stride(stride)
            .with_padding(pad);
        let x = random_tensor(&mut r, &[ci, h, h]);
        let w = random_tensor(&mut r, &[co, ci, k, k]);
        let cx = conv2d(&x, &w, &vec![0.0; co], &spec).unwrap();
        let y = random_tensor(&mut r, cx.shape());
        let ty = conv_transpose2d(&y, &w, &vec![0.0; ci], &transpose_spec(&spec)).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs = cx.dot(&y).unwrap();
        let rhs = x.dot(&ty).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
        worst = worst.max(rel);
        assert!(rel < 1e-10, "seed {seed}: {lhs} vs {rhs}");
        checked += 1;
    }
    assert!(checked >= 100);
    eprintln!("adjoint identity: {checked} cases, worst relative gap {worst:.3e}");
}

/// Finite-difference check of every component of a small conv2d's gradients,
/// using the scalar objective `<conv2d(x; W, b), r>`.
#[test]
fn conv2d_backward_matches_finite_differences() {
    let mut r = rng(3);
    let spec = ConvSpec::same(3, 2, 3).with_stride(1);
    let x = random_tensor(&mut r, &[2, 5, 5]);
    let w = random_tensor(&mut r, &[3, 2, 3, 3]);
    let b = random_tensor(&mut r, &[3]);
    let proj = random_tensor(&mut r, &[3, 5, 5]);
    let grads = conv2d_backward(&x, &w, &spec, &proj).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let n = central_difference(&x, i, FD_STEP, &mut |xx| {
            conv2d(xx, &w, b.data(), &spec).unwrap().dot(&proj).unwrap()
        });
        worst = worst.max(rel_error(grads.input.data()[i], n));
    }
    for i in 0..w.len() {
        let n = central_difference(&w, i, FD_STEP, &mut |ww| {
            conv2d(&x, ww, b.data(), &spec).unwrap().dot(&proj).unwrap()
        });
        worst = worst.max(rel_error(grads.weights.data()[i], n));
    }
    for i in 0..b.len() {
        let n = central_difference(&b, i, FD_STEP, &mut |bb| {
            conv2d(&x, &w, bb.data(), &spec)
                .unwrap()
                .dot(&proj)
                .unwrap()
        });
        worst = worst.max(rel_error(grads.bias[i], n));
    }
    assert!(worst < 1e-6, "worst relative error {worst:.3e}");
}

#[test]
fn strided_conv2d_backward_matches_finite_differences() {
    let mut r = rng(4);
    let spec = ConvSpec::square(2, 2, 3).with_stride(2).with_padding(1);
    let x = random_tensor(&mut r, &[2, 7, 7]);
    let w = random_tensor(&mut r, &[2, 2, 3, 3]);
    let b = [0.3, -0.2];
    let out = conv2d(&x, &w, &b, &spec).unwrap();
    let proj = random_tensor(&mut r, out.shape());
    let grads = conv2d_backward(&x, &w, &spec, &proj).unwrap();
    for i in 0..x.len() {
        let n = central_difference(&x, i, FD_STEP, &mut |xx| {
            conv2d(xx, &w, &b, &spec).unwrap().dot(&proj).unwrap()
        });
        assert!(rel_error(grads.input.data()[i], n) < 1e-6);
    }
    for i in 0..w.len() {
        let n = central_difference(&w, i, FD_STEP, &mut |ww| {
            conv2d(&x, ww, &b, &spec).unwrap().dot(&proj).unwrap()
        });
        assert!(rel_error(grads.weights.data()[i], n) < 1e-6);
    }
}

#[test]
fn conv_transpose2d_backward_matches_finite_differences() {
    let mut r = rng(5);
    // stride 2 with a 3x3 kernel so neighbouring patches overlap
    let spec = ConvSpec::square(2, 3, 3).with_stride(2).with_padding(1);
    let x = random_tensor(&mut r, &[3, 3, 3]);
    let w = random_tensor(&mut r, &[3, 2, 3, 3]);
    let b = random_tensor(&mut r, &[2]);
    let out = conv_transpose2d(&x, &w, b.data(), &spec).unwrap();
    assert_eq!(out.shape(), &[2, 5, 5]);
    let proj = random_tensor(&mut r, out.shape());
    let grads = conv_transpose2d_backward(&x, &w, &spec, &proj).unwrap();

    let f = |xx: &Tensor, ww: &Tensor, bb: &Tensor| {
        conv_transpose2d(xx, ww, bb.data(), &spec)
            .unwrap()
            .dot(&proj)
            .unwrap()
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let n = central_difference(&x, i, FD_STEP, &mut |xx| f(xx, &w, &b));
        worst = worst.max(rel_error(grads.input.data()[i], n));
    }
    for i in 0..w.len() {
        let n = central_difference(&w, i, FD_STEP, &mut |ww| f(&x, ww, &b));
        worst = worst.max(rel_error(grads.weights.data()[i], n));
    }
    for i in 0..b.len() {
        let n = central_difference(&b, i, FD_STEP, &mut |bb| f(&x, &w, bb));
        worst = worst.max(rel_error(grads.bias[i], n));
    }
    assert!(worst < 1e-6, "worst relative error {worst:.3e}");
}

/// The transposed op's input gradient is a forward convolution with the same weights.
#[test]
fn conv_transpose_input_grad_is_forward_conv() {
    let mut r = rng(6);
    for (ci, co, k, s, p, h) in [(64, 64, 8, 8, 0, 2), (3, 2, 3, 2, 1, 4), (2, 5, 4, 1, 0, 3)] {
        let spec = ConvSpec::square(co, ci, k).with_stride(s).with_padding(p);
        let x = random_tensor(&mut r, &[ci, h, h]);
        let w = random_tensor(&mut r, &[ci, co, k, k]);
        let out = conv_transpose2d(&x, &w, &vec![0.0; co], &spec).unwrap();
        let gy = random_tensor(&mut r, out.shape());
        let grads = conv_transpose2d_backward(&x, &w, &spec, &gy).unwrap();
        let fwd = conv2d(&gy, &w, &vec![0.0; ci], &transpose_spec(&spec)).unwrap();
        assert_eq!(fwd.shape(), grads.input.shape());
        assert!(max_abs_diff(fwd.data(), grads.input.data()) < 1e-12);
    }
}

#[test]
fn relu_backward_matches_finite_differences_away_from_zero() {
    let mut r = rng(7);
    let x = random_tensor(&mut r, &[50]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let proj = random_tensor(&mut r, &[50]);
    let g = relu_backward(&x, &proj).unwrap();
    for i in 0..x.len() {
        let n = central_difference(&x, i, FD_STEP, &mut |xx| relu(xx).dot(&proj).unwrap());
        assert!(
            (g.data()[i] - n).abs() <= 1e-6 * n.abs().max(1e-8) || rel_error(g.data()[i], n) < 1e-6
        );
    }
}

#[test]
fn mse_gradient_matches_finite_differences() {
    let mut r = rng(8);
    let p = random_tensor(&mut r, &[3, 4, 4]);
    let t = random_tensor(&mut r, &[3, 4, 4]);
    let (_, g) = mse_loss(&p, &t).unwrap();
    // central differences are exact on a quadratic, so a wider step only trims roundoff
    for i in 0..p.len() {
        let n = central_difference(&p, i, 1e-3, &mut |pp| mse_loss(pp, &t).unwrap().0);
        assert!(rel_error(g.data()[i], n) < 1e-8, "component {i}");
    }
}

#[test]
fn add_backward_routes_gradient_unchanged() {
    // d<a + b, g>/da = g and /db = g: checked by finite differences on both operands
    let mut r = rng(9);
    let a = random_tensor(&mut r, &[2, 3]);
    let b = random_tensor(&mut r, &[2, 3]);
    let g = random_tensor(&mut r, &[2, 3]);
    for i in 0..a.len() {
        let da = central_difference(&a, i, FD_STEP, &mut |aa| {
            add(aa, &b).unwrap().dot(&g).unwrap()
        });
        let db = central_difference(&b, i, FD_STEP, &mut |bb| {
            add(&a, bb).unwrap().dot(&g).unwrap()
        });
        assert!(rel_error(da, g.data()[i]) < 1e-8);
        assert!(rel_error(db, g.data()[i]) < 1e-8);
    }
}

#[test]
fn conv_then_transpose_restores_extents() {
    for (k, h, w) in [(8, 64, 40), (2, 6, 10), (4, 12, 12)] {
        let spec = ConvSpec::square(3, 2, k).with_stride(k);
        let x = Tensor::zeros(&[2, h, w]);
        let y = conv2d(&x, &Tensor::zeros(&[3, 2, k, k]), &[0.0; 3], &spec).unwrap();
        let back = conv_transpose2d(
            &y,
            &Tensor::zeros(&[3, 2, k, k]),
            &[0.0; 2],
            &transpose_spec(&spec),
        )
        .unwrap();
        assert_eq!(back.shape(), x.shape());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut r = rng(seed);
        let spec = ConvSpec::same(2, 3, 3);
        let x = random_tensor(&mut r, &[3, 6, 5]);
        let z = random_tensor(&mut r, &[3, 6, 5]);
        let w = random_tensor(&mut r, &[2, 3, 3, 3]);
        let zero = [0.0, 0.0];
        let mut mix = x.scale(alpha);
        mix.axpy(beta, &z).unwrap();
        let lhs = conv2d(&mix, &w, &zero, &spec).unwrap();
        let mut rhs = conv2d(&x, &w, &zero, &spec).unwrap().scale(alpha);
        rhs.axpy(beta, &conv2d(&z, &w, &zero, &spec).unwrap()).unwrap();
        prop_assert!(max_abs_diff(lhs.data(), rhs.data()) < 1e-12);
    }

    #[test]
    fn forward_and_backward_stay_finite(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let spec = ConvSpec::square(2, 2, 2).with_stride(2);
        let x = random_tensor(&mut r, &[2, 4, 4]).scale(scale);
        let w = random_tensor(&mut r, &[2, 2, 2, 2]);
        let y = conv2d(&x, &w, &[0.0, 0.0], &spec).unwrap();
        prop_assert!(y.is_finite());
        let g = conv2d_backward(&x, &w, &spec, &y).unwrap();
        prop_assert!(g.input.is_finite() && g.weights.is_finite());
        let t = conv_transpose2d(&y, &w, &[0.0, 0.0], &spec).unwrap();
        prop_assert!(t.is_finite());
    }
}
