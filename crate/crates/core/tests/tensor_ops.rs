mod common;

use common::*;
use dlgsa::tensor::finite_diff_check;
use dlgsa::{ConvSpec, Graph, PadMode, Shape, Tensor, Var};
use proptest::prelude::*;

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let s = g.shape(y);
    let w = g.input(uniform(&mut rng(seed), s, -1.0, 1.0));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

#[test]
fn conv2d_matches_oracle_all_modes() {
    let mut r = rng(1);
    for (mode, stride, groups) in [
        (PadMode::Zero, 1, 1),
        (PadMode::Reflect, 1, 2),
        (PadMode::Circular, 2, 1),
        (PadMode::Zero, 2, 4),
    ] {
        let x = uniform(&mut r, Shape::new(2, 4, 6, 7), -1.0, 1.0);
        let w = uniform(&mut r, Shape::new(8, 4 / groups, 3, 3), -1.0, 1.0);
        let b = uniform(&mut r, Shape::vector(8), -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let spec = ConvSpec::same(3).with_mode(mode).with_stride(stride).with_groups(groups);
        let y = g.conv2d(xv, wv, Some(bv), spec).unwrap();
        let want = conv2d_oracle(&x, &w, Some(&b), stride, 1, mode, groups);
        assert!(g.value(y).max_abs_diff(&want).unwrap() < 1e-12, "{mode:?}");
    }
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(2);
    let x = uniform(&mut r, Shape::new(1, 2, 5, 5), -1.0, 1.0);
    let w = uniform(&mut r, Shape::new(3, 2, 3, 3), -1.0, 1.0);
    let b = uniform(&mut r, Shape::vector(3), -1.0, 1.0);
    for mode in [PadMode::Zero, PadMode::Reflect, PadMode::Circular] {
        let spec = ConvSpec::same(3).with_mode(mode);
        let (w1, b1) = (w.clone(), b.clone());
        let rep = finite_diff_check(
            |g, xv| {
                let wv = g.input(w1.clone());
                let bv = g.input(b1.clone());
                let y = g.conv2d(xv, wv, Some(bv), spec)?;
                Ok(project(g, y, 9))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "input {mode:?}: {rep:?}");
        let x1 = x.clone();
        let rep = finite_diff_check(
            |g, wv| {
                let xv = g.input(x1.clone());
                let y = g.conv2d(xv, wv, None, spec)?;
                Ok(project(g, y, 9))
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "weight {mode:?}: {rep:?}");
    }
    let (x1, w1) = (x.clone(), w.clone());
    let rep = finite_diff_check(
        |g, bv| {
            let xv = g.input(x1.clone());
            let wv = g.input(w1.clone());
            let y = g.conv2d(xv, wv, Some(bv), ConvSpec::same(3).with_stride(2))?;
            Ok(project(g, y, 4))
        },
        &b,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "bias: {rep:?}");
}

#[test]
fn depthwise_equals_grouped_conv() {
    let mut r = rng(3);
    for k in [3, 7] {
        let x = uniform(&mut r, Shape::new(2, 5, 9, 8), -1.0, 1.0);
        let w = uniform(&mut r, Shape::new(5, 1, k, k), -1.0, 1.0);
        let b = uniform(&mut r, Shape::vector(5), -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x), g.input(w), g.input(b));
        let dw = g.depthwise_conv2d(xv, wv, Some(bv), PadMode::Zero).unwrap();
        let gc = g.conv2d(xv, wv, Some(bv), ConvSpec::same(k).with_groups(5)).unwrap();
        assert!(g.value(dw).max_abs_diff(g.value(gc)).unwrap() < 1e-6);
    }
}

#[test]
fn depthwise_gradients() {
    let mut r = rng(4);
    let x = uniform(&mut r, Shape::new(2, 3, 6, 5), -1.0, 1.0);
    let w = uniform(&mut r, Shape::new(3, 1, 3, 3), -1.0, 1.0);
    let b = uniform(&mut r, Shape::vector(3), -1.0, 1.0);
    for mode in [PadMode::Zero, PadMode::Circular, PadMode::Reflect] {
        let (w1, b1) = (w.clone(), b.clone());
        let rep = finite_diff_check(
            |g, xv| {
                let (wv, bv) = (g.input(w1.clone()), g.input(b1.clone()));
                let y = g.depthwise_conv2d(xv, wv, Some(bv), mode)?;
                Ok(project(g, y, 5))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        let (x1, b1) = (x.clone(), b.clone());
        let rep = finite_diff_check(
            |g, wv| {
                let (xv, bv) = (g.input(x1.clone()), g.input(b1.clone()));
                let y = g.depthwise_conv2d(xv, wv, Some(bv), mode)?;
                Ok(project(g, y, 5))
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }
}

#[test]
fn layer_norm_statistics_and_gradients() {
    let mut r = rng(5);
    let x = uniform(&mut r, Shape::new(2, 6, 4, 3), -3.0, 5.0);
    let ones = Tensor::full(Shape::vector(6), 1.0);
    let zeros = Tensor::zeros(Shape::vector(6));
    let mut g = Graph::new();
    let (xv, gv, ov) = (g.input(x.clone()), g.input(ones), g.input(zeros));
    let y = g.layer_norm(xv, gv, ov, 1e-12).unwrap();
    let out = g.value(y);
    for n in 0..2 {
        for h in 0..4 {
            for w in 0..3 {
                let vals: Vec<f64> = (0..6).map(|c| out.at(n, c, h, w)).collect();
                let mean = vals.iter().sum::<f64>() / 6.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
                assert!(mean.abs() < 1e-6);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }
    let gain = uniform(&mut r, Shape::vector(6), 0.5, 1.5);
    let off = uniform(&mut r, Shape::vector(6), -0.5, 0.5);
    let mut g = Graph::new();
    let (xv, gv, ov) = (g.input(x.clone()), g.input(gain.clone()), g.input(off.clone()));
    let y = g.layer_norm(xv, gv, ov, 1e-5).unwrap();
    let want = layer_norm_oracle(&x, gain.data(), off.data(), 1e-5);
    assert!(g.value(y).max_abs_diff(&want).unwrap() < 1e-12);

    let (g1, o1) = (gain.clone(), off.clone());
    let rep = finite_diff_check(
        |g, xv| {
            let (gv, ov) = (g.input(g1.clone()), g.input(o1.clone()));
            let y = g.layer_norm(xv, gv, ov, 1e-5)?;
            Ok(project(g, y, 6))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    let (x1, o1) = (x.clone(), off.clone());
    let rep = finite_diff_check(
        |g, gv| {
            let (xv, ov) = (g.input(x1.clone()), g.input(o1.clone()));
            let y = g.layer_norm(xv, gv, ov, 1e-5)?;
            Ok(project(g, y, 6))
        },
        &gain,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-5, "{rep:?}");
}

#[test]
fn matmul_gradients_all_transpose_flags() {
    let mut r = rng(6);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { Shape::new(3, 1, 4, 2) } else { Shape::new(3, 1, 2, 4) };
        let b_shape = if tb { Shape::new(3, 1, 5, 4) } else { Shape::new(3, 1, 4, 5) };
        let a = uniform(&mut r, a_shape, -1.0, 1.0);
        let b = uniform(&mut r, b_shape, -1.0, 1.0);
        let b1 = b.clone();
        let rep = finite_diff_check(
            |g, av| {
                let bv = g.input(b1.clone());
                let c = g.matmul_t(av, bv, ta, tb)?;
                Ok(project(g, c, 7))
            },
            &a,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "a ({ta},{tb}): {rep:?}");
        let a1 = a.clone();
        let rep = finite_diff_check(
            |g, bv| {
                let av = g.input(a1.clone());
                let c = g.matmul_t(av, bv, ta, tb)?;
                Ok(project(g, c, 7))
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "b ({ta},{tb}): {rep:?}");
    }
}

#[test]
fn elementwise_gradients() {
    let mut r = rng(7);
    let x = uniform(&mut r, Shape::new(2, 3, 4, 4), -3.0, 3.0);
    let rep = finite_diff_check(
        |g, xv| {
            let y = g.gelu(xv);
            Ok(project(g, y, 1))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-5, "gelu {rep:?}");
    for v in x.data() {
        // relu checked only away from the kink
        assert!(v.abs() > 1e-4);
    }
    let rep = finite_diff_check(
        |g, xv| {
            let y = g.relu(xv);
            Ok(project(g, y, 1))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "relu {rep:?}");
    let other = uniform(&mut r, Shape::new(1, 3, 4, 4), -1.0, 1.0);
    let o1 = other.clone();
    let rep = finite_diff_check(
        |g, xv| {
            let o = g.input(o1.clone());
            let m = g.mul(xv, o)?;
            let a = g.add(m, o)?;
            let s = g.scale(a, -1.5);
            Ok(project(g, s, 2))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "mul/add/scale {rep:?}");
    let x1 = x.clone();
    let rep = finite_diff_check(
        |g, ov| {
            let xv = g.input(x1.clone());
            let m = g.mul(xv, ov)?;
            let a = g.add(m, ov)?;
            Ok(project(g, a, 2))
        },
        &other,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "broadcast operand {rep:?}");
}

#[test]
fn attention_helper_gradients() {
    let mut r = rng(8);
    let x = uniform(&mut r, Shape::new(4, 1, 3, 6), -1.0, 1.0);
    let la = uniform(&mut r, Shape::vector(2), -0.5, 0.5);
    let la1 = la.clone();
    let rep = finite_diff_check(
        |g, xv| {
            let n = g.normalize_rows(xv, 1e-12);
            let lav = g.input(la1.clone());
            let s = g.head_scale(n, lav, 2)?;
            let sm = g.softmax_rows(s);
            let t = g.transpose_last2(sm)?;
            Ok(project(g, t, 3))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    let x1 = x.clone();
    let rep = finite_diff_check(
        |g, lav| {
            let xv = g.input(x1.clone());
            let s = g.head_scale(xv, lav, 2)?;
            Ok(project(g, s, 3))
        },
        &la,
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
}

#[test]
fn finite_diff_check_contract() {
    let x = uniform(&mut rng(9), Shape::new(1, 2, 3, 3), -2.0, 2.0);
    let rep = finite_diff_check(
        |g, xv| {
            let sq = g.mul(xv, xv)?;
            Ok(g.sum(sq))
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-8, "{rep:?}");
    assert_eq!(rep.checked, 18);
    assert!(matches!(
        finite_diff_check(|g, xv| Ok(g.sum(xv)), &x, 0.0),
        Err(dlgsa::Error::Config(_))
    ));
}

#[test]
fn conv2d_circular_translation_equivariance() {
    let mut r = rng(10);
    let x = uniform(&mut r, Shape::new(1, 3, 8, 8), -1.0, 1.0);
    let w = uniform(&mut r, Shape::new(4, 3, 3, 3), -1.0, 1.0);
    let spec = ConvSpec::same(3).with_mode(PadMode::Circular);
    let run = |x: Tensor<f64>| {
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x), g.input(w.clone()));
        let y = g.conv2d(xv, wv, None, spec).unwrap();
        g.value(y).clone()
    };
    for (dy, dx) in [(1, 0), (0, 3), (-2, 5)] {
        let a = run(x.circular_shift(dy, dx));
        let b = run(x.clone()).circular_shift(dy, dx);
        assert!(a.max_abs_diff(&b).unwrap() < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pixel_shuffle_round_trip(seed in any::<u64>(), r in 1usize..4, c in 1usize..3, h in 1usize..4, w in 1usize..4) {
        let x = uniform(&mut rng(seed), Shape::new(2, c * r * r, h, w), -1.0, 1.0);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let up = g.pixel_shuffle(xv, r).unwrap();
        prop_assert_eq!(g.shape(up), Shape::new(2, c, h * r, w * r));
        let back = g.pixel_unshuffle(up, r).unwrap();
        prop_assert_eq!(g.value(back), &x);
    }

    #[test]
    fn conv2d_is_bilinear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut r = rng(seed);
        let x = uniform(&mut r, Shape::new(1, 2, 5, 4), -1.0, 1.0);
        let y = uniform(&mut r, Shape::new(1, 2, 5, 4), -1.0, 1.0);
        let w = uniform(&mut r, Shape::new(3, 2, 3, 3), -1.0, 1.0);
        let v = uniform(&mut r, Shape::new(3, 2, 3, 3), -1.0, 1.0);
        let conv = |x: &Tensor<f64>, w: &Tensor<f64>| {
            let mut g = Graph::new();
            let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
            let o = g.conv2d(xv, wv, None, ConvSpec::same(3)).unwrap();
            g.value(o).clone()
        };
        let comb = |p: &Tensor<f64>, q: &Tensor<f64>| {
            Tensor::from_fn(p.shape(), |n, c, h, ww| a * p.at(n, c, h, ww) + b * q.at(n, c, h, ww))
        };
        let lhs = conv(&comb(&x, &y), &w);
        let rhs = comb(&conv(&x, &w), &conv(&y, &w));
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
        let lhs = conv(&x, &comb(&w, &v));
        let rhs = comb(&conv(&x, &w), &conv(&x, &v));
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
    }
}

#[test]
fn dynamic_aggregate_matches_oracle() {
    let mut r = rng(11);
    let mut worst = (0.0f64, 0.0f64);
    for case in 0..60 {
        let groups = [1, 2, 3][case % 3];
        let k = [1, 3, 5][(case / 3) % 3];
        let c = groups * (1 + case % 2);
        let (h, w) = (2 + case % 4, 3 + case % 3);
        let x = uniform(&mut r, Shape::new(2, c, h, w), -1.0, 1.0);
        let kern = uniform(&mut r, Shape::new(2, groups * k * k, h, w), -1.0, 1.0);
        let want = dynamic_oracle(&kern, &x, groups, k);
        let mut g = Graph::new();
        let (kv, xv) = (g.input(kern.clone()), g.input(x.clone()));
        let y = g.dynamic_local_aggregate(kv, xv, groups, k, PadMode::Zero).unwrap();
        worst.0 = worst.0.max(g.value(y).max_abs_diff(&want).unwrap());
        let mut g = Graph::<f32>::new();
        let (kv, xv) = (g.input(kern.cast()), g.input(x.cast()));
        let y = g.dynamic_local_aggregate(kv, xv, groups, k, PadMode::Zero).unwrap();
        worst.1 = worst.1.max(g.value(y).cast::<f64>().max_abs_diff(&want).unwrap());
    }
    assert!(worst.0 < 1e-9 && worst.1 < 1e-5, "{worst:?}");
}

#[test]
fn dynamic_aggregate_gradients() {
    let mut r = rng(12);
    let x = uniform(&mut r, Shape::new(1, 4, 4, 5), -1.0, 1.0);
    let kern = uniform(&mut r, Shape::new(1, 2 * 9, 4, 5), -1.0, 1.0);
    for mode in [PadMode::Zero, PadMode::Reflect, PadMode::Circular] {
        let k1 = kern.clone();
        let rep = finite_diff_check(
            |g, xv| {
                let kv = g.input(k1.clone());
                let y = g.dynamic_local_aggregate(kv, xv, 2, 3, mode)?;
                Ok(project(g, y, 4))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{mode:?} input {rep:?}");
        let x1 = x.clone();
        let rep = finite_diff_check(
            |g, kv| {
                let xv = g.input(x1.clone());
                let y = g.dynamic_local_aggregate(kv, xv, 2, 3, mode)?;
                Ok(project(g, y, 4))
            },
            &kern,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{mode:?} kernels {rep:?}");
    }
}

#[test]
fn gated_gelu_equals_composition() {
    let mut r = rng(13);
    for case in 0..20 {
        let c = 2 * (1 + case % 4);
        let x = uniform(&mut r, Shape::new(2, c, 3, 4), -3.0, 3.0);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let fused = g.gated_gelu(xv).unwrap();
        let a = g.narrow_channels(xv, 0, c / 2).unwrap();
        let b = g.narrow_channels(xv, c / 2, c / 2).unwrap();
        let a = g.gelu(a);
        let composed = g.mul(a, b).unwrap();
        assert!(g.value(fused).max_abs_diff(g.value(composed)).unwrap() < 1e-15);
        let want = Tensor::from_fn(g.shape(fused), |n, ch, y, xx| {
            gelu_oracle(x.at(n, ch, y, xx)) * x.at(n, ch + c / 2, y, xx)
        });
        assert!(g.value(fused).max_abs_diff(&want).unwrap() < 1e-6);
    }
    let mut g = Graph::<f64>::new();
    let odd = g.input(Tensor::zeros(Shape::new(1, 3, 2, 2)));
    assert!(g.gated_gelu(odd).is_err());
}

#[test]
fn shape_op_gradients() {
    let mut r = rng(14);
    let x = uniform(&mut r, Shape::new(2, 8, 3, 2), -2.0, 2.0);
    let index: std::rc::Rc<Vec<usize>> = std::rc::Rc::new((0..x.len()).rev().step_by(2).collect());
    let cases: Vec<(&str, Box<dyn Fn(&mut Graph<f64>, Var) -> dlgsa::Result<Var>>)> = vec![
        ("gated_gelu", Box::new(|g, x| g.gated_gelu(x))),
        ("narrow", Box::new(|g, x| g.narrow_channels(x, 2, 3))),
        ("shuffle", Box::new(|g, x| g.pixel_shuffle(x, 2))),
        ("unshuffle", Box::new(|g, x| {
            let y = g.reshape(x, Shape::new(2, 2, 6, 4))?;
            g.pixel_unshuffle(y, 2)
        })),
        ("gather", Box::new(move |g, x| g.gather(x, Shape::new(1, 1, 4, 12), index.clone()))),
        ("matmul", Box::new(|g, x| {
            let a = g.reshape(x, Shape::new(4, 1, 6, 4))?;
            let b = g.transpose_last2(a)?;
            g.batched_matmul(a, b)
        })),
        ("mean", Box::new(|g, x| Ok(g.mean(x)))),
    ];
    for (name, f) in cases {
        let rep = finite_diff_check(
            |g, xv| {
                let y = f(g, xv)?;
                Ok(project(g, y, 5))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{name} {rep:?}");
    }
}

#[test]
fn l1_loss_values_and_subgradient() {
    let mut r = rng(15);
    let t = uniform(&mut r, Shape::new(1, 2, 3, 3), -1.0, 1.0);
    let mut g = Graph::new();
    let (a, b) = (g.input(t.clone()), g.input(t.clone()));
    let l = g.l1_loss(a, b).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);
    let p = g.param(t.map(|v| v + 1.0));
    let l = g.l1_loss(p, b).unwrap();
    assert!((g.value(l).data()[0] - 1.0).abs() < 1e-12);
    g.backward(l).unwrap();
    let n = t.len() as f64;
    assert!(g.grad(p).unwrap().data().iter().all(|&d| (d - 1.0 / n).abs() < 1e-15));
    let t1 = t.clone();
    let x = uniform(&mut r, t.shape(), -1.0, 1.0);
    let rep = finite_diff_check(
        |g, xv| {
            let tv = g.input(t1.clone());
            g.l1_loss(xv, tv)
        },
        &x,
        1e-7,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    let mut g = Graph::<f64>::new();
    let (a, b) = (g.input(t.clone()), g.input(Tensor::zeros(Shape::new(1, 1, 3, 3))));
    assert!(g.l1_loss(a, b).is_err());
}
