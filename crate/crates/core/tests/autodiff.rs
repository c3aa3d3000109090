use drmim::autodiff::gradcheck::{check_case, rel_err, GradCheckRegistry};
use drmim::autodiff::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let (c, h, wd) = x.chw().unwrap();
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let at = |ch: usize, i: isize, j: isize| {
        if i < 0 || j < 0 || i >= h as isize || j >= wd as isize {
            0.0
        } else {
            x.data()[(ch * h + i as usize) * wd + j as usize]
        }
    };
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = b.data()[oc];
                for ch in 0..c {
                    for u in 0..k {
                        for v in 0..k {
                            let xi = (i * stride + u) as isize - pad as isize;
                            let xj = (j * stride + v) as isize - pad as isize;
                            s += w.data()[((oc * c + ch) * k + u) * k + v] * at(ch, xi, xj);
                        }
                    }
                }
                out[(oc * oh + i) * ow + j] = s;
            }
        }
    }
    (vec![o, oh, ow], out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_direct_loops(
        c in 1usize..4, o in 1usize..4, k in 1usize..4, extra in 0usize..5,
        stride in 1usize..3, pad in 0usize..2, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = k + extra;
        let x = Tensor::randn(&[c, n, n + 1], 1.0, &mut rng);
        let w = Tensor::randn(&[o, c, k, k], 1.0, &mut rng);
        let b = Tensor::randn(&[o], 1.0, &mut rng);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
        let (shape, want) = naive_conv(&x, &w, &b, stride, pad);
        prop_assert_eq!(g.shape(y), &shape[..]);
        for (a, e) in g.value(y).data().iter().zip(&want) {
            prop_assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_gradient_is_all_ones(n in 1usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = g.param(Tensor::randn(&[n], 1.0, &mut rng));
        let s = g.sum(x);
        g.backward(s).unwrap();
        prop_assert!(g.grad_data(x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn reused_variable_accumulates(v in -5.0f64..5.0) {
        // d/dx (x*x + x) = 2x + 1
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![v]));
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        prop_assert!((g.grad_data(x).unwrap()[0] - (2.0 * v + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable_and_positive(v in -700.0f64..700.0) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![v]));
        let y = g.softplus(x).unwrap();
        let s = g.sum(y);
        let out = g.item(s);
        prop_assert!(out.is_finite() && out >= 0.0 && out >= v);
    }

    #[test]
    fn rel_err_is_symmetric(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        prop_assert_eq!(rel_err(a, b), rel_err(b, a));
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::full(&[3], 2.0));
    let p = g.param(Tensor::full(&[3], 1.0));
    let y = g.mul(c, p).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad_data(c).is_none());
    assert_eq!(g.grad_data(p).unwrap(), &[2.0, 2.0, 2.0]);
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, b).is_err());
    let k = g.constant(Tensor::zeros(&[2, 5, 5]));
    let x = g.constant(Tensor::zeros(&[2, 3, 3]));
    assert!(g.depthwise_xcorr(k, x).is_err());
}

#[test]
fn every_primitive_at_twenty_instances() {
    let r = GradCheckRegistry::with_primitives();
    assert!(r.len() >= 25);
    for case in r.iter() {
        let rep = check_case(case, 99, 20).unwrap();
        assert!(rep.passed(1e-4), "{}: {:.3e}", rep.name, rep.max_rel_err);
    }
}
