//! Kernels against frozen reference values and brute-force loop oracles.

use approx::assert_abs_diff_eq;
use mldrnet::ndcore::{conv2d, matmul, pool2d, PoolKind};
use mldrnet::nn::{softmax, softmax_cross_entropy};
use mldrnet::{Rng, TensorF64};

fn wave(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..n).map(|i| f(i as f64)).collect()
}

fn sample_input() -> TensorF64 {
    TensorF64::from_f64([1, 2, 5, 5], &wave(50, |i| (0.37 * i).sin())).unwrap()
}

// Reference values computed with PyTorch (float64) on the same inputs.
const CONV_REF: [f64; 27] = [
    2.0124789030316093, 3.4543558771468907, 2.0284414330301432, -0.646833586267205,
    -1.4927961696267638, -0.9018856720432241, 0.9375531738836287, 2.755981952055762,
    2.2700483022598545, -1.5259432380552331, -1.6162603677969767, -0.4968222068062424,
    0.9991661317346456, 0.8651182902222216, -0.21685057567269114, -1.1281693775762158,
    -1.3438238172509211, -0.468609137542646, -0.5573492984980677, -1.9273557168821835,
    -1.3922428623103325, 0.09258784630402306, 1.0452200380934473, 1.3152946481859482,
    0.20104479938899567, -1.445775287612003, -1.6563004999895568,
];
const MAXPOOL_REF: [f64; 8] = [
    0.9612752029752999, 0.99588084453764, 0.9964756147406005, 0.9593748338928642,
    0.901675770066391, 0.9970241087570002, 0.901675770066391, 0.9970241087570002,
];
const AVGPOOL_REF: [f64; 8] = [
    0.11379494520379363, 0.02579943912374723, -0.05075045404467449, 0.05256573074929169,
    -0.12707918043273628, -0.049839259323356755, 0.07319820760193921, -0.028666404967030865,
];

#[test]
fn conv_matches_reference() {
    let w = TensorF64::from_f64([3, 2, 3, 3], &wave(54, |i| (0.11 * i + 0.5).cos())).unwrap();
    let b = TensorF64::from_f64([3], &[0.1, -0.2, 0.3]).unwrap();
    let y = conv2d(&sample_input(), &w, &b, 2, 1).unwrap();
    assert_eq!(y.shape(), [1, 3, 3, 3]);
    for (a, e) in y.data().iter().zip(CONV_REF) {
        assert_abs_diff_eq!(*a, e, epsilon = 1e-13);
    }
}

#[test]
fn pools_match_reference() {
    let x = sample_input();
    let max = pool2d(&x, PoolKind::Max, 3, 2).unwrap().output;
    let avg = pool2d(&x, PoolKind::Avg, 3, 2).unwrap().output;
    assert_eq!(max.shape(), [1, 2, 2, 2]);
    for (a, e) in max.data().iter().zip(MAXPOOL_REF) {
        assert_eq!(*a, e);
    }
    for (a, e) in avg.data().iter().zip(AVGPOOL_REF) {
        assert_abs_diff_eq!(*a, e, epsilon = 1e-15);
    }
}

#[test]
fn softmax_cross_entropy_matches_reference() {
    let z = TensorF64::from_f64([2, 4], &[0.5, -1.25, 2.0, 0.0, 3.0, 3.0, -2.0, 1.5]).unwrap();
    let out = softmax_cross_entropy(&z, &[2, 3]).unwrap();
    assert_abs_diff_eq!(out.loss, 1.3182205257748347, epsilon = 1e-15);
    let expected = [
        0.15969355003210822, 0.027750577932680404, 0.7156968377823844, 0.09685903425282705,
        0.4484570171637715, 0.4484570171637715, 0.003021679613017454, 0.10006428605943948,
    ];
    for (a, e) in softmax(&z).unwrap().data().iter().zip(expected) {
        assert_abs_diff_eq!(*a, e, epsilon = 1e-15);
    }
}

fn brute_conv(x: &TensorF64, w: &TensorF64, b: &TensorF64, stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::new();
    for s in 0..n {
        for o in 0..f {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.data()[o];
                    for ch in 0..c {
                        for u in 0..k {
                            for v in 0..k {
                                let (y, xx) = ((i * stride + u) as isize - pad as isize, (j * stride + v) as isize - pad as isize);
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                    acc += x.at(&[s, ch, y as usize, xx as usize]) * w.at(&[o, ch, u, v]);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_loops_on_random_shapes() {
    let mut rng = Rng::new(11);
    for _ in 0..120 {
        let (n, c, f) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
        let k = 1 + rng.below(4);
        let (stride, pad) = (1 + rng.below(3), rng.below(3));
        let h = k + rng.below(6);
        let w = k + rng.below(6);
        let x = TensorF64::uniform([n, c, h, w], -1.0, 1.0, &mut rng);
        let kern = TensorF64::uniform([f, c, k, k], -1.0, 1.0, &mut rng);
        let b = TensorF64::uniform([f], -1.0, 1.0, &mut rng);
        let got = conv2d(&x, &kern, &b, stride, pad).unwrap();
        for (a, e) in got.data().iter().zip(brute_conv(&x, &kern, &b, stride, pad)) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-12);
        }
    }
}

#[test]
fn matmul_matches_loops_on_random_shapes() {
    let mut rng = Rng::new(12);
    for _ in 0..120 {
        let (m, k, p) = (1 + rng.below(9), 1 + rng.below(9), 1 + rng.below(9));
        let a = TensorF64::uniform([m, k], -1.0, 1.0, &mut rng);
        let b = TensorF64::uniform([k, p], -1.0, 1.0, &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..p {
                let e: f64 = (0..k).map(|t| a.at(&[i, t]) * b.at(&[t, j])).sum();
                assert_abs_diff_eq!(c.at(&[i, j]), e, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn pool_matches_loops_on_random_shapes() {
    let mut rng = Rng::new(13);
    for _ in 0..120 {
        let (n, c) = (1 + rng.below(2), 1 + rng.below(3));
        let k = 1 + rng.below(3);
        let stride = 1 + rng.below(3);
        let (h, w) = (k + rng.below(6), k + rng.below(6));
        let x = TensorF64::uniform([n, c, h, w], -1.0, 1.0, &mut rng);
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let y = pool2d(&x, kind, k, stride).unwrap().output;
            let (ho, wo) = (y.shape()[2], y.shape()[3]);
            assert_eq!((ho, wo), ((h - k) / stride + 1, (w - k) / stride + 1));
            for s in 0..n {
                for ch in 0..c {
                    for i in 0..ho {
                        for j in 0..wo {
                            let window: Vec<f64> = (0..k * k)
                                .map(|t| x.at(&[s, ch, i * stride + t / k, j * stride + t % k]))
                                .collect();
                            let e = match kind {
                                PoolKind::Max => window.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                                PoolKind::Avg => window.iter().sum::<f64>() / (k * k) as f64,
                            };
                            assert_abs_diff_eq!(y.at(&[s, ch, i, j]), e, epsilon = 1e-12);
                        }
                    }
                }
            }
        }
    }
}
