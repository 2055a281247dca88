mod common;

use common::{brute_conv, tensor};
use nsrff::nn::{conv2d_forward, Tensor};
use nsrff::rng::stream;
use rand::Rng as _;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn matches_brute_force_on_random_shapes() {
    let mut rng = stream(2024, "conv-oracle");
    for case in 0..100 {
        let c = rng.random_range(1..=4);
        let f = rng.random_range(1..=5);
        let h = rng.random_range(1..=12);
        let w = rng.random_range(1..=12);
        let n = rng.random_range(1..=3);
        let stride = (rng.random_range(1..=2), rng.random_range(1..=2));
        let pad = (rng.random_range(0..=1), rng.random_range(0..=1));
        if h + 2 * pad.0 < 3 || w + 2 * pad.1 < 3 {
            continue;
        }
        let x = tensor(&mut rng, &[n, c, h, w]);
        let k = tensor(&mut rng, &[f, c, 3, 3]);
        let b = tensor(&mut rng, &[f]);
        let y = conv2d_forward(&x, &k, &b, stride, pad).unwrap();
        let (shape, want) = brute_conv(&x, &k, b.data(), stride, pad);
        assert_eq!(y.shape(), shape.as_slice(), "case {case}");
        assert!(max_diff(y.data(), &want) <= 1e-12, "case {case}");
    }
}

#[test]
fn valid_convolution_of_4_channel_input() {
    let mut rng = stream(5, "conv-oracle");
    let x = tensor(&mut rng, &[1, 4, 10, 12]);
    let k = tensor(&mut rng, &[8, 4, 3, 3]);
    let b = tensor(&mut rng, &[8]);
    let y = conv2d_forward(&x, &k, &b, (1, 1), (0, 0)).unwrap();
    let (shape, want) = brute_conv(&x, &k, b.data(), (1, 1), (0, 0));
    assert_eq!(shape, vec![1, 8, 8, 10]);
    assert!(max_diff(y.data(), &want) <= 1e-12);
}

#[test]
fn delta_kernel_returns_interior() {
    let mut rng = stream(6, "conv-oracle");
    let x = tensor(&mut rng, &[1, 1, 5, 6]);
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let k = Tensor::from_vec(&[1, 1, 3, 3], k).unwrap();
    let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), (1, 1), (0, 0)).unwrap();
    let interior: Vec<f64> = (1..4)
        .flat_map(|i| (1..5).map(move |j| (i, j)))
        .map(|(i, j)| x.data()[i * 6 + j])
        .collect();
    assert_eq!(y.data(), interior.as_slice());
}

#[test]
fn kernel_channel_mismatch_is_an_error() {
    let x = Tensor::zeros(&[1, 2, 4, 4]);
    let k = Tensor::zeros(&[1, 3, 3, 3]);
    assert!(conv2d_forward(&x, &k, &Tensor::zeros(&[1]), (1, 1), (1, 1)).is_err());
}
