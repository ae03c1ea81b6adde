use fagan::tensor::{conv2d, io, matmul, matmul_t, pixel_shuffle, pixel_unshuffle, Element};
use fagan::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(rng.random_range(-2.0..2.0))).collect()).unwrap()
}

/// Reference `out[n,k,oy,ox]` by direct summation over the zero-padded input.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (k, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = Vec::with_capacity(n * k * oh * ow);
    for ni in 0..n {
        for ki in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[ki];
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((ni * c + ci) * h + iy as usize) * wd + ix as usize;
                                let wi = ((ki * c + ci) * kh + dy) * kw + dx;
                                acc += xd[xi] * wdat[wi];
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

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv2d_matches_direct_summation(
        n in 1usize..3, c in 1usize..4, k in 1usize..4, h in 3usize..9, w in 3usize..9,
        kernel in prop::sample::select(vec![1usize, 3]), stride in 1usize..3, seed in any::<u64>(),
    ) {
        let pad = (kernel - 1) / 2;
        let x = random::<f64>(&[n, c, h, w], seed);
        let wt = random::<f64>(&[k, c, kernel, kernel], seed ^ 1);
        let b = random::<f64>(&[k], seed ^ 2);
        let y = conv2d(&x, &wt, Some(&b), stride, pad).unwrap();
        prop_assert!(close(y.data(), &conv_oracle(&x, &wt, b.data(), stride, pad), 1e-12));
    }

    #[test]
    fn matmul_matches_triple_loop(m in 1usize..7, k in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let a = random::<f64>(&[m, k], seed);
        let b = random::<f64>(&[k, n], seed ^ 3);
        let mut expect = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    expect[i * n + j] += a.data()[i * k + l] * b.data()[l * n + j];
                }
            }
        }
        prop_assert!(close(matmul(&a, &b).unwrap().data(), &expect, 1e-12));
        // (Aᵀ)ᵀ B through the transposed entry point agrees too
        let at = Tensor::new(&[k, m], (0..k * m).map(|i| a.data()[(i % m) * k + i / m]).collect()).unwrap();
        prop_assert!(close(matmul_t(&at, &b, true, false).unwrap().data(), &expect, 1e-12));
    }

    #[test]
    fn broadcast_add_commutes_and_matches_loop(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let a = random::<f64>(&[rows, cols], seed);
        let b = random::<f64>(&[cols], seed ^ 5);
        let ab = a.add(&b).unwrap();
        let ba = b.add(&a).unwrap();
        prop_assert_eq!(ab.data(), ba.data());
        for (i, v) in ab.data().iter().enumerate() {
            prop_assert_eq!(*v, a.data()[i] + b.data()[i % cols]);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(dims in prop::collection::vec(1usize..5, 1..4), scale in 0.1f64..40.0, seed in any::<u64>()) {
        let x = random::<f64>(&dims, seed).scale(scale);
        for axis in 0..dims.len() {
            let y = x.softmax(axis).unwrap();
            prop_assert!(y.data().iter().all(|p| (0.0..=1.0).contains(p)));
            let inner: usize = dims[axis + 1..].iter().product();
            let outer: usize = dims[..axis].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..dims[axis]).map(|a| y.data()[(o * dims[axis] + a) * inner + i]).sum();
                    prop_assert!((s - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn pixel_shuffle_is_a_permutation(n in 1usize..3, c in 1usize..3, h in 1usize..4, w in 1usize..4, r in 1usize..4, seed in any::<u64>()) {
        let x = random::<f64>(&[n, c * r * r, h, w], seed);
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape(), &[n, c, h * r, w * r][..]);
        let mut a: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        let back = pixel_unshuffle(&y, r).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn fatn_roundtrip_f32(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let t = random::<f32>(&dims, seed);
        let bytes = io::encode(&t);
        let back: Tensor<f32> = io::decode(&bytes, "mem").unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.data(), t.data());
        prop_assert_eq!(io::encode(&back), bytes);
    }
}

#[test]
fn fatn_layout_is_exact() {
    let t = Tensor::<f32>::new(&[2, 1], vec![1.0, -2.5]).unwrap();
    let mut expect = b"FATN".to_vec();
    expect.extend_from_slice(&[1, 0, 2]);
    expect.extend_from_slice(&2u32.to_le_bytes());
    expect.extend_from_slice(&1u32.to_le_bytes());
    expect.extend_from_slice(&1.0f32.to_le_bytes());
    expect.extend_from_slice(&(-2.5f32).to_le_bytes());
    assert_eq!(io::encode(&t), expect);

    let d = Tensor::<f64>::scalar(0.125);
    let mut expect = b"FATN".to_vec();
    expect.extend_from_slice(&[1, 1, 0]);
    expect.extend_from_slice(&0.125f64.to_le_bytes());
    assert_eq!(io::encode(&d), expect);
}

#[test]
fn fatn_rejects_malformed_records() {
    let good = io::encode(&Tensor::<f64>::zeros(&[3]));
    assert!(io::decode::<f64>(&good[..good.len() - 1], "mem").is_err());
    let mut bad_dtype = good.clone();
    bad_dtype[5] = 7;
    assert!(io::decode::<f64>(&bad_dtype, "mem").is_err());
    let mut bad_magic = good;
    bad_magic[0] = b'X';
    assert!(io::decode::<f64>(&bad_magic, "mem").is_err());
}

#[test]
fn repeated_backward_is_bitwise_identical() {
    let x = Tensor::<f64>::leaf(&[1, 2, 5, 5], random::<f64>(&[1, 2, 5, 5], 1).to_vec(), true).unwrap();
    let w = Tensor::<f64>::leaf(&[3, 2, 3, 3], random::<f64>(&[3, 2, 3, 3], 2).to_vec(), true).unwrap();
    let loss = conv2d(&x, &w, None, 1, 1).unwrap().relu().softmax(1).unwrap().square().sum();
    loss.backward().unwrap();
    let (gx, gw) = (x.grad().unwrap(), w.grad().unwrap());
    x.zero_grad();
    w.zero_grad();
    loss.backward().unwrap();
    let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&x.grad().unwrap()), bits(&gx));
    assert_eq!(bits(&w.grad().unwrap()), bits(&gw));
}

/// Jacobian check at 32-bit, one output element at a time: ε = 1e-3,
/// tolerance 1e-4.
fn check_f32(f: impl Fn(&Tensor<f32>) -> Tensor<f32>, x0: Vec<f32>, shape: &[usize]) {
    let eps = 1e-3f32;
    let outputs = f(&Tensor::new(shape, x0.clone()).unwrap()).numel();
    for j in 0..outputs {
        let x = Tensor::<f32>::leaf(shape, x0.clone(), true).unwrap();
        let y = f(&x);
        let mut mask = vec![0.0f32; outputs];
        mask[j] = 1.0;
        y.mul(&Tensor::new(y.shape(), mask).unwrap()).unwrap().sum().backward().unwrap();
        let g = x.grad().unwrap();
        for i in 0..x0.len() {
            let eval = |d: f32| {
                let mut v = x0.clone();
                v[i] += d;
                f(&Tensor::new(shape, v).unwrap()).data()[j] as f64
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps as f64);
            let a = g[i] as f64;
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            assert!(rel < 1e-4, "output {j}, input {i}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn gradients_at_32_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x0: Vec<f32> = (0..6).map(|_| rng.random_range(0.2f32..1.5)).collect();
        check_f32(|x| x.sigmoid(), x0.clone(), &[2, 3]);
        check_f32(|x| x.log().unwrap().scale(0.5), x0.clone(), &[2, 3]);
        check_f32(|x| x.softmax(1).unwrap().square(), x0.clone(), &[2, 3]);
        check_f32(|x| x.mul(x).unwrap().scale(0.25), x0.clone(), &[2, 3]);
        let w: Vec<f32> = (0..3 * 2).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        check_f32(
            move |x| matmul(x, &Tensor::new(&[3, 2], w.clone()).unwrap()).unwrap().scale(0.5),
            x0.clone(),
            &[2, 3],
        );
    }
}
