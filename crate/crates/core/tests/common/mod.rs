//! Independent references shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routecast::nn::{self, Activation, Mode, Tensor};

/// Direct six-loop cross-correlation.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, s: usize, p: usize) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (co, _, k, _) = w.dims4().unwrap();
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (wd + 2 * p - k) / s + 1;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for bi in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + i) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * c + i) * k + ky) * k + kx];
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc += b[o];
                    }
                    out.data_mut()[((bi * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Transposed convolution by gathering: output `oy` receives input
/// `iy = (oy + p - ky) / s` whenever that division is exact.
pub fn naive_conv_transpose2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, s: usize, p: usize) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (_, co, k, _) = w.dims4().unwrap();
    let oh = (h - 1) * s + k - 2 * p;
    let ow = (wd - 1) * s + k - 2 * p;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for bi in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let ny = oy as isize + p as isize - ky as isize;
                                let nx = ox as isize + p as isize - kx as isize;
                                if ny.rem_euclid(s as isize) != 0 || nx.rem_euclid(s as isize) != 0 {
                                    continue;
                                }
                                let (iy, ix) = (ny / s as isize, nx / s as isize);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * c + i) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((i * co + o) * k + ky) * k + kx];
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc += b[o];
                    }
                    out.data_mut()[((bi * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Largest elementwise `|a - b| / max(|a|, |b|)`, zero where both vanish.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.abs().max(y.abs());
            if d < 1e-12 {
                0.0
            } else {
                (x - y).abs() / d
            }
        })
        .fold(0.0, f64::max)
}

/// Central differences of `f` around `x`.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let up = f(&v);
            v[i] = orig - h;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.shape(), data.to_vec()).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradCase {
    pub op: &'static str,
    pub shape: String,
    pub err: f64,
}

/// Random conv geometry `(n, c, co, h, w, k, s, p)` that yields a
/// non-empty output.
fn conv_geom(rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize, usize, usize, usize, usize) {
    loop {
        let k = rng.gen_range(1..=4);
        let s = rng.gen_range(1..=2);
        let p = rng.gen_range(0..k);
        let h = rng.gen_range(k.max(2)..=7);
        let w = rng.gen_range(k.max(2)..=7);
        if h + 2 * p >= k && w + 2 * p >= k {
            return (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3), h, w, k, s, p);
        }
    }
}

/// Keeps values away from the kinks of piecewise-linear ops.
fn off_kink(v: &mut [f64]) {
    for x in v.iter_mut() {
        if x.abs() < 0.05 {
            *x += 0.1_f64.copysign(*x);
        }
    }
}

/// Finite-difference checks of every differentiable op over `shapes`
/// random configurations each.
pub fn gradient_suite(seed: u64, shapes: usize) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |op, shape: String, analytic: &[f64], numeric: &[f64]| {
        out.push(GradCase {
            op,
            shape,
            err: max_rel_err(analytic, numeric),
        })
    };
    for _ in 0..shapes {
        // conv2d
        let (n, c, co, h, w, k, s, p) = conv_geom(&mut rng);
        let x = random_tensor(&mut rng, &[n, c, h, w]);
        let wt = random_tensor(&mut rng, &[co, c, k, k]);
        let b = random_vec(&mut rng, co);
        let y = nn::conv2d(&x, &wt, Some(&b), s, p).unwrap();
        let r = random_tensor(&mut rng, y.shape());
        let g = nn::conv2d_backward(&x, &wt, &r, s, p, true).unwrap();
        let shape = format!("x{:?} w{:?} s{s} p{p}", x.shape(), wt.shape());
        let fx = numeric_grad(|v| dot(nn::conv2d(&with(&x, v), &wt, Some(&b), s, p).unwrap().data(), r.data()), x.data());
        push("conv2d/x", shape.clone(), g.dx.unwrap().data(), &fx);
        let fw = numeric_grad(|v| dot(nn::conv2d(&x, &with(&wt, v), Some(&b), s, p).unwrap().data(), r.data()), wt.data());
        push("conv2d/w", shape.clone(), g.dw.data(), &fw);
        let fb = numeric_grad(|v| dot(nn::conv2d(&x, &wt, Some(v), s, p).unwrap().data(), r.data()), &b);
        push("conv2d/b", shape, &g.db, &fb);

        // conv_transpose2d
        let (n, c, co, h, w, k, s, p) = conv_geom(&mut rng);
        let (h, w) = (h.min(5), w.min(5));
        let p = p.min(((h - 1) * s + k - 1) / 2).min(((w - 1) * s + k - 1) / 2);
        let x = random_tensor(&mut rng, &[n, c, h, w]);
        let wt = random_tensor(&mut rng, &[c, co, k, k]);
        let b = random_vec(&mut rng, co);
        let y = nn::conv_transpose2d(&x, &wt, Some(&b), s, p).unwrap();
        let r = random_tensor(&mut rng, y.shape());
        let g = nn::conv_transpose2d_backward(&x, &wt, &r, s, p, true).unwrap();
        let shape = format!("x{:?} w{:?} s{s} p{p}", x.shape(), wt.shape());
        let f = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &[f64]| {
            dot(nn::conv_transpose2d(x, wt, Some(b), s, p).unwrap().data(), r.data())
        };
        let fx = numeric_grad(|v| f(&with(&x, v), &wt, &b), x.data());
        push("conv_transpose2d/x", shape.clone(), g.dx.unwrap().data(), &fx);
        let fw = numeric_grad(|v| f(&x, &with(&wt, v), &b), wt.data());
        push("conv_transpose2d/w", shape.clone(), g.dw.data(), &fw);
        let fb = numeric_grad(|v| f(&x, &wt, v), &b);
        push("conv_transpose2d/b", shape, &g.db, &fb);

        // batchnorm, both modes
        let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=5), rng.gen_range(2..=5)];
        let c = shape[1];
        let x = random_tensor(&mut rng, &shape);
        let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta = random_vec(&mut rng, c);
        let rm = random_vec(&mut rng, c);
        let rv: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        let r = random_tensor(&mut rng, &shape);
        for mode in [Mode::Train, Mode::Infer] {
            let run = |x: &Tensor<f64>, g: &[f64], b: &[f64]| nn::batchnorm(x, g, b, mode, &rm, &rv).unwrap();
            let (_, cache) = run(&x, &gamma, &beta);
            let (dx, dg, db) = nn::batchnorm_backward(&cache, &gamma, &r).unwrap();
            let s = format!("{shape:?}");
            let fx = numeric_grad(|v| dot(run(&with(&x, v), &gamma, &beta).0.data(), r.data()), x.data());
            push(if mode == Mode::Train { "batchnorm/x" } else { "batchnorm_infer/x" }, s.clone(), dx.data(), &fx);
            let fg = numeric_grad(|v| dot(run(&x, v, &beta).0.data(), r.data()), &gamma);
            push(if mode == Mode::Train { "batchnorm/gamma" } else { "batchnorm_infer/gamma" }, s.clone(), &dg, &fg);
            let fb = numeric_grad(|v| dot(run(&x, &gamma, v).0.data(), r.data()), &beta);
            push(if mode == Mode::Train { "batchnorm/beta" } else { "batchnorm_infer/beta" }, s, &db, &fb);
        }

        // activations
        let shape = [1, rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=5)];
        let mut xv = random_vec(&mut rng, shape.iter().product());
        off_kink(&mut xv);
        let x = Tensor::from_vec(&shape, xv).unwrap();
        let r = random_tensor(&mut rng, &shape);
        for (kind, name) in [
            (Activation::Relu, "relu"),
            (Activation::LeakyRelu, "leaky_relu"),
            (Activation::Tanh, "tanh"),
            (Activation::Sigmoid, "sigmoid"),
        ] {
            let y = nn::activation(&x, kind);
            let g = nn::activation_backward(&x, &y, &r, kind).unwrap();
            let f = numeric_grad(|v| dot(nn::activation(&with(&x, v), kind).data(), r.data()), x.data());
            push(name, format!("{shape:?}"), g.data(), &f);
        }

        // dropout with a frozen mask
        let mut mrng = ChaCha8Rng::seed_from_u64(rng.gen());
        let (_, mask) = nn::dropout(&x, 0.5, &mut mrng, Mode::Train);
        let mask = mask.unwrap();
        let g = nn::dropout_backward(Some(&mask), &r);
        let f = numeric_grad(
            |v| v.iter().zip(&mask).zip(r.data()).map(|((a, m), q)| a * m * q).sum(),
            x.data(),
        );
        push("dropout", format!("{shape:?}"), g.data(), &f);

        // losses
        let len = rng.gen_range(1..=12);
        let pred: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..0.95)).collect();
        let target: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let (_, g) = nn::bce_loss(&pred, &target).unwrap();
        let f = numeric_grad(|v| nn::bce_loss(v, &target).unwrap().0, &pred);
        push("bce_loss", format!("[{len}]"), &g, &f);
        let a = random_vec(&mut rng, len);
        let mut bv = random_vec(&mut rng, len);
        for (bb, aa) in bv.iter_mut().zip(&a) {
            if (*bb - aa).abs() < 0.05 {
                *bb += 0.1;
            }
        }
        let (_, g) = nn::l1_loss(&a, &bv).unwrap();
        let f = numeric_grad(|v| nn::l1_loss(v, &bv).unwrap().0, &a);
        push("l1_loss", format!("[{len}]"), &g, &f);
    }
    out
}

#[derive(Debug, Clone)]
pub struct OracleCase {
    pub op: &'static str,
    pub shape: String,
    pub bitwise: bool,
}

/// Compares the fast kernels to the loop references on random small cases.
pub fn oracle_suite(seed: u64, cases: usize) -> Vec<OracleCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..cases {
        let (n, c, co, h, w, k, s, p) = conv_geom(&mut rng);
        let (h, w) = (h + 1, w + 1);
        let x = random_tensor(&mut rng, &[n, c, h, w]);
        let wt = random_tensor(&mut rng, &[co, c, k, k]);
        let b = rng.gen_bool(0.5).then(|| random_vec(&mut rng, co));
        let fast = nn::conv2d(&x, &wt, b.as_deref(), s, p).unwrap();
        let slow = naive_conv2d(&x, &wt, b.as_deref(), s, p);
        out.push(OracleCase {
            op: "conv2d",
            shape: format!("x{:?} w{:?} s{s} p{p}", x.shape(), wt.shape()),
            bitwise: bits(&fast) == bits(&slow),
        });

        let p = p.min(((h - 1) * s + k - 1) / 2).min(((w - 1) * s + k - 1) / 2);
        let wt = random_tensor(&mut rng, &[c, co, k, k]);
        let fast = nn::conv_transpose2d(&x, &wt, b.as_deref(), s, p).unwrap();
        let slow = naive_conv_transpose2d(&x, &wt, b.as_deref(), s, p);
        out.push(OracleCase {
            op: "conv_transpose2d",
            shape: format!("x{:?} w{:?} s{s} p{p}", x.shape(), wt.shape()),
            bitwise: fast.shape() == slow.shape() && bits(&fast) == bits(&slow),
        });
    }
    out
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}
