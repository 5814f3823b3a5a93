use super::act::Mode;
use super::{shape_err, NnError, Param, Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by the running statistics at each training update.
pub const BN_MOMENTUM: f64 = 0.9;

/// What the backward pass needs from a batch-norm forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
    batch_mean: Vec<T>,
    /// Unbiased batch variance, what the running estimate tracks.
    batch_var: Vec<T>,
}

/// Per-channel normalization over batch and spatial positions. Train mode
/// uses the batch statistics, infer mode the running ones.
pub fn batchnorm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mode: Mode,
    running_mean: &[T],
    running_var: &[T],
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    let (n, c, h, w) = x.dims4()?;
    if [gamma.len(), beta.len(), running_mean.len(), running_var.len()] != [c; 4] {
        return shape_err(format!("batch norm parameters for {c} channels"));
    }
    let hw = h * w;
    let m = n * hw;
    let eps = T::lit(BN_EPS);
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = vec![T::zero(); c];
    let (mut batch_mean, mut batch_var) = (Vec::new(), Vec::new());
    let mf = T::from_usize(m).unwrap();
    for ch in 0..c {
        let idx = |b: usize| (b * c + ch) * hw;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::zero();
                for b in 0..n {
                    sum += x.data()[idx(b)..idx(b) + hw].iter().copied().sum::<T>();
                }
                let mean = sum / mf;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &x.data()[idx(b)..idx(b) + hw] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / mf;
                batch_mean.push(mean);
                batch_var.push(if m > 1 { sq / T::from_usize(m - 1).unwrap() } else { var });
                (mean, var)
            }
            Mode::Infer => (running_mean[ch], running_var[ch]),
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        for b in 0..n {
            let r = idx(b)..idx(b) + hw;
            for ((yv, xh), &xv) in y.data_mut()[r.clone()]
                .iter_mut()
                .zip(&mut xhat.data_mut()[r.clone()])
                .zip(&x.data()[r])
            {
                *xh = (xv - mean) * is;
                *yv = gamma[ch] * *xh + beta[ch];
            }
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            mode,
            batch_mean,
            batch_var,
        },
    ))
}

/// Folds the batch statistics of a train-mode pass into the running ones.
pub fn update_running_stats<T: Scalar>(cache: &BnCache<T>, running_mean: &mut [T], running_var: &mut [T]) {
    let mom = T::lit(BN_MOMENTUM);
    for (r, &b) in running_mean.iter_mut().zip(&cache.batch_mean) {
        *r = mom * *r + (T::one() - mom) * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&cache.batch_var) {
        *r = mom * *r + (T::one() - mom) * b;
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>), NnError> {
    let (n, c, h, w) = dy.dims4()?;
    if dy.shape() != cache.xhat.shape() {
        return shape_err("batch norm gradient shape");
    }
    let hw = h * w;
    let mf = T::from_usize(n * hw).unwrap();
    let mut dx = Tensor::zeros(dy.shape());
    let (mut dg, mut db) = (vec![T::zero(); c], vec![T::zero(); c]);
    for ch in 0..c {
        let ranges: Vec<_> = (0..n).map(|b| (b * c + ch) * hw..(b * c + ch + 1) * hw).collect();
        for r in &ranges {
            for (&g, &xh) in dy.data()[r.clone()].iter().zip(&cache.xhat.data()[r.clone()]) {
                db[ch] += g;
                dg[ch] += g * xh;
            }
        }
        let scale = gamma[ch] * cache.inv_std[ch];
        for r in ranges {
            for ((d, &g), &xh) in dx.data_mut()[r.clone()]
                .iter_mut()
                .zip(&dy.data()[r.clone()])
                .zip(&cache.xhat.data()[r])
            {
                *d = match cache.mode {
                    Mode::Train => scale * (g - db[ch] / mf - xh * dg[ch] / mf),
                    Mode::Infer => scale * g,
                };
            }
        }
    }
    Ok((dx, dg, db))
}

/// Batch-norm layer: affine parameters plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(gamma: Vec<T>) -> Self {
        let c = gamma.len();
        Self {
            gamma: Param::new(Tensor::from_vec(&[c], gamma).unwrap()),
            beta: Param::new(Tensor::zeros(&[c])),
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>), NnError> {
        batchnorm(
            x,
            self.gamma.value.data(),
            self.beta.value.data(),
            mode,
            &self.running_mean,
            &self.running_var,
        )
    }

    pub fn commit(&mut self, cache: &BnCache<T>) {
        update_running_stats(cache, &mut self.running_mean, &mut self.running_var);
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (dx, dg, db) = batchnorm_backward(cache, self.gamma.value.data(), dy)?;
        self.gamma.accumulate(&dg);
        self.beta.accumulate(&db);
        Ok(dx)
    }
}
