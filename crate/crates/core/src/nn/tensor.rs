use super::{shape_err, NnError, Scalar};

/// Row-major tensor. Image tensors are `[n, c, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!("{} values for shape {shape:?}", data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), NnError> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => shape_err(format!("expected 4-d tensor, got {:?}", self.shape)),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from(v).unwrap()).collect(),
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize(self.data.len()).unwrap()
    }

    /// Channel-wise concatenation of two `[n, c, h, w]` tensors.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self, NnError> {
        let (n, ca, h, w) = a.dims4()?;
        let (nb, cb, hb, wb) = b.dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return shape_err(format!("concat {:?} with {:?}", a.shape, b.shape));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(&a.data[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&b.data[i * sb..(i + 1) * sb]);
        }
        Ok(Self {
            shape: vec![n, ca + cb, h, w],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `ca` channels and the rest.
    pub fn split_channels(&self, ca: usize) -> Result<(Self, Self), NnError> {
        let (n, c, h, w) = self.dims4()?;
        if ca > c {
            return shape_err(format!("split at {ca} of {c} channels"));
        }
        let hw = h * w;
        let (mut a, mut b) = (Vec::with_capacity(n * ca * hw), Vec::with_capacity(n * (c - ca) * hw));
        for i in 0..n {
            let s = &self.data[i * c * hw..(i + 1) * c * hw];
            a.extend_from_slice(&s[..ca * hw]);
            b.extend_from_slice(&s[ca * hw..]);
        }
        Ok((
            Self {
                shape: vec![n, ca, h, w],
                data: a,
            },
            Self {
                shape: vec![n, c - ca, h, w],
                data: b,
            },
        ))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), NnError> {
        if self.shape != other.shape {
            return shape_err(format!("add {:?} to {:?}", other.shape, self.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// Trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate(&mut self, g: &[T]) {
        for (a, &b) in self.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::<f32>::from_vec(&[2, 1, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2, 1, 2], (0..8).map(|v| v as f32 * 10.).collect()).unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(&c.data()[..6], &[1., 2., 0., 10., 20., 30.]);
        let (a2, b2) = c.split_channels(1).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::zeros(&[4]).dims4().is_err());
    }
}
