use super::{shape_err, NnError, Scalar};

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to `pred`.
pub fn bce_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return shape_err(format!("bce over {} predictions and {} targets", pred.len(), target.len()));
    }
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let n = T::from_usize(pred.len()).unwrap();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let q = p.max(lo).min(hi);
        loss += -(t * q.ln() + (T::one() - t) * (T::one() - q).ln());
        grad.push((q - t) / (q * (T::one() - q)) / n);
    }
    Ok((loss / n, grad))
}

/// Mean absolute difference and its gradient with respect to `a`
/// (zero where `a == b`).
pub fn l1_loss<T: Scalar>(a: &[T], b: &[T]) -> Result<(T, Vec<T>), NnError> {
    if a.len() != b.len() || a.is_empty() {
        return shape_err(format!("l1 over {} and {} values", a.len(), b.len()));
    }
    let n = T::from_usize(a.len()).unwrap();
    let mut loss = T::zero();
    let grad = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            loss += (x - y).abs();
            if x > y {
                T::one() / n
            } else if x < y {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_values() {
        let (l, _) = bce_loss(&[0.5f64], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = bce_loss(&[0.5f64], &[0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let (l, _) = bce_loss(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap();
        assert!(l <= 1.7e-6);
    }

    #[test]
    fn l1_values() {
        assert_eq!(l1_loss(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert_eq!(l1_loss(&[1.0f64; 4], &[0.0; 4]).unwrap().0, 1.0);
        assert!(l1_loss(&[1.0f64; 4], &[0.0; 3]).is_err());
    }
}
