//! Register-blocked matrix multiply. Every output element is accumulated
//! from zero over `k` in ascending order with separate multiply and add, so
//! results are bitwise equal to the textbook triple loop.

use super::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m x n] = a[m x k] * b[k x n]`, row-major.
pub fn gemm<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    if m < MR {
        // too few rows to amortize packing: accumulate whole output rows
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            row.iter_mut().for_each(|v| *v = T::zero());
            for p in 0..k {
                let av = a[i * k + p];
                for (cv, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *cv += av * bv;
                }
            }
        }
        return;
    }
    let mut panel = vec![T::zero(); k * NR];
    for j0 in (0..n).step_by(NR) {
        let nr = NR.min(n - j0);
        for p in 0..k {
            let dst = &mut panel[p * NR..(p + 1) * NR];
            dst[..nr].copy_from_slice(&b[p * n + j0..p * n + j0 + nr]);
            dst[nr..].iter_mut().for_each(|v| *v = T::zero());
        }
        let mut i0 = 0;
        while i0 + MR <= m {
            block::<T, MR>(k, &a[i0 * k..(i0 + MR) * k], &panel, &mut c[i0 * n..], n, j0, nr);
            i0 += MR;
        }
        let rest = &a[i0 * k..m * k];
        match m - i0 {
            0 => {}
            1 => block::<T, 1>(k, rest, &panel, &mut c[i0 * n..], n, j0, nr),
            2 => block::<T, 2>(k, rest, &panel, &mut c[i0 * n..], n, j0, nr),
            3 => block::<T, 3>(k, rest, &panel, &mut c[i0 * n..], n, j0, nr),
            r => {
                for i in 0..r {
                    block::<T, 1>(k, &rest[i * k..], &panel, &mut c[(i0 + i) * n..], n, j0, nr);
                }
            }
        }
    }
}

#[inline(always)]
fn block<T: Scalar, const R: usize>(
    k: usize,
    a: &[T],
    panel: &[T],
    c: &mut [T],
    ldc: usize,
    j0: usize,
    nr: usize,
) {
    let rows: [&[T]; R] = std::array::from_fn(|r| &a[r * k..(r + 1) * k]);
    let mut acc = [[T::zero(); NR]; R];
    for (p, bp) in panel.chunks_exact(NR).enumerate() {
        let bp: &[T; NR] = bp.try_into().unwrap();
        for r in 0..R {
            let av = rows[r][p];
            for j in 0..NR {
                acc[r][j] += av * bp[j];
            }
        }
    }
    for r in 0..R {
        c[r * ldc + j0..r * ldc + j0 + nr].copy_from_slice(&acc[r][..nr]);
    }
}

/// `c[m x n] = a[m x k] * b[n x k]^T`.
pub fn gemm_bt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    let mut bt = vec![T::zero(); k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm(m, n, k, a, &bt, c);
}
