//! Raw matrix kernels shared by forward ops and backward rules.
//!
//! Row-major throughout. The inner loops are written so the compiler can
//! vectorize them; accumulation order is fixed, which keeps results
//! bit-identical across runs on one platform.

/// c[m x n] += a[m x k] * b[k x n]
pub fn mm_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m x n] = a[m x k] * b[k x n]
pub fn mm(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0; m * n];
    mm_acc(a, b, &mut c, m, k, n);
    c
}

/// Dot product with eight independent accumulators so the loop vectorizes;
/// accumulation order is fixed, keeping results reproducible.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ab = &a[c * 8..c * 8 + 8];
        let bb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += ab[l] * bb[l];
        }
    }
    let mut s = 0.0f32;
    for l in 0..8 {
        s += acc[l];
    }
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// c[m x n] = a[m x k] * b[n x k]^T  (rows of `b` are the columns of the product)
pub fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            *cv = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// c[k x n] += a[m x k]^T * b[m x n]
pub fn mm_tn_acc(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[k x n] = a[m x k]^T * b[m x n]
pub fn mm_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0; k * n];
    mm_tn_acc(a, b, &mut c, m, k, n);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_on_small_case() {
        // a = [[1,2],[3,4],[5,6]] (3x2), b = [[7,8,9],[10,11,12]] (2x3)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = mm(&a, &b, 3, 2, 3);
        assert_eq!(c, vec![27.0, 30.0, 33.0, 61.0, 68.0, 75.0, 95.0, 106.0, 117.0]);

        // b^T laid out as [3 x 2] rows = columns of b
        let bt = [7.0, 10.0, 8.0, 11.0, 9.0, 12.0];
        let c2 = mm_nt(&a, &bt, 3, 2, 3);
        assert_eq!(c, c2);

        // a^T * c where a is 3x2: result 2x3
        let atc = mm_tn(&a, &c, 3, 2, 3);
        let expect = mm(&[1.0, 3.0, 5.0, 2.0, 4.0, 6.0], &c, 2, 3, 3);
        assert_eq!(atc, expect);
    }
}
