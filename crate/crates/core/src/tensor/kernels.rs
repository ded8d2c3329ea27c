//! Low-level helpers shared by the forward and backward passes.

/// Numpy-style broadcast of two shapes aligned on their trailing axes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| {
        let pad = r - s.len();
        if i < pad {
            1
        } else {
            s[i - pad]
        }
    };
    (0..r)
        .map(|i| match (dim(a, i), dim(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// For every flat index of `out`, the flat index of the broadcast source
/// element in a tensor of shape `inp`. `None` when no broadcasting occurs.
pub(crate) fn broadcast_map(out: &[usize], inp: &[usize]) -> Option<Vec<usize>> {
    if out == inp {
        return None;
    }
    let r = out.len();
    let pad = r - inp.len();
    let n: usize = out.iter().product();
    let inner: usize = inp.iter().product();
    // Fast path: `inp` equals the trailing axes of `out`.
    if inp.iter().zip(&out[pad..]).all(|(a, b)| a == b) {
        return Some((0..n).map(|i| i % inner).collect());
    }
    let mut strides = vec![0usize; r];
    let mut s = 1;
    for i in (0..inp.len()).rev() {
        if inp[i] != 1 {
            strides[i + pad] = s;
        }
        s *= inp[i];
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..r).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    Some(map)
}

/// `c += a · b` for an `m×k` by `k×n` product with arbitrary strides given as
/// `(row_stride, col_stride)`.
pub(crate) fn gemm_acc(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let extent =
        |rows: usize, cols: usize, rs: isize, cs: isize| (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1;
    assert!(a.len() as isize >= extent(m, k, rsa, csa), "gemm: a too short");
    assert!(b.len() as isize >= extent(k, n, rsb, csb), "gemm: b too short");
    assert!(c.len() as isize >= extent(m, n, rsc, csc), "gemm: c too short");
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 3], &[4, 1]), Some(vec![2, 4, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn broadcast_map_middle_axis() {
        // [2,1] broadcast into [2,3]
        let m = broadcast_map(&[2, 3], &[2, 1]).unwrap();
        assert_eq!(m, vec![0, 0, 0, 1, 1, 1]);
        let m = broadcast_map(&[2, 3], &[3]).unwrap();
        assert_eq!(m, vec![0, 1, 2, 0, 1, 2]);
    }
}
