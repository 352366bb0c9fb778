use crate::float::Float;
use crate::tensor::strides_of;

/// Strides for reading `small` while iterating over `big` (0 on expanded axes).
fn expanded_strides(big: &[usize], small: &[usize]) -> Vec<usize> {
    debug_assert_eq!(big.len(), small.len());
    let s = strides_of(small);
    small
        .iter()
        .zip(big)
        .zip(s)
        .map(|((&sm, &bg), st)| if sm == 1 && bg != 1 { 0 } else { st })
        .collect()
}

/// Calls `f(i, ja, jb)` for every linear index `i` of `out`, where `ja` and
/// `jb` index the operands `a` and `b` that broadcast to `out`.
pub(crate) fn for_each_bcast2(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let sa = expanded_strides(out, a);
    let sb = expanded_strides(out, b);
    let last = rank - 1;
    let inner = out[last];
    let (ia_step, ib_step) = (sa[last], sb[last]);
    let mut idx = vec![0usize; rank];
    let (mut ja, mut jb) = (0usize, 0usize);
    let mut i = 0;
    loop {
        let (mut xa, mut xb) = (ja, jb);
        for _ in 0..inner {
            f(i, xa, xb);
            i += 1;
            xa += ia_step;
            xb += ib_step;
        }
        // Advance the odometer over the outer axes.
        let mut d = last;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            ja += sa[d];
            jb += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ja -= sa[d] * idx[d];
            jb -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Single-operand form of [`for_each_bcast2`]: `f(i, j)` with `j` indexing
/// `small` as it broadcasts over `big`.
pub(crate) fn for_each_bcast(big: &[usize], small: &[usize], mut f: impl FnMut(usize, usize)) {
    for_each_bcast2(big, small, big, |i, j, _| f(i, j));
}

/// Sums a gradient of shape `from` down to a broadcast operand of shape `to`.
pub(crate) fn sum_to_shape<T: Float>(g: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return g.to_vec();
    }
    let mut out = vec![T::ZERO; to.iter().product()];
    for_each_bcast(from, to, |i, j| out[j] += g[i]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visits_every_output_once_with_expanded_reads() {
        let mut seen = Vec::new();
        for_each_bcast2(&[2, 3], &[2, 1], &[1, 3], |i, a, b| seen.push((i, a, b)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, 1, 0), (4, 1, 1), (5, 1, 2)]
        );
    }

    #[test]
    fn sum_to_collapses_expanded_axes() {
        let g = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(sum_to_shape(&g, &[2, 3], &[1, 3]), vec![5.0, 7.0, 9.0]);
        assert_eq!(sum_to_shape(&g, &[2, 3], &[2, 1]), vec![6.0, 15.0]);
        assert_eq!(sum_to_shape(&g, &[2, 3], &[1, 1]), vec![21.0]);
    }
}
