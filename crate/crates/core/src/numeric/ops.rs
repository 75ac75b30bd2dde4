//! Elementwise and reduction kernels used by the forward pass.

use crate::scalar::Real;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn max<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().fold(T::neg_infinity(), T::max)
}

pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = max(xs);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// Softmax with max-shift, written into `out`.
pub fn softmax_into<T: Real>(xs: &[T], out: &mut [T]) {
    debug_assert_eq!(xs.len(), out.len());
    let m = max(xs);
    let mut total = T::zero();
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); xs.len()];
    softmax_into(xs, &mut out);
    out
}

/// Vector-Jacobian product of softmax: given `p = softmax(x)` and `g = dL/dp`,
/// returns `dL/dx_i = p_i (g_i - <p, g>)`.
pub fn softmax_backward_into<T: Real>(p: &[T], g: &[T], out: &mut [T]) {
    let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        *o = pi * (gi - dot);
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Shannon entropy in nats; `0 ln 0` is taken as 0.
pub fn entropy<T: Real>(p: &[T]) -> T {
    p.iter()
        .filter(|&&x| x > T::zero())
        .map(|&x| -x * x.ln())
        .sum()
}

/// Standard Gumbel(0, 1) draw from a uniform sample in (0, 1).
#[inline]
pub fn gumbel_from_uniform<T: Real>(u: f64) -> T {
    let u = u.clamp(1e-300, 1.0 - f64::EPSILON);
    T::lit(-(-u.ln()).ln())
}

#[inline]
pub fn signum_or_zero<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(3.0f64) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }

    #[test]
    fn softmax_handles_large_inputs() {
        let p = softmax(&[1000.0f64, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p32 = softmax(&[0.0f32, 0.0, 0.0, 0.0]);
        assert!(p32.iter().all(|&x| (x - 0.25).abs() < 1e-7));
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [0.3f64, -1.2, 2.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn entropy_of_one_hot_is_zero() {
        assert_eq!(entropy(&[0.0f64, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.5f64, 0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0]), 1);
    }
}
