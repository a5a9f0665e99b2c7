//! Exact rational helpers for bound arithmetic.

use num_rational::Ratio;
use num_traits::{One, Zero};

pub type Q = Ratio<i128>;

pub fn q(x: impl Into<i128>) -> Q {
    Q::from_integer(x.into())
}

pub fn q_u64(x: u64) -> Q {
    Q::from_integer(x as i128)
}

pub fn pow(base: Q, exp: u32) -> Q {
    let mut acc = Q::one();
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

/// Smallest integer `k >= 0` with `rho^k >= x`.
pub fn ceil_log(rho: u64, x: Q) -> u32 {
    let mut k = 0;
    let mut p = Q::one();
    let r = q_u64(rho);
    while p < x {
        p *= r;
        k += 1;
    }
    k
}

pub fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

pub fn fmt_q(x: Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn max_q(a: Q, b: Q) -> Q {
    if a >= b {
        a
    } else {
        b
    }
}

pub fn is_zero(x: Q) -> bool {
    x.is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log_values() {
        assert_eq!(ceil_log(2, q(8)), 3);
        assert_eq!(ceil_log(2, q(9)), 4);
        assert_eq!(ceil_log(2, q(1)), 0);
        assert_eq!(ceil_log(3, Q::new(10, 3)), 2);
    }
}
