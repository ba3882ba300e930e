//! Integer-order Bessel functions of the first kind.
//!
//! Values come from Miller's backward recurrence normalized with
//! `J0 + 2·ΣJ2k = 1`, which is stable for every order in the supported
//! envelope and gives all orders `0..=n` in one pass.

use crate::{Error, Result};

/// Largest |order| accepted by [`bessel_j`].
pub const MAX_ORDER: i32 = 60;
/// Largest argument accepted by [`bessel_j`].
pub const MAX_ARGUMENT: f64 = 20.0;

/// `J_n(x)` for `|n| <= 60`, `0 <= x <= 20`.
pub fn bessel_j(n: i32, x: f64) -> Result<f64> {
    if n.abs() > MAX_ORDER {
        return Err(Error::Domain(format!("Bessel order {n} outside ±{MAX_ORDER}")));
    }
    if !(0.0..=MAX_ARGUMENT).contains(&x) {
        return Err(Error::Domain(format!("Bessel argument {x} outside [0, {MAX_ARGUMENT}]")));
    }
    let order = n.unsigned_abs() as usize;
    let v = orders(order, x)[order];
    Ok(if n < 0 && order % 2 == 1 { -v } else { v })
}

/// `[J_0(x), J_1(x), …, J_n(x)]` for `x >= 0`.
///
/// No envelope check: callers inside the crate use it for truncation searches
/// slightly past [`MAX_ORDER`].
pub(crate) fn orders(n: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let top = n.max(x.ceil() as usize) + 40;
    let start = top + top % 2;

    let mut next = 0.0; // J_{k+1}
    let mut cur = 1e-300; // J_k
    let mut even_sum = 0.0;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        let idx = k - 1;
        if idx <= n {
            out[idx] = cur;
        }
        if idx % 2 == 0 {
            even_sum += if idx == 0 { cur } else { 2.0 * cur };
        }
        if cur.abs() > 1e250 {
            next *= 1e-250;
            cur *= 1e-250;
            even_sum *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= even_sum;
    }
    out
}

/// Smallest `N` such that `1 − Σ_{|n|≤N} J_n(x)² < tol`.
pub(crate) fn truncation_order(x: f64, tol: f64) -> usize {
    let limit = (MAX_ORDER as usize).max(x.ceil() as usize + 40);
    let j = orders(limit + 1, x);
    // Tail mass 2·Σ_{n>N} J_n², accumulated from the top to avoid cancellation.
    let mut tail = 0.0;
    let mut tails = vec![0.0; limit + 2];
    for k in (1..=limit + 1).rev() {
        tail += 2.0 * j[k] * j[k];
        tails[k] = tail;
    }
    (0..=limit).find(|&n| tails[n + 1] < tol).unwrap_or(limit)
}
