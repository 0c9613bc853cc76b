//! Deterministic fixtures shared by unit tests.

use nalgebra::DMatrix;

use crate::core_types::{CovarianceMatrix, Signal};

fn xorshift(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }
}

/// Random SPD covariance with vols in [0.1, 0.4] and a dense correlation.
pub fn random_spd(n: usize, seed: u64) -> CovarianceMatrix {
    let mut next = xorshift(seed);
    let a = DMatrix::from_fn(n, n + 3, |_, _| next());
    let vols: Vec<f64> = (0..n).map(|_| 0.25 + 0.3 * next()).collect();
    let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.2;
    let d = m.diagonal();
    CovarianceMatrix::new(DMatrix::from_fn(n, n, |i, j| {
        vols[i] * vols[j] * m[(i, j)] / (d[i] * d[j]).sqrt()
    }))
    .unwrap()
}

pub fn random_signal(n: usize, seed: u64) -> Signal {
    let mut next = xorshift(seed ^ 0xDEAD_BEEF);
    Signal::from_slice(&(0..n).map(|_| 0.1 * next()).collect::<Vec<_>>()).unwrap()
}

#[allow(dead_code)]
pub fn four_asset() -> (CovarianceMatrix, Signal) {
    let s = CovarianceMatrix::from_row_slice(
        4,
        &[
            0.0400, 0.0400, 0.0120, 0.0060, //
            0.0400, 0.0625, 0.0150, 0.0075, //
            0.0120, 0.0150, 0.0900, 0.0360, //
            0.0060, 0.0075, 0.0360, 0.0225,
        ],
    )
    .unwrap();
    (s, Signal::from_slice(&[0.03, -0.01, 0.02, -0.04]).unwrap())
}
