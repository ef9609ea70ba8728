//! Passive two-mode linear optics lifted to the Fock space.
//!
//! A 2×2 unitary `u` acting on creation operators,
//! `a_j† -> Σ_i u[(i, j)] a_i†`, conserves the total photon number `N`, so its
//! Fock representation is block diagonal with one `(N+1)`-dimensional block per
//! `N`. A single photon in mode `j` is mapped to column `j` of `u`, which makes
//! `u` the Jones matrix of the optics when the two modes are the H and V
//! polarizations of one beam.

use nalgebra::{DMatrix, Matrix2};

use super::C64;

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Block of the Fock representation with total photon number `total`.
///
/// Row/column `k` is the basis state `|k, total - k>`.
pub fn two_mode_block(u: &Matrix2<C64>, total: usize) -> DMatrix<C64> {
    let dim = total + 1;
    let mut block = DMatrix::<C64>::zeros(dim, dim);
    for n1 in 0..=total {
        let n2 = total - n1;
        let norm_in = (factorial(n1) * factorial(n2)).sqrt();
        for k in 0..=n1 {
            let a = u[(0, 0)].powu(k as u32) * u[(1, 0)].powu((n1 - k) as u32) * binomial(n1, k);
            for l in 0..=n2 {
                let b = u[(0, 1)].powu(l as u32) * u[(1, 1)].powu((n2 - l) as u32) * binomial(n2, l);
                let m1 = k + l;
                let m2 = total - m1;
                let norm_out = (factorial(m1) * factorial(m2)).sqrt();
                block[(m1, n1)] += a * b * (norm_out / norm_in);
            }
        }
    }
    block
}

/// Compression of the two-mode Fock operator onto `{0..=n_max}²`, ordered
/// with the second mode fastest.
///
/// For states whose support has `n_a + n_b <= n_max` the result acts exactly
/// as the untruncated unitary.
pub fn two_mode_operator(u: &Matrix2<C64>, n_max: usize) -> DMatrix<C64> {
    let base = n_max + 1;
    let mut op = DMatrix::<C64>::zeros(base * base, base * base);
    for total in 0..=2 * n_max {
        let block = two_mode_block(u, total);
        let lo = total.saturating_sub(n_max);
        let hi = total.min(n_max);
        for n1 in lo..=hi {
            for m1 in lo..=hi {
                let row = m1 * base + (total - m1);
                let col = n1 * base + (total - n1);
                op[(row, col)] = block[(m1, n1)];
            }
        }
    }
    op
}

/// Pull a two-mode operator that is diagonal in the *output* Fock basis back to
/// the input modes, `E = Û† diag(f) Û`, and compress it onto `{0..=n_max}²`.
///
/// Compression of a positive operator stays positive, and a family of outputs
/// summing to the identity pulls back to a family summing to the identity on
/// the truncated space, so POVMs built this way are exact.
pub fn pull_back_diagonal<F>(u: &Matrix2<C64>, n_max: usize, f: F) -> DMatrix<C64>
where
    F: Fn(usize, usize) -> f64,
{
    let base = n_max + 1;
    let mut op = DMatrix::<C64>::zeros(base * base, base * base);
    for total in 0..=2 * n_max {
        let block = two_mode_block(u, total);
        let diag = DMatrix::<C64>::from_fn(total + 1, total + 1, |i, j| {
            if i == j {
                C64::new(f(i, total - i), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let pulled = block.adjoint() * diag * &block;
        let lo = total.saturating_sub(n_max);
        let hi = total.min(n_max);
        for n1 in lo..=hi {
            for m1 in lo..=hi {
                let row = m1 * base + (total - m1);
                let col = n1 * base + (total - n1);
                op[(row, col)] = pulled[(m1, n1)];
            }
        }
    }
    op
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beam_splitter() -> Matrix2<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Matrix2::new(C64::new(s, 0.0), C64::new(s, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0))
    }

    #[test]
    fn blocks_are_unitary() {
        let u = beam_splitter();
        for total in 0..6 {
            let b = two_mode_block(&u, total);
            let err = (b.adjoint() * &b - DMatrix::identity(total + 1, total + 1)).camax();
            assert!(err < 1e-12, "N={total} err={err}");
        }
    }

    #[test]
    fn hong_ou_mandel() {
        // |1,1> through a balanced splitter has no |1,1> component
        let b = two_mode_block(&beam_splitter(), 2);
        assert!(b[(1, 1)].norm() < 1e-12);
        assert!((b[(0, 1)].norm_sqr() - 0.5).abs() < 1e-12);
        assert!((b[(2, 1)].norm_sqr() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_photon_follows_jones_column() {
        let u = beam_splitter();
        let b = two_mode_block(&u, 1);
        // basis k=1 is |1,0>, k=0 is |0,1>
        assert!((b[(1, 1)] - u[(0, 0)]).norm() < 1e-12);
        assert!((b[(0, 1)] - u[(1, 0)]).norm() < 1e-12);
    }
}
