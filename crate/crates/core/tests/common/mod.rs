#![allow(dead_code)]

use nalgebra::DMatrix;
use qengine::opalg::C64;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn ginibre<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

/// Random density matrix `GG†/tr` with a rank between 1 and `dim`.
pub fn random_density<R: Rng>(rng: &mut R, dim: usize) -> DMatrix<C64> {
    let rank = rng.random_range(1..=dim);
    let g = ginibre(rng, dim, rank);
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    rho / tr
}

/// Haar unitary from the QR of a Ginibre matrix with the phase fix.
pub fn random_unitary<R: Rng>(rng: &mut R, dim: usize) -> DMatrix<C64> {
    let qr = ginibre(rng, dim, dim).qr();
    let (q, r) = (qr.q(), qr.r());
    let phases = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            let d = r[(i, i)];
            d / d.norm()
        } else {
            C64::new(0.0, 0.0)
        }
    });
    q * phases
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// `tr[Hρ] − min_π Σ_k λ_{π(k)} ε_k`, searching every assignment of the
/// state's eigenvalues to the energy levels.
pub fn brute_force_ergotropy(rho: &DMatrix<C64>, h: &DMatrix<C64>) -> f64 {
    let energy = (h * rho).trace().re;
    let herm = |m: &DMatrix<C64>| (m + m.adjoint()) * C64::new(0.5, 0.0);
    let lam = herm(rho).symmetric_eigen().eigenvalues;
    let eps = herm(h).symmetric_eigen().eigenvalues;
    let n = lam.len();
    let passive = permutations(n)
        .iter()
        .map(|p| (0..n).map(|k| lam[p[k]] * eps[k]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    energy - passive
}

pub fn random_hermitian<R: Rng>(rng: &mut R, dim: usize) -> DMatrix<C64> {
    let g = ginibre(rng, dim, dim);
    (&g + g.adjoint()) * C64::new(0.5, 0.0)
}
