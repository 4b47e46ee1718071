//! Small dense helpers shared by the impulse, limit and simulation modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{LevyxError, Result};

/// Eigenvalues in `[-PSD_CLIP_TOL, 0)` are treated as roundoff and clipped.
pub const PSD_CLIP_TOL: f64 = 1e-8;
/// Below `-PSD_FAIL_TOL` a diffusion matrix is rejected outright.
pub const PSD_FAIL_TOL: f64 = 1e-6;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Clips slightly negative eigenvalues of a symmetric matrix to zero.
///
/// Returns the repaired matrix and the minimum eigenvalue before repair.
pub fn repair_psd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return Ok((sym, 0.0));
    }
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok((sym, min));
    }
    if min < -PSD_FAIL_TOL {
        return Err(LevyxError::PsdRepairFailed { min_eigenvalue: min });
    }
    if min < -PSD_CLIP_TOL {
        log::warn!("clipping eigenvalue {min:e} of a diffusion matrix");
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok((symmetrize(&repaired), min))
}

/// Symmetric square root `S` with `S S = m` for a PSD `m`.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let scale = sym.amax().max(1.0);
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -PSD_CLIP_TOL * scale {
        return Err(LevyxError::SqrtFailed(format!("matrix has eigenvalue {min:e}")));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Gauss–Hermite rule for the standard normal: nodes and weights summing to 1
/// (Golub–Welsch on the probabilists' Jacobi matrix).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Tensor-product quadrature for `E f(z)`, `z ~ N(0, I_d)`.
pub fn gaussian_nodes(d: usize) -> Vec<(f64, DVector<f64>)> {
    let per_axis = match d {
        0 => return vec![(1.0, DVector::zeros(0))],
        1 => 40,
        2 => 16,
        3 => 8,
        _ => 4,
    };
    let (x, w) = gauss_hermite(per_axis);
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut weight = 1.0;
            let mut z = DVector::zeros(d);
            for k in 0..d {
                let i = idx % per_axis;
                idx /= per_axis;
                weight *= w[i];
                z[k] = x[i];
            }
            (weight, z)
        })
        .collect()
}

/// Tensor grid over a box `[(lo, hi); d]` with `per_axis` points per axis.
pub fn box_grid(u_box: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let d = u_box.len();
    if d == 0 {
        return vec![Vec::new()];
    }
    let axis: Vec<Vec<f64>> = u_box
        .iter()
        .map(|&(lo, hi)| {
            if per_axis <= 1 || hi <= lo {
                vec![0.5 * (lo + hi)]
            } else {
                (0..per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut out = vec![Vec::new()];
    for values in &axis {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Points per axis used when sweeping a u-box in validation and residual checks.
pub fn default_per_axis(d: usize) -> usize {
    match d {
        0 | 1 => 7,
        2 => 5,
        3 => 3,
        _ => 2,
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite(12);
        let m = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn sqrt_and_repair() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = psd_sqrt(&m).unwrap();
        assert!((&s * &s - &m).amax() < 1e-12);
        let nearly = DMatrix::from_row_slice(1, 1, &[-1e-10]);
        let (fixed, min) = repair_psd(&nearly).unwrap();
        assert_eq!(fixed[(0, 0)], 0.0);
        assert!(min < 0.0);
        assert!(repair_psd(&DMatrix::from_row_slice(1, 1, &[-1e-3])).is_err());
        assert!(psd_sqrt(&DMatrix::from_row_slice(1, 1, &[-1e-3])).is_err());
    }

    #[test]
    fn grid_covers_corners() {
        let g = box_grid(&[(-1.0, 1.0), (0.0, 2.0)], 3);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&vec![-1.0, 0.0]) && g.contains(&vec![1.0, 2.0]) && g.contains(&vec![0.0, 1.0]));
    }
}
