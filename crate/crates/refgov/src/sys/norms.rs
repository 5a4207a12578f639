//! System norms and gain measures for stability certificates and
//! conditioning diagnostics.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::state_space::LinearSystem;
use crate::error::{Error, Result};

/// Frequency response `G(e^{i theta}) = C (e^{i theta} I - A)^{-1} B + D`.
pub fn freq_response(sys: &LinearSystem, theta: f64) -> DMatrix<Complex64> {
    let n = sys.n_states();
    let z = Complex64::new(theta.cos(), theta.sin());
    let to_c = |m: &DMatrix<f64>| m.map(|v| Complex64::new(v, 0.0));
    if n == 0 {
        return to_c(&sys.d);
    }
    let mut zi_a = to_c(&sys.a).map(|v| -v);
    for k in 0..n {
        zi_a[(k, k)] += z;
    }
    let lu = zi_a.lu();
    let sol = lu
        .solve(&to_c(&sys.b))
        .expect("zI - A is nonsingular on the unit circle for stable A");
    to_c(&sys.c) * sol + to_c(&sys.d)
}

/// Singular values of a real matrix, sorted in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let svd = m.clone().svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// 2-norm condition number `sigma_max / sigma_min` (infinite when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

fn max_singular_value_at(sys: &LinearSystem, theta: f64) -> f64 {
    let g = freq_response(sys, theta);
    let svd = g.svd(false, false);
    svd.singular_values.max()
}

/// H-infinity norm: the peak of the largest singular value of the frequency
/// response over the unit circle.
///
/// Located by a dense grid sweep followed by golden-section refinement;
/// accurate to roughly 1e-6 relative for smooth responses.
///
/// Errors with [`Error::UnstableSystem`] when `A` has spectral radius >= 1.
pub fn hinf_norm(sys: &LinearSystem) -> Result<f64> {
    let rho = sys.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::UnstableSystem(rho));
    }
    const GRID: usize = 2048;
    let mut best_k = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut values = Vec::with_capacity(GRID + 1);
    for k in 0..=GRID {
        let theta = std::f64::consts::PI * k as f64 / GRID as f64;
        let v = max_singular_value_at(sys, theta);
        values.push(v);
        if v > best {
            best = v;
            best_k = k;
        }
    }
    // Golden-section refinement on the bracketing grid cell pair.
    let step = std::f64::consts::PI / GRID as f64;
    let mut lo = step * best_k.saturating_sub(1) as f64;
    let mut hi = step * (best_k + 1).min(GRID) as f64;
    const PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - PHI * (hi - lo);
    let mut x2 = lo + PHI * (hi - lo);
    let mut f1 = max_singular_value_at(sys, x1);
    let mut f2 = max_singular_value_at(sys, x2);
    for _ in 0..80 {
        if hi - lo < 1e-10 {
            break;
        }
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - PHI * (hi - lo);
            f1 = max_singular_value_at(sys, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + PHI * (hi - lo);
            f2 = max_singular_value_at(sys, x2);
        }
    }
    Ok(best.max(f1).max(f2))
}

/// L1 impulse-response norm: the induced l-infinity -> l-infinity gain
/// `max_i sum_t sum_j |h_ij(t)|`.
///
/// The sum is truncated once a geometric tail bound (built from the spectral
/// radius) falls below 1e-9 of the accumulated value.
///
/// Errors with [`Error::UnstableSystem`] when `A` has spectral radius >= 1.
pub fn l1_impulse_norm(sys: &LinearSystem) -> Result<f64> {
    l1_impulse_norm_tol(sys, 1e-9)
}

/// [`l1_impulse_norm`] with a caller-chosen relative tail tolerance.
pub fn l1_impulse_norm_tol(sys: &LinearSystem, tail_tol: f64) -> Result<f64> {
    let rho = sys.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::UnstableSystem(rho));
    }
    let p = sys.n_outputs();
    let mut acc = DVector::<f64>::zeros(p);
    // t = 0 term: D.
    for i in 0..p {
        acc[i] += sys.d.row(i).iter().map(|v| v.abs()).sum::<f64>();
    }
    // Effective decay ratio for the tail bound, padded away from rho because
    // transients can exceed the asymptotic rate.
    let q = ((1.0 + rho) / 2.0).max(0.5);
    let window = (4 * sys.n_states().max(1)).max(8);
    let mut recent: Vec<f64> = Vec::with_capacity(window);
    let mut cab = sys.c.clone();
    let t_max = 500_000usize;
    for _t in 1..=t_max {
        let term = &cab * &sys.b;
        let mut m_t = 0.0f64;
        for i in 0..p {
            let rs: f64 = term.row(i).iter().map(|v| v.abs()).sum();
            acc[i] += rs;
            m_t = m_t.max(rs);
        }
        recent.push(m_t);
        if recent.len() > window {
            recent.remove(0);
        }
        if recent.len() == window {
            let m_recent = recent.iter().copied().fold(0.0, f64::max);
            let tail = m_recent * q / (1.0 - q);
            let total = acc.max().max(1e-300);
            if tail <= tail_tol * total.max(1.0) {
                return Ok(acc.max());
            }
        }
        cab = cab * &sys.a;
    }
    // Extremely slow decay: return the partial sum (tail provably small for
    // any stable system reaching this many terms with bounded values).
    Ok(acc.max())
}
