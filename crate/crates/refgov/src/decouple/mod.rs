//! Decoupling designers: transfer-function filters that diagonalize a
//! coupled square plant, state-feedback pairs that do the same through the
//! input map, and the causal initial-condition cancellation sequence.

pub mod feedback;

pub use feedback::{
    fw_identity_pair, fw_indices, fw_pole_assignment_pair, small_gain_certificate, SsDecoupling,
};

#[cfg(test)]
pub(crate) use feedback::feedback_benchmark_plant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sys::state_space::realize;
use crate::sys::{LinearSystem, RationalMatrix};

/// Poles of a designed filter must stay below `1 -` this margin; marginally
/// stable inverses make the norm-based analysis meaningless.
pub const INVERSE_STABILITY_MARGIN: f64 = 1e-6;

/// A pre-plant filter pair that diagonalizes the plant:
/// `G(z) F(z) = W(z)` with `W` diagonal, together with the delay counts that
/// were multiplied in to make both directions proper.
#[derive(Clone, Debug)]
pub struct TfDecoupling {
    /// Forward filter (applied between governor output and plant input).
    pub f: RationalMatrix,
    /// Inverse filter (applied to the raw reference), `F^{-1} z^{-beta2}`.
    pub f_inv: RationalMatrix,
    /// Decoupled diagonal map from the governed inputs to the outputs,
    /// including the forward padding delay.
    pub w: RationalMatrix,
    /// Delays padded into `f`.
    pub beta1: usize,
    /// Delays padded into `f_inv`.
    pub beta2: usize,
}

fn require_square(g: &RationalMatrix) -> Result<usize> {
    if g.rows() != g.cols() {
        return Err(Error::DimensionMismatch(format!(
            "decoupling needs a square plant, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    Ok(g.rows())
}

fn check_filter_stable(m: &RationalMatrix) -> Result<()> {
    let rho = m.max_pole_modulus();
    if rho >= 1.0 - INVERSE_STABILITY_MARGIN {
        return Err(Error::UnstableInverse(rho));
    }
    Ok(())
}

/// Designs the filter pair for a diagonal target equal to the plant's own
/// diagonal: `W = diag(G_11, ..., G_mm)` (times the padding delay),
/// `F = G^{-1} W`, `F^{-1} = W^{-1} G`.
pub fn design_tf_diagonal(g: &RationalMatrix) -> Result<TfDecoupling> {
    let m = require_square(g)?;
    let mut diag = Vec::with_capacity(m);
    let mut diag_inv = Vec::with_capacity(m);
    for i in 0..m {
        let gii = g.get(i, i).clone();
        diag_inv.push(gii.inv()?);
        diag.push(gii);
    }
    let w_raw = RationalMatrix::from_diag(&diag);
    if w_raw.max_pole_modulus() >= 1.0 {
        return Err(Error::UnstableSystem(w_raw.max_pole_modulus()));
    }
    let g_inv = g.rational_inverse()?;
    let f_raw = g_inv.matmul(&w_raw)?;
    let f_inv_raw = RationalMatrix::from_diag(&diag_inv).matmul(g)?;
    let (f, beta1) = f_raw.make_proper();
    let (f_inv, beta2) = f_inv_raw.make_proper();
    check_filter_stable(&f)?;
    check_filter_stable(&f_inv)?;
    let w = w_raw.delayed(beta1);
    Ok(TfDecoupling {
        f,
        f_inv,
        w,
        beta1,
        beta2,
    })
}

/// Designs the filter pair for an identity target: `F = G^{-1}` (padded),
/// `W = z^{-beta} I`, `F^{-1} = G` (already proper).
pub fn design_tf_identity(g: &RationalMatrix) -> Result<TfDecoupling> {
    let m = require_square(g)?;
    if g.max_pole_modulus() >= 1.0 {
        return Err(Error::UnstableSystem(g.max_pole_modulus()));
    }
    let g_inv = g.rational_inverse()?;
    let (f, beta1) = g_inv.make_proper();
    let (f_inv, beta2) = g.make_proper();
    check_filter_stable(&f)?;
    check_filter_stable(&f_inv)?;
    let w = RationalMatrix::identity(m).delayed(beta1);
    Ok(TfDecoupling {
        f,
        f_inv,
        w,
        beta1,
        beta2,
    })
}

/// Causal generator for the additive plant-input term that cancels the
/// effect of a nonzero plant initial condition on the decoupled response.
///
/// The exact cancellation `-G^{-1}(z) M(z) x0` (with `M` the transform of
/// the free response) is improper by the inverse's properness deficit
/// `beta`; this generator feeds the free response advanced by `beta` steps
/// through the delay-padded inverse, which cancels the initial condition
/// exactly from step `beta` onward. Output samples before `beta` are
/// unreachable by any causal input.
#[derive(Clone, Debug)]
pub struct IcCancellation {
    inverse: LinearSystem,
    x_inv: DVector<f64>,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    x_model: DVector<f64>,
    beta: usize,
}

impl IcCancellation {
    /// First step at which the cancellation is exact.
    pub fn beta(&self) -> usize {
        self.beta
    }

    /// The additive input term for the current step; advances the generator.
    pub fn next_term(&mut self) -> DVector<f64> {
        let s = -(&self.c * &self.x_model);
        let u = self.inverse.output(&self.x_inv, &s, None);
        self.x_inv = self.inverse.next_state(&self.x_inv, &s, None);
        self.x_model = &self.a * &self.x_model;
        u
    }
}

/// Builds the cancellation generator for a plant realization and its known
/// initial state.
pub fn ic_cancellation(plant: &LinearSystem, x0: &DVector<f64>) -> Result<IcCancellation> {
    if x0.len() != plant.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {}, plant has {} states",
            x0.len(),
            plant.n_states()
        )));
    }
    let g = plant.transfer_function()?;
    let g_inv = g.rational_inverse()?;
    let (padded, beta) = g_inv.make_proper();
    check_filter_stable(&padded)?;
    let inverse = realize(&padded)?;
    let mut x_model = x0.clone();
    for _ in 0..beta {
        x_model = &plant.a * &x_model;
    }
    let x_inv = DVector::zeros(inverse.n_states());
    Ok(IcCancellation {
        inverse,
        x_inv,
        a: plant.a.clone(),
        c: plant.c.clone(),
        x_model,
        beta,
    })
}

/// The 2x2 coupled benchmark plant used throughout the tests:
/// entries `0.9/(z-0.2)^2`, `q/(3z+1)`, `3/(2z-1)^2`, `0.4/(z-0.6)`.
#[cfg(test)]
pub(crate) fn coupled_benchmark_plant(q: f64) -> RationalMatrix {
    use crate::sys::RationalTf;
    RationalMatrix::new(
        2,
        2,
        vec![
            RationalTf::from_coeffs(&[0.9], &[0.04, -0.4, 1.0]).unwrap(),
            RationalTf::from_coeffs(&[q], &[1.0, 3.0]).unwrap(),
            RationalTf::from_coeffs(&[3.0], &[1.0, -4.0, 4.0]).unwrap(),
            RationalTf::from_coeffs(&[0.4], &[-0.6, 1.0]).unwrap(),
        ],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sys::{singular_values, RationalTf};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe_points() -> Vec<Complex64> {
        vec![
            Complex64::new(1.3, 0.4),
            Complex64::new(-0.7, 1.1),
            Complex64::new(2.2, -0.3),
            Complex64::new(0.9, 0.9),
            Complex64::new(-1.4, -0.8),
        ]
    }

    #[test]
    fn diagonal_plant_needs_no_filtering() {
        let g = RationalMatrix::from_diag(&[
            RationalTf::from_coeffs(&[1.0], &[-0.5, 1.0]).unwrap(),
            RationalTf::from_coeffs(&[1.0], &[-0.3, 1.0]).unwrap(),
        ]);
        let dec = design_tf_diagonal(&g).unwrap();
        assert_eq!(dec.beta1, 0);
        assert_eq!(dec.beta2, 0);
        for i in 0..2 {
            for j in 0..2 {
                if i == j {
                    assert!(dec.f.get(i, j).sub(&RationalTf::one()).is_zero());
                } else {
                    assert!(dec.f.get(i, j).is_zero());
                }
            }
        }
    }

    #[test]
    fn coupled_plant_gets_unit_delay_padding() {
        let g = coupled_benchmark_plant(0.05);
        let dec = design_tf_diagonal(&g).unwrap();
        assert_eq!(dec.beta1, 1);
        assert_eq!(dec.beta2, 1);
        // W = (1/z) diag(0.9/(z-0.2)^2, 0.4/(z-0.6)).
        let w11 = RationalTf::from_coeffs(&[0.9], &[0.04, -0.4, 1.0])
            .unwrap()
            .delayed(1);
        let w22 = RationalTf::from_coeffs(&[0.4], &[-0.6, 1.0])
            .unwrap()
            .delayed(1);
        for z in probe_points() {
            assert!((dec.w.get(0, 0).eval(z) - w11.eval(z)).norm() < 1e-9);
            assert!((dec.w.get(1, 1).eval(z) - w22.eval(z)).norm() < 1e-9);
            assert!(dec.w.get(0, 1).is_zero() && dec.w.get(1, 0).is_zero());
        }
    }

    #[test]
    fn dc_gain_singular_values_match_reference() {
        let g = coupled_benchmark_plant(0.5);
        let dec = design_tf_diagonal(&g).unwrap();
        let f0c = dec.f.eval(Complex64::new(1.0, 0.0));
        let f0 = DMatrix::from_fn(2, 2, |i, j| f0c[(i, j)].re);
        let sv = singular_values(&f0);
        assert_abs_diff_eq!(sv[0], 4.51, epsilon = 0.01);
        assert_abs_diff_eq!(sv[sv.len() - 1], 0.30, epsilon = 0.01);
        assert_abs_diff_eq!(sv[0] / sv[sv.len() - 1], 14.94, epsilon = 0.01);
    }

    #[test]
    fn filters_compose_to_a_pure_delay() {
        let g = coupled_benchmark_plant(0.05);
        for dec in [design_tf_diagonal(&g).unwrap(), design_tf_identity(&g).unwrap()] {
            let delay = dec.beta1 + dec.beta2;
            for z in probe_points() {
                let prod = dec.f_inv.eval(z) * dec.f.eval(z);
                let expect = z.powi(-(delay as i32));
                for i in 0..2 {
                    for j in 0..2 {
                        let want = if i == j {
                            expect
                        } else {
                            Complex64::new(0.0, 0.0)
                        };
                        assert!(
                            (prod[(i, j)] - want).norm() < 1e-8,
                            "composition mismatch at {z}: {:?}",
                            prod
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn plant_times_filter_is_diagonal() {
        let g = coupled_benchmark_plant(0.05);
        for dec in [design_tf_diagonal(&g).unwrap(), design_tf_identity(&g).unwrap()] {
            for z in probe_points() {
                let gf = g.eval(z) * dec.f.eval(z);
                let w = dec.w.eval(z);
                let mut diag_mag = 0.0f64;
                for i in 0..2 {
                    diag_mag = diag_mag.max(gf[(i, i)].norm());
                    assert!((gf[(i, i)] - w[(i, i)]).norm() < 1e-8);
                }
                for i in 0..2 {
                    for j in 0..2 {
                        if i != j {
                            assert!(gf[(i, j)].norm() < 1e-7 * diag_mag.max(1.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn identity_design_on_identity_plant_is_trivial() {
        let g = RationalMatrix::identity(2);
        let dec = design_tf_identity(&g).unwrap();
        assert_eq!(dec.beta1, 0);
        assert_eq!(dec.beta2, 0);
        for i in 0..2 {
            assert!(dec.f.get(i, i).sub(&RationalTf::one()).is_zero());
            assert!(dec.f_inv.get(i, i).sub(&RationalTf::one()).is_zero());
        }
    }

    #[test]
    fn identity_design_pads_a_lag() {
        // G = 1/(z-0.5): F = (z-0.5)/z, W = 1/z, beta1 = 1, beta2 = 0.
        let g = RationalMatrix::new(
            1,
            1,
            vec![RationalTf::from_coeffs(&[1.0], &[-0.5, 1.0]).unwrap()],
        )
        .unwrap();
        let dec = design_tf_identity(&g).unwrap();
        assert_eq!(dec.beta1, 1);
        assert_eq!(dec.beta2, 0);
        let expect_f = RationalTf::from_coeffs(&[-0.5, 1.0], &[0.0, 1.0]).unwrap();
        assert!(dec.f.get(0, 0).sub(&expect_f).is_zero());
        let expect_w = RationalTf::from_coeffs(&[1.0], &[0.0, 1.0]).unwrap();
        assert!(dec.w.get(0, 0).sub(&expect_w).is_zero());
    }

    #[test]
    fn underdamped_variant_still_designs() {
        let mut g = coupled_benchmark_plant(0.05);
        *g.get_mut(0, 0) =
            RationalTf::from_coeffs(&[-0.49, 0.54], &[0.9, -1.85, 1.0]).unwrap();
        let dec = design_tf_identity(&g).unwrap();
        assert!(dec.f.max_pole_modulus() < 1.0 - INVERSE_STABILITY_MARGIN);
        let dec2 = design_tf_diagonal(&g).unwrap();
        assert!(dec2.f.max_pole_modulus() < 1.0 - INVERSE_STABILITY_MARGIN);
    }

    #[test]
    fn nonminimum_phase_plant_is_rejected() {
        // G = (z-1.5)/(z(z-0.5)): the inverse has a pole at 1.5.
        let g = RationalMatrix::new(
            1,
            1,
            vec![RationalTf::from_coeffs(&[-1.5, 1.0], &[0.0, -0.5, 1.0]).unwrap()],
        )
        .unwrap();
        assert!(matches!(
            design_tf_identity(&g),
            Err(Error::UnstableInverse(_))
        ));
    }

    fn siso_lag() -> LinearSystem {
        let g = RationalMatrix::new(
            1,
            1,
            vec![RationalTf::from_coeffs(&[1.0], &[-0.5, 1.0]).unwrap()],
        )
        .unwrap();
        realize(&g).unwrap()
    }

    #[test]
    fn zero_initial_state_cancels_nothing() {
        let sys = siso_lag();
        let mut ic = ic_cancellation(&sys, &DVector::zeros(1)).unwrap();
        for _ in 0..20 {
            assert_eq!(ic.next_term()[0], 0.0);
        }
    }

    #[test]
    fn scalar_lag_cancellation_is_one_shot() {
        // G = 1/(z-0.5), x0 = 1: the padded inverse yields u_ic = (-0.5, 0, ...).
        let sys = siso_lag();
        let x0 = DVector::from_element(1, 1.0);
        let mut ic = ic_cancellation(&sys, &x0).unwrap();
        assert_eq!(ic.beta(), 1);
        assert_abs_diff_eq!(ic.next_term()[0], -0.5, epsilon = 1e-12);
        for _ in 0..10 {
            assert_abs_diff_eq!(ic.next_term()[0], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cancellation_matches_zero_initial_condition_response() {
        let sys = siso_lag();
        let x0 = DVector::from_element(1, 1.0);
        let mut ic = ic_cancellation(&sys, &x0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let base: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x_a = x0.clone();
        let mut x_b = DVector::zeros(1);
        for (t, &b) in base.iter().enumerate() {
            let u_a = DVector::from_element(1, b) + ic.next_term();
            let u_b = DVector::from_element(1, b);
            let y_a = sys.output(&x_a, &u_a, None);
            let y_b = sys.output(&x_b, &u_b, None);
            if t >= ic.beta() {
                assert_abs_diff_eq!(y_a[0], y_b[0], epsilon = 1e-8);
            }
            x_a = sys.next_state(&x_a, &u_a, None);
            x_b = sys.next_state(&x_b, &u_b, None);
        }
    }

    #[test]
    fn cancellation_removes_cross_coupling() {
        // Impulse on governed channel 1 only: with the cancellation engaged,
        // output 2 carries no energy once the causal window opens.
        let g = coupled_benchmark_plant(0.05);
        let plant = realize(&g).unwrap();
        let dec = design_tf_diagonal(&g).unwrap();
        let filter = realize(&dec.f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x0 = DVector::from_fn(plant.n_states(), |_, _| rng.gen_range(-1.0..1.0));
        let mut ic = ic_cancellation(&plant, &x0).unwrap();
        let mut x_f = DVector::zeros(filter.n_states());
        let mut x_p = x0.clone();
        let mut tail_energy = 0.0;
        for t in 0..200 {
            let v = if t == 0 {
                DVector::from_row_slice(&[1.0, 0.0])
            } else {
                DVector::zeros(2)
            };
            let u = filter.output(&x_f, &v, None) + ic.next_term();
            let y = plant.output(&x_p, &u, None);
            if t >= ic.beta() {
                tail_energy += y[1] * y[1];
            }
            x_f = filter.next_state(&x_f, &v, None);
            x_p = plant.next_state(&x_p, &u, None);
        }
        assert!(
            tail_energy < 1e-10,
            "cross-coupling energy {tail_energy} after cancellation"
        );
    }
}
