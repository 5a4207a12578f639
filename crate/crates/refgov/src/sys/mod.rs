//! System modeling: polynomials, rational transfer matrices, state-space
//! models, realization, and norms.

pub mod norms;
pub mod polynomial;
pub mod rational;
pub mod state_space;

pub use norms::{
    condition_number, freq_response, hinf_norm, l1_impulse_norm, l1_impulse_norm_tol,
    singular_values,
};
pub use polynomial::Polynomial;
pub use rational::{RationalMatrix, RationalTf};
pub use state_space::{minimal, realize, LinearSystem, Trajectory};
