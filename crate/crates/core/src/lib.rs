//! Exact VARMA(p, p) representations of dynamic factor models.
//!
//! A model `X_t = Λ f_t + ε_t` with VAR(p) factors is standardized, its
//! autocovariances are computed in closed form, and the moving-average
//! side is obtained from the innovations algorithm run in the factor
//! dimension `r` and lifted to dimension `d`.

pub mod acvf;
pub mod error;
pub mod forecast;
pub mod innovations;
pub mod linalg;
pub mod model;
pub mod nme;
pub mod simulate;
pub mod varma;

pub use acvf::{gamma_w, gamma_x, gamma_z, gamma_z_reduced, sample_acvf, var_acvf, AcvfSequence};
pub use error::{Error, Result};
pub use forecast::{forecast_full, forecast_reduced, ForecastMode, ForecastOptions, ForecastResult};
pub use innovations::{innovations_run, predict_onestep, vma_invertibility, InnovationsResult, InnovationsState};
pub use linalg::{Matrix, Vector};
pub use model::{standardize, validate, DfmModel, StandardizedDfm, ValidationReport};
pub use nme::{psi_check, solve_chiang, solve_engwerda, verify_factorization, NmeMethod, NmeProblem, NmeSolution};
pub use simulate::{simulate, SeriesSample, SimulationOptions};
pub use varma::{
    build_varma, lift_reduced, onefactor_closed_form, onefactor_correlation_demo, reduced_vma, var_component,
    verify_varma, Conversion, Method, ReducedVma, ResidualReport, VarmaModel,
};
