//! Direct and inverse scattering for steplike Jacobi operators whose
//! coefficients approach two (possibly different) periodic finite-gap
//! backgrounds on the two half axes.
//!
//! The crate builds the spectral theory of the two periodic backgrounds
//! (band structure, Floquet solutions on the two-sheeted spectral surface,
//! Dirichlet points, spectral weights), computes the scattering data of a
//! steplike perturbation (Jost solutions, transmission and reflection
//! coefficients, discrete eigenvalues with norming constants, virtual
//! levels), validates the data against the identities it must satisfy, and
//! solves the inverse problem through the discrete Gelfand–Levitan–
//! Marchenko equations, reconstructing the coefficients from each side.

pub mod background;
pub mod dd;
pub mod direct;
pub mod error;
pub mod glm;
pub mod operator;
pub mod quadrature;
pub mod report;

pub use error::{Error, Result};

/// Run-wide numerical configuration shared by the direct and inverse stages.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    /// Contour nodes per band (or per band piece) for scattering grids.
    pub quad_nodes: usize,
    /// Points per band for the uniform presentation grids (CSV output).
    pub grid_points: usize,
    /// Number of unknowns in each GLM row solve.
    pub glm_window: usize,
    /// Inclusive site range over which kernels and coefficients are reported.
    pub report_range: (i64, i64),
    /// General relative tolerance for validation checks.
    pub tol: f64,
    /// Relative clearance (times the spectrum diameter) kept between sample
    /// points and band edges.
    pub edge_offset: f64,
    /// Rayon worker threads (0 = library default).
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            quad_nodes: 256,
            grid_points: 200,
            glm_window: 80,
            report_range: (-20, 20),
            tol: 1e-10,
            edge_offset: 1e-8,
            workers: 0,
        }
    }
}
