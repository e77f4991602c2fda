//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by background construction, spectral evaluation,
/// quadrature, scattering assembly, and the inverse (GLM) solve.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An off-diagonal coefficient `a(n)` must be strictly positive.
    #[error("coefficient a({index}) = {value} is not strictly positive")]
    NonPositiveCoefficient { index: i64, value: f64 },

    /// Invalid configuration or input data (shape mismatches, bad ranges, unparsable files).
    #[error("configuration error: {0}")]
    Config(String),

    /// Two spectral bands touch: the gap between them has (numerically) zero length.
    /// Closed gaps are outside the supported class of backgrounds.
    #[error("degenerate spectral gap: bands touch between {lower} and {upper}")]
    DegenerateGap { lower: f64, upper: f64 },

    /// Evaluation requested at (or too close to) a band edge, where the
    /// Floquet solutions and the spectral weight are singular.
    #[error("evaluation point {0} is at (or too close to) a band edge")]
    AtBandEdge(f64),

    /// Evaluation requested at (or too close to) a Dirichlet point where the
    /// requested Floquet branch has a pole.
    #[error("evaluation point {0} is at (or too close to) a Dirichlet pole")]
    AtDirichletPole(f64),

    /// A boundary-value point was requested off the spectrum of the model.
    #[error("real point {0} is not in the interior of any spectral band")]
    OffSpectrum(f64),

    /// A truncation or report window does not leave the required margin
    /// around the perturbation support.
    #[error("window too small: need at least {needed} sites of margin, got {got}")]
    WindowTooSmall { needed: i64, got: i64 },

    /// A quadrature rule was requested on an empty (or inverted) interval.
    #[error("cannot build a quadrature rule on an empty interval [{lower}, {upper}]")]
    EmptyBand { lower: f64, upper: f64 },

    /// A contour integrand failed the conjugation-symmetry spot check
    /// f(lower sheet) = conj(f(upper sheet)).
    #[error("contour integrand violates conjugation symmetry at lambda = {lambda} (defect {defect:.3e})")]
    SymmetryViolation { lambda: f64, defect: f64 },

    /// Stored scattering data does not match the freshly generated grid layout.
    #[error("scattering data grid mismatch: {0}")]
    GridMismatch(String),

    /// The GLM linear system is numerically singular.
    #[error("GLM system of size {size} is numerically singular")]
    SingularSystem { size: usize },

    /// The GLM diagonal radicand 1 + F(n,n) + sum came out non-positive;
    /// the data is not the scattering data of any operator in the class.
    #[error("GLM diagonal radicand at n = {n} is non-positive ({radicand:.6e})")]
    NegativeDiagonal { n: i64, radicand: f64 },

    /// Two tables or grids that must cover the same index range do not.
    #[error("range mismatch: {0}")]
    RangeMismatch(String),

    /// An adaptive quadrature refinement hit its node cap before converging.
    #[error("quadrature did not converge within the node budget (cap {nodes})")]
    QuadratureBudgetExceeded { nodes: usize },

    /// A candidate eigenvalue root coincides with a Dirichlet point and the
    /// regularized Wronskian cannot separate them.
    #[error("Wronskian root at {0} coincides with a Dirichlet point")]
    RootAtDirichletPoint(f64),

    /// A scattering-matrix sample was requested closer to a band edge than
    /// the configured safety offset.
    #[error("sample point {0} is closer to a band edge than the configured offset")]
    TooCloseToEdge(f64),

    /// The Jost-solution Wronskian nearly vanishes at this on-spectrum point:
    /// a virtual level (band-edge resonance) sits nearby and the
    /// transmission coefficient is not reliably computable.
    #[error("near-vanishing Wronskian at {0}: virtual level nearby")]
    VirtualLevelNearby(f64),

    /// An internal invariant failed (a bug guard, not a user error).
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
