use thiserror::Error;

/// Error type shared by the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("user {0} has a Gaussian input law; exact enumeration requires discrete inputs")]
    GaussianInputPresent(usize),

    #[error("user {0} has a discrete input law; closed forms require Gaussian inputs")]
    NonGaussianInput(usize),

    #[error("joint support needs {required} tuples, exceeding the enumeration cap of {cap}")]
    EnumerationCapExceeded { required: u128, cap: u64 },

    #[error("unknown constellation name `{0}` (expected one of: bpsk, qpsk, qam16)")]
    UnknownConstellation(String),

    #[error(
        "finite-difference step {step} is invalid at snr {snr}: rel_step must lie in (0, 0.5) so both evaluation points stay positive"
    )]
    StepTooLarge { snr: f64, step: f64 },

    #[error("quadrature grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),

    #[error("matrix is not Hermitian positive definite")]
    NotPositiveDefinite,

    #[error("matrix shape error: {0}")]
    Shape(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
