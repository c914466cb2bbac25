use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    /// At or below intrinsic value.
    Lower,
    /// At or above the forward (call) or discounted strike (put).
    Upper,
}

impl std::fmt::Display for BoundSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundSide::Lower => write!(f, "lower (intrinsic)"),
            BoundSide::Upper => write!(f, "upper"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("riccati solver step underflow at u={u}, tau={tau}")]
    RiccatiStepUnderflow { u: f64, tau: f64 },
    #[error("jump transform pole at u={u}, tau={tau}")]
    JumpPole { u: f64, tau: f64 },
    #[error("(u={u}, tau={tau}) is not on the coefficient grid")]
    OffGrid { u: f64, tau: f64 },
    #[error("inadmissible parameters: {}", .0.join("; "))]
    Inadmissible(Vec<String>),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("price outside no-arbitrage bounds ({0} side)")]
    Bounds(BoundSide),
    #[error("implied vol did not converge")]
    ImpliedVol,
    #[error("no call/put pair to extract a forward")]
    MissingForward,
    #[error("only {0} knots, at least 4 required")]
    TooFewKnots(usize),
    #[error("negative total variance at m={0}")]
    Arbitrage(f64),
    #[error("surface evaluation failed at m={m}, tau={tau}")]
    Surface { m: f64, tau: f64 },
    #[error("near-zero CCF modulus at u={0}")]
    NearZeroModulus(f64),
    #[error("all singular values below threshold")]
    DegenerateBlock,
    #[error("rank of Z'H^-Z is {observed}, expected {expected}")]
    Rank { observed: usize, expected: usize },
    #[error("non-finite likelihood at date index {0}")]
    NonFinite(usize),
    #[error("COS expansion not converged: tail coefficient {0:e}")]
    CosOrder(f64),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
