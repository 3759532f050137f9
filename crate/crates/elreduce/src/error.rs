use std::fmt;

/// Which structural assumption of the reduction a failure points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// No positive stable background exists for the data.
    Existence,
    /// Δ + h (or the linearized operator) lost coercivity.
    Coercivity,
    /// An outer iterate left the admissible set F_k.
    Membership,
    /// Inner or outer fixed-point map failed to contract.
    Contraction,
    /// κ ≤ 0 in dimension six: no admissible balance point.
    KappaSign,
    /// Concentration scale too large for the asymptotic regime.
    Asymptotic,
    /// The negative-power truncation is still active at convergence.
    Truncation,
    /// A bracket or sign change required by the reduced map is missing.
    NoSignChange,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Existence => "no strictly stable background",
            Regime::Coercivity => "coercivity lost",
            Regime::Membership => "F_k escape",
            Regime::Contraction => "contraction failure",
            Regime::KappaSign => "kappa sign",
            Regime::Asymptotic => "asymptotic regime violated",
            Regime::Truncation => "truncation active",
            Regime::NoSignChange => "no sign change",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("regime failure ({regime}): {detail}")]
    Regime { regime: Regime, detail: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn regime(regime: Regime, detail: impl Into<String>) -> Self {
        Error::Regime { regime, detail: detail.into() }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Regime { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
