use std::fmt::Display;
use std::process::ExitCode;

use ntkms_core::dsl::DslError;
use ntkms_core::kms::KmsError;
use ntkms_core::nt::NtError;
use ntkms_core::verify::VerifyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Budget(String),
    #[error("one or more checks failed")]
    Failed,
}

impl AppError {
    pub fn usage(e: impl Display) -> Self {
        AppError::Usage(e.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            AppError::Failed => ExitCode::from(1),
            AppError::Usage(_) => ExitCode::from(2),
            AppError::Budget(_) => ExitCode::from(3),
        }
    }
}

impl From<NtError> for AppError {
    fn from(e: NtError) -> Self {
        match e {
            NtError::BudgetExceeded { .. } => AppError::Budget(e.to_string()),
            other => AppError::usage(other),
        }
    }
}

impl From<KmsError> for AppError {
    fn from(e: KmsError) -> Self {
        match e {
            KmsError::Nt(nt) => nt.into(),
            other => AppError::usage(other),
        }
    }
}

impl From<VerifyError> for AppError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Nt(nt) => nt.into(),
            VerifyError::Kms(k) => k.into(),
            other => AppError::usage(other),
        }
    }
}

impl From<DslError> for AppError {
    fn from(e: DslError) -> Self {
        match e {
            DslError::Eval(nt) => nt.into(),
            other => AppError::usage(other),
        }
    }
}
