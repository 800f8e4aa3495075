//! Certificate reports: a TOML document recording the input, the outcome of
//! the certification pipeline and everything needed to re-check it.

use crate::system::{SystemFile, SystemFileError};
use lvcert_core::certificates::{
    check_eigenvector_conditions, check_theorem1, check_volterra_lyapunov, CertificateError,
    CheckOutcome,
};
use lvcert_core::search::{SearchBudget, Stage, StageSummary};
use lvcert_core::{Certificate, CertificateFamily, Matrix, Witness};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "lvcert";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed report: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("cannot serialize report: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error(transparent)]
    System(#[from] SystemFileError),
    #[error("report input is unusable: {0}")]
    Input(String),
    #[error("report has no certificate")]
    NoCertificate,
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Certified,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub seed: u64,
    pub status: ReportStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    /// `y*` in the original coordinates.
    pub equilibrium: Vec<f64>,
    /// Rows of the normalized matrix `A`.
    pub normalized_matrix: Vec<Vec<f64>>,
    pub budget: SearchBudget,
    pub input: SystemFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    #[serde(default)]
    pub stages: Vec<StageSummary>,
}

impl CertificateReport {
    pub fn to_toml(&self) -> Result<String, ReportError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ReportError> {
        let report: Self = toml::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(ReportError::Schema(report.schema_version));
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        std::fs::write(path, self.to_toml()?).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Normalized matrix recomputed from the echoed input, so that a report
    /// cannot smuggle in a different `A`.
    pub fn matrix(&self) -> Result<Matrix, ReportError> {
        let loaded = self.input.load()?;
        let (a, _) = loaded
            .normalized()
            .map_err(|e| ReportError::Input(e.to_string()))?;
        Ok(a)
    }

    /// Re-runs the check matching the recorded certificate family.
    pub fn verify(&self) -> Result<CheckOutcome, ReportError> {
        let cert = self.certificate.as_ref().ok_or(ReportError::NoCertificate)?;
        let a = self.matrix()?;
        verify_certificate(&a, cert)
    }
}

/// Re-checks a certificate against `A` from its recorded parameters.
pub fn verify_certificate(a: &Matrix, cert: &Certificate) -> Result<CheckOutcome, ReportError> {
    let outcome = match cert.family {
        CertificateFamily::VolterraLyapunov => match &cert.witness {
            Witness::VolterraLyapunov { h } => check_volterra_lyapunov(a, h)?,
            _ => return Err(ReportError::Input("witness does not match family".into())),
        },
        CertificateFamily::Eigenvector => check_eigenvector_conditions(a)?,
        CertificateFamily::Theorem1A | CertificateFamily::Theorem1B | CertificateFamily::Theorem1C => {
            let params = cert
                .params
                .as_ref()
                .ok_or_else(|| ReportError::Input("certificate has no parameters".into()))?;
            check_theorem1(a, params, &cert.invariant_set)?
        }
    };
    Ok(outcome)
}
