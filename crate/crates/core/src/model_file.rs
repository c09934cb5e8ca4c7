//! Format/version header shared by every model file.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VersionError {
    #[error("expected a {expected} file, found format {found:?}")]
    WrongFormat { expected: String, found: String },
    #[error("unparseable version {0:?}")]
    BadVersion(String),
    #[error("{format} major version {found} is incompatible with supported version {supported}")]
    MajorMismatch {
        format: String,
        found: u32,
        supported: u32,
    },
}

fn major(version: &str) -> Result<u32, VersionError> {
    version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| VersionError::BadVersion(version.to_owned()))
}

/// Accepts any file of the right format whose major version matches ours.
pub fn check(
    expected_format: &str,
    supported_version: &str,
    format: &str,
    version: &str,
) -> Result<(), VersionError> {
    if format != expected_format {
        return Err(VersionError::WrongFormat {
            expected: expected_format.to_owned(),
            found: format.to_owned(),
        });
    }
    let supported = major(supported_version)?;
    let found = major(version)?;
    if found != supported {
        return Err(VersionError::MajorMismatch {
            format: format.to_owned(),
            found,
            supported,
        });
    }
    Ok(())
}
