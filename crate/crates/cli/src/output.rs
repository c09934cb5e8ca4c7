//! Output sinks. Files are written to a temporary sibling and renamed into
//! place on [`Output::commit`], so a failed command never leaves a partial
//! file behind.

use std::fs;
use std::io::{self, BufWriter, Stdout, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::CliError;

pub struct Output {
    inner: Inner,
}

enum Inner {
    Stdout(BufWriter<Stdout>),
    File {
        writer: BufWriter<NamedTempFile>,
        dest: PathBuf,
    },
}

impl Output {
    /// A file sink at `path`, or stdout for `None` and `-`.
    pub fn create(path: Option<&Path>) -> Result<Output, CliError> {
        match path {
            None => Ok(Output::stdout()),
            Some(p) if p == Path::new("-") => Ok(Output::stdout()),
            Some(p) => Output::file(p),
        }
    }

    pub fn stdout() -> Output {
        Output {
            inner: Inner::Stdout(BufWriter::new(io::stdout())),
        }
    }

    pub fn file(dest: &Path) -> Result<Output, CliError> {
        let dir = match dest.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Output {
            inner: Inner::File {
                writer: BufWriter::new(tmp),
                dest: dest.to_owned(),
            },
        })
    }

    pub fn commit(self) -> Result<(), CliError> {
        match self.inner {
            Inner::Stdout(mut w) => w.flush().map_err(|e| CliError::io("<stdout>", e)),
            Inner::File { writer, dest } => {
                let tmp = writer
                    .into_inner()
                    .map_err(|e| CliError::io(&dest, e.into_error()))?;
                tmp.persist(&dest).map_err(|e| CliError::io(&dest, e.error))?;
                Ok(())
            }
        }
    }
}

impl Write for Output {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match &mut self.inner {
            Inner::Stdout(w) => w.write(buf),
            Inner::File { writer, .. } => writer.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match &mut self.inner {
            Inner::Stdout(w) => w.flush(),
            Inner::File { writer, .. } => writer.flush(),
        }
    }
}

/// Writes a whole file atomically from an in-memory producer.
pub fn write_file_with<F>(path: &Path, produce: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Output) -> Result<(), CliError>,
{
    let mut out = Output::file(path)?;
    produce(&mut out)?;
    out.commit()
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
