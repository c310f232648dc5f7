use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

/// A command failure, classified by the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config file or class list (exit 1).
    Config(String),
    /// Library error; the code depends on its kind.
    Lib(freeseg::Error),
    /// Filesystem failure outside the library (exit 3).
    Io(PathBuf, std::io::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        use freeseg::Error as E;
        match self {
            Failure::Config(_) => 1,
            Failure::Io(..) => 3,
            Failure::Lib(e) if e.is_backend() => 2,
            Failure::Lib(E::Io { .. } | E::Image(_) | E::Png(_) | E::MissingAnnotation(_) | E::CorruptRle(_)) => 3,
            Failure::Lib(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "config error: {msg}"),
            Failure::Lib(e) => write!(f, "{e}"),
            Failure::Io(path, e) => write!(f, "i/o error on {}: {e}", path.display()),
        }
    }
}

impl From<freeseg::Error> for Failure {
    fn from(e: freeseg::Error) -> Self {
        Failure::Lib(e)
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

pub fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, contents).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

pub fn create_dir(path: &std::path::Path) -> CliResult {
    std::fs::create_dir_all(path).map_err(|e| Failure::Io(path.to_path_buf(), e))
}
