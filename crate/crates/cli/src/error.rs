use std::fmt;

/// Exit status categories. The numeric values are part of the interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Failure = 1,
    Usage = 2,
    MissingCheckpoint = 3,
    MalformedDataset = 4,
    UnwritableOutput = 5,
}

impl ErrorKind {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn label(self) -> &'static str {
        match self {
            ErrorKind::Failure => "failure",
            ErrorKind::Usage => "usage",
            ErrorKind::MissingCheckpoint => "checkpoint",
            ErrorKind::MalformedDataset => "dataset",
            ErrorKind::UnwritableOutput => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn dataset(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::MalformedDataset, message)
    }

    pub fn code(&self) -> i32 {
        self.kind.code()
    }

    pub fn with_context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind.label(), self.message)
    }
}

impl std::error::Error for CliError {}

fn core_kind(e: &headswap_core::Error) -> ErrorKind {
    use headswap_core::Error as E;
    match e {
        E::Malformed { .. } | E::Image { .. } => ErrorKind::MalformedDataset,
        E::InClip { source, .. } => core_kind(source),
        _ => ErrorKind::Failure,
    }
}

impl From<headswap_core::Error> for CliError {
    fn from(e: headswap_core::Error) -> Self {
        CliError::new(core_kind(&e), e.to_string())
    }
}

impl From<headswap_diffusion::Error> for CliError {
    fn from(e: headswap_diffusion::Error) -> Self {
        use headswap_diffusion::Error as E;
        let kind = match &e {
            E::Checkpoint { .. } => ErrorKind::MissingCheckpoint,
            E::Core(c) => core_kind(c),
            _ => ErrorKind::Failure,
        };
        CliError::new(kind, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
