use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch at node {node}: {detail}")]
    Shape { node: usize, detail: String },

    #[error("clip too short: has {t_full} segments, {t} requested")]
    ClipTooShort { t_full: usize, t: usize },

    #[error("missing modality {0}")]
    MissingModality(char),

    #[error("non-finite value at stage `{0}`")]
    NonFinite(&'static str),

    #[error("scene has {m} clips but the inference cap is {cap}; raise the cap to order it")]
    SceneTooLarge { m: usize, cap: usize },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: checksum mismatch")]
    Checksum { path: PathBuf },

    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
