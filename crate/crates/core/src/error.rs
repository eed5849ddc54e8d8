use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh for category {category} is not watertight ({} boundary edges, first: {:?})", edges.len(), edges.first())]
    NotWatertight { category: usize, edges: Vec<(u32, u32)> },
    #[error("mesh for category {0} is empty")]
    EmptyCategory(usize),
    #[error("invalid category set: {0}")]
    Categories(String),
    #[error("all faces of category {0} are degenerate")]
    DegenerateMesh(usize),
    #[error("archive format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("optimization diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
