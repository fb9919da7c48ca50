use hypograph_core::gateway::GatewayError;
use hypograph_core::graph::{EmbeddingError, GraphError};
use hypograph_core::path::PathError;
use hypograph_core::proposal::ProposalError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("state error: {0}")]
    State(String),
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
}

impl ServiceError {
    pub fn storage(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        ServiceError::Storage(format!("{context}: {e}"))
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::Validation(_) | ServiceError::Path(PathError::Config(_)) => "validation",
            ServiceError::NotFound(_)
            | ServiceError::Graph(GraphError::UnknownNode(_))
            | ServiceError::Path(PathError::Graph(GraphError::UnknownNode(_))) => "not_found",
            ServiceError::State(_) => "state",
            ServiceError::UnsupportedMode(_) => "unsupported_mode",
            ServiceError::Path(PathError::NoPath { .. }) => "no_path",
            ServiceError::Gateway(_) | ServiceError::Embedding(EmbeddingError::Gateway(_)) => {
                "backend"
            }
            _ => "internal",
        }
    }

    /// HTTP status for the error category.
    pub fn status(&self) -> u16 {
        match self.kind() {
            "validation" => 400,
            "not_found" => 404,
            "state" => 409,
            "unsupported_mode" | "no_path" => 422,
            "backend" => 502,
            _ => 500,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories() {
        assert_eq!(ServiceError::Validation("x".into()).status(), 400);
        assert_eq!(
            ServiceError::Path(PathError::Config("alpha".into())).kind(),
            "validation"
        );
        assert_eq!(
            ServiceError::Graph(GraphError::UnknownNode("n".into())).status(),
            404
        );
        assert_eq!(ServiceError::UnsupportedMode("m".into()).status(), 422);
        assert_eq!(ServiceError::State("s".into()).status(), 409);
    }
}
