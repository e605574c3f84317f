use serde::{Deserialize, Serialize};

/// One offending request field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] fastfashion_core::Error),

    #[error("request failed validation")]
    Validation(Vec<FieldError>),

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    Unavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type ServiceResult<T> = Result<T, ServiceError>;

impl ServiceError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError::Validation(vec![FieldError {
            field: field.into(),
            message: message.into(),
        }])
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::Core(e) => e.kind(),
            ServiceError::Validation(_) => "validation_error",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Unavailable(_) => "unavailable",
            ServiceError::Io(_) => "io_error",
        }
    }

    /// HTTP status code for this error.
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::Validation(_) => 422,
            ServiceError::Conflict(_) => 409,
            ServiceError::NotFound(_) => 404,
            ServiceError::BadRequest(_) => 400,
            ServiceError::Unavailable(_) => 503,
            ServiceError::Io(_) => 500,
            ServiceError::Core(e) => match e.kind() {
                "not_found" | "no_data" => 404,
                "duplicate_design" | "duplicate_record" => 409,
                "asset_error" => 503,
                "io_error" | "storage_error" | "numerical_error" => 500,
                _ => 422,
            },
        }
    }

    pub fn fields(&self) -> Vec<FieldError> {
        match self {
            ServiceError::Validation(f) => f.clone(),
            ServiceError::Core(fastfashion_core::Error::Range(_)) => vec![FieldError {
                field: "score".into(),
                message: self.to_string(),
            }],
            _ => Vec::new(),
        }
    }

    /// `{"error": {"kind", "message", "fields"}}`.
    pub fn body(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "fields": self.fields(),
            }
        })
    }
}
