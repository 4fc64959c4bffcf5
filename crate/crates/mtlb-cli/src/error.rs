use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Numeric(#[from] mtlb::Error),
}

impl CliError {
    /// 1 for bad input, 2 for a failure inside the numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(e) if !is_input_error(e) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> String {
        match self {
            CliError::Parse { .. } => "ParseError".into(),
            CliError::Validation(_) => "ValidationError".into(),
            CliError::Io(_) => "IoError".into(),
            CliError::Numeric(e) if is_input_error(e) => "ValidationError".into(),
            CliError::Numeric(e) => variant_name(e),
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() });
        if let CliError::Parse { line, column, .. } = self {
            v["line"] = json!(line);
            v["column"] = json!(column);
        }
        v.to_string()
    }
}

fn is_input_error(e: &mtlb::Error) -> bool {
    use mtlb::Error::*;
    matches!(
        e,
        DimensionMismatch(_)
            | NonFinite(_)
            | InvalidParameter(_)
            | AsymmetricMatrix { .. }
            | NotPositiveDefinite { .. }
            | SingularC { .. }
            | ComplexVelocities { .. }
    )
}

fn variant_name(e: &mtlb::Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_names() {
        let v = CliError::from(mtlb::Error::InvalidParameter("u0 must be positive".into()));
        assert_eq!((v.exit_code(), v.kind().as_str()), (1, "ValidationError"));
        let n = CliError::from(mtlb::Error::NotReducible { deviation: 0.3 });
        assert_eq!((n.exit_code(), n.kind().as_str()), (2, "NotReducible"));
        let b = CliError::from(mtlb::Error::Blowup { step: 3, t: 0.1 });
        assert_eq!(b.kind(), "Blowup");
        let p = CliError::Parse { line: 3, column: 7, message: "x".into() };
        let j: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!((j["line"].as_u64(), j["exit_code"].as_i64()), (Some(3), Some(1)));
    }
}
