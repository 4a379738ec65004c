//! The single-method plug-in interface shared by the broker and the job
//! adapter: JDL text in, JDL (or descriptor) text out.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HelperError {
    #[error("no matching resources")]
    NoMatchingResources,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("missing sandbox file {0}")]
    MissingSandboxFile(String),
    #[error("{0}")]
    Other(String),
}

pub trait Helper: Send + Sync {
    fn name(&self) -> &str;
    fn resolve(&self, jdl: &str) -> Result<String, HelperError>;
}

/// Runs `jdl` through each helper in turn.
pub fn resolve_chain(helpers: &[&dyn Helper], jdl: &str) -> Result<String, HelperError> {
    helpers
        .iter()
        .try_fold(jdl.to_string(), |text, h| h.resolve(&text))
}
