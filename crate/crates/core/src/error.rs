use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown {kind} `{name}`; expected one of: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("{what} = {value} is out of domain: {bound}")]
    Domain {
        what: &'static str,
        value: f64,
        bound: &'static str,
    },

    #[error("missing moment {0}")]
    MissingMoment(&'static str),

    #[error("h(x, mu) is not finite at x = {x} (mu = {mu})")]
    NonFinite { x: f64, mu: f64 },

    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn unknown(kind: &'static str, name: &str, valid: &[&str]) -> Error {
    Error::UnknownName {
        kind,
        name: name.to_string(),
        valid: valid.join(", "),
    }
}

pub(crate) fn domain(what: &'static str, value: f64, bound: &'static str) -> Error {
    Error::Domain { what, value, bound }
}
