//! Bundled example models.

use crate::error::{Error, Result};
use crate::model::{parse_model, Model};

pub const FIXTURES: [(&str, &str); 6] = [
    ("phage-lambda", include_str!("../fixtures/phage-lambda.toml")),
    ("null-not-approx", include_str!("../fixtures/null-not-approx.toml")),
    ("kalman-not-null", include_str!("../fixtures/kalman-not-null.toml")),
    ("n1-not-sufficient", include_str!("../fixtures/n1-not-sufficient.toml")),
    ("ncc0-not-necessary", include_str!("../fixtures/ncc0-not-necessary.toml")),
    ("ncc0-not-sufficient", include_str!("../fixtures/ncc0-not-sufficient.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    FIXTURES.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    FIXTURES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<Model> {
    let src = source(name).ok_or_else(|| {
        Error::validation("fixture", format!("unknown fixture {name:?}; available: {}", names().collect::<Vec<_>>().join(", ")))
    })?;
    parse_model(src)
}
