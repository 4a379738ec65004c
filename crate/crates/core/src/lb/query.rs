use serde::{Deserialize, Serialize};

use super::event::JobState;
use super::store::JobRecord;
use super::LbError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Field {
    Owner,
    State,
    Destination,
    Tag(String),
}

impl Field {
    pub fn parse(name: &str) -> Result<Field, LbError> {
        match name {
            "owner" => Ok(Field::Owner),
            "state" => Ok(Field::State),
            "destination" => Ok(Field::Destination),
            _ => match name.strip_prefix("tag:") {
                Some(t) if !t.is_empty() => Ok(Field::Tag(t.to_string())),
                _ => Err(LbError::BadQuery(format!("unknown field '{name}'"))),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            Field::Owner => "owner".into(),
            Field::State => "state".into(),
            Field::Destination => "destination".into(),
            Field::Tag(t) => format!("tag:{t}"),
        }
    }
}

/// One field with the values it may take.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub field: String,
    pub values: Vec<String>,
}

/// A conjunction of predicates, each a disjunction over its values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub predicates: Vec<Predicate>,
}

impl Query {
    pub fn new() -> Query {
        Query::default()
    }

    pub fn with<S: AsRef<str>>(mut self, field: &str, values: &[S]) -> Query {
        self.predicates.push(Predicate {
            field: field.to_string(),
            values: values.iter().map(|v| v.as_ref().to_string()).collect(),
        });
        self
    }

    /// Checks field names and state values.
    pub fn compile(&self) -> Result<Vec<(Field, Vec<String>)>, LbError> {
        if self.predicates.is_empty() {
            return Err(LbError::BadQuery("query has no predicates".into()));
        }
        self.predicates
            .iter()
            .map(|p| {
                let f = Field::parse(&p.field)?;
                if f == Field::State {
                    if let Some(bad) = p.values.iter().find(|v| JobState::parse(v).is_none()) {
                        return Err(LbError::BadQuery(format!("unknown state '{bad}'")));
                    }
                }
                Ok((f, p.values.clone()))
            })
            .collect()
    }
}

pub(crate) fn matches(compiled: &[(Field, Vec<String>)], rec: &JobRecord) -> bool {
    compiled.iter().all(|(field, values)| {
        values.iter().any(|v| match field {
            Field::Owner => rec.owner == *v,
            Field::State => JobState::parse(v) == Some(rec.state),
            Field::Destination => rec.destination.as_deref() == Some(v.as_str()),
            Field::Tag(t) => rec.user_tags.get(t) == Some(v),
        })
    })
}
