use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemType {
    Text,
    Integer,
    Real,
    Boolean,
    Date,
}

impl SemType {
    pub fn name(self) -> &'static str {
        match self {
            SemType::Text => "text",
            SemType::Integer => "integer",
            SemType::Real => "real",
            SemType::Boolean => "boolean",
            SemType::Date => "date",
        }
    }

    pub fn from_name(name: &str) -> Option<SemType> {
        Some(match name.to_ascii_lowercase().as_str() {
            "text" | "string" | "str" => SemType::Text,
            "integer" | "int" | "bigint" => SemType::Integer,
            "real" | "float" | "double" | "numeric" => SemType::Real,
            "boolean" | "bool" => SemType::Boolean,
            "date" => SemType::Date,
            _ => return None,
        })
    }
}

impl fmt::Display for SemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: SemType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: SemType) -> Self {
        Column { name: name.into(), ty }
    }
}

/// Ordered, name-unique list of columns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Schema {
    columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("duplicate column '{0}' in schema")]
pub struct DuplicateColumn(pub String);

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self, DuplicateColumn> {
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Schema { columns })
    }

    pub fn empty() -> Self {
        Schema::default()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn push(&mut self, column: Column) -> Result<(), DuplicateColumn> {
        if self.contains(&column.name) {
            return Err(DuplicateColumn(column.name));
        }
        self.columns.push(column);
        Ok(())
    }

    /// Concatenation of two schemas; fails on a shared column name.
    pub fn concat(&self, other: &Schema) -> Result<Schema, DuplicateColumn> {
        let mut out = self.clone();
        for c in &other.columns {
            out.push(c.clone())?;
        }
        Ok(out)
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let columns = Vec::<Column>::deserialize(d)?;
        Schema::new(columns).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{}", c.name, c.ty)?;
        }
        f.write_str("]")
    }
}
