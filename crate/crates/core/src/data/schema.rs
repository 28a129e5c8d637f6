use serde::{Deserialize, Serialize};

use super::DataError;

/// How raw cells map onto discrete levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    /// Cell text must equal one of `levels`; the level index is its position.
    Categorical { levels: Vec<String> },
    /// Edges `e₀ < e₁ < … < eₖ` define half-open bins `[eᵢ, eᵢ₊₁)`.
    Numeric { bin_edges: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
    #[serde(default)]
    pub sensitive: bool,
}

impl Attribute {
    pub fn categorical(name: &str, levels: &[&str], sensitive: bool) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Categorical { levels: levels.iter().map(|s| s.to_string()).collect() },
            sensitive,
        }
    }

    pub fn numeric(name: &str, bin_edges: &[f64], sensitive: bool) -> Self {
        Attribute { name: name.into(), kind: AttributeKind::Numeric { bin_edges: bin_edges.to_vec() }, sensitive }
    }

    pub fn level_count(&self) -> usize {
        match &self.kind {
            AttributeKind::Categorical { levels } => levels.len(),
            AttributeKind::Numeric { bin_edges } => bin_edges.len().saturating_sub(1),
        }
    }

    /// Map a raw cell to its level index.
    pub fn encode(&self, cell: &str) -> Result<usize, String> {
        let cell = cell.trim();
        match &self.kind {
            AttributeKind::Categorical { levels } => levels
                .iter()
                .position(|l| l == cell)
                .ok_or_else(|| format!("unknown level '{cell}' (expected one of {levels:?})")),
            AttributeKind::Numeric { bin_edges } => {
                let v: f64 = cell.parse().map_err(|_| format!("'{cell}' is not a number"))?;
                bin_edges
                    .windows(2)
                    .position(|w| v >= w[0] && v < w[1])
                    .ok_or_else(|| format!("value {v} outside all bins {bin_edges:?}"))
            }
        }
    }

    /// A raw cell that encodes back to `level`.
    pub fn decode(&self, level: usize) -> String {
        match &self.kind {
            AttributeKind::Categorical { levels } => levels[level].clone(),
            AttributeKind::Numeric { bin_edges } => format!("{}", bin_edges[level]),
        }
    }
}

/// Ordered attribute descriptors plus the label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
    pub label: String,
    pub classes: usize,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>, label: &str, classes: usize) -> Result<Self, DataError> {
        let s = AttributeSchema { attributes, label: label.into(), classes };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.attributes.is_empty() {
            return Err(DataError::Schema("at least one attribute is required".into()));
        }
        if self.classes < 2 {
            return Err(DataError::Schema(format!("need at least 2 classes, got {}", self.classes)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.attributes {
            if a.name == self.label {
                return Err(DataError::Schema(format!("attribute '{}' collides with the label column", a.name)));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate attribute '{}'", a.name)));
            }
            match &a.kind {
                AttributeKind::Categorical { levels } if levels.is_empty() => {
                    return Err(DataError::Schema(format!("attribute '{}' has no levels", a.name)));
                }
                AttributeKind::Numeric { bin_edges } => {
                    if bin_edges.len() < 2 {
                        return Err(DataError::Schema(format!("attribute '{}' needs at least two bin edges", a.name)));
                    }
                    if bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(DataError::Schema(format!(
                            "bin edges of '{}' must be strictly increasing",
                            a.name
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let s: AttributeSchema = serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn sensitive_attributes(&self) -> impl Iterator<Item = (usize, &Attribute)> {
        self.attributes.iter().enumerate().filter(|(_, a)| a.sensitive)
    }
}
