use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{AttributeSchema, DataError, Subset};

/// Records of discrete level indices with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    schema: Arc<AttributeSchema>,
    records: Vec<Vec<usize>>,
    labels: Vec<usize>,
}

impl TabularDataset {
    pub fn new(schema: Arc<AttributeSchema>, records: Vec<Vec<usize>>, labels: Vec<usize>) -> Result<Self, DataError> {
        if records.len() != labels.len() {
            return Err(DataError::Invalid(format!("{} records but {} labels", records.len(), labels.len())));
        }
        for (i, (r, &y)) in records.iter().zip(&labels).enumerate() {
            if r.len() != schema.attributes.len() {
                return Err(DataError::Invalid(format!("record {i} has {} attributes", r.len())));
            }
            for (a, &v) in schema.attributes.iter().zip(r) {
                if v >= a.level_count() {
                    return Err(DataError::Invalid(format!("record {i}: level {v} out of range for '{}'", a.name)));
                }
            }
            if y >= schema.classes {
                return Err(DataError::Invalid(format!("record {i}: label {y} out of range")));
            }
        }
        Ok(TabularDataset { schema, records, labels })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn shared_schema(&self) -> Arc<AttributeSchema> {
        Arc::clone(&self.schema)
    }

    pub fn records(&self) -> &[Vec<usize>] {
        &self.records
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Subset for TabularDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn subset(&self, indices: &[usize]) -> Self {
        TabularDataset {
            schema: Arc::clone(&self.schema),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// One unmappable cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellError {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub column: String,
    pub message: String,
}

impl fmt::Display for CellError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}, column '{}': {}", self.row, self.column, self.message)
    }
}

/// Parse CSV text against a schema. All bad cells are reported together.
pub fn parse_tabular(csv_text: &str, schema: Arc<AttributeSchema>) -> Result<TabularDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let column_of = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let attr_cols = schema
        .attributes
        .iter()
        .map(|a| column_of(&a.name))
        .collect::<Result<Vec<_>, _>>()?;
    let label_col = column_of(&schema.label)?;

    let mut records = Vec::new();
    let mut labels = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| DataError::Csv(format!("row {row_no}: {e}")))?;
        let mut record = Vec::with_capacity(attr_cols.len());
        let mut ok = true;
        for (a, &col) in schema.attributes.iter().zip(&attr_cols) {
            match a.encode(row.get(col).unwrap_or("")) {
                Ok(v) => record.push(v),
                Err(message) => {
                    ok = false;
                    errors.push(CellError { row: row_no, column: a.name.clone(), message });
                }
            }
        }
        let label_cell = row.get(label_col).unwrap_or("").trim();
        match label_cell.parse::<usize>() {
            Ok(y) if y < schema.classes => labels.push(y),
            _ => {
                ok = false;
                errors.push(CellError {
                    row: row_no,
                    column: schema.label.clone(),
                    message: format!("label '{label_cell}' is not a class index below {}", schema.classes),
                });
            }
        }
        if ok {
            records.push(record);
        } else if labels.len() > records.len() {
            labels.pop();
        }
    }
    if !errors.is_empty() {
        return Err(DataError::InvalidCells(errors));
    }
    TabularDataset::new(schema, records, labels)
}

pub fn load_tabular(csv_path: &Path, schema_path: &Path) -> Result<TabularDataset, DataError> {
    let schema_text = fs::read_to_string(schema_path).map_err(|e| DataError::io(schema_path, e))?;
    let schema = Arc::new(AttributeSchema::from_json(&schema_text)?);
    let csv_text = fs::read_to_string(csv_path).map_err(|e| DataError::io(csv_path, e))?;
    parse_tabular(&csv_text, schema)
}

/// Render a dataset as CSV that [`parse_tabular`] maps back to the same
/// indices.
pub fn to_csv(dataset: &TabularDataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let schema = dataset.schema();
    let mut header: Vec<&str> = schema.attributes.iter().map(|a| a.name.as_str()).collect();
    header.push(&schema.label);
    w.write_record(&header).expect("in-memory write");
    for (r, y) in dataset.records().iter().zip(dataset.labels()) {
        let mut row: Vec<String> = schema.attributes.iter().zip(r).map(|(a, &v)| a.decode(v)).collect();
        row.push(y.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
}

pub fn write_tabular(dataset: &TabularDataset, csv_path: &Path, schema_path: &Path) -> Result<(), DataError> {
    fs::write(schema_path, dataset.schema().to_json()).map_err(|e| DataError::io(schema_path, e))?;
    fs::write(csv_path, to_csv(dataset)).map_err(|e| DataError::io(csv_path, e))
}

/// Marginal level distributions of sensitive attributes, keyed by attribute
/// index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriorTable {
    entries: BTreeMap<usize, Vec<f64>>,
}

impl PriorTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a prior; it must be strictly positive and sum to 1 within 1e-9.
    pub fn insert(&mut self, attr: usize, prior: Vec<f64>) -> Result<(), DataError> {
        if prior.is_empty() || prior.iter().any(|&p| !(p > 0.0)) {
            return Err(DataError::Invalid(format!("prior for attribute {attr} must be strictly positive")));
        }
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::Invalid(format!("prior for attribute {attr} sums to {sum}")));
        }
        self.entries.insert(attr, prior);
        Ok(())
    }

    pub fn get(&self, attr: usize) -> Option<&[f64]> {
        self.entries.get(&attr).map(Vec::as_slice)
    }

    /// Priors for every sensitive attribute of the training split.
    pub fn estimate(train: &TabularDataset) -> PriorTable {
        let mut table = PriorTable::new();
        for (i, _) in train.schema().sensitive_attributes() {
            let prior = estimate_priors(train, i).expect("sensitive attribute exists");
            table.insert(i, prior).expect("smoothed priors are valid");
        }
        table
    }
}

/// Add-one-smoothed level frequencies of attribute `attr`.
pub fn estimate_priors(train: &TabularDataset, attr: usize) -> Result<Vec<f64>, DataError> {
    let a = train
        .schema()
        .attributes
        .get(attr)
        .ok_or_else(|| DataError::UnknownAttribute(attr.to_string()))?;
    let k = a.level_count();
    let mut counts = vec![1.0; k];
    for r in train.records() {
        counts[r[attr]] += 1.0;
    }
    let total = (train.len() + k) as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Attribute;

    fn smoke_schema() -> Arc<AttributeSchema> {
        Arc::new(
            AttributeSchema::new(
                vec![
                    Attribute::categorical("smoke", &["no", "yes"], true),
                    Attribute::numeric("age", &[0.0, 40.0, 60.0, 120.0], false),
                ],
                "label",
                2,
            )
            .unwrap(),
        )
    }

    #[test]
    fn categorical_cells_map_to_schema_order() {
        let text = "smoke,age,label\nyes,30,1\nno,45,0\nyes,70,1\n";
        let ds = parse_tabular(text, smoke_schema()).unwrap();
        assert_eq!(ds.records(), &[vec![1, 0], vec![0, 1], vec![1, 2]]);
        assert_eq!(ds.labels(), &[1, 0, 1]);
    }

    #[test]
    fn reports_every_bad_cell_with_coordinates() {
        let text = "smoke,age,label\nyes,250,1\nmaybe,30,0\nno,30,5\n";
        match parse_tabular(text, smoke_schema()) {
            Err(DataError::InvalidCells(errs)) => {
                assert_eq!(errs.len(), 3);
                assert_eq!((errs[0].row, errs[0].column.as_str()), (1, "age"));
                assert!(errs[0].message.contains("outside all bins"));
                assert_eq!((errs[1].row, errs[1].column.as_str()), (2, "smoke"));
                assert_eq!((errs[2].row, errs[2].column.as_str()), (3, "label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_reported() {
        let err = parse_tabular("smoke,label\nyes,1\n", smoke_schema()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "age"));
    }

    #[test]
    fn empty_body_is_an_empty_dataset() {
        let ds = parse_tabular("smoke,age,label\n", smoke_schema()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let text = "smoke,age,label\nyes,30,1\nno,45,0\nyes,70,1\n";
        let ds = parse_tabular(text, smoke_schema()).unwrap();
        assert_eq!(parse_tabular(&to_csv(&ds), smoke_schema()).unwrap(), ds);
    }

    #[test]
    fn add_one_smoothing() {
        let schema = Arc::new(AttributeSchema::new(vec![Attribute::categorical("s", &["a", "b"], true)], "y", 2).unwrap());
        let mut records = vec![vec![0]; 30];
        records.extend(vec![vec![1]; 70]);
        let ds = TabularDataset::new(schema.clone(), records, vec![0; 100]).unwrap();
        let p = estimate_priors(&ds, 0).unwrap();
        assert_eq!(p, vec![31.0 / 102.0, 71.0 / 102.0]);

        let ds = TabularDataset::new(schema.clone(), vec![vec![0]; 10], vec![0; 10]).unwrap();
        assert_eq!(estimate_priors(&ds, 0).unwrap(), vec![11.0 / 12.0, 1.0 / 12.0]);

        let empty = TabularDataset::new(schema, vec![], vec![]).unwrap();
        assert_eq!(estimate_priors(&empty, 0).unwrap(), vec![0.5, 0.5]);
        assert!(estimate_priors(&empty, 3).is_err());
    }

    #[test]
    fn prior_table_rejects_zero_mass() {
        let mut t = PriorTable::new();
        assert!(t.insert(0, vec![1.0, 0.0]).is_err());
        assert!(t.insert(0, vec![0.5, 0.6]).is_err());
        t.insert(0, vec![0.25, 0.75]).unwrap();
        assert_eq!(t.get(0), Some(&[0.25, 0.75][..]));
    }
}
