use std::path::Path;

use super::LabeledDataset;
use crate::error::{QpplError, Result};
use crate::scalar::Scalar;

/// Column layout of a feature CSV. Every column other than the label and id
/// columns is a feature; with `channels > 1` the feature columns are read
/// channel-major (the first `M` columns are channel 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub label_column: String,
    pub id_column: Option<String>,
    pub channels: usize,
}

impl CsvSchema {
    pub fn new(label_column: impl Into<String>) -> Self {
        Self { label_column: label_column.into(), id_column: None, channels: 1 }
    }
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledDataset<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    read_csv(&mut reader, schema)
}

pub(crate) fn read_csv<T: Scalar, R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    schema: &CsvSchema,
) -> Result<LabeledDataset<T>> {
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let label_col = find(&schema.label_column)
        .ok_or_else(|| QpplError::SchemaMismatch(format!("missing label column `{}`", schema.label_column)))?;
    let id_col = match &schema.id_column {
        Some(name) => Some(find(name).ok_or_else(|| QpplError::SchemaMismatch(format!("missing id column `{name}`")))?),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_col && Some(c) != id_col).collect();
    if schema.channels == 0 || feature_cols.is_empty() || feature_cols.len() % schema.channels != 0 {
        return Err(QpplError::SchemaMismatch(format!(
            "{} feature columns cannot be split into {} channels",
            feature_cols.len(),
            schema.channels
        )));
    }
    let width = feature_cols.len() / schema.channels;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let row = row + 1;
        if record.len() != headers.len() {
            return Err(QpplError::SchemaMismatch(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        for &c in &feature_cols {
            let cell = record[c].trim();
            let value: f64 = cell.parse().map_err(|_| QpplError::ParseError {
                row,
                col: c + 1,
                msg: format!("`{cell}` is not a number"),
            })?;
            features.push(T::of(value));
        }
        labels.push(record[label_col].to_string());
        ids.push(match id_col {
            Some(c) => record[c].to_string(),
            None => (row - 1).to_string(),
        });
    }
    LabeledDataset::new(features, schema.channels, width, labels, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, schema: &CsvSchema) -> Result<LabeledDataset<f64>> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        read_csv(&mut reader, schema)
    }

    #[test]
    fn three_rows() {
        let ds = parse("a,b,label\n1,2,x\n3,4,y\n5,6,x\n", &CsvSchema::new("label")).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.width(), 2);
        assert_eq!(ds.row(2), &[5.0, 6.0]);
        assert_eq!(ds.ids(), &["0", "1", "2"]);
    }

    #[test]
    fn missing_label_column() {
        let err = parse("a,b\n1,2\n", &CsvSchema::new("label")).unwrap_err();
        assert!(matches!(err, QpplError::SchemaMismatch(_)));
    }

    #[test]
    fn non_numeric_cell_reports_coordinates() {
        let err = parse(
            "id,a,b,label\ns0,1,2,x\ns1,3,oops,y\n",
            &CsvSchema { label_column: "label".into(), id_column: Some("id".into()), channels: 1 },
        )
        .unwrap_err();
        match err {
            QpplError::ParseError { row, col, .. } => assert_eq!((row, col), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn twelve_channel_layout() {
        let m = 5;
        let header: Vec<String> = (0..12 * m).map(|i| format!("f{i}")).chain(["label".to_string()]).collect();
        let mut text = header.join(",") + "\n";
        for r in 0..4 {
            let row: Vec<String> = (0..12 * m).map(|i| (i + 100 * r).to_string()).collect();
            text += &(row.join(",") + ",k\n");
        }
        let schema = CsvSchema { label_column: "label".into(), id_column: None, channels: 12 };
        let ds = parse(&text, &schema).unwrap();
        assert_eq!((ds.len(), ds.channels(), ds.width()), (4, 12, m));
        assert_eq!(ds.channel(1, 3), &[115.0, 116.0, 117.0, 118.0, 119.0]);
    }

    #[test]
    fn indivisible_channels_rejected() {
        let schema = CsvSchema { label_column: "label".into(), id_column: None, channels: 2 };
        assert!(matches!(parse("a,b,c,label\n1,2,3,x\n", &schema), Err(QpplError::SchemaMismatch(_))));
    }
}
