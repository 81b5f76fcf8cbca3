//! CSV ingestion with a schema sidecar. Empty cells mean "missing".

use std::path::Path;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::tabular::schema::{AttributeSchema, ColumnKind, TabularSample, Value};

pub fn read_schema(path: &Path) -> Result<AttributeSchema> {
    AttributeSchema::from_sidecar(&std::fs::read_to_string(path)?)
}

pub fn write_schema(path: &Path, schema: &AttributeSchema) -> Result<()> {
    std::fs::write(path, schema.to_sidecar())?;
    Ok(())
}

/// Writes one row per sample with a header of column names. Reals use the
/// shortest representation that parses back to the same bits.
pub fn write_samples<W: std::io::Write>(writer: W, schema: &AttributeSchema, samples: &[TabularSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(schema.columns().iter().map(|c| c.name.as_str()))?;
    for s in samples {
        let row: Vec<String> = (0..schema.len())
            .map(|c| match s.get(c) {
                None => String::new(),
                Some(Value::Real(x)) => format!("{x}"),
                Some(Value::Level(l)) => schema.column(c).levels[l].clone(),
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses rows against `schema`. Header names must match the schema order.
pub fn read_samples<R: std::io::Read>(reader: R, schema: &Arc<AttributeSchema>) -> Result<Vec<TabularSample>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let expected: Vec<&str> = schema.columns().iter().map(|c| c.name.as_str()).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(CoreError::Schema(format!(
            "csv header {:?} does not match schema {:?}",
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let mut entries = Vec::new();
        for (c, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let col = schema.column(c);
            let value = match col.kind {
                ColumnKind::Continuous => Value::Real(cell.parse::<f64>().map_err(|_| {
                    CoreError::Sample(format!("row {}: {} is not a number: {cell:?}", row + 1, col.name))
                })?),
                ColumnKind::Categorical => Value::Level(col.levels.iter().position(|l| l == cell).ok_or_else(|| {
                    CoreError::Sample(format!("row {}: unknown level {cell:?} for {}", row + 1, col.name))
                })?),
            };
            entries.push((c, value));
        }
        out.push(TabularSample::new(Arc::clone(schema), entries)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::schema::Column;

    #[test]
    fn round_trip_with_missing_cells() {
        let schema = Arc::new(
            AttributeSchema::new(vec![
                Column::continuous("x"),
                Column::categorical("c", ["a", "b"]),
            ])
            .unwrap(),
        );
        let samples = vec![
            TabularSample::new(schema.clone(), vec![(0, Value::Real(0.1 + 0.2)), (1, Value::Level(1))]).unwrap(),
            TabularSample::new(schema.clone(), vec![(1, Value::Level(0))]).unwrap(),
            TabularSample::empty(schema.clone()),
        ];
        let mut buf = Vec::new();
        write_samples(&mut buf, &schema, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,c\n"));
        let back = read_samples(buf.as_slice(), &schema).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn unknown_level_is_rejected() {
        let schema = Arc::new(AttributeSchema::new(vec![Column::categorical("c", ["a"])]).unwrap());
        assert!(read_samples("c\nz\n".as_bytes(), &schema).is_err());
    }
}
