//! CSV datasets: a header of attribute names, then one category label per cell.

use std::io::{Read, Write};
use std::path::Path;

use super::schema::{AttributeSchema, Record};
use crate::error::{Error, Result};

pub fn read_records<R: Read>(reader: R, schema: &AttributeSchema) -> Result<Vec<Record>> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    if header.len() != schema.len() {
        return Err(Error::Record(format!(
            "header has {} columns, schema has {} attributes",
            header.len(),
            schema.len()
        )));
    }
    // column j holds attribute columns[j]
    let columns = header
        .iter()
        .map(|name| {
            schema
                .attribute_index(name)
                .ok_or_else(|| Error::Record(format!("unknown column {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seen = vec![false; schema.len()];
    for &k in &columns {
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::Record(format!(
                "column {:?} appears twice",
                schema.attribute(k).name
            )));
        }
    }
    let mut out = Vec::new();
    for (line, row) in csv.records().enumerate() {
        let row = row?;
        let mut values = vec![0u16; schema.len()];
        for (j, cell) in row.iter().enumerate() {
            let k = columns[j];
            let attr = schema.attribute(k);
            values[k] = attr.category_index(cell).ok_or_else(|| {
                Error::Record(format!(
                    "row {}: unknown label {cell:?} for attribute {:?}",
                    line + 1,
                    attr.name
                ))
            })? as u16;
        }
        out.push(Record::new(values));
    }
    Ok(out)
}

pub fn write_records<W: Write>(
    writer: W,
    schema: &AttributeSchema,
    records: &[Record],
) -> Result<()> {
    schema.validate_records(records)?;
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(schema.attributes().iter().map(|a| a.name.as_str()))?;
    for r in records {
        csv.write_record(
            r.values
                .iter()
                .enumerate()
                .map(|(k, &v)| schema.attribute(k).categories[v as usize].as_str()),
        )?;
    }
    csv.flush()?;
    Ok(())
}

pub fn load_records(path: impl AsRef<Path>, schema: &AttributeSchema) -> Result<Vec<Record>> {
    read_records(std::fs::File::open(path)?, schema)
}

pub fn save_records(
    path: impl AsRef<Path>,
    schema: &AttributeSchema,
    records: &[Record],
) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_records(file, schema, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::Attribute;

    fn schema() -> AttributeSchema {
        AttributeSchema::new(vec![
            Attribute::new("sex", &["m", "f"]),
            Attribute::new("age", &["young", "old"]),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let records = vec![Record::new(vec![0, 1]), Record::new(vec![1, 0])];
        let mut buf = Vec::new();
        write_records(&mut buf, &schema(), &records).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "sex,age\nm,old\nf,young\n"
        );
        assert_eq!(read_records(&buf[..], &schema()).unwrap(), records);
    }

    #[test]
    fn columns_are_matched_by_name() {
        let text = "age,sex\nold,f\n";
        let r = read_records(text.as_bytes(), &schema()).unwrap();
        assert_eq!(r, vec![Record::new(vec![1, 1])]);
    }

    #[test]
    fn rejects_unknown_labels_and_columns() {
        assert!(read_records("sex,age\nx,old\n".as_bytes(), &schema()).is_err());
        assert!(read_records("sex,height\nm,old\n".as_bytes(), &schema()).is_err());
        assert!(read_records("sex,sex\nm,f\n".as_bytes(), &schema()).is_err());
    }
}
