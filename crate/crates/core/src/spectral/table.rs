//! Plain-text coefficient tables.
//!
//! Layout: a line of metadata field names, a line of their values, the
//! column line `index,re,im`, then one row per entry.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Basis, BasisKind, CoefficientFunction};

#[derive(Clone, Debug, PartialEq)]
pub struct TableHeader {
    pub fields: Vec<(String, String)>,
}

impl TableHeader {
    pub fn new<K: Into<String>, V: ToString>(fields: impl IntoIterator<Item = (K, V)>) -> Self {
        TableHeader {
            fields: fields
                .into_iter()
                .map(|(k, v)| (k.into(), v.to_string()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse(format!("missing header field '{name}'")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let raw = self.get(name)?;
        raw.trim()
            .parse()
            .map_err(|_| Error::Parse(format!("header field '{name}' has invalid value '{raw}'")))
    }
}

pub fn write_table<W: Write>(
    out: W,
    header: &TableHeader,
    rows: &[(usize, f64, f64)],
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(header.fields.iter().map(|(k, _)| k.as_str()))?;
    w.write_record(header.fields.iter().map(|(_, v)| v.as_str()))?;
    w.write_record(["index", "re", "im"])?;
    for &(i, re, im) in rows {
        w.write_record([i.to_string(), re.to_string(), im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(input: R) -> Result<(TableHeader, Vec<(usize, f64, f64)>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = rdr.records();
    let mut next = |what: &str| -> Result<csv::StringRecord> {
        records
            .next()
            .ok_or_else(|| Error::Parse(format!("table ends before {what}")))?
            .map_err(Error::from)
    };
    let names = next("header names")?;
    let values = next("header values")?;
    if names.len() != values.len() {
        return Err(Error::Parse(
            "header names and values differ in length".into(),
        ));
    }
    let cols = next("column line")?;
    if cols.iter().map(str::trim).collect::<Vec<_>>() != ["index", "re", "im"] {
        return Err(Error::Parse("expected column line 'index,re,im'".into()));
    }
    let header = TableHeader {
        fields: names
            .iter()
            .zip(values.iter())
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect(),
    };
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Parse(format!(
                "row has {} fields, expected 3",
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("invalid number '{}'", &rec[i])))
        };
        let idx = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("invalid index '{}'", &rec[0])))?;
        rows.push((idx, num(1)?, num(2)?));
    }
    Ok((header, rows))
}

impl CoefficientFunction {
    pub(crate) fn table_rows(&self) -> Vec<(usize, f64, f64)> {
        if self.basis.kind == BasisKind::ZernikeDisk {
            self.coeffs
                .chunks(2)
                .enumerate()
                .map(|(i, p)| (i, p[0], p[1]))
                .collect()
        } else {
            self.coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| (i, c, 0.0))
                .collect()
        }
    }

    pub fn header(&self) -> TableHeader {
        TableHeader::new([
            ("basis", self.basis.kind.name().to_string()),
            ("truncation", self.basis.truncation.to_string()),
        ])
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        write_table(out, &self.header(), &self.table_rows())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let (header, rows) = read_table(input)?;
        Self::from_table(&header, &rows)
    }

    pub(crate) fn from_table(header: &TableHeader, rows: &[(usize, f64, f64)]) -> Result<Self> {
        let name = header.get("basis")?;
        let kind = BasisKind::from_name(name)
            .ok_or_else(|| Error::Parse(format!("unknown basis '{name}'")))?;
        let basis = Basis::new(kind, header.get_parsed("truncation")?)?;
        let complex = kind == BasisKind::ZernikeDisk;
        let slots = if complex {
            basis.dim() / 2
        } else {
            basis.dim()
        };
        if rows.len() != slots {
            return Err(Error::DimensionMismatch {
                expected: slots,
                got: rows.len(),
            });
        }
        let mut coeffs = vec![0.0; basis.dim()];
        for &(i, re, im) in rows {
            if i >= slots {
                return Err(Error::Parse(format!("row index {i} out of range")));
            }
            if complex {
                coeffs[2 * i] = re;
                coeffs[2 * i + 1] = im;
            } else {
                if im != 0.0 {
                    return Err(Error::Parse(format!(
                        "nonzero imaginary part at index {i} for a real basis"
                    )));
                }
                coeffs[i] = re;
            }
        }
        CoefficientFunction::new(basis, coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_real_and_complex() {
        let f = CoefficientFunction::new(Basis::cosine(3), vec![1.0, -0.25, 1e-17, 3.5]).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("basis,truncation\ncosine_symmetric,3\nindex,re,im\n"));
        assert_eq!(CoefficientFunction::read_from(buf.as_slice()).unwrap(), f);

        let b = Basis::zernike(2);
        let g = CoefficientFunction::new(b, (0..b.dim()).map(|i| i as f64 * 0.1 - 0.3).collect())
            .unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(CoefficientFunction::read_from(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn rejects_short_tables() {
        let text = "basis,truncation\nfourier_periodic,2\nindex,re,im\n0,1,0\n";
        assert!(matches!(
            CoefficientFunction::read_from(text.as_bytes()),
            Err(Error::DimensionMismatch {
                expected: 5,
                got: 1
            })
        ));
    }
}
