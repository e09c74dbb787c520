//! Multivariate time series container and CSV round trip.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A length-`n` series of `p`-dimensional observations, stored row major
/// (time runs over rows).
///
/// Column names are carried along so CSV files stay self-describing; all
/// numeric I/O uses full round-trip precision (17 significant digits).
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    names: Vec<String>,
    data: Vec<f64>,
    n: usize,
    p: usize,
}

impl Series {
    /// Builds a series from row-major data; `data.len()` must equal `n * p`.
    pub fn from_rows(names: Vec<String>, data: Vec<f64>, n: usize, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("series must have at least one column"));
        }
        if names.len() != p {
            return Err(Error::invalid(format!(
                "{} column names for {} columns",
                names.len(),
                p
            )));
        }
        if data.len() != n * p {
            return Err(Error::invalid(format!(
                "data length {} does not match {} rows x {} columns",
                data.len(),
                n,
                p
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series values must be finite"));
        }
        Ok(Series { names, data, n, p })
    }

    /// Single-column series with a default name.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Series::from_rows(vec!["y".to_string()], values, n, 1)
    }

    /// Column-major construction: one `Vec` per variable, all equal length.
    pub fn from_columns(names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("series must have at least one column"));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("columns must have equal length"));
        }
        let p = columns.len();
        let mut data = Vec::with_capacity(n * p);
        for t in 0..n {
            for c in columns {
                data.push(c[t]);
            }
        }
        Series::from_rows(names, data, n, p)
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.n
    }

    /// True when there are no observations.
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of variables.
    pub fn ncols(&self) -> usize {
        self.p
    }

    /// Column names.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Observation row at time `t` (0-based).
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.p..(t + 1) * self.p]
    }

    /// Value at time `t`, column `j`.
    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.data[t * self.p + j]
    }

    /// Copy of column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|t| self.get(t, j)).collect()
    }

    /// Underlying row-major buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// First `n` rows as a new series.
    pub fn head(&self, n: usize) -> Series {
        let n = n.min(self.n);
        Series {
            names: self.names.clone(),
            data: self.data[..n * self.p].to_vec(),
            n,
            p: self.p,
        }
    }

    /// Reads a series from CSV with a header row of column names.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if names.is_empty() {
            return Err(Error::Parse("CSV has no columns".to_string()));
        }
        let p = names.len();
        let mut data = Vec::new();
        let mut n = 0usize;
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != p {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    record.len(),
                    p
                )));
            }
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad number {:?}", i + 1, field)))?;
                data.push(v);
            }
            n += 1;
        }
        Series::from_rows(names, data, n, p)
    }

    /// Reads a series from a CSV file.
    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Series::read_csv(std::io::BufReader::new(file))
    }

    /// Writes the series as CSV with 17 significant digits, enough for an
    /// exact f64 round trip.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.names)?;
        let mut row = Vec::with_capacity(self.p);
        for t in 0..self.n {
            row.clear();
            for j in 0..self.p {
                row.push(format_full(self.get(t, j)));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Writes the series to a CSV file.
    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Formats a float with 17 significant digits (exact f64 round trip).
pub fn format_full(x: f64) -> String {
    format!("{:.16e}", x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let values = vec![
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            2.2250738585072014e-308,
            123456789.123456789,
        ];
        let s = Series::from_columns(
            vec!["a".into(), "b".into()],
            &[values.clone(), values.iter().map(|v| v * 7.0).collect()],
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = Series::read_csv(&buf[..]).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = Series::from_rows(vec!["y".into()], vec![1.0, 2.0, 3.0], 2, 1);
        assert!(err.is_err());
    }

    #[test]
    fn row_and_column_access_agree() {
        let s = Series::from_rows(
            vec!["a".into(), "b".into()],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            3,
            2,
        )
        .unwrap();
        assert_eq!(s.row(1), &[3.0, 4.0]);
        assert_eq!(s.column(1), vec![2.0, 4.0, 6.0]);
    }
}
