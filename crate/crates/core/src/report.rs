//! CSV output with a fixed column schema.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            // Shortest representation that parses back to the same value.
            Cell::Float(x) => format!("{x}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(b.to_string())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes a header row and `rows` as quoted-when-needed CSV with LF line endings.
pub fn write_csv<W: Write>(out: W, schema: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(schema).map_err(csv_error)?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != schema.len() {
            return Err(Error::Shape(format!("row {i} has {} cells, schema has {}", row.len(), schema.len())));
        }
        w.write_record(row.iter().map(Cell::render)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[Vec<Cell>], schema: &[&str], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), schema, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(schema: &[&str], rows: &[Vec<Cell>]) -> String {
        let mut buf = Vec::new();
        write_csv(&mut buf, schema, rows).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn header_only() {
        assert_eq!(render(&["a", "b"], &[]), "a,b\n");
    }

    #[test]
    fn quoting_and_order() {
        let s = render(&["x", "name"], &[vec![1usize.into(), "a,b".into()], vec![Cell::Float(0.5), "say \"hi\"".into()]]);
        assert_eq!(s, "x,name\n1,\"a,b\"\n0.5,\"say \"\"hi\"\"\"\n");
    }

    #[test]
    fn floats_round_trip() {
        let xs = [0.1, 1.0 / 3.0, -2.5e-17, 6.02e23, 4.7368421052631575];
        let rows: Vec<Vec<Cell>> = xs.iter().map(|&x| vec![x.into()]).collect();
        let s = render(&["v"], &rows);
        let back: Vec<f64> = s.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        for (a, b) in xs.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn ragged_row_rejected() {
        let mut buf = Vec::new();
        assert!(write_csv(&mut buf, &["a", "b"], &[vec![Cell::Int(1)]]).is_err());
    }
}
