//! CSV tables: comma separated, `.` decimal, one header row.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a table back gives
//! the same bits and writing it twice gives the same bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ot::{EmpiricalMeasure, TransportResult};
use crate::sde::TrajectoryEnsemble;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn cell(v: f64) -> String {
    format!("{v}")
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| cell(v)).collect());
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Column parsed as floats; `true`/`false` read as 1/0.
    pub fn column(&self, index: usize) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let s = row.get(index).map(String::as_str).unwrap_or("");
                match s {
                    "true" => Ok(1.0),
                    "false" => Ok(0.0),
                    _ => s.trim().parse::<f64>().map_err(|_| {
                        Error::invalid(format!("row {}: \"{s}\" in column \"{}\" is not a number", r + 2, self.headers[index]))
                    }),
                }
            })
            .collect()
    }

    pub fn named_column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .column_index(name)
            .ok_or_else(|| Error::invalid(format!("no column named \"{name}\"")))?;
        self.column(i)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_reader(reader: impl std::io::Read, source: &str) -> Result<Table> {
        let mut r = csv::Reader::from_reader(reader);
        let parse = |e: csv::Error| {
            let (line, column) = e.position().map_or((0, 0), |p| (p.line() as usize, 1));
            Error::Parse {
                path: source.to_string(),
                line,
                column,
                message: e.to_string(),
            }
        };
        let headers = r.headers().map_err(parse)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(parse)?;
        Ok(Table { headers, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Table> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Table::from_reader(file, &path.display().to_string())
    }
}

fn coordinate_headers(dim: usize) -> Vec<String> {
    (0..dim).map(|k| format!("x{k}")).collect()
}

/// Columns `x0..x{d-1}, weight`.
pub fn measure_table(mu: &EmpiricalMeasure) -> Table {
    let mut headers = coordinate_headers(mu.dim());
    headers.push("weight".to_string());
    let mut t = Table {
        headers,
        rows: Vec::with_capacity(mu.len()),
    };
    for (x, w) in mu.iter() {
        let mut row: Vec<String> = x.iter().map(|&v| cell(v)).collect();
        row.push(cell(w));
        t.rows.push(row);
    }
    t
}

pub fn measure_from_table(t: &Table) -> Result<EmpiricalMeasure> {
    let w = t
        .column_index("weight")
        .ok_or_else(|| Error::invalid("measure table needs a \"weight\" column"))?;
    let dim = t.headers.len() - 1;
    let columns: Vec<Vec<f64>> = (0..t.headers.len()).filter(|&i| i != w).map(|i| t.column(i)).collect::<Result<_>>()?;
    let points: Vec<f64> = (0..t.rows.len()).flat_map(|r| columns.iter().map(move |c| c[r])).collect();
    let weights = t.column(w)?;
    if weights.iter().all(|&x| x == weights[0]) && weights[0] == 1.0 / weights.len() as f64 {
        EmpiricalMeasure::uniform(dim, points)
    } else {
        EmpiricalMeasure::weighted(dim, points, weights)
    }
}

/// Columns `from, to, mass`.
pub fn plan_table(plan: &TransportResult) -> Table {
    let mut t = Table::new(&["from", "to", "mass"]);
    for tr in &plan.plan {
        t.push(vec![tr.from.to_string(), tr.to.to_string(), cell(tr.mass)]);
    }
    t
}

/// Long format: `step, t, particle, x0..x{d-1}`.
pub fn trajectory_table(ens: &TrajectoryEnsemble) -> Table {
    let mut headers = vec!["step".to_string(), "t".to_string(), "particle".to_string()];
    headers.extend(coordinate_headers(ens.dim));
    let mut t = Table {
        headers,
        rows: Vec::new(),
    };
    for (&k, state) in ens.steps.iter().zip(&ens.states) {
        for (i, x) in state.chunks(ens.dim).enumerate() {
            let mut row = vec![k.to_string(), cell(k as f64 * ens.dt), i.to_string()];
            row.extend(x.iter().map(|&v| cell(v)));
            t.rows.push(row);
        }
    }
    t
}

/// Columns `step, t, mean_sq_gap`.
pub fn gap_table(dt: f64, gaps: &[f64]) -> Table {
    let mut t = Table::new(&["step", "t", "mean_sq_gap"]);
    for (k, g) in gaps.iter().enumerate() {
        t.push(vec![k.to_string(), cell(k as f64 * dt), cell(*g)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_round_trip_is_bit_exact() {
        let mu = EmpiricalMeasure::uniform(2, vec![0.1, -2.5e-300, 1.0 / 3.0, f64::MAX]).unwrap();
        let bytes = measure_table(&mu).to_bytes();
        let back = measure_from_table(&Table::from_reader(bytes.as_slice(), "m").unwrap()).unwrap();
        assert_eq!(back, mu);
        let nu = EmpiricalMeasure::weighted(1, vec![0.0, 1.0, 2.0], vec![0.2, 0.3, 0.5]).unwrap();
        let back = measure_from_table(&Table::from_reader(measure_table(&nu).to_bytes().as_slice(), "m").unwrap()).unwrap();
        assert_eq!(back, nu);
    }

    #[test]
    fn header_and_dialect() {
        let mut t = Table::new(&["n", "value"]);
        t.push_f64(&[16.0, 0.5]);
        t.push_f64(&[32.0, f64::NAN]);
        assert_eq!(String::from_utf8(t.to_bytes()).unwrap(), "n,value\n16,0.5\n32,NaN\n");
    }

    #[test]
    fn bad_cells_are_reported() {
        let t = Table::from_reader("a,b\n1,x\n".as_bytes(), "t").unwrap();
        let err = t.named_column("b").unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(t.named_column("c").is_err());
    }

    #[test]
    fn ragged_rows_are_parse_errors() {
        assert!(matches!(Table::from_reader("a,b\n1\n".as_bytes(), "t"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn gap_table_layout() {
        let t = gap_table(0.5, &[0.0, 0.25]);
        assert_eq!(String::from_utf8(t.to_bytes()).unwrap(), "step,t,mean_sq_gap\n0,0,0\n1,0.5,0.25\n");
    }
}
