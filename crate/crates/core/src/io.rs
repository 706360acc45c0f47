//! File formats. Every file starts with a provenance record: CSV files with a
//! `# config_hash=<hex> seed=<n>` comment line, JSON files with
//! `config_hash` and `seed` keys next to the `report`.
//!
//! Ensemble CSV: the first data row holds the grid points, every further row
//! is one sample evaluated on that grid.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::SampleEnsemble;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance { config_hash: config_hash.into(), seed }
    }

    pub fn comment(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }

    fn parse_comment(line: &str) -> Option<Self> {
        let rest = line.strip_prefix('#')?.trim();
        let mut hash = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("config_hash", v)) => hash = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => {}
            }
        }
        Some(Provenance { config_hash: hash?, seed: seed? })
    }
}

fn csv_row<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        write!(w, "{v}")?;
    }
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_ensemble<W: Write>(w: &mut W, ensemble: &SampleEnsemble, prov: &Provenance) -> Result<()> {
    writeln!(w, "{}", prov.comment())?;
    csv_row(w, ensemble.grid().iter().copied())?;
    let v = ensemble.values();
    for i in 0..v.nrows() {
        csv_row(w, (0..v.ncols()).map(|j| v[(i, j)]))?;
    }
    Ok(())
}

/// Reads an ensemble CSV; the provenance record is optional on input.
pub fn read_ensemble<R: Read>(mut r: R) -> Result<(SampleEnsemble, Option<Provenance>)> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let prov = text.lines().find(|l| l.starts_with('#')).and_then(Provenance::parse_comment);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Input(format!("ensemble row {}: {e}", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Input("ensemble file has no grid row".into()));
    }
    let grid = rows.remove(0);
    let mut ens = SampleEnsemble::from_rows(&rows, grid)?;
    if let Some(p) = &prov {
        ens = ens.with_config_hash(p.config_hash.clone());
    }
    Ok((ens, prov))
}

/// Named columns of equal length.
pub fn write_table<W: Write>(w: &mut W, header: &[&str], columns: &[&[f64]], prov: &Provenance) -> Result<()> {
    if header.len() != columns.len() {
        return Err(Error::Input("table header and columns differ in length".into()));
    }
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Input("table columns differ in length".into()));
    }
    writeln!(w, "{}", prov.comment())?;
    writeln!(w, "{}", header.join(","))?;
    for i in 0..n {
        csv_row(w, columns.iter().map(|c| c[i]))?;
    }
    Ok(())
}

/// Matrix rows as CSV rows, without a header.
pub fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>, prov: &Provenance) -> Result<()> {
    writeln!(w, "{}", prov.comment())?;
    for i in 0..m.nrows() {
        csv_row(w, (0..m.ncols()).map(|j| m[(i, j)]))?;
    }
    Ok(())
}

/// Rows of a list of vectors, e.g. posterior parameter samples.
pub fn write_rows<W: Write>(w: &mut W, rows: &[Vec<f64>], prov: &Provenance) -> Result<()> {
    writeln!(w, "{}", prov.comment())?;
    for r in rows {
        csv_row(w, r.iter().copied())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    report: &'a T,
}

pub fn write_json<W: Write, T: Serialize>(w: &mut W, report: &T, prov: &Provenance) -> Result<()> {
    let env = Envelope { config_hash: &prov.config_hash, seed: prov.seed, report };
    serde_json::to_writer_pretty(&mut *w, &env)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_round_trip() {
        let ens = SampleEnsemble::new(DMatrix::from_row_slice(2, 3, &[0.1, -2.5, 1e-300, 3.0, 0.0, 7.25]), vec![0.0, 0.5, 1.0]).unwrap();
        let prov = Provenance::new("ab12", 7);
        let mut buf = Vec::new();
        write_ensemble(&mut buf, &ens, &prov).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("# config_hash=ab12 seed=7\n0,0.5,1\n"));
        let (back, p) = read_ensemble(buf.as_slice()).unwrap();
        assert_eq!(p, Some(prov));
        assert_eq!(back.values(), ens.values());
        assert_eq!(back.config_hash(), Some("ab12"));
    }

    #[test]
    fn ragged_ensemble_rejected() {
        assert!(read_ensemble("0,1\n1,2,3\n".as_bytes()).is_err());
        assert!(read_ensemble("# nothing\n".as_bytes()).is_err());
    }

    #[test]
    fn json_envelope() {
        let mut buf = Vec::new();
        write_json(&mut buf, &vec![1.5, 2.0], &Provenance::new("ff", 3)).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["config_hash"], "ff");
        assert_eq!(v["seed"], 3);
        assert_eq!(v["report"][0], 1.5);
    }
}
