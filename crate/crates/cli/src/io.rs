use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use treetest::model::SampleMatrix;
use treetest::nalgebra::DMatrix;

/// Data CSV: header row of variable names, then one row per observation.
pub fn read_data(path: &Path) -> Result<SampleMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let m = names.len();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: bad CSV record", path.display()))?;
        if rec.len() != m {
            bail!("{}: line {} has {} fields, expected {}", path.display(), i + 2, rec.len(), m);
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .with_context(|| format!("{}: line {}, column {}: `{}` is not a number", path.display(), i + 2, j + 1, field))?;
            values.push(v);
        }
    }
    let n = values.len() / m.max(1);
    let data = DMatrix::from_row_slice(n, m, &values);
    Ok(SampleMatrix::new(data, names)?)
}

/// Square numeric CSV, with or without a header row.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => bail!("{}: line {}: {}", path.display(), i + 1, e),
        }
    }
    let m = rows.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
        bail!("{}: matrix is not square (row {} has {} entries, {} rows)", path.display(), i + 1, r.len(), m);
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

/// 17 significant digits in scientific notation.
pub fn write_data<W: Write>(data: &SampleMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(data.names())?;
    let x = data.data();
    let mut row = Vec::with_capacity(data.m());
    for i in 0..data.n() {
        row.clear();
        row.extend((0..data.m()).map(|j| format!("{:.16e}", x[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A file when a path is given, stdout otherwise.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}
