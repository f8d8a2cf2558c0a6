//! CSV datasets with a JSON sidecar manifest.
//!
//! Dense rows hold the `p·q` entries of `M` in column-major order (headers
//! `m{i}_{j}`) followed by `z`. Factored rows hold `x0..x{p-1}`,
//! `y0..y{q-1}`, `z`. The manifest is `{"p": .., "q": .., "factored": ..}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Covariate, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub p: usize,
    pub q: usize,
    pub factored: bool,
}

impl Manifest {
    pub fn header(&self) -> Vec<String> {
        let mut h = Vec::new();
        if self.factored {
            h.extend((0..self.p).map(|i| format!("x{i}")));
            h.extend((0..self.q).map(|j| format!("y{j}")));
        } else {
            for j in 0..self.q {
                for i in 0..self.p {
                    h.push(format!("m{i}_{j}"));
                }
            }
        }
        h.push("z".into());
        h
    }

    fn width(&self) -> usize {
        if self.factored {
            self.p + self.q + 1
        } else {
            self.p * self.q + 1
        }
    }
}

/// Sidecar path used when none is given: `data.csv` → `data.json`.
pub fn default_manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if m.p == 0 || m.q == 0 {
        return Err(Error::invalid("manifest dimensions must be positive"));
    }
    Ok(m)
}

pub fn read_dataset(csv_path: &Path, manifest_path: Option<&Path>) -> Result<(Manifest, Vec<Observation>)> {
    let mpath = manifest_path.map(Path::to_path_buf).unwrap_or_else(|| default_manifest_path(csv_path));
    let manifest = read_manifest(&mpath)?;
    let file = File::open(csv_path)?;
    let obs = parse_rows(file, &manifest)?;
    Ok((manifest, obs))
}

/// Parses CSV rows; errors carry the 1-based data row number.
pub fn parse_rows<R: std::io::Read>(reader: R, manifest: &Manifest) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != manifest.width() {
        return Err(Error::Data {
            row: 0,
            message: format!("header has {} columns, manifest implies {}", header.len(), manifest.width()),
        });
    }
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| Error::Data { row, message: e.to_string() })?;
        if rec.len() != manifest.width() {
            return Err(Error::Data {
                row,
                message: format!("expected {} fields, found {}", manifest.width(), rec.len()),
            });
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, f)| {
                let v: f64 = f.trim().parse().map_err(|_| Error::Data {
                    row,
                    message: format!("column {} ({:?}) is not a number", header.get(c).unwrap_or("?"), f),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Data { row, message: format!("column {} is not finite", header.get(c).unwrap_or("?")) })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let z = *vals.last().expect("width >= 1");
        let obs = if manifest.factored {
            Observation::factored(
                DVector::from_column_slice(&vals[..manifest.p]),
                DVector::from_column_slice(&vals[manifest.p..manifest.p + manifest.q]),
                z,
            )
        } else {
            Observation::dense(DMatrix::from_column_slice(manifest.p, manifest.q, &vals[..manifest.p * manifest.q]), z)
        };
        out.push(obs);
    }
    if out.is_empty() {
        return Err(Error::Data { row: 1, message: "no data rows".into() });
    }
    Ok(out)
}

/// Writes `observations` as CSV plus manifest. Factored output requires every
/// observation to be factored.
pub fn write_dataset(csv_path: &Path, observations: &[Observation]) -> Result<Manifest> {
    let first = observations.first().ok_or_else(|| Error::invalid("no observations to write"))?;
    let (p, q) = first.dims();
    let factored = observations.iter().all(|o| matches!(o.covariate, Covariate::Factored { .. }));
    let manifest = Manifest { p, q, factored };
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
    w.write_record(manifest.header())?;
    for o in observations {
        let mut rec: Vec<String> = Vec::with_capacity(manifest.width());
        match &o.covariate {
            Covariate::Factored { x, y } if factored => {
                rec.extend(x.iter().chain(y.iter()).map(|v| format!("{v:e}")));
            }
            _ => rec.extend(o.matrix().iter().map(|v| format!("{v:e}"))),
        }
        rec.push(format!("{:e}", o.z));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut mf = BufWriter::new(File::create(default_manifest_path(csv_path))?);
    serde_json::to_writer_pretty(&mut mf, &manifest)?;
    mf.flush()?;
    Ok(manifest)
}
