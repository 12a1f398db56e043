//! CSV and NDJSON readers and writers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::basis::{Domain, Point};
use crate::error::{Error, Result};
use crate::inference::{ObservationBatch, ObservationStep};

/// Number of coordinate columns written for points of `domain`.
pub fn coordinate_columns(domain: &Domain) -> usize {
    match domain {
        Domain::Interval { .. } => 1,
        _ => 2,
    }
}

pub fn point_coords(domain: &Domain, p: Point) -> Vec<f64> {
    p.coords(coordinate_columns(domain))
}

/// Converts a CSV coordinate tuple into a point. Sphere points accept
/// either `(colatitude, longitude)` in radians or a Cartesian triple,
/// which is projected onto the sphere.
pub fn point_from_coords(domain: &Domain, c: &[f64]) -> Result<Point> {
    match (domain, c.len()) {
        (Domain::Interval { .. }, 1) => Ok(Point::on_line(c[0])),
        (Domain::Rectangle { .. } | Domain::Disk { .. }, 2) => Ok(Point::new(c[0], c[1])),
        (Domain::Sphere { .. }, 2) => Ok(Point::angles(c[0], c[1])),
        (Domain::Sphere { .. }, 3) => {
            let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            if r == 0.0 {
                return Err(Error::Data("Cartesian sphere point at the origin".into()));
            }
            Ok(Point::angles((c[2] / r).clamp(-1.0, 1.0).acos(), c[1].atan2(c[0])))
        }
        (d, n) => Err(Error::Data(format!(
            "{n} coordinate columns do not fit a {} domain",
            domain_kind(d)
        ))),
    }
}

pub fn domain_kind(d: &Domain) -> &'static str {
    match d {
        Domain::Interval { .. } => "interval",
        Domain::Rectangle { .. } => "rectangle",
        Domain::Disk { .. } => "disk",
        Domain::Sphere { .. } => "sphere",
    }
}

/// Reads observations with header `t, x1[, x2[, x3]], y`. Rows sharing a
/// time form one step; times must be non-decreasing.
pub fn read_observations(reader: impl Read, domain: &Domain) -> Result<ObservationBatch> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = header.len();
    if !(3..=5).contains(&cols) || &header[0] != "t" || &header[cols - 1] != "y" {
        return Err(Error::Data(format!(
            "expected header `t, x1[, x2[, x3]], y`, got `{}`",
            header.iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let mut steps: Vec<ObservationStep> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Data(format!("row {row}: `{f}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {row}: non-finite value")));
        }
        let t = vals[0];
        let p = point_from_coords(domain, &vals[1..cols - 1])
            .map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if !domain.contains(p) {
            return Err(Error::Data(format!("row {row}: location outside the domain")));
        }
        match steps.last_mut() {
            Some(s) if s.time == t => {
                s.locations.push(p);
                s.values.push(vals[cols - 1]);
            }
            Some(s) if s.time > t => {
                return Err(Error::Data(format!(
                    "row {row}: time {t} precedes {}; rows must be sorted by t",
                    s.time
                )))
            }
            _ => steps.push(ObservationStep {
                time: t,
                locations: vec![p],
                values: vec![vals[cols - 1]],
            }),
        }
    }
    Ok(ObservationBatch { steps })
}

pub fn read_observations_file(path: &Path, domain: &Domain) -> Result<ObservationBatch> {
    let f = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_observations(BufReader::new(f), domain)
}

fn coord_header(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Formats a float so that parsing it back gives the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_observations(writer: impl Write, domain: &Domain, data: &ObservationBatch) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(coord_header(coordinate_columns(domain)));
    header.push("y".into());
    w.write_record(&header)?;
    for s in &data.steps {
        for (p, y) in s.locations.iter().zip(&s.values) {
            let mut row = vec![fmt_f64(s.time)];
            row.extend(point_coords(domain, *p).into_iter().map(fmt_f64));
            row.push(fmt_f64(*y));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A dense space-time table: one row per `(time, point)` with named value
/// columns.
pub struct GridTable<'a> {
    pub domain: &'a Domain,
    pub times: &'a [f64],
    pub points: &'a [Point],
    pub columns: Vec<(String, Vec<f64>)>,
}

impl GridTable<'_> {
    /// Column values are indexed `k * points.len() + i`.
    pub fn write(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(coord_header(coordinate_columns(self.domain)));
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header)?;
        let np = self.points.len();
        for (k, t) in self.times.iter().enumerate() {
            for (i, p) in self.points.iter().enumerate() {
                let mut row = vec![fmt_f64(*t)];
                row.extend(point_coords(self.domain, *p).into_iter().map(fmt_f64));
                row.extend(self.columns.iter().map(|(_, v)| fmt_f64(v[k * np + i])));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A spatial table: one row per point.
pub fn write_point_table(
    writer: impl Write,
    domain: &Domain,
    points: &[Point],
    columns: &[(String, Vec<f64>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = coord_header(coordinate_columns(domain));
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (i, p) in points.iter().enumerate() {
        let mut row: Vec<String> = point_coords(domain, *p).into_iter().map(fmt_f64).collect();
        row.extend(columns.iter().map(|(_, v)| fmt_f64(v[i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one JSON document per line.
pub struct NdjsonWriter<W: Write> {
    inner: W,
}

impl<W: Write> NdjsonWriter<W> {
    pub fn new(inner: W) -> Self {
        NdjsonWriter { inner }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, record)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn read_ndjson(reader: impl Read) -> Result<Vec<serde_json::Value>> {
    BufReader::new(reader)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
