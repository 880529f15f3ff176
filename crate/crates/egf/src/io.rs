//! File formats: point and dataset CSVs, density grids (CSV and PGM), metrics
//! logs, reports and dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use egf_core::data::Dataset;
use egf_core::eval::{DensityGrid, GridLayout};
use egf_core::manifold::{latlon_to_sphere, sphere_to_latlon};
use egf_core::training::MetricsRow;
use egf_core::{Manifold, Point};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes through a sibling temporary file so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(build: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w)?;
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Column names for points on `manifold`: `lat,lon` on `S^2`, `x0..` otherwise.
pub fn point_header(manifold: Manifold) -> Vec<String> {
    match manifold {
        Manifold::Sphere { dim: 2 } => vec!["lat".into(), "lon".into()],
        m => (0..m.ambient_dim()).map(|k| format!("x{k}")).collect(),
    }
}

fn point_record(manifold: Manifold, p: &Point) -> Vec<String> {
    match manifold {
        Manifold::Sphere { dim: 2 } => {
            let (lat, lon) = sphere_to_latlon(p);
            vec![lat.to_string(), lon.to_string()]
        }
        _ => p.iter().map(|x| x.to_string()).collect(),
    }
}

pub fn write_points(path: &Path, manifold: Manifold, points: &[Point]) -> Result<()> {
    let bytes = csv_bytes(|w| {
        w.write_record(point_header(manifold))?;
        for p in points {
            w.write_record(point_record(manifold, p))?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Writes the dataset points with a `split` column.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut split = vec!["train"; data.len()];
    for &i in &data.val {
        split[i] = "val";
    }
    let bytes = csv_bytes(|w| {
        let mut header = point_header(data.manifold);
        header.push("split".into());
        w.write_record(header)?;
        for (p, s) in data.points.iter().zip(split) {
            let mut rec = point_record(data.manifold, p);
            rec.push(s.into());
            w.write_record(rec)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// Points read from a CSV, with the number of rows that could not be used.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub points: Vec<Point>,
    pub skipped: usize,
}

/// Reads latitude/longitude columns (degrees) into points on `S^2`.
pub fn read_latlon_csv(path: &Path, lat_col: &str, lon_col: &str) -> Result<Ingested> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_latlon(file, lat_col, lon_col)
}

pub fn read_latlon<R: std::io::Read>(reader: R, lat_col: &str, lon_col: &str) -> Result<Ingested> {
    read_columns(reader, &[lat_col, lon_col], |v| latlon_to_sphere(v[0], v[1]).ok())
}

/// Reads `x0, x1, ...` columns into points on `T^d`, wrapping into `[0, 1)`.
pub fn read_torus_csv(path: &Path, dim: usize) -> Result<Ingested> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
    let cols: Vec<&str> = names.iter().map(String::as_str).collect();
    let m = Manifold::torus(dim);
    read_columns(file, &cols, |v| {
        let mut p = Point::new(v);
        m.canonicalize(&mut p);
        Some(p)
    })
}

fn read_columns<R: std::io::Read>(
    reader: R,
    columns: &[&str],
    make: impl Fn(&[f64]) -> Option<Point>,
) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            header.iter().position(|h| h == *c).ok_or_else(|| Error::Schema(format!("missing column {c:?}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Ingested { points: Vec::new(), skipped: 0 };
    let mut vals = vec![0.0; idx.len()];
    for rec in rdr.records() {
        let Ok(rec) = rec else {
            out.skipped += 1;
            continue;
        };
        let parsed = idx.iter().zip(vals.iter_mut()).all(|(&i, v)| {
            match rec.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|x| x.is_finite()) {
                Some(x) => {
                    *v = x;
                    true
                }
                None => false,
            }
        });
        match parsed.then(|| make(&vals)).flatten() {
            Some(p) => out.points.push(p),
            None => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        log::warn!("skipped {} malformed rows", out.skipped);
    }
    Ok(out)
}

/// Lat/lon CSV as a seeded train/validation dataset on `S^2`.
pub fn ingest_latlon_csv(path: &Path, lat_col: &str, lon_col: &str, seed: u64, val_fraction: f64) -> Result<(Dataset, usize)> {
    let ing = read_latlon_csv(path, lat_col, lon_col)?;
    let name = path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    let data = Dataset::new(name, Manifold::sphere(2), ing.points)?.split(val_fraction, seed)?;
    Ok((data, ing.skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n: usize,
    pub manifold: Manifold,
    pub seed: u64,
    pub source_path: Option<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub skipped_rows: usize,
}

impl DatasetManifest {
    pub fn describe(data: &Dataset, seed: u64, source_path: Option<&Path>, skipped_rows: usize) -> Self {
        DatasetManifest {
            name: data.name.clone(),
            n: data.len(),
            manifold: data.manifold,
            seed,
            source_path: source_path.map(|p| p.display().to_string()),
            n_train: data.train.len(),
            n_val: data.val.len(),
            skipped_rows,
        }
    }
}

/// Column order of the metrics log.
pub const METRICS_HEADER: [&str; 13] = [
    "step",
    "loss_total",
    "fm",
    "weakfm",
    "ce",
    "reg",
    "flow_mass",
    "flow_mass_se",
    "mean_tau",
    "censor_rate",
    "tv",
    "nll_val",
    "fhat_mass",
];

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    csv_bytes(|w| {
        w.write_record(METRICS_HEADER)?;
        for r in rows {
            w.write_record([
                r.step.to_string(),
                r.loss_total.to_string(),
                opt(r.fm),
                opt(r.weakfm),
                opt(r.ce),
                opt(r.reg),
                r.flow_mass.to_string(),
                r.flow_mass_se.to_string(),
                r.mean_tau.to_string(),
                r.censor_rate.to_string(),
                opt(r.tv),
                opt(r.nll_val),
                opt(r.fhat_mass),
            ])?;
        }
        Ok(())
    })
}

/// Final summary written next to the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub steps: usize,
    pub nll_val: Option<f64>,
    pub tv_grid: Option<f64>,
    pub mean_tau: f64,
    pub flow_mass: f64,
    pub censor_rate: f64,
    pub fhat_mass: Option<f64>,
}

/// `cell, <center coords>, mass, density`.
pub fn write_grid_csv(path: &Path, grid: &DensityGrid) -> Result<()> {
    let amb = grid.manifold.ambient_dim();
    let bytes = csv_bytes(|w| {
        let mut header = vec!["cell".to_string()];
        header.extend((0..amb).map(|k| format!("x{k}")));
        header.extend(["mass".to_string(), "density".to_string()]);
        w.write_record(header)?;
        for c in 0..grid.len() {
            let mut rec = vec![c.to_string()];
            rec.extend(grid.center(c).iter().map(|x| x.to_string()));
            rec.push(grid.masses[c].to_string());
            rec.push(grid.values[c].to_string());
            w.write_record(rec)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

/// 8-bit binary PGM scaled so the maximum is 255.
///
/// Torus grids put the first coordinate along columns and the second along
/// rows, top row highest. Sphere grids are rasterized equirectangularly with
/// north at the top and longitude -180° on the left.
pub fn grid_pgm(grid: &DensityGrid) -> Vec<u8> {
    let (w, h, values): (usize, usize, Vec<f64>) = match &grid.layout {
        GridLayout::Torus { dim: 2, n } => {
            let n = *n;
            let mut v = Vec::with_capacity(n * n);
            for r in 0..n {
                let j = n - 1 - r;
                for i in 0..n {
                    v.push(grid.values[i * n + j]);
                }
            }
            (n, n, v)
        }
        GridLayout::Torus { .. } => (grid.len(), 1, grid.values.clone()),
        GridLayout::Sphere { lon_counts } => {
            let h = lon_counts.len();
            let w = 2 * h;
            let mut v = Vec::with_capacity(w * h);
            for r in 0..h {
                let lat = 90.0 - (r as f64 + 0.5) * 180.0 / h as f64;
                for c in 0..w {
                    let lon = -180.0 + (c as f64 + 0.5) * 360.0 / w as f64;
                    let p = latlon_to_sphere(lat, lon).expect("raster coordinates are in range");
                    v.push(grid.values[grid.cell_of(&p)]);
                }
            }
            (w, h, v)
        }
    };
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| if max > 0.0 { (v / max * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latlon_rows_and_skips() {
        let text = "lat,lon\n90,0\n0,0\nabc,12\n95,0\n";
        let ing = read_latlon(text.as_bytes(), "lat", "lon").unwrap();
        assert_eq!(ing.skipped, 2);
        assert_eq!(ing.points.len(), 2);
        assert!((ing.points[0][2] - 1.0).abs() < 1e-15 && ing.points[0][0].abs() < 1e-15);
        assert!((ing.points[1][0] - 1.0).abs() < 1e-15);
        let err = read_latlon("latitude,lon\n1,2\n".as_bytes(), "lat", "lon").unwrap_err();
        assert_eq!(err.token(), "schema-error");
    }

    #[test]
    fn pgm_header_and_size() {
        let g = DensityGrid::torus(2, 4).unwrap().filled(&|s: &[f64]| s[0]);
        let pgm = grid_pgm(&g);
        assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(pgm.len(), b"P5\n4 4\n255\n".len() + 16);
        assert_eq!(*pgm.last().unwrap(), 255);
    }
}
