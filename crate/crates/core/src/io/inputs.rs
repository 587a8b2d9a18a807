//! Long-format CSV ingestion and export.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{Dataset, ForcingSeries, GridSpec, InstrumentalSeries, ProxyPanel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub proxies: PathBuf,
    pub forcings: PathBuf,
    #[serde(default)]
    pub instrumental: Option<PathBuf>,
    pub footprints: PathBuf,
    pub grid: PathBuf,
}

impl InputPaths {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        InputPaths {
            proxies: dir.join("proxies.csv"),
            forcings: dir.join("forcings.csv"),
            instrumental: Some(dir.join("instrumental.csv")),
            footprints: dir.join("footprints.csv"),
            grid: dir.join("grid.csv"),
        }
    }

    pub fn resolve(&self, base: &Path) -> Self {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        InputPaths {
            proxies: r(&self.proxies),
            forcings: r(&self.forcings),
            instrumental: self.instrumental.as_ref().map(r),
            footprints: r(&self.footprints),
            grid: r(&self.grid),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.proxies.as_path(), self.forcings.as_path(), self.footprints.as_path(), self.grid.as_path()];
        if let Some(p) = &self.instrumental {
            v.push(p);
        }
        v
    }
}

/// Per-proxy standardisation applied at ingestion: `stored = (raw − mean) / sd`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyScaling {
    pub id: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedInputs {
    pub data: Dataset,
    pub grid: GridSpec,
    pub cell_ids: Vec<String>,
    pub scaling: Vec<ProxyScaling>,
}

struct Table {
    path: String,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path, header: &[&str]) -> Result<Table> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(&name, e))?;
    let got: Vec<String> = reader.headers().map_err(|e| csv_err(&name, e))?.iter().map(str::to_string).collect();
    if got != header {
        return Err(Error::Parse {
            path: name,
            line: 1,
            message: format!("expected header `{}`, found `{}`", header.join(","), got.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(&name, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { path: name, rows })
}

fn csv_err(path: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    if let csv::ErrorKind::Io(_) = e.kind() {
        return Error::Io(std::io::Error::other(format!("{path}: {e}")));
    }
    Error::Parse { path: path.to_string(), line, message: e.to_string() }
}

impl Table {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse { path: self.path.clone(), line, message: message.into() }
    }

    fn year(&self, line: usize, s: &str) -> Result<i32> {
        s.parse().map_err(|_| self.err(line, format!("invalid year `{s}`")))
    }

    /// Finite number; `NaN` and infinities are rejected.
    fn number(&self, line: usize, s: &str) -> Result<f64> {
        let v: f64 = s.parse().map_err(|_| self.err(line, format!("invalid number `{s}`")))?;
        if !v.is_finite() {
            return Err(self.err(line, format!("non-finite value `{s}` in an observed cell")));
        }
        Ok(v)
    }
}

/// Empty or `NA` values mark a missing observation.
fn is_missing(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na")
}

/// `year,solar,volcanic,co2` with contiguous increasing years.
pub fn read_forcings(path: &Path) -> Result<ForcingSeries> {
    let table = read_table(path, &["year", "solar", "volcanic", "co2"])?;
    let mut f = ForcingSeries::zeros(Vec::new());
    for (line, row) in &table.rows {
        let year = table.year(*line, &row[0])?;
        if let Some(prev) = f.years.last() {
            if year == *prev {
                return Err(table.err(*line, format!("duplicate year {year}")));
            }
            if year != prev + 1 {
                return Err(table.err(*line, format!("years are not contiguous: {prev} then {year}")));
            }
        }
        f.years.push(year);
        f.solar.push(table.number(*line, &row[1])?);
        f.volcanic.push(table.number(*line, &row[2])?);
        f.co2.push(table.number(*line, &row[3])?);
    }
    if f.is_empty() {
        return Err(table.err(1, "no forcing rows"));
    }
    Ok(f)
}

fn read_grid(path: &Path) -> Result<(Vec<String>, GridSpec)> {
    let table = read_table(path, &["cell_id", "area_weight"])?;
    let mut ids = Vec::new();
    let mut weights = Vec::new();
    let mut seen = HashSet::new();
    for (line, row) in &table.rows {
        if !seen.insert(row[0].clone()) {
            return Err(table.err(*line, format!("duplicate cell `{}`", row[0])));
        }
        ids.push(row[0].clone());
        weights.push(table.number(*line, &row[1])?);
    }
    if ids.is_empty() {
        return Err(table.err(1, "no grid cells"));
    }
    Ok((ids, GridSpec { area_weights: weights }))
}

fn cell_index(table: &Table, cells: &HashMap<&str, usize>, line: usize, id: &str) -> Result<usize> {
    cells.get(id).copied().ok_or_else(|| table.err(line, format!("unknown cell `{id}`")))
}

/// Parse all inputs onto the forcing file's year axis. Proxy ids and their
/// order come from the footprint file.
pub fn parse_inputs(paths: &InputPaths, instrumental_sd: f64) -> Result<ParsedInputs> {
    let forcings = read_forcings(&paths.forcings)?;
    let (cell_ids, grid) = read_grid(&paths.grid)?;
    let cells: HashMap<&str, usize> = cell_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let g = cell_ids.len();
    let n = forcings.len();

    let fp = read_table(&paths.footprints, &["proxy_id", "cell_id", "weight"])?;
    let mut ids: Vec<String> = Vec::new();
    let mut proxy_index: HashMap<String, usize> = HashMap::new();
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (line, row) in &fp.rows {
        let i = *proxy_index.entry(row[0].clone()).or_insert_with(|| {
            ids.push(row[0].clone());
            ids.len() - 1
        });
        let c = cell_index(&fp, &cells, *line, &row[1])?;
        if !seen.insert((i, c)) {
            return Err(fp.err(*line, format!("duplicate footprint entry ({}, {})", row[0], row[1])));
        }
        entries.push((i, c, fp.number(*line, &row[2])?));
    }
    let p = ids.len();
    let mut footprints = DMatrix::zeros(p, g);
    for (i, c, w) in entries {
        footprints[(i, c)] = w;
    }

    let px = read_table(&paths.proxies, &["year", "proxy_id", "value"])?;
    let mut values = DMatrix::zeros(n, p);
    let mut mask = DMatrix::from_element(n, p, false);
    let mut seen = HashMap::new();
    for (line, row) in &px.rows {
        let year = px.year(*line, &row[0])?;
        let t = forcings
            .index_of(year)
            .ok_or_else(|| px.err(*line, format!("year {year} is outside the forcing record")))?;
        let i = *proxy_index
            .get(&row[1])
            .ok_or_else(|| px.err(*line, format!("proxy `{}` has no footprint", row[1])))?;
        if let Some(first) = seen.insert((t, i), *line) {
            return Err(px.err(*line, format!("duplicate row for ({year}, {}); first seen on line {first}", row[1])));
        }
        if is_missing(&row[2]) {
            continue;
        }
        values[(t, i)] = px.number(*line, &row[2])?;
        mask[(t, i)] = true;
    }

    let mut scaling = Vec::with_capacity(p);
    for i in 0..p {
        let obs: Vec<f64> = (0..n).filter(|&t| mask[(t, i)]).map(|t| values[(t, i)]).collect();
        if obs.is_empty() {
            log::warn!("proxy {} has no observations", ids[i]);
            scaling.push(ProxyScaling { id: ids[i].clone(), mean: 0.0, sd: 1.0 });
            continue;
        }
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = if obs.len() > 1 {
            obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (obs.len() - 1) as f64
        } else {
            0.0
        };
        let sd = if var > 0.0 {
            var.sqrt()
        } else {
            log::warn!("proxy {} has zero variance; left unscaled", ids[i]);
            1.0
        };
        for t in 0..n {
            if mask[(t, i)] {
                values[(t, i)] = (values[(t, i)] - mean) / sd;
            }
        }
        scaling.push(ProxyScaling { id: ids[i].clone(), mean, sd });
    }

    let mut instrumental = InstrumentalSeries::none(n, g, instrumental_sd);
    if let Some(path) = &paths.instrumental {
        let it = read_table(path, &["year", "cell_id", "value"])?;
        let mut seen = HashSet::new();
        for (line, row) in &it.rows {
            let year = it.year(*line, &row[0])?;
            let t = forcings
                .index_of(year)
                .ok_or_else(|| it.err(*line, format!("year {year} is outside the forcing record")))?;
            let c = cell_index(&it, &cells, *line, &row[1])?;
            if !seen.insert((t, c)) {
                return Err(it.err(*line, format!("duplicate row for ({year}, {})", row[1])));
            }
            if is_missing(&row[2]) {
                continue;
            }
            instrumental.obs[(t, c)] = it.number(*line, &row[2])?;
            instrumental.mask[(t, c)] = true;
        }
    }

    Ok(ParsedInputs {
        data: Dataset {
            panel: ProxyPanel { ids, values, mask, footprints },
            forcings,
            instrumental,
        },
        grid,
        cell_ids,
        scaling,
    })
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(&path.display().to_string(), e))
}

fn flush(mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

macro_rules! put {
    ($w:expr, $path:expr, $($f:expr),+) => {
        $w.write_record(&[$($f.to_string()),+]).map_err(|e| csv_err(&$path.display().to_string(), e))?
    };
}

/// Write a dataset in the input formats. Masked cells are omitted. Cell ids
/// are `c0, c1, …`.
pub fn write_inputs(paths: &InputPaths, data: &Dataset, grid: &GridSpec) -> Result<()> {
    let cell = |k: usize| format!("c{k}");
    let mut w = writer(&paths.grid)?;
    put!(w, paths.grid, "cell_id", "area_weight");
    for (k, a) in grid.area_weights.iter().enumerate() {
        put!(w, paths.grid, cell(k), a);
    }
    flush(w)?;

    let mut w = writer(&paths.forcings)?;
    put!(w, paths.forcings, "year", "solar", "volcanic", "co2");
    let f = &data.forcings;
    for t in 0..f.len() {
        put!(w, paths.forcings, f.years[t], f.solar[t], f.volcanic[t], f.co2[t]);
    }
    flush(w)?;

    let panel = &data.panel;
    let mut w = writer(&paths.footprints)?;
    put!(w, paths.footprints, "proxy_id", "cell_id", "weight");
    for i in 0..panel.n_proxies() {
        for k in 0..panel.footprints.ncols() {
            let h = panel.footprints[(i, k)];
            if h != 0.0 {
                put!(w, paths.footprints, panel.ids[i], cell(k), h);
            }
        }
    }
    flush(w)?;

    let mut w = writer(&paths.proxies)?;
    put!(w, paths.proxies, "year", "proxy_id", "value");
    for t in 0..panel.n_years() {
        for i in 0..panel.n_proxies() {
            if panel.mask[(t, i)] {
                put!(w, paths.proxies, f.years[t], panel.ids[i], panel.values[(t, i)]);
            }
        }
    }
    flush(w)?;

    if let Some(path) = &paths.instrumental {
        let inst = &data.instrumental;
        let mut w = writer(path)?;
        put!(w, path, "year", "cell_id", "value");
        for t in 0..inst.obs.nrows() {
            for k in 0..inst.obs.ncols() {
                if inst.mask[(t, k)] {
                    put!(w, path, f.years[t], cell(k), inst.obs[(t, k)]);
                }
            }
        }
        flush(w)?;
    }
    Ok(())
}

/// `year,value` series, e.g. a true or reconstructed NH mean.
pub fn write_series(path: &Path, years: &[i32], header: &str, values: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    put!(w, path, "year", header);
    for (y, v) in years.iter().zip(values) {
        put!(w, path, y, v);
    }
    flush(w)
}

pub fn read_series(path: &Path, header: &str) -> Result<(Vec<i32>, Vec<f64>)> {
    let table = read_table(path, &["year", header])?;
    let mut years = Vec::new();
    let mut values = Vec::new();
    for (line, row) in &table.rows {
        years.push(table.year(*line, &row[0])?);
        values.push(table.number(*line, &row[1])?);
    }
    Ok((years, values))
}
