use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evaluation::quantile_sorted;
use crate::gibbs::DrawStore;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub year: i32,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-year posterior mean, median and central `level` interval of `ŷ_t`.
pub fn summarize(store: &DrawStore, level: f64) -> Result<Vec<SummaryRow>> {
    if store.is_empty() {
        return Err(Error::InvalidArgument("no draws to summarize".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument("level must lie in (0, 1)".into()));
    }
    let tail = 0.5 * (1.0 - level);
    Ok(store
        .years
        .iter()
        .enumerate()
        .map(|(t, &year)| {
            let mut xs = store.nh_at(t);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.sort_by(f64::total_cmp);
            SummaryRow {
                year,
                mean,
                median: quantile_sorted(&xs, 0.5),
                lower: quantile_sorted(&xs, tail),
                upper: quantile_sorted(&xs, 1.0 - tail),
            }
        })
        .collect())
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    w.flush()?;
    Ok(())
}
