//! Line-delimited JSON draw files: a header line, one record per kept draw,
//! then one footer line per chain with its statistics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gibbs::{ChainDraws, ChainStats, Draw, DrawStore};
use crate::{Error, Result};

pub const FORMAT: &str = "paleo-bhm-draws";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    years: Vec<i32>,
    chains: Vec<usize>,
    n_records: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    chain: usize,
    draw: Draw,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Footer {
    chain: usize,
    stats: ChainStats,
}

pub fn write_draws(store: &DrawStore, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        years: store.years.clone(),
        chains: store.chains.iter().map(|c| c.chain).collect(),
        n_records: store.n_draws(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for c in &store.chains {
        for d in &c.draws {
            serde_json::to_writer(&mut out, &Record { chain: c.chain, draw: d.clone() })?;
            out.write_all(b"\n")?;
        }
    }
    for c in &store.chains {
        serde_json::to_writer(&mut out, &Footer { chain: c.chain, stats: c.stats.clone() })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<DrawStore> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| Error::Corrupt("empty file".into()))??;
    let raw: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
        return Err(Error::Corrupt("not a draw file".into()));
    }
    let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != VERSION {
        return Err(Error::Version { found, expected: VERSION });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Corrupt(format!("bad header: {e}")))?;
    let mut chains: Vec<ChainDraws> = header
        .chains
        .iter()
        .map(|&chain| ChainDraws { chain, draws: Vec::new(), stats: ChainStats::default() })
        .collect();
    let slot = |chains: &[ChainDraws], chain: usize, line: usize| {
        chains
            .iter()
            .position(|c| c.chain == chain)
            .ok_or_else(|| Error::Corrupt(format!("line {line}: unknown chain {chain}")))
    };
    let mut n_records = 0;
    let mut n_footers = 0;
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        if n_records < header.n_records {
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Corrupt(format!("line {line_no}: truncated or invalid record: {e}")))?;
            if rec.draw.nh.len() != header.years.len() {
                return Err(Error::Corrupt(format!("line {line_no}: record length differs from the year axis")));
            }
            let s = slot(&chains, rec.chain, line_no)?;
            chains[s].draws.push(rec.draw);
            n_records += 1;
        } else {
            let footer: Footer = serde_json::from_str(&line)
                .map_err(|e| Error::Corrupt(format!("line {line_no}: truncated or invalid footer: {e}")))?;
            let s = slot(&chains, footer.chain, line_no)?;
            chains[s].stats = footer.stats;
            n_footers += 1;
        }
    }
    if n_records != header.n_records || n_footers != header.chains.len() {
        return Err(Error::Corrupt(format!(
            "truncated: {n_records} of {} records and {n_footers} of {} footers",
            header.n_records,
            header.chains.len()
        )));
    }
    Ok(DrawStore { years: header.years, chains })
}
