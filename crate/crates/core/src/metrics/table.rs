use std::fmt;

use crate::{Error, Result};

pub const TABLE_HEADER: [&str; 5] = ["model", "mIoU", "mDSC", "latency_ms", "patch_resolution"];

/// One tab-separated row of the evaluation table. The format precision
/// (`{:.9}`) sets the metric digits, 4 by default.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub miou: f64,
    pub mdsc: f64,
    pub latency_ms: Option<f64>,
    pub patch: usize,
}

impl MetricsRow {
    pub fn header() -> String {
        TABLE_HEADER.join("\t")
    }

    pub fn parse(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Format(format!("malformed metrics row: {line}"));
        let [model, miou, mdsc, latency, patch] = cols[..] else {
            return Err(bad());
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let (side, _) = patch.split_once('x').ok_or_else(bad)?;
        Ok(Self {
            model: model.to_string(),
            miou: num(miou)?,
            mdsc: num(mdsc)?,
            latency_ms: if latency == "NA" { None } else { Some(num(latency)?) },
            patch: side.parse().map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for MetricsRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let latency = self.latency_ms.map_or_else(|| "NA".to_string(), |l| format!("{l:.2}"));
        write!(
            f,
            "{}\t{:.d$}\t{:.d$}\t{latency}\t{p}x{p}",
            self.model,
            self.miou,
            self.mdsc,
            d = f.precision().unwrap_or(4),
            p = self.patch
        )
    }
}
