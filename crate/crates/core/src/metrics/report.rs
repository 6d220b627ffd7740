//! Run reports in two interchangeable encodings.
//!
//! CSV (long format, header `section,key,i,j,value`):
//!
//! | section  | key                                   | i       | j    | value          |
//! |----------|---------------------------------------|---------|------|----------------|
//! | meta     | kind / config_hash / seed             |         |      | …              |
//! | config   | config key                            |         |      | config value   |
//! | class    | name                                  | class   |      | class name     |
//! | epoch    | lr / train_loss / train_acc / val_loss / val_acc | epoch |  | number     |
//! | summary  | accuracy                              |         |      | number         |
//! | cm       | count                                 | true    | pred | count          |
//! | tpr      | tpr                                   | class   |      | number or `undefined` |
//! | ablation | axis / variant / seed / config_hash / train_acc / test_acc / test_loss | row | | … |
//!
//! JSON lines: one object per line tagged by `"type"`: `meta`, `classes`,
//! `epoch`, `summary`, `confusion`, `row`, in that order.
//!
//! Numbers are written in shortest round-trip form, so parsing a report
//! reproduces every value bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ConfusionMatrix;
use crate::error::{Error, Result};

/// First 16 hex digits of SHA-256 over `key=value` lines.
pub fn config_hash(kv: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in kv {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    h.finalize()[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    /// `train`, `eval` or `ablate-<axis>`.
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub class_names: Vec<String>,
    pub epochs: Vec<EpochLog>,
    pub accuracy: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    pub rows: Vec<AblationRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl ReportFormat {
    /// `.csv` → CSV, `.jsonl`/`.json` → JSON lines.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Self::Csv),
            Some("jsonl") | Some("json") => Ok(Self::JsonLines),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer report format from {}; use .csv or .jsonl",
                path.display()
            ))),
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json-lines" | "json" => Ok(Self::JsonLines),
            _ => Err(Error::InvalidArgument(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Meta {
        kind: String,
        config_hash: String,
        seed: u64,
        config: Vec<(String, String)>,
    },
    Classes {
        names: Vec<String>,
    },
    Epoch(EpochLog),
    Summary {
        accuracy: f64,
    },
    Confusion {
        counts: Vec<Vec<u64>>,
        tpr: Vec<Option<f64>>,
    },
    Row(AblationRow),
}

impl Report {
    pub fn to_bytes(&self, format: ReportFormat) -> Result<Vec<u8>> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::JsonLines => self.to_jsonl(),
        }
    }

    fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut lines = vec![
            Line::Meta {
                kind: self.kind.clone(),
                config_hash: self.config_hash.clone(),
                seed: self.seed,
                config: self.config.clone(),
            },
            Line::Classes {
                names: self.class_names.clone(),
            },
        ];
        lines.extend(self.epochs.iter().cloned().map(Line::Epoch));
        if let Some(accuracy) = self.accuracy {
            lines.push(Line::Summary { accuracy });
        }
        if let Some(cm) = &self.confusion {
            lines.push(Line::Confusion {
                counts: cm.rows(),
                tpr: cm.tpr_per_class(),
            });
        }
        lines.extend(self.rows.iter().cloned().map(Line::Row));
        let mut out = Vec::new();
        for line in &lines {
            serde_json::to_writer(&mut out, line)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["section", "key", "i", "j", "value"])?;
        let mut put = |section: &str, key: &str, i: String, j: String, value: String| {
            w.write_record([section, key, &i, &j, &value])
        };
        let none = String::new;
        put("meta", "kind", none(), none(), self.kind.clone())?;
        put("meta", "config_hash", none(), none(), self.config_hash.clone())?;
        put("meta", "seed", none(), none(), self.seed.to_string())?;
        for (k, v) in &self.config {
            put("config", k, none(), none(), v.clone())?;
        }
        for (i, name) in self.class_names.iter().enumerate() {
            put("class", "name", i.to_string(), none(), name.clone())?;
        }
        for e in &self.epochs {
            let i = e.epoch.to_string();
            put("epoch", "lr", i.clone(), none(), e.lr.to_string())?;
            put("epoch", "train_loss", i.clone(), none(), e.train_loss.to_string())?;
            put("epoch", "train_acc", i.clone(), none(), e.train_acc.to_string())?;
            if let Some(v) = e.val_loss {
                put("epoch", "val_loss", i.clone(), none(), v.to_string())?;
            }
            if let Some(v) = e.val_acc {
                put("epoch", "val_acc", i.clone(), none(), v.to_string())?;
            }
        }
        if let Some(a) = self.accuracy {
            put("summary", "accuracy", none(), none(), a.to_string())?;
        }
        if let Some(cm) = &self.confusion {
            for (t, row) in cm.rows().iter().enumerate() {
                for (p, c) in row.iter().enumerate() {
                    put("cm", "count", t.to_string(), p.to_string(), c.to_string())?;
                }
            }
            for (i, tpr) in cm.tpr_per_class().iter().enumerate() {
                let v = tpr.map_or_else(|| "undefined".to_string(), |v| v.to_string());
                put("tpr", "tpr", i.to_string(), none(), v)?;
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            let i = i.to_string();
            for (k, v) in [
                ("axis", r.axis.clone()),
                ("variant", r.variant.clone()),
                ("seed", r.seed.to_string()),
                ("config_hash", r.config_hash.clone()),
                ("train_acc", r.train_acc.to_string()),
                ("test_acc", r.test_acc.to_string()),
                ("test_loss", r.test_loss.to_string()),
            ] {
                put("ablation", k, i.clone(), none(), v)?;
            }
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    fs::write(path, report.to_bytes(format)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<Report> {
    parse_report(&fs::read(path)?, format)
}

pub fn parse_report(bytes: &[u8], format: ReportFormat) -> Result<Report> {
    match format {
        ReportFormat::Csv => parse_csv(bytes),
        ReportFormat::JsonLines => parse_jsonl(bytes),
    }
}

fn parse_jsonl(bytes: &[u8]) -> Result<Report> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::InvalidArgument("report is not UTF-8".into()))?;
    let mut r = Report::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<Line>(line)? {
            Line::Meta {
                kind,
                config_hash,
                seed,
                config,
            } => {
                r.kind = kind;
                r.config_hash = config_hash;
                r.seed = seed;
                r.config = config;
            }
            Line::Classes { names } => r.class_names = names,
            Line::Epoch(e) => r.epochs.push(e),
            Line::Summary { accuracy } => r.accuracy = Some(accuracy),
            Line::Confusion { counts, .. } => r.confusion = Some(ConfusionMatrix::from_rows(&counts)?),
            Line::Row(row) => r.rows.push(row),
        }
    }
    Ok(r)
}

fn parse_csv(bytes: &[u8]) -> Result<Report> {
    fn bad(what: &str) -> Error {
        Error::InvalidArgument(format!("malformed report: {what}"))
    }
    fn num<V: std::str::FromStr>(s: &str) -> Result<V> {
        s.parse().map_err(|_| bad(&format!("cannot parse {s:?}")))
    }
    let mut r = Report::default();
    let mut cells: Vec<(usize, usize, u64)> = vec![];
    let mut rdr = csv::Reader::from_reader(bytes);
    for rec in rdr.records() {
        let rec = rec?;
        let [section, key, i, j, value] = [0, 1, 2, 3, 4].map(|c| rec.get(c).unwrap_or(""));
        match section {
            "meta" => match key {
                "kind" => r.kind = value.into(),
                "config_hash" => r.config_hash = value.into(),
                "seed" => r.seed = num(value)?,
                _ => return Err(bad(key)),
            },
            "config" => r.config.push((key.into(), value.into())),
            "class" => r.class_names.push(value.into()),
            "epoch" => {
                let epoch: usize = num(i)?;
                if r.epochs.last().map(|e| e.epoch) != Some(epoch) {
                    r.epochs.push(EpochLog {
                        epoch,
                        lr: 0.0,
                        train_loss: 0.0,
                        train_acc: 0.0,
                        val_loss: None,
                        val_acc: None,
                    });
                }
                let e = r.epochs.last_mut().expect("pushed above");
                let v: f64 = num(value)?;
                match key {
                    "lr" => e.lr = v,
                    "train_loss" => e.train_loss = v,
                    "train_acc" => e.train_acc = v,
                    "val_loss" => e.val_loss = Some(v),
                    "val_acc" => e.val_acc = Some(v),
                    _ => return Err(bad(key)),
                }
            }
            "summary" => r.accuracy = Some(num(value)?),
            "cm" => cells.push((num(i)?, num(j)?, num(value)?)),
            "tpr" => {}
            "ablation" => {
                let idx: usize = num(i)?;
                if idx == r.rows.len() {
                    r.rows.push(AblationRow {
                        axis: String::new(),
                        variant: String::new(),
                        seed: 0,
                        config_hash: String::new(),
                        train_acc: 0.0,
                        test_acc: 0.0,
                        test_loss: 0.0,
                    });
                }
                let row = r.rows.get_mut(idx).ok_or_else(|| bad("ablation row order"))?;
                match key {
                    "axis" => row.axis = value.into(),
                    "variant" => row.variant = value.into(),
                    "seed" => row.seed = num(value)?,
                    "config_hash" => row.config_hash = value.into(),
                    "train_acc" => row.train_acc = num(value)?,
                    "test_acc" => row.test_acc = num(value)?,
                    "test_loss" => row.test_loss = num(value)?,
                    _ => return Err(bad(key)),
                }
            }
            other => return Err(bad(other)),
        }
    }
    if !cells.is_empty() {
        let n = (cells.len() as f64).sqrt() as usize;
        if n * n != cells.len() {
            return Err(bad("confusion matrix is not square"));
        }
        let mut rows = vec![vec![0; n]; n];
        for (t, p, c) in cells {
            *rows
                .get_mut(t)
                .and_then(|row| row.get_mut(p))
                .ok_or_else(|| bad("confusion index"))? = c;
        }
        r.confusion = Some(ConfusionMatrix::from_rows(&rows)?);
    }
    Ok(r)
}
