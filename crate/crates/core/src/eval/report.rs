use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::probe::error_reduction;

/// One few-shot cell. `macro_auc` is `None` when the cell failed or its k
/// was skipped; `note` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub dataset: String,
    pub k: usize,
    pub repeat: usize,
    pub seed: u64,
    pub macro_auc: Option<f64>,
    #[serde(default)]
    pub per_class: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Mean and sample standard deviation of successful cells. `dataset` is
/// `None` for the pooled per-(model, k) aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub dataset: Option<String>,
    pub k: usize,
    pub n: usize,
    pub failed: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

#[derive(Default)]
struct Welford {
    n: usize,
    failed: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: Option<f64>) {
        let Some(x) = v else {
            self.failed += 1;
            return;
        };
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

impl EvalReport {
    pub fn new(records: Vec<EvalRecord>) -> Self {
        Self { records }
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.records.extend(other.records);
    }

    pub fn failed(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter(|r| r.macro_auc.is_none())
    }

    /// Per (model, dataset, k) then per (model, k), each sorted by key.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut by_dataset: BTreeMap<(&str, &str, usize), Welford> = BTreeMap::new();
        let mut pooled: BTreeMap<(&str, usize), Welford> = BTreeMap::new();
        for r in &self.records {
            by_dataset.entry((&r.model, &r.dataset, r.k)).or_default().push(r.macro_auc);
            pooled.entry((&r.model, r.k)).or_default().push(r.macro_auc);
        }
        let mut out: Vec<Aggregate> = by_dataset
            .into_iter()
            .map(|((m, d, k), w)| Aggregate {
                model: m.to_owned(),
                dataset: Some(d.to_owned()),
                k,
                n: w.n,
                failed: w.failed,
                mean: if w.n > 0 { w.mean } else { f64::NAN },
                std: w.std(),
            })
            .collect();
        out.extend(pooled.into_iter().map(|((m, k), w)| Aggregate {
            model: m.to_owned(),
            dataset: None,
            k,
            n: w.n,
            failed: w.failed,
            mean: if w.n > 0 { w.mean } else { f64::NAN },
            std: w.std(),
        }));
        out
    }

    /// Mean macro AUC over all successful cells of `model` (all datasets and ks).
    pub fn overall_mean(&self, model: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.model == model)
            .filter_map(|r| r.macro_auc)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn class_columns(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.iter().flat_map(|r| r.per_class.keys()).collect();
        set.into_iter().cloned().collect()
    }

    /// Columns `model,dataset,k,repeat,seed,macro_auc,note` then one
    /// `auc_<class>` column per class in sorted order. Missing values are
    /// empty fields; floats use shortest round-trip formatting.
    pub fn write_csv(&self, out: impl Write) -> Result<(), EvalError> {
        self.write_csv_with_classes(out, &self.class_columns())
    }

    /// As [`EvalReport::write_csv`] with an explicit per-class column list.
    pub fn write_csv_with_classes(&self, out: impl Write, classes: &[String]) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["model", "dataset", "k", "repeat", "seed", "macro_auc", "note"]
            .map(String::from)
            .to_vec();
        header.extend(classes.iter().map(|c| format!("auc_{c}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.model.clone(),
                r.dataset.clone(),
                r.k.to_string(),
                r.repeat.to_string(),
                r.seed.to_string(),
                r.macro_auc.map(|v| v.to_string()).unwrap_or_default(),
                r.note.clone().unwrap_or_default(),
            ];
            row.extend(classes.iter().map(|c| r.per_class.get(c).map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self, EvalError> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.clone();
        let fixed = ["model", "dataset", "k", "repeat", "seed", "macro_auc", "note"];
        if header.len() < fixed.len() || header.iter().zip(fixed).any(|(a, b)| a != b) {
            return Err(EvalError::Format(format!("unexpected header {:?}", header)));
        }
        let classes: Vec<String> = header
            .iter()
            .skip(fixed.len())
            .map(|h| {
                h.strip_prefix("auc_")
                    .map(str::to_owned)
                    .ok_or_else(|| EvalError::Format(format!("unexpected column {h:?}")))
            })
            .collect::<Result<_, _>>()?;
        let num = |s: &str, what: &str| -> Result<f64, EvalError> {
            s.parse().map_err(|_| EvalError::Format(format!("bad {what} {s:?}")))
        };
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row?;
            let int = |i: usize| -> Result<u64, EvalError> {
                row[i].parse().map_err(|_| EvalError::Format(format!("bad {} {:?}", fixed[i], &row[i])))
            };
            let mut per_class = BTreeMap::new();
            for (c, v) in classes.iter().zip(row.iter().skip(fixed.len())) {
                if !v.is_empty() {
                    per_class.insert(c.clone(), num(v, "class auc")?);
                }
            }
            records.push(EvalRecord {
                model: row[0].to_owned(),
                dataset: row[1].to_owned(),
                k: int(2)? as usize,
                repeat: int(3)? as usize,
                seed: int(4)?,
                macro_auc: if row[5].is_empty() { None } else { Some(num(&row[5], "macro_auc")?) },
                per_class,
                note: (!row[6].is_empty()).then(|| row[6].to_owned()),
            });
        }
        Ok(Self { records })
    }

    pub fn write_aggregates_csv(&self, out: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "dataset", "k", "n", "failed", "mean_auc", "std_auc"])?;
        for a in self.aggregates() {
            w.write_record([
                a.model.clone(),
                a.dataset.clone().unwrap_or_else(|| "*".into()),
                a.k.to_string(),
                a.n.to_string(),
                a.failed.to_string(),
                a.mean.to_string(),
                a.std.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Percent error reduction of each model against `reference`, per k, using
/// pooled means: `(err_ref − err_model) / err_model · 100` where
/// `err = 1 − AUC`, i.e. how much larger the reference's error is.
pub fn error_reductions(report: &EvalReport, reference: &str) -> Vec<(String, usize, f64)> {
    let aggs: Vec<Aggregate> = report.aggregates().into_iter().filter(|a| a.dataset.is_none()).collect();
    let mut out = Vec::new();
    for a in aggs.iter().filter(|a| a.model != reference && a.n > 0) {
        if let Some(r) = aggs.iter().find(|r| r.model == reference && r.k == a.k && r.n > 0) {
            if let Ok(pct) = error_reduction(a.mean, r.mean) {
                out.push((a.model.clone(), a.k, pct));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<(), EvalError> {
    let file = File::create(path)?;
    match format {
        ReportFormat::Csv => report.write_csv(file),
        ReportFormat::Json => Ok(serde_json::to_writer_pretty(file, report)?),
    }
}

/// Loads a report, choosing the format from the file extension.
pub fn load_report(path: impl AsRef<Path>) -> Result<EvalReport, EvalError> {
    let path = path.as_ref();
    let format = ReportFormat::from_path(path)
        .ok_or_else(|| EvalError::Format(format!("{}: expected .csv or .json", path.display())))?;
    let file = BufReader::new(File::open(path)?);
    match format {
        ReportFormat::Csv => EvalReport::read_csv(file),
        ReportFormat::Json => Ok(serde_json::from_reader(file)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(model: &str, ds: &str, k: usize, repeat: usize, auc: Option<f64>) -> EvalRecord {
        EvalRecord {
            model: model.into(),
            dataset: ds.into(),
            k,
            repeat,
            seed: 1000 + repeat as u64,
            macro_auc: auc,
            per_class: auc.map(|a| BTreeMap::from([("fish, big".to_string(), a), ("x".to_string(), 1.0 / 3.0)])).unwrap_or_default(),
            note: auc.is_none().then(|| "skipped: class x has 5 clips, needs 14".into()),
        }
    }

    fn sample() -> EvalReport {
        EvalReport::new(vec![
            rec("m", "a", 4, 0, Some(0.9)),
            rec("m", "a", 4, 1, Some(0.8)),
            rec("m", "b", 4, 0, Some(0.1 + 0.2)),
            rec("m", "b", 4, 1, None),
        ])
    }

    #[test]
    fn csv_and_json_roundtrip() {
        let r = sample();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("model,dataset,k,repeat,seed,macro_auc,note,\"auc_fish, big\",auc_x"));
        assert_eq!(EvalReport::read_csv(&buf[..]).unwrap(), r);
        let json: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(json, r);
    }

    #[test]
    fn aggregates_two_pass() {
        let aggs = sample().aggregates();
        let a = aggs.iter().find(|a| a.dataset.as_deref() == Some("a")).unwrap();
        assert_eq!(a.n, 2);
        assert!((a.mean - 0.85).abs() < 1e-12);
        assert!((a.std - (0.005f64).sqrt()).abs() < 1e-12);
        let b = aggs.iter().find(|a| a.dataset.as_deref() == Some("b")).unwrap();
        assert_eq!((b.n, b.failed, b.std), (1, 1, 0.0));
        let pooled = aggs.iter().find(|a| a.dataset.is_none()).unwrap();
        assert_eq!(pooled.n, 3);
    }

    #[test]
    fn reductions() {
        let mut r = sample();
        r.records.retain(|x| x.macro_auc.is_some());
        for x in r.records.clone() {
            r.records.push(EvalRecord { model: "ref".into(), macro_auc: Some(0.7), ..x });
        }
        let red = error_reductions(&r, "ref");
        assert_eq!(red.len(), 1);
        let m = (0.9 + 0.8 + 0.3) / 3.0;
        assert!((red[0].2 - ((0.3 - (1.0 - m)) / (1.0 - m) * 100.0)).abs() < 1e-9);
    }
}
