//! Manifest JSON:
//! `{"datasets":[{"id":str,"clips":[{"id":str,"path":str,"primary":str,"secondary":str|null}]}]}`
//!
//! Clips may carry an optional `labels` object with extra per-head labels.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, DatasetRegistry, LabeledClip, PrimaryLabel};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    datasets: Vec<ManifestDataset>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDataset {
    id: String,
    clips: Vec<ManifestClip>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestClip {
    id: String,
    path: String,
    primary: PrimaryLabel,
    secondary: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    labels: BTreeMap<String, String>,
}

pub fn parse_manifest(text: &str) -> Result<DatasetRegistry, CorpusError> {
    let file: ManifestFile = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let datasets = file
        .datasets
        .into_iter()
        .map(|d| Dataset {
            clips: d
                .clips
                .into_iter()
                .map(|c| LabeledClip {
                    dataset_id: d.id.clone(),
                    clip_id: c.id,
                    primary: c.primary,
                    secondary: c.secondary,
                    path: c.path,
                    labels: c.labels,
                })
                .collect(),
            id: d.id,
        })
        .collect();
    DatasetRegistry::new(datasets)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetRegistry, CorpusError> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn to_manifest_json(registry: &DatasetRegistry) -> String {
    let file = ManifestFile {
        datasets: registry
            .datasets()
            .iter()
            .map(|d| ManifestDataset {
                id: d.id.clone(),
                clips: d
                    .clips
                    .iter()
                    .map(|c| ManifestClip {
                        id: c.clip_id.clone(),
                        path: c.path.clone(),
                        primary: c.primary,
                        secondary: c.secondary.clone(),
                        labels: c.labels.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("manifest serializes")
}

pub fn save_manifest(registry: &DatasetRegistry, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    std::fs::write(path, to_manifest_json(registry))?;
    Ok(())
}

/// CSV mirror with columns `dataset,clip,primary,secondary,path`.
pub fn export_csv(registry: &DatasetRegistry, out: impl std::io::Write) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "clip", "primary", "secondary", "path"])?;
    for c in registry.clips() {
        w.write_record([
            c.dataset_id.as_str(),
            c.clip_id.as_str(),
            c.primary.as_str(),
            c.secondary.as_deref().unwrap_or(""),
            c.path.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"datasets":[
        {"id":"kenya","clips":[
            {"id":"k1","path":"k1.wav","primary":"biophony","secondary":"fish"},
            {"id":"k2","path":"k2.wav","primary":"ambient","secondary":null}
        ]},
        {"id":"bermuda","clips":[
            {"id":"b1","path":"b/b1.wav","primary":"anthrophony","secondary":"boat","labels":{"genus":"x"}}
        ]}
    ]}"#;

    #[test]
    fn roundtrip() {
        let reg = parse_manifest(GOOD).unwrap();
        assert_eq!(reg.datasets().len(), 2);
        assert_eq!(reg.get("bermuda").unwrap().clips[0].labels["genus"], "x");
        let again = parse_manifest(&to_manifest_json(&reg)).unwrap();
        assert_eq!(again, reg);
    }

    #[test]
    fn missing_primary_rejected_with_position() {
        let bad = "{\"datasets\":[{\"id\":\"a\",\"clips\":[\n{\"id\":\"c\",\"path\":\"p\",\"secondary\":null}]}]}";
        match parse_manifest(bad) {
            Err(CorpusError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("primary"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_primary_rejected() {
        let bad = r#"{"datasets":[{"id":"a","clips":[{"id":"c","path":"p","primary":"noise","secondary":null}]}]}"#;
        assert!(matches!(parse_manifest(bad), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn duplicate_clip_rejected() {
        let bad = r#"{"datasets":[{"id":"a","clips":[
            {"id":"c","path":"p","primary":"biophony","secondary":null},
            {"id":"c","path":"q","primary":"biophony","secondary":null}]}]}"#;
        assert!(matches!(parse_manifest(bad), Err(CorpusError::DuplicateClip { .. })));
    }

    #[test]
    fn csv_mirror() {
        let reg = parse_manifest(GOOD).unwrap();
        let mut buf = Vec::new();
        export_csv(&reg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "dataset,clip,primary,secondary,path");
        assert_eq!(lines[2], "kenya,k2,ambient,,k2.wav");
        assert_eq!(lines.len(), 4);
    }
}
