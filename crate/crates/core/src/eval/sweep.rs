use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{fewshot_eval, EvalError, FewshotConfig};
use crate::corpus::DatasetRegistry;
use crate::embedder::{AudioBackend, AudioSource};
use crate::pretrain::{derive_heads, pretrain_toy, MixtureConfig, PretrainHparams, SourceSpec, ToyArch};

/// Parameter name → value for one sweep configuration.
pub type SweepPoint = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<Value>,
}

/// One stage of a sweep: a full grid over `axes` on top of `fixed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub training_data: String,
    pub stage: Option<u32>,
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub fixed: SweepPoint,
    pub training: Vec<String>,
    pub validation: Vec<String>,
}

fn axis<T: Into<Value> + Copy>(name: &str, values: &[T]) -> Axis {
    Axis {
        name: name.to_owned(),
        values: values.iter().map(|&v| v.into()).collect(),
    }
}

const LRS: [f64; 3] = [0.01, 0.001, 0.0001];
const ARCHS: [&str; 3] = ["t0", "t1", "t2"];
const BATCHES: [u64; 2] = [64, 128];

impl SweepSpec {
    fn stage(training_data: &str, stage: Option<u32>, axes: Vec<Axis>, training: &[&str], validation: &[&str]) -> Self {
        Self {
            training_data: training_data.to_owned(),
            stage,
            axes,
            fixed: SweepPoint::new(),
            training: training.iter().map(|s| (*s).to_owned()).collect(),
            validation: validation.iter().map(|s| (*s).to_owned()).collect(),
        }
    }

    /// Single stage: architecture × learning rate × batch size (18 points).
    pub fn reefset(training: &[&str], validation: &[&str]) -> Vec<Self> {
        vec![Self::stage(
            "ReefSet",
            None,
            vec![axis("arch", &ARCHS), axis("lr", &LRS), axis("batch", &BATCHES)],
            training,
            validation,
        )]
    }

    /// Stage 1: learning rate × bird weight (15); stage 2: architecture ×
    /// batch size (6).
    pub fn reef_bird(training: &[&str], validation: &[&str]) -> Vec<Self> {
        let mut s1 = Self::stage(
            "ReefSet + Bird",
            Some(1),
            vec![axis("lr", &LRS), axis("bird_weight", &[0.1, 0.25, 0.5, 0.75, 0.9])],
            training,
            validation,
        );
        s1.fixed.insert("arch".into(), "t1".into());
        s1.fixed.insert("batch".into(), 64.into());
        let s2 = Self::stage(
            "ReefSet + Bird",
            Some(2),
            vec![axis("arch", &ARCHS), axis("batch", &BATCHES)],
            training,
            validation,
        );
        vec![s1, s2]
    }

    /// Stage 1: learning rate × bird weight with the reef weight fixed at
    /// 0.1 and the rest to the general-sound source (12); stage 2 as for
    /// [`SweepSpec::reef_bird`] (6).
    pub fn reef_bird_freesound(training: &[&str], validation: &[&str]) -> Vec<Self> {
        let mut stages = Self::reef_bird(training, validation);
        for s in &mut stages {
            s.training_data = "ReefSet + Bird + Freesound".into();
        }
        stages[0].axes[1] = axis("bird_weight", &[0.5, 0.6, 0.7, 0.8]);
        stages[0].fixed.insert("reef_weight".into(), 0.1.into());
        stages
    }

    pub fn preset(name: &str, training: &[&str], validation: &[&str]) -> Option<Vec<Self>> {
        match name {
            "reefset" => Some(Self::reefset(training, validation)),
            "reef_bird" => Some(Self::reef_bird(training, validation)),
            "reef_bird_freesound" => Some(Self::reef_bird_freesound(training, validation)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.axes.is_empty() || self.axes.iter().any(|a| a.values.is_empty()) {
            return Err(EvalError::Config(format!("stage {:?} has an empty axis", self.stage)));
        }
        if let Some(v) = self.validation.iter().find(|v| self.training.contains(v)) {
            return Err(EvalError::Config(format!("validation dataset {v:?} is also used for training")));
        }
        if self.validation.is_empty() {
            return Err(EvalError::Config("no validation datasets".into()));
        }
        Ok(())
    }

    /// Grid points in axis order, last axis fastest.
    pub fn grid(&self) -> Vec<SweepPoint> {
        let mut points = vec![SweepPoint::new()];
        for a in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    a.values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(a.name.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub training_data: String,
    pub stage: Option<u32>,
    /// Values of this stage's axes.
    pub probed: SweepPoint,
    /// Full configuration that was run.
    pub config: SweepPoint,
    pub auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn best(&self, stage: Option<u32>) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.stage == stage && r.auc.is_some())
            .max_by(|a, b| a.auc.partial_cmp(&b.auc).expect("finite AUC"))
    }

    /// Columns `training_data,stage,batch,arch,lr,bird_weight,auc`; `NA`
    /// marks a parameter not probed in that stage and a missing stage.
    pub fn write_csv(&self, out: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["training_data", "stage", "batch", "arch", "lr", "bird_weight", "auc"])?;
        let cell = |p: &SweepPoint, k: &str| match p.get(k) {
            Some(Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => "NA".into(),
        };
        for r in &self.rows {
            w.write_record([
                r.training_data.clone(),
                r.stage.map_or("NA".into(), |s| s.to_string()),
                cell(&r.probed, "batch"),
                cell(&r.probed, "arch"),
                cell(&r.probed, "lr"),
                cell(&r.probed, "bird_weight"),
                r.auc.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the stages in order. Each later stage starts from the best point of
/// the stages before it. `run` scores one configuration (mean AUC); an
/// error is recorded as a row without AUC. Rows are sorted by stage, then
/// AUC descending, with failed rows last.
pub fn sweep(
    stages: &[SweepSpec],
    run: &mut dyn FnMut(&SweepSpec, &SweepPoint) -> Result<f64, String>,
) -> Result<SweepTable, EvalError> {
    stages.iter().try_for_each(SweepSpec::validate)?;
    let mut carried = SweepPoint::new();
    let mut rows = Vec::new();
    for spec in stages {
        let mut stage_rows = Vec::new();
        for probed in spec.grid() {
            let mut config = carried.clone();
            config.extend(spec.fixed.clone());
            config.extend(probed.clone());
            let (auc, error) = match run(spec, &config) {
                Ok(a) if a.is_finite() => (Some(a), None),
                Ok(a) => (None, Some(format!("non-finite score {a}"))),
                Err(e) => (None, Some(e)),
            };
            stage_rows.push(SweepRow {
                training_data: spec.training_data.clone(),
                stage: spec.stage,
                probed,
                config,
                auc,
                error,
            });
        }
        let best = stage_rows
            .iter()
            .filter(|r| r.auc.is_some())
            .max_by(|a, b| a.auc.partial_cmp(&b.auc).expect("finite AUC"));
        if let Some(b) = best {
            carried = b.config.clone();
        }
        rows.extend(stage_rows);
    }
    rows.sort_by(|a, b| {
        a.stage.cmp(&b.stage).then_with(|| match (a.auc, b.auc) {
            (Some(x), Some(y)) => y.partial_cmp(&x).expect("finite AUC"),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        })
    });
    Ok(SweepTable { rows })
}

/// Dataset groups a sweep configuration is built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSources {
    pub reef: Vec<String>,
    #[serde(default)]
    pub bird: Vec<String>,
    #[serde(default)]
    pub freesound: Vec<String>,
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

impl SweepSources {
    /// Mixture for a point: reef only without `bird_weight`; reef + bird
    /// with `1 − bird_weight` for reef; with `reef_weight` set, the rest
    /// goes to the general-sound source.
    pub fn mixture(&self, point: &SweepPoint, base: &MixtureConfig) -> Result<MixtureConfig, String> {
        let f = |k: &str| point.get(k).and_then(Value::as_f64);
        let mut sources = Vec::new();
        match (f("bird_weight"), f("reef_weight")) {
            (None, _) => sources.push(SourceSpec::new("reef", &refs(&self.reef), 1.0)),
            (Some(b), None) => {
                sources.push(SourceSpec::new("reef", &refs(&self.reef), 1.0 - b));
                sources.push(SourceSpec::new("bird", &refs(&self.bird), b));
            }
            (Some(b), Some(r)) => {
                sources.push(SourceSpec::new("reef", &refs(&self.reef), r));
                sources.push(SourceSpec::new("bird", &refs(&self.bird), b));
                sources.push(SourceSpec::new("freesound", &refs(&self.freesound), 1.0 - r - b));
            }
        }
        let mut mix = MixtureConfig {
            sources,
            ..base.clone()
        };
        if let Some(b) = point.get("batch").and_then(Value::as_u64) {
            mix.batch_size = b as usize;
        }
        mix.validate().map_err(|e| e.to_string())?;
        Ok(mix)
    }

    pub fn hparams(point: &SweepPoint, base: &PretrainHparams) -> Result<PretrainHparams, String> {
        let mut hp = *base;
        if let Some(lr) = point.get("lr").and_then(Value::as_f64) {
            hp.lr = lr;
        }
        if let Some(a) = point.get("arch").and_then(Value::as_str) {
            hp.arch = ToyArch::preset(a).ok_or_else(|| format!("unknown arch {a:?}"))?;
        }
        Ok(hp)
    }

    /// Pretrains the toy embedder for `point` and returns its mean macro AUC
    /// over the validation datasets and all few-shot cells.
    #[allow(clippy::too_many_arguments)]
    pub fn score(
        &self,
        spec: &SweepSpec,
        point: &SweepPoint,
        base_mix: &MixtureConfig,
        base_hp: &PretrainHparams,
        fewshot: &FewshotConfig,
        registry: &DatasetRegistry,
        audio: Arc<dyn AudioSource>,
        seed: u64,
    ) -> Result<f64, String> {
        let mix = self.mixture(point, base_mix)?;
        let hp = Self::hparams(point, base_hp)?;
        let heads = derive_heads(registry, &mix).map_err(|e| e.to_string())?;
        let (model, _) = pretrain_toy(&mix, &heads, &hp, registry, audio.as_ref(), seed).map_err(|e| e.to_string())?;
        let backend = AudioBackend::new(Arc::new(model), audio);
        let mut aucs = Vec::new();
        for v in &spec.validation {
            let ds = registry.get(v).map_err(|e| e.to_string())?;
            let rep = fewshot_eval(ds, &backend, fewshot).map_err(|e| e.to_string())?;
            aucs.extend(rep.records.iter().filter_map(|r| r.macro_auc));
        }
        if aucs.is_empty() {
            return Err("no successful validation cell".into());
        }
        Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
    }
}
