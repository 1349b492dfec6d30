//! JSON report layout and CSV rendering.

use ngcn::{DatasetManifest, ModelSpec, TrainResult, TrainSpec};
use serde::{Deserialize, Serialize};

pub const REPORT_VERSION: u32 = 1;

/// Where the dataset came from, enough to load it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEcho {
    /// Built-in name (`sbm-smoke`) or the directory that was loaded.
    pub source: String,
    pub manifest: DatasetManifest,
}

/// The knobs that distinguish one entry of a command from another.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub removal_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub labels_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hidden_layers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub best_val_metric: f64,
    pub test_metric: f64,
    pub step_of_best: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attention_at_best: Option<Vec<f64>>,
}

impl From<&TrainResult> for RunRecord {
    fn from(r: &TrainResult) -> Self {
        Self {
            seed: r.seed,
            best_val_metric: r.best_val_metric,
            test_metric: r.test_metric,
            step_of_best: r.step_of_best,
            attention_at_best: r.attention_at_best.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub val_mean: f64,
    pub val_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    /// Index into `runs` of the highest validation metric (earliest on ties).
    pub best_run: usize,
    /// Test metric of `best_run`.
    pub best_by_val_test: f64,
}

impl Summary {
    pub fn of(runs: &[RunRecord]) -> Self {
        let val: Vec<f64> = runs.iter().map(|r| r.best_val_metric).collect();
        let test: Vec<f64> = runs.iter().map(|r| r.test_metric).collect();
        let mut best_run = 0;
        for (i, v) in val.iter().enumerate() {
            if *v > val[best_run] {
                best_run = i;
            }
        }
        let (val_mean, val_std) = mean_std(&val);
        let (test_mean, test_std) = mean_std(&test);
        Self {
            val_mean,
            val_std,
            test_mean,
            test_std,
            best_run,
            best_by_val_test: test[best_run],
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub label: String,
    pub model: ModelSpec,
    pub setting: Setting,
    pub runs: Vec<RunRecord>,
    pub summary: Summary,
    /// Mean attention mass per walk power over runs, for attention networks.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_attention_by_power: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_secs: f64,
    /// Wall clock of every run, indexed like `entries[i].runs[j]`.
    pub run_secs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub report_version: u32,
    pub command: String,
    pub dataset: DatasetEcho,
    pub train: TrainSpec,
    /// Seed of perturbation `i` is `perturb_seed + i`, when perturbations apply.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perturb_seed: Option<u64>,
    pub entries: Vec<Entry>,
    /// Wall-clock figures. The only part that differs between identical runs.
    pub timing: Timing,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// One row per entry with its setting and summary.
    pub fn to_csv(&self) -> String {
        let powers = self
            .entries
            .iter()
            .filter_map(|e| e.mean_attention_by_power.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0);
        let mut header = vec![
            "label",
            "base_model",
            "combiner",
            "K",
            "r",
            "layers",
            "removal_fraction",
            "labels_per_class",
            "runs",
            "val_mean",
            "val_std",
            "test_mean",
            "test_std",
            "best_by_val_test",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        header.extend((0..powers).map(|p| format!("attention_power_{p}")));
        let mut out = header.join(",");
        out.push('\n');
        for e in &self.entries {
            let opt = |v: Option<String>| v.unwrap_or_default();
            let mut row = vec![
                e.label.clone(),
                enum_name(&e.model.base_model),
                enum_name(&e.model.combiner),
                e.model.k.to_string(),
                e.model.r.to_string(),
                e.model.layers.to_string(),
                opt(e.setting.removal_fraction.map(|f| f.to_string())),
                opt(e.setting.labels_per_class.map(|c| c.to_string())),
                e.runs.len().to_string(),
                e.summary.val_mean.to_string(),
                e.summary.val_std.to_string(),
                e.summary.test_mean.to_string(),
                e.summary.test_std.to_string(),
                e.summary.best_by_val_test.to_string(),
            ];
            for p in 0..powers {
                row.push(opt(e.mean_attention_by_power.as_ref().and_then(|m| m.get(p)).map(|v| v.to_string())));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn enum_name<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

/// Attention weights summed per walk power. Instances are stored group-major,
/// so instance `i` belongs to power `first_power + i / r`.
pub fn attention_by_power(spec: &ModelSpec, weights: &[f64]) -> Vec<f64> {
    let mut by_power = vec![0.0; spec.first_power + spec.k];
    for (i, w) in weights.iter().enumerate() {
        by_power[spec.power_of(i)] += w;
    }
    by_power
}
