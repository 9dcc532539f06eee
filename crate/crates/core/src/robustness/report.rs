use serde::{Deserialize, Serialize};

use crate::data::{subsample, Dataset};
use crate::error::{Error, Result};
use crate::model::{ArchSpec, Model};
use crate::seed;
use crate::sparsity::MaskSet;

use super::attacks::{attack_dataset, AttackSpec};
use super::corruption::{corrupt, CorruptionKind, CorruptionSpec, SEVERITY_TABLE_VERSION};
use super::metrics::{evaluate, Metrics};
use super::noise::{perturbation_curve, CurvePoint, NoiseSpec};

/// Which probes to run on a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probes {
    #[serde(default = "yes")]
    pub clean: bool,
    #[serde(default)]
    pub perturbation: Option<PerturbationProbe>,
    #[serde(default)]
    pub corruption: Option<CorruptionProbe>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    /// Evaluate on a seeded subsample of this many test examples.
    #[serde(default)]
    pub subsample: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for Probes {
    fn default() -> Self {
        Probes {
            clean: true,
            perturbation: None,
            corruption: None,
            attacks: Vec::new(),
            subsample: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationProbe {
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
}

/// σ ∈ {0.1, 0.2, …, 1.0}.
pub fn default_sigmas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

fn default_draws() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionProbe {
    pub kinds: Vec<CorruptionKind>,
    pub severities: Vec<u8>,
}

impl Probes {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.perturbation {
            if p.sigmas.is_empty() || p.sigmas.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config("perturbation sigmas must be nonempty and ascending".into()));
            }
            for &sigma in &p.sigmas {
                NoiseSpec {
                    mu: p.mu,
                    sigma,
                    n_draws: p.n_draws,
                    seed: 0,
                }
                .validate()?;
            }
        }
        if let Some(c) = &self.corruption {
            if c.kinds.is_empty() || c.severities.is_empty() {
                return Err(Error::Config("corruption probe needs kinds and severities".into()));
            }
            for &kind in &c.kinds {
                for &severity in &c.severities {
                    CorruptionSpec::new(kind, severity, 0).validate()?;
                }
            }
        }
        for a in &self.attacks {
            a.validate()?;
        }
        if self.subsample == Some(0) {
            return Err(Error::Config("probe subsample must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub spec: ArchSpec,
    pub keep_fraction: f64,
    pub seed: u64,
    pub severity_table_version: u32,
    /// Parameter of every severity level, per corruption kind.
    pub severity_tables: Vec<(CorruptionKind, [f64; 5])>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionResult {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub attack: AttackSpec,
    pub accuracy: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub metadata: ReportMetadata,
    pub clean: Option<Metrics>,
    pub perturbation: Vec<CurvePoint>,
    pub corruption: Vec<CorruptionResult>,
    pub attacks: Vec<AttackResult>,
}

/// One long-format value: `metric`, `parameter`, `value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub parameter: String,
    pub value: f64,
}

impl MetricRow {
    fn new(metric: &str, parameter: impl Into<String>, value: f64) -> Self {
        MetricRow {
            metric: metric.to_string(),
            parameter: parameter.into(),
            value,
        }
    }
}

impl RobustnessReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        if let Some(m) = &self.clean {
            rows.push(MetricRow::new("clean_accuracy", "", m.accuracy));
            rows.push(MetricRow::new("min_recall", "", m.min_recall));
            for (k, r) in m.recall.iter().enumerate() {
                if let Some(r) = r {
                    rows.push(MetricRow::new("recall", format!("class={k}"), *r));
                }
            }
        }
        for p in &self.perturbation {
            let param = format!("sigma={}", p.sigma);
            rows.push(MetricRow::new("noise_accuracy", param.clone(), p.accuracy));
            rows.push(MetricRow::new("delta_loss", param.clone(), p.delta_loss.mean));
            rows.push(MetricRow::new("delta_loss_stderr", param, p.delta_loss.stderr));
        }
        for c in &self.corruption {
            rows.push(MetricRow::new(
                "corruption_accuracy",
                format!("{}:{}", c.kind.name(), c.severity),
                c.accuracy,
            ));
        }
        for a in &self.attacks {
            rows.push(MetricRow::new("attack_accuracy", a.attack.label(), a.accuracy));
            rows.push(MetricRow::new("attack_success_rate", a.attack.label(), a.success_rate));
        }
        rows
    }

    /// `metric,parameter,value,seed` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,parameter,value,seed\n");
        for r in self.rows() {
            s.push_str(&format!("{},{},{},{}\n", r.metric, r.parameter, r.value, self.metadata.seed));
        }
        s
    }

    /// Compact JSON with fields in declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Runs every configured probe on `testset` (or its seeded subsample).
pub fn run_probes(
    model: &Model,
    masks: Option<&MaskSet>,
    testset: &Dataset,
    probes: &Probes,
    seed: u64,
) -> Result<RobustnessReport> {
    probes.validate()?;
    let owned;
    let data = match probes.subsample {
        Some(n) if n < testset.len() => {
            owned = subsample(testset, n, seed::mix(&[seed, seed::hash_str("probe_subsample")]))?;
            &owned
        }
        _ => testset,
    };
    let clean = if probes.clean {
        Some(evaluate(model, masks, data)?)
    } else {
        None
    };
    let perturbation = match &probes.perturbation {
        Some(p) => {
            let base = NoiseSpec {
                mu: p.mu,
                sigma: 0.0,
                n_draws: p.n_draws,
                seed: seed::mix(&[seed, seed::hash_str("weight_noise")]),
            };
            perturbation_curve(model, masks, data, &p.sigmas, &base)?
        }
        None => Vec::new(),
    };
    let mut corruption = Vec::new();
    if let Some(c) = &probes.corruption {
        for &kind in &c.kinds {
            for &severity in &c.severities {
                let spec = CorruptionSpec::new(kind, severity, seed::mix(&[seed, seed::hash_str("corruption")]));
                let images = corrupt(data.images(), &spec)?;
                let corrupted = data.with_images(images, format!("{}-{}", data.name(), kind.name()))?;
                corruption.push(CorruptionResult {
                    kind,
                    severity,
                    accuracy: evaluate(model, masks, &corrupted)?.accuracy,
                });
            }
        }
    }
    let mut attacks = Vec::new();
    for a in &probes.attacks {
        let spec = AttackSpec {
            seed: seed::mix(&[seed, a.seed]),
            ..a.clone()
        };
        let outcome = attack_dataset(model, masks, data, &spec)?;
        attacks.push(AttackResult {
            attack: a.clone(),
            accuracy: outcome.accuracy,
            success_rate: outcome.success_rate,
        });
    }
    Ok(RobustnessReport {
        metadata: ReportMetadata {
            spec: model.spec().clone(),
            keep_fraction: masks.map_or(1.0, |m| m.keep_fraction()),
            seed,
            severity_table_version: SEVERITY_TABLE_VERSION,
            severity_tables: CorruptionKind::ALL.iter().map(|&k| (k, k.table())).collect(),
        },
        clean,
        perturbation,
        corruption,
        attacks,
    })
}
