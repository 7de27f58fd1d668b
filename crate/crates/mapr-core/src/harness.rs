//! Experiment orchestration: dataset loading, multi-mode training, the
//! attack-by-defense evaluation grid, the consistency-weight sweep, and
//! artifact emission.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, AttackKind};
use crate::cloud::PointCloud;
use crate::data::load_dataset;
use crate::error::{Error, Result};
use crate::geometry::{augment, AUGMENTED_CHANNELS};
use crate::losses::LossConfig;
use crate::model::ModelParams;
use crate::perturb::{sor_defense, PerturbConfig, SorConfig};
use crate::report::{Cell, EvalReport, ReportRow, SweepResult};
use crate::rng::derive_seed;
use crate::train::{
    diagnostics_lipschitz, diagnostics_mu, train, EpochMetrics, LipschitzReport, TrainConfig,
    TrainData, TrainMode,
};

/// Consistency-weight grid swept by `sweep-lambda`.
pub const LAMBDA_GRID: [f64; 6] = [0.1, 0.25, 0.5, 1.0, 1.5, 2.0];

fn default_modes() -> Vec<TrainMode> {
    vec![TrainMode::Vanilla, TrainMode::At, TrainMode::Mapr]
}

fn default_points() -> usize {
    512
}

fn default_true() -> bool {
    true
}

fn default_diag_pairs() -> usize {
    32
}

/// Experiment description. JSON file fields mirror this struct; CLI flags
/// override file values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_modes")]
    pub modes: Vec<TrainMode>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub perturb: PerturbConfig,
    #[serde(default)]
    pub sor: SorConfig,
    /// Point count every ingested cloud is resampled to.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Attack suite override; `None` runs the standard eight attacks.
    #[serde(default)]
    pub attacks: Option<Vec<AttackConfig>>,
    /// Also evaluate each attack behind the SOR defense.
    #[serde(default = "default_true")]
    pub with_sor: bool,
    /// Training epochs for the transfer-attack surrogate models
    /// (defaults to the main epoch count).
    #[serde(default)]
    pub surrogate_epochs: Option<usize>,
    /// Perturbed pairs for the Lipschitz diagnostics; 0 skips diagnostics.
    #[serde(default = "default_diag_pairs")]
    pub diagnostic_pairs: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("bad config JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss.validate()?;
        self.perturb.validate()?;
        if self.modes.is_empty() {
            return Err(Error::config("at least one training mode is required"));
        }
        if self.points < 32 {
            return Err(Error::config("points must be at least 32"));
        }
        Ok(())
    }

    pub fn attack_suite(&self) -> Vec<AttackConfig> {
        self.attacks
            .clone()
            .unwrap_or_else(|| AttackKind::ALL.iter().map(|k| AttackConfig::standard(*k)).collect())
    }
}

/// Stable per-mode stream index, independent of the configured mode subset.
fn mode_ordinal(mode: TrainMode) -> u64 {
    TrainMode::ALL.iter().position(|m| *m == mode).unwrap() as u64
}

/// Classifier accuracy (percent) over labeled clouds, optionally behind the
/// SOR defense. Features are recomputed from whatever cloud reaches the
/// classifier.
pub fn accuracy(
    params: &ModelParams,
    clouds: &[PointCloud],
    sor: Option<&SorConfig>,
) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::data("no clouds to evaluate"));
    }
    let hits: Result<Vec<bool>> = clouds
        .par_iter()
        .map(|cloud| {
            let label = cloud
                .label
                .ok_or_else(|| Error::data("evaluation cloud without label"))?;
            let defended = match sor {
                Some(cfg) => sor_defense(cloud, cfg),
                None => cloud.clone(),
            };
            let values = if params.input_width == AUGMENTED_CHANNELS {
                augment(&defended)?.values
            } else {
                defended.flat()
            };
            let (pred, _) = params.predict(&values, defended.len())?;
            Ok(pred == label)
        })
        .collect();
    let hits = hits?;
    Ok(100.0 * hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

/// Outcome of attacking every test cloud with one attack.
pub struct AttackRun {
    pub adv_clouds: Vec<PointCloud>,
    pub success_rate: f64,
    pub mean_norm: f64,
}

/// Run one attack over the test set against `params`, seeding each sample
/// deterministically from `(seed, mode, attack, sample index)`.
pub fn attack_test_set(
    cfg: &AttackConfig,
    params: &ModelParams,
    surrogates: &[&ModelParams],
    clouds: &[PointCloud],
    seed: u64,
    mode_tag: &str,
) -> Result<AttackRun> {
    let results: Result<Vec<_>> = clouds
        .par_iter()
        .enumerate()
        .map(|(i, cloud)| {
            let label = cloud
                .label
                .ok_or_else(|| Error::data("attack target without label"))?;
            let mut sample_cfg = cfg.clone();
            sample_cfg.seed =
                derive_seed(seed, &format!("atk/{mode_tag}/{}", cfg.kind.label()), i as u64);
            run_attack(&sample_cfg, params, surrogates, cloud, label)
        })
        .collect();
    let results = results?;
    let n = results.len() as f64;
    let success_rate = results.iter().filter(|r| r.success).count() as f64 / n;
    let mean_norm = results.iter().map(|r| r.perturbation_norm).sum::<f64>() / n;
    Ok(AttackRun {
        adv_clouds: results.into_iter().map(|r| r.adv_cloud).collect(),
        success_rate,
        mean_norm,
    })
}

/// Per-mode artifacts of one experiment.
pub struct TrainedMode {
    pub mode: TrainMode,
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Train one mode under the experiment's derived seeds.
pub fn train_mode(
    cfg: &ExperimentConfig,
    data: &TrainData,
    mode: TrainMode,
) -> Result<TrainedMode> {
    let ord = mode_ordinal(mode);
    let mut params = ModelParams::new(
        mode.input_width(),
        data.num_classes,
        derive_seed(cfg.seed, "init", ord),
    );
    let train_cfg = TrainConfig {
        mode,
        seed: derive_seed(cfg.seed, "train", ord),
        ..cfg.train.clone()
    };
    let metrics = train(&mut params, data, &cfg.loss, &train_cfg, &cfg.perturb)?;
    Ok(TrainedMode {
        mode,
        params,
        metrics,
    })
}

fn write_metrics_ndjson(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeDiagnostics {
    pub mode: String,
    pub mu_estimate: f64,
    pub lipschitz: LipschitzReport,
}

pub struct ExperimentOutput {
    pub report: EvalReport,
    pub trained: Vec<TrainedMode>,
    pub diagnostics: Vec<ModeDiagnostics>,
}

/// Full protocol: train every requested mode, evaluate the attack grid with
/// and without SOR, write checkpoints, metrics, report and diagnostics under
/// `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    let resolved = serde_json::to_string_pretty(cfg).expect("config serializes");
    let config_path = cfg.out_dir.join("config.json");
    std::fs::write(&config_path, resolved)
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;

    let (train_clouds, test_clouds, num_classes) =
        load_dataset(&cfg.data_dir, cfg.points, cfg.seed)?;
    if test_clouds.is_empty() {
        return Err(Error::data("dataset has no test split"));
    }
    let need_phi = cfg
        .modes
        .iter()
        .any(|m| m.input_width() == AUGMENTED_CHANNELS || m.uses_consistency());
    let data = TrainData::prepare(train_clouds, num_classes, need_phi)?;

    let attack_suite = cfg.attack_suite();

    // transfer-attack surrogates: independently seeded raw-input models
    let surrogates: Vec<ModelParams> = if attack_suite.iter().any(|a| a.kind == AttackKind::Tpgd) {
        let mut out = Vec::new();
        for i in 0..2u64 {
            let mut params =
                ModelParams::new(3, num_classes, derive_seed(cfg.seed, "surrogate-init", i));
            let train_cfg = TrainConfig {
                mode: TrainMode::Vanilla,
                seed: derive_seed(cfg.seed, "surrogate-train", i),
                epochs: cfg.surrogate_epochs.unwrap_or(cfg.train.epochs),
                ..cfg.train.clone()
            };
            train(&mut params, &data, &cfg.loss, &train_cfg, &cfg.perturb)?;
            out.push(params);
        }
        out
    } else {
        Vec::new()
    };
    let surrogate_refs: Vec<&ModelParams> = surrogates.iter().collect();

    let mut trained = Vec::new();
    for &mode in &cfg.modes {
        let tm = train_mode(cfg, &data, mode)?;
        tm.params
            .save(&cfg.out_dir.join(format!("ckpt_{}.bin", mode.label())))?;
        write_metrics_ndjson(
            &cfg.out_dir
                .join(format!("metrics_{}.ndjson", mode.label())),
            &tm.metrics,
        )?;
        trained.push(tm);
    }

    let mut rows = Vec::new();
    let defenses: Vec<Option<SorConfig>> = if cfg.with_sor {
        vec![None, Some(cfg.sor.clone())]
    } else {
        vec![None]
    };
    for tm in &trained {
        let mode_tag = tm.mode.label();
        // adversarial clouds are generated once per attack and reused by
        // every defense column
        let mut adv_sets: Vec<(String, std::result::Result<Vec<PointCloud>, String>)> = Vec::new();
        for atk in &attack_suite {
            let run = attack_test_set(
                atk,
                &tm.params,
                &surrogate_refs,
                &test_clouds,
                cfg.seed,
                mode_tag,
            );
            adv_sets.push((
                atk.kind.label().to_string(),
                run.map(|r| r.adv_clouds).map_err(|e| e.to_string()),
            ));
        }
        for defense in &defenses {
            let defense_name = match defense {
                None => "none",
                Some(_) => "sor",
            };
            let clean: Cell = accuracy(&tm.params, &test_clouds, defense.as_ref()).into();
            let mut attack_cells = Vec::new();
            for (label, advs) in &adv_sets {
                let cell: Cell = match advs {
                    Ok(advs) => accuracy(&tm.params, advs, defense.as_ref()).into(),
                    Err(e) => Cell::Failed { error: e.clone() },
                };
                attack_cells.push((label.clone(), cell));
            }
            rows.push(ReportRow::new(
                mode_tag.to_string(),
                defense_name.to_string(),
                clean,
                attack_cells,
            ));
        }
    }

    let report = EvalReport {
        attack_order: attack_suite.iter().map(|a| a.kind.label().to_string()).collect(),
        rows,
    };
    let csv_path = cfg.out_dir.join("report.csv");
    std::fs::write(&csv_path, report.to_csv())
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let json_path = cfg.out_dir.join("report.json");
    std::fs::write(&json_path, report.to_json())
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;

    let mut diagnostics = Vec::new();
    if cfg.diagnostic_pairs > 0 {
        for tm in &trained {
            let mu = diagnostics_mu(&tm.params, &test_clouds[0], 8)?;
            let lipschitz = diagnostics_lipschitz(
                &tm.params,
                &test_clouds,
                cfg.diagnostic_pairs,
                &cfg.perturb,
                cfg.loss.epsilon,
                derive_seed(cfg.seed, "diag", mode_ordinal(tm.mode)),
            )?;
            diagnostics.push(ModeDiagnostics {
                mode: tm.mode.label().to_string(),
                mu_estimate: mu,
                lipschitz,
            });
        }
        let diag_path = cfg.out_dir.join("diagnostics.json");
        let text = serde_json::to_string_pretty(&diagnostics).expect("diagnostics serialize");
        std::fs::write(&diag_path, text)
            .map_err(|e| Error::io(diag_path.display().to_string(), e))?;
    }

    Ok(ExperimentOutput {
        report,
        trained,
        diagnostics,
    })
}

/// Sweep the consistency weight over `LAMBDA_GRID` for the consistency-using
/// modes in the config (default: full training, clean-accuracy selection).
pub fn sweep_lambda(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    let modes: Vec<TrainMode> = {
        let m: Vec<TrainMode> = cfg
            .modes
            .iter()
            .copied()
            .filter(|m| m.uses_consistency())
            .collect();
        if m.is_empty() {
            vec![TrainMode::Mapr]
        } else {
            m
        }
    };
    let (train_clouds, test_clouds, num_classes) =
        load_dataset(&cfg.data_dir, cfg.points, cfg.seed)?;
    let data = TrainData::prepare(train_clouds, num_classes, true)?;

    let mut clean_acc: Vec<Vec<f64>> = Vec::with_capacity(LAMBDA_GRID.len());
    for &lambda in &LAMBDA_GRID {
        let mut row = Vec::with_capacity(modes.len());
        for &mode in &modes {
            let mut sub = cfg.clone();
            sub.loss.lambda_max = lambda;
            let tm = train_mode(&sub, &data, mode)?;
            row.push(accuracy(&tm.params, &test_clouds, None)?);
        }
        clean_acc.push(row);
    }
    let sweep = SweepResult::new(
        modes.iter().map(|m| m.label().to_string()).collect(),
        &LAMBDA_GRID,
        clean_acc,
    )?;
    let json_path = cfg.out_dir.join("sweep.json");
    std::fs::write(&json_path, sweep.to_json())
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let csv_path = cfg.out_dir.join("sweep.csv");
    std::fs::write(&csv_path, sweep.to_csv())
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok(sweep)
}
