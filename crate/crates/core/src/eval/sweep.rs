//! Natural/robust accuracy sweeps.
//!
//! Adversarial batches are generated once per `(model, attack)` against the
//! SNR-free encoder oracle - perturbations live in pixel space - and reused
//! across every grid point.

use super::EvalError;
use crate::attack::{
    pgd_whitebox_attack, random_attack, sna_attack, AttackBudget, EncoderOracle,
};
use crate::datasets::{LabeledImage, PlateSample, TaskData};
use crate::rng::derive_seed;
use crate::semcom::{classify_accuracy, plate_accuracy, ModelCheckpoint, Provenance};
use crate::{Image, Pipeline};
use log::warn;
use serde::{Deserialize, Serialize};

/// Which attack produced the evaluated inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTag {
    None,
    Sna,
    Pgd,
    Random,
}

impl std::fmt::Display for AttackTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackTag::None => "none",
            AttackTag::Sna => "sna",
            AttackTag::Pgd => "pgd",
            AttackTag::Random => "random",
        })
    }
}

impl std::str::FromStr for AttackTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(AttackTag::None),
            "sna" => Ok(AttackTag::Sna),
            "pgd" => Ok(AttackTag::Pgd),
            "random" => Ok(AttackTag::Random),
            other => Err(format!("unknown attack tag '{other}'")),
        }
    }
}

/// One accuracy measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model_tag: Provenance,
    pub attack_tag: AttackTag,
    pub snr_db: f64,
    pub epsilon: f64,
    pub accuracy: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl ResultRow {
    /// Uniqueness key within a table.
    pub fn key(&self) -> (Provenance, AttackTag, u64, u64, u64) {
        (
            self.model_tag,
            self.attack_tag,
            self.snr_db.to_bits(),
            self.epsilon.to_bits(),
            self.seed,
        )
    }
}

/// Sweep parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Evaluation SNR grid in dB, strictly increasing.
    pub snr_grid: Vec<f64>,
    pub budget: AttackBudget,
    pub attacks: Vec<AttackTag>,
    /// Cap on evaluated samples per point (the same subset everywhere);
    /// `None` means the full test set.
    pub n_samples: Option<usize>,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.snr_grid.is_empty() {
            return Err(EvalError::Config("empty SNR grid".into()));
        }
        if self.snr_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Config("SNR grid must be strictly increasing".into()));
        }
        if self.attacks.is_empty() {
            return Err(EvalError::Config("no attacks selected".into()));
        }
        Ok(())
    }
}

enum EvalSet {
    Classification(Vec<LabeledImage>),
    Plates(Vec<PlateSample>),
}

impl EvalSet {
    fn originals(&self) -> Vec<Image> {
        match self {
            EvalSet::Classification(v) => v.iter().map(|s| s.pixels.clone()).collect(),
            EvalSet::Plates(v) => v.iter().map(|s| s.pixels.clone()).collect(),
        }
    }

    fn with_pixels(&self, pixels: &[Image]) -> EvalSet {
        match self {
            EvalSet::Classification(v) => EvalSet::Classification(
                v.iter()
                    .zip(pixels.iter())
                    .map(|(s, px)| LabeledImage { pixels: px.clone(), label: s.label })
                    .collect(),
            ),
            EvalSet::Plates(v) => EvalSet::Plates(
                v.iter()
                    .zip(pixels.iter())
                    .map(|(s, px)| PlateSample { pixels: px.clone(), chars: s.chars.clone() })
                    .collect(),
            ),
        }
    }

    fn accuracy(&self, model: &Pipeline, snr_db: f64, seed: u64) -> Result<f64, EvalError> {
        Ok(match self {
            EvalSet::Classification(v) => classify_accuracy(model, v, snr_db, seed)?,
            EvalSet::Plates(v) => plate_accuracy(model, v, snr_db, seed)?,
        })
    }

    fn len(&self) -> usize {
        match self {
            EvalSet::Classification(v) => v.len(),
            EvalSet::Plates(v) => v.len(),
        }
    }
}

/// Generates one adversarial variant of the evaluation set against `model`.
pub(crate) fn attacked_pixels(
    model: &Pipeline,
    originals: &[Image],
    attack: AttackTag,
    budget: &AttackBudget,
) -> Result<Vec<Image>, EvalError> {
    Ok(match attack {
        AttackTag::None => originals.to_vec(),
        AttackTag::Sna => {
            let oracle = EncoderOracle::new(model);
            let batch = sna_attack(&oracle, originals, budget)?;
            batch.validate(budget.epsilon)?;
            batch.perturbed
        }
        AttackTag::Pgd => {
            let batch = pgd_whitebox_attack(model, originals, budget)?;
            batch.validate(budget.epsilon)?;
            batch.perturbed
        }
        AttackTag::Random => {
            let batch = random_attack(originals, budget.epsilon, budget.seed)?;
            batch.validate(budget.epsilon)?;
            batch.perturbed
        }
    })
}

/// Runs the full `models x attacks x grid` sweep. Deterministic under fixed
/// seeds; rows come back sorted by `(model, attack, snr)`.
pub fn run_snr_sweep(
    checkpoints: &[ModelCheckpoint],
    test: &TaskData,
    sweep: &SweepConfig,
) -> Result<Vec<ResultRow>, EvalError> {
    sweep.validate()?;
    if checkpoints.is_empty() {
        return Err(EvalError::Config("no model checkpoints".into()));
    }
    let eval_set = match test {
        TaskData::Classification(v) => {
            let n = sweep.n_samples.unwrap_or(v.len()).min(v.len());
            EvalSet::Classification(v[..n].to_vec())
        }
        TaskData::Plates(v) => {
            let n = sweep.n_samples.unwrap_or(v.len()).min(v.len());
            EvalSet::Plates(v[..n].to_vec())
        }
    };
    if eval_set.len() == 0 {
        return Err(EvalError::Config("empty evaluation set".into()));
    }
    let originals = eval_set.originals();

    let mut rows = Vec::new();
    for (model_idx, ckpt) in checkpoints.iter().enumerate() {
        let model = ckpt.restore().map_err(|e| {
            EvalError::Config(format!("checkpoint {model_idx} does not restore: {e}"))
        })?;
        for (attack_idx, &attack) in sweep.attacks.iter().enumerate() {
            let pixels = attacked_pixels(&model, &originals, attack, &sweep.budget)?;
            let variant = eval_set.with_pixels(&pixels);
            let epsilon = match attack {
                AttackTag::None => 0.0,
                _ => sweep.budget.epsilon,
            };
            let _ = attack_idx;
            for (snr_idx, &snr_db) in sweep.snr_grid.iter().enumerate() {
                // Channel noise is paired across attacks (same seed for the
                // same model and SNR), so curves differ only through the
                // perturbed pixels.
                let noise_seed =
                    derive_seed(sweep.seed, &[0x59E, model_idx as u64, snr_idx as u64]);
                let accuracy = variant.accuracy(&model, snr_db, noise_seed)?;
                rows.push(ResultRow {
                    model_tag: ckpt.provenance,
                    attack_tag: attack,
                    snr_db,
                    epsilon,
                    accuracy,
                    n_samples: variant.len(),
                    seed: sweep.seed,
                });
            }
        }
    }
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(rows)
}

/// Accuracy drop of an attack against the natural upper bound, in points.
/// Negative drops (sampling noise) are returned as-is and logged.
pub fn compute_attack_success(
    natural_row: &ResultRow,
    robust_row: &ResultRow,
) -> Result<f64, EvalError> {
    if natural_row.model_tag != robust_row.model_tag
        || natural_row.snr_db != robust_row.snr_db
        || natural_row.seed != robust_row.seed
    {
        return Err(EvalError::Contract(format!(
            "rows are not paired: ({}, {}, {}) vs ({}, {}, {})",
            natural_row.model_tag,
            natural_row.snr_db,
            natural_row.seed,
            robust_row.model_tag,
            robust_row.snr_db,
            robust_row.seed
        )));
    }
    let drop = natural_row.accuracy - robust_row.accuracy;
    if drop < 0.0 {
        warn!(
            "negative attack success {drop:.4} for {} vs {} at {} dB",
            robust_row.attack_tag, robust_row.model_tag, robust_row.snr_db
        );
    }
    Ok(drop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_synthetic, SyntheticSpec};
    use crate::semcom::{PipelineConfig, SemComPipeline, TaskKind};

    fn checkpoint() -> ModelCheckpoint {
        let cfg = PipelineConfig {
            task: TaskKind::Classification,
            input_shape: (3, 8, 8),
            num_classes: 3,
            d_s: 8,
            d_c: 6,
            encoder_arch: "small_cnn_tiny".into(),
            head_arch: "dense".into(),
            seed: 4,
        };
        let p = SemComPipeline::<f32>::build(&cfg).unwrap();
        ModelCheckpoint::capture(&p, Provenance::Natural, vec![])
    }

    fn test_data() -> TaskData {
        let spec =
            SyntheticSpec { num_classes: 3, samples_per_class: 12, image_size: 8, seed: 8 };
        TaskData::Classification(make_synthetic(&spec).unwrap().test)
    }

    fn tiny_sweep() -> SweepConfig {
        SweepConfig {
            snr_grid: vec![0.0, 10.0],
            budget: AttackBudget {
                epsilon: 0.5,
                max_iterations: 2,
                step_size: 0.1,
                queries_per_iteration: 4,
                ..Default::default()
            },
            attacks: vec![AttackTag::None, AttackTag::Sna, AttackTag::Random],
            n_samples: Some(6),
            seed: 99,
        }
    }

    #[test]
    fn row_count_is_models_times_attacks_times_grid() {
        let rows = run_snr_sweep(&[checkpoint()], &test_data(), &tiny_sweep()).unwrap();
        assert_eq!(rows.len(), 1 * 3 * 2);
        // Keys unique.
        let mut keys: Vec<_> = rows.iter().map(|r| r.key()).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), rows.len());
    }

    #[test]
    fn sweep_is_deterministic() {
        let ck = [checkpoint()];
        let data = test_data();
        let sweep = tiny_sweep();
        let a = run_snr_sweep(&ck, &data, &sweep).unwrap();
        let b = run_snr_sweep(&ck, &data, &sweep).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sna_with_zero_epsilon_equals_no_attack() {
        let ck = [checkpoint()];
        let data = test_data();
        let mut sweep = tiny_sweep();
        sweep.budget.epsilon = 0.0;
        sweep.attacks = vec![AttackTag::None, AttackTag::Sna];
        let rows = run_snr_sweep(&ck, &data, &sweep).unwrap();
        for snr_idx in 0..sweep.snr_grid.len() {
            let none = rows
                .iter()
                .find(|r| r.attack_tag == AttackTag::None && r.snr_db == sweep.snr_grid[snr_idx])
                .unwrap();
            let sna = rows
                .iter()
                .find(|r| r.attack_tag == AttackTag::Sna && r.snr_db == sweep.snr_grid[snr_idx])
                .unwrap();
            assert_eq!(none.n_samples, sna.n_samples);
            assert_eq!(
                none.accuracy, sna.accuracy,
                "epsilon=0 SNA rows must match attack-free rows exactly"
            );
        }
    }

    #[test]
    fn attack_success_pairs_rows() {
        let natural = ResultRow {
            model_tag: Provenance::Natural,
            attack_tag: AttackTag::None,
            snr_db: 10.0,
            epsilon: 0.0,
            accuracy: 0.98,
            n_samples: 100,
            seed: 1,
        };
        let robust = ResultRow {
            attack_tag: AttackTag::Sna,
            epsilon: 3.6,
            accuracy: 0.58,
            ..natural.clone()
        };
        let drop = compute_attack_success(&natural, &robust).unwrap();
        assert!((drop - 0.40).abs() < 1e-12);
        assert_eq!(compute_attack_success(&natural, &natural.clone()).unwrap(), 0.0);

        let mismatched = ResultRow { snr_db: 20.0, ..robust };
        assert!(compute_attack_success(&natural, &mismatched).is_err());

        // Negative drops are reported as-is.
        let lucky = ResultRow {
            attack_tag: AttackTag::Random,
            accuracy: 0.99,
            ..natural.clone()
        };
        assert!(compute_attack_success(&natural, &lucky).unwrap() < 0.0);
    }
}
