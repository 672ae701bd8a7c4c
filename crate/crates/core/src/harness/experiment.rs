//! Pretrain, quantize, then fine-tune one or more schedule arms from the
//! same starting point.

use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::io::write_atomic;
use crate::analysis::{alignment_profile, compare_modalities, write_metrics_csv, ActivationStats, AlignmentProfile, MetricsRecord};
use crate::data::{
    corpus_streams, gen_linguistic_batch, gen_multimodal_batch, gen_multimodal_sample, Arm, CorpusStream, Modality,
    ModalityBatch, Sequence,
};
use crate::error::Result;
use crate::model::{evaluate, pretrain, train_step, EvalSet, ModelState, Optimizer};

const EVAL_SALT: u64 = 0x5851_f42d_4c95_7f2d;
const PROBE_SALT: u64 = 0x1405_7b7e_f767_814f;

pub const CHECKPOINT_FILE: &str = "checkpoint.qsck";
pub const METRICS_FILE: &str = "metrics.csv";

/// Pretrained, quantized model shared by every arm of one seed.
#[derive(Clone, Debug)]
pub struct Base {
    pub state: ModelState,
    /// Linguistic training stream, positioned after the pretraining windows.
    pub train_stream: CorpusStream,
    pub eval: EvalSet,
    pub pretrain_losses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<MetricsRecord>,
}

fn read_corpus(cfg: &RunConfig) -> Result<Option<String>> {
    cfg.corpus.as_ref().map(std::fs::read_to_string).transpose().map_err(Into::into)
}

fn streams(cfg: &RunConfig) -> Result<(CorpusStream, CorpusStream)> {
    let text = read_corpus(cfg)?;
    let window = cfg.lm_window.max(cfg.pretrain.window);
    corpus_streams(text.as_deref(), cfg.seed, window)
}

pub fn eval_set(cfg: &RunConfig, heldout: &mut CorpusStream) -> Result<EvalSet> {
    let multimodal = (0..cfg.eval_multimodal as u64)
        .map(|i| Sequence::from_sample(&gen_multimodal_sample(cfg.seed ^ EVAL_SALT, i)))
        .collect();
    let linguistic = gen_linguistic_batch(heldout, cfg.lm_window, cfg.eval_windows)?.sequences;
    Ok(EvalSet { multimodal, linguistic })
}

pub fn prepare_base(cfg: &RunConfig) -> Result<Base> {
    cfg.model.validate()?;
    let (mut train_stream, mut heldout) = streams(cfg)?;
    let mut state = ModelState::init(&cfg.model)?;
    let pretrain_losses = pretrain(&mut state, &mut train_stream, &cfg.pretrain)?;
    state.quantize_backbone_default()?;
    let eval = eval_set(cfg, &mut heldout)?;
    Ok(Base {
        state,
        train_stream,
        eval,
        pretrain_losses,
    })
}

/// Fine-tunes `cfg.arm` from `base`, calling `observe` on each metrics record.
pub fn run_arm(cfg: &RunConfig, base: &Base, observe: &mut dyn FnMut(&MetricsRecord)) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut state = base.state.clone();
    let mut stream = base.train_stream.clone();
    let mut opt = Optimizer::new(cfg.sgd, &state)?;
    let schedule = cfg.schedule();
    let bs = cfg.batch_size;
    let mut next_sample = 0u64;
    let mut records = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    for step in 0..cfg.steps {
        let batch = match schedule.modality(step) {
            Modality::Multimodal => {
                let b = gen_multimodal_batch(cfg.seed, next_sample, bs)?;
                next_sample += bs as u64;
                b
            }
            Modality::Linguistic => gen_linguistic_batch(&mut stream, cfg.lm_window, bs)?,
        };
        let loss = train_step(&batch, &mut state, &mut opt, step)?;
        if batch.modality == Modality::Multimodal {
            loss_sum += loss;
            loss_count += 1;
        }
        let done = step + 1;
        if done % cfg.eval_interval == 0 || done == cfg.steps {
            let m = evaluate(&state, &base.eval)?;
            let record = MetricsRecord {
                step: done,
                arm: cfg.arm.to_string(),
                train_loss: if loss_count == 0 { f64::NAN } else { loss_sum / loss_count as f64 },
                eval_accuracy: m.accuracy,
                lm_perplexity: m.perplexity,
            };
            observe(&record);
            records.push(record);
            (loss_sum, loss_count) = (0.0, 0);
        }
    }
    Ok(RunOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            step: cfg.steps,
            state,
            optimizer: Some(opt),
        },
        records,
    })
}

/// Runs each arm from one shared base. Arms differ only in their schedule.
pub fn run_arms(
    cfg: &RunConfig,
    arms: &[Arm],
    observe: &mut dyn FnMut(&MetricsRecord),
) -> Result<(Base, Vec<RunOutcome>)> {
    let configs: Vec<RunConfig> = arms.iter().map(|&arm| RunConfig { arm, ..cfg.clone() }).collect();
    for c in &configs {
        c.validate()?;
    }
    let base = prepare_base(cfg)?;
    let outcomes = configs
        .iter()
        .map(|c| run_arm(c, &base, observe))
        .collect::<Result<Vec<_>>>()?;
    Ok((base, outcomes))
}

/// Writes `checkpoint.qsck` and `metrics.csv` into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<(PathBuf, PathBuf)> {
    let ck = dir.join(CHECKPOINT_FILE);
    let metrics = dir.join(METRICS_FILE);
    outcome.checkpoint.save(&ck)?;
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &outcome.records)?;
    write_atomic(&metrics, &buf)?;
    Ok((ck, metrics))
}

/// Fixed multimodal and text batches used for activation analysis.
pub fn probe_batches(cfg: &RunConfig, size: usize) -> Result<(ModalityBatch, ModalityBatch)> {
    let multimodal = gen_multimodal_batch(cfg.seed ^ PROBE_SALT, 0, size)?;
    let (_, mut heldout) = streams(cfg)?;
    let text = gen_linguistic_batch(&mut heldout, cfg.lm_window, size)?;
    Ok((multimodal, text))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    /// Multimodal then text statistics for each block, in block order.
    pub outliers: Vec<ActivationStats>,
    pub alignment: AlignmentProfile,
}

pub fn analyze_state(state: &ModelState, multimodal: &ModalityBatch, text: &ModalityBatch, kappa: f64) -> Result<Analysis> {
    let layers: Vec<usize> = (0..state.config.n_layers).collect();
    Ok(Analysis {
        outliers: compare_modalities(state, multimodal, text, &layers, kappa)?,
        alignment: alignment_profile(state, multimodal)?,
    })
}
