use std::path::{Path, PathBuf};

use qslaw::data::Arm;
use qslaw::harness::{run_arms, write_run, RunConfig};

use crate::{ArmChoice, CliResult, Failure};

pub fn run(config: &Path, arm: Option<ArmChoice>, steps: Option<u64>, output: Option<PathBuf>) -> CliResult<()> {
    let mut cfg = RunConfig::load(config).map_err(|e| match e {
        qslaw::Error::Io(io) => Failure::Usage(format!("cannot read config {}: {io}", config.display())),
        other => other.into(),
    })?;
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(o) = output {
        cfg.output = o;
    }
    let arms = match arm {
        None => vec![cfg.arm],
        Some(ArmChoice::MultimodalOnly) => vec![Arm::MultimodalOnly],
        Some(ArmChoice::Hybrid) => vec![Arm::Hybrid],
        Some(ArmChoice::Warmup) => vec![Arm::Warmup],
        Some(ArmChoice::All) => Arm::ALL.to_vec(),
    };
    if arms.len() == 1 {
        cfg.arm = arms[0];
    }

    let (base, outcomes) = run_arms(&cfg, &arms, &mut |r| {
        eprintln!(
            "{} step {}: train_loss {:.4} accuracy {:.4} perplexity {:.4}",
            r.arm, r.step, r.train_loss, r.eval_accuracy, r.lm_perplexity
        )
    })?;
    if let (Some(first), Some(last)) = (base.pretrain_losses.first(), base.pretrain_losses.last()) {
        eprintln!("pretraining loss {first:.4} -> {last:.4}");
    }
    for outcome in &outcomes {
        let dir = if arms.len() == 1 {
            cfg.output.clone()
        } else {
            cfg.output.join(outcome.checkpoint.config.arm.as_str())
        };
        let (ck, metrics) = write_run(&dir, outcome)?;
        eprintln!("wrote {} and {}", ck.display(), metrics.display());
    }
    Ok(())
}
