use std::path::Path;

use qslaw::analysis::{
    alignment_profile, bar_chart, capture_block_inputs, outlier_stats, write_alignment_csv, write_outliers_csv,
};
use qslaw::data::Modality;
use qslaw::harness::{probe_batches, write_atomic, Checkpoint};

use crate::{CliResult, Failure};

pub fn run(checkpoint: &Path, output: &Path, multimodal: usize, text: usize, kappa: f64) -> CliResult<()> {
    if multimodal == 0 {
        return Err(Failure::Usage("alignment needs at least one multimodal probe".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let state = &ck.state;
    let layers: Vec<usize> = (0..state.config.n_layers).collect();
    let (mm, tx) = probe_batches(&ck.config, multimodal.max(text))?;
    let mm = qslaw::data::ModalityBatch::new(Modality::Multimodal, mm.sequences[..multimodal].to_vec())?;

    let mut batches = vec![(Modality::Multimodal, capture_block_inputs(state, &mm, &layers)?)];
    if text > 0 {
        let tx = qslaw::data::ModalityBatch::new(Modality::Linguistic, tx.sequences[..text].to_vec())?;
        batches.push((Modality::Linguistic, capture_block_inputs(state, &tx, &layers)?));
    }
    let mut stats = Vec::new();
    for &l in &layers {
        for (m, captured) in &batches {
            let mut s = outlier_stats(&captured[l], kappa)?;
            s.layer = Some(l);
            s.modality = Some(*m);
            stats.push(s);
        }
    }
    let alignment = alignment_profile(state, &mm)?;

    let mut buf = Vec::new();
    write_outliers_csv(&mut buf, &stats)?;
    write_atomic(&output.join("outliers.csv"), &buf)?;
    buf.clear();
    write_alignment_csv(&mut buf, &alignment)?;
    write_atomic(&output.join("alignment.csv"), &buf)?;

    let bars: Vec<(String, f64)> = stats
        .iter()
        .map(|s| (format!("block {} {}", s.layer.unwrap_or(0), s.modality.map_or("", |m| m.as_str())), s.density))
        .collect();
    let svg = bar_chart(&format!("Outlier density (kappa = {kappa})"), "block input", "density", &bars);
    write_atomic(&output.join("outliers.svg"), svg.as_bytes())?;
    let bars: Vec<(String, f64)> = alignment.blocks.iter().enumerate().map(|(b, c)| (format!("block {b}"), *c)).collect();
    let svg = bar_chart("Visual-text cosine alignment", "block output", "mean cosine", &bars);
    write_atomic(&output.join("alignment.svg"), svg.as_bytes())?;

    eprintln!(
        "step {}: alignment {:?}, wrote outliers and alignment files to {}",
        ck.step,
        alignment.blocks,
        output.display()
    );
    Ok(())
}
