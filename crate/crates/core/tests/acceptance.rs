//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::time::Instant;

use qslaw::analysis::{alignment_profile, compare_modalities, DEFAULT_KAPPA};
use qslaw::data::{gen_multimodal_batch, schedule_modality, Arm, MixRatio, Modality, WarmupSchedule};
use qslaw::harness::{probe_batches, run_arms, Checkpoint, RunConfig, RunOutcome};
use qslaw::model::{batch_gradients, batch_loss, Linear, ModelState, ToyConfig};
use qslaw::numerics::Matrix;
use qslaw::quant::{
    init_uniform_params, pack_nibbles, round_half_away, unpack_nibbles, uniform_fakequant, Nf4Codebook, QuantParams,
    DEFAULT_CLIP_GRID,
};
use qslaw::scale_learn::{count_params, ScaledQuantLinear};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 3] = [0, 1, 2];
const TRAIN_STEPS: u64 = 800;
const WARMUP_STEPS: u64 = 200;
const TRAIN_BUDGET_SECS: f64 = 600.0;

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn quantization_bound() -> (bool, String) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut checked, mut violations) = (0u64, 0u64);
    let mut group = vec![0.0; 128];
    for _ in 0..100_000 {
        let spread = rng.random_range(0.01..5.0);
        group.iter_mut().for_each(|w| *w = spread * gaussian(&mut rng));
        let p = init_uniform_params(&group, 4, &DEFAULT_CLIP_GRID).unwrap();
        let fq = uniform_fakequant(&group, &p);
        for ((w, q), ok) in group.iter().zip(&fq.values).zip(&fq.in_range) {
            if *ok {
                checked += 1;
                violations += u64::from((q - w).abs() > p.delta / 2.0);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    (
        violations == 0 && secs < 10.0,
        format!("{violations} violations over {checked} in-range elements, {secs:.2}s"),
    )
}

fn nf4_equal_bins() -> (bool, String) {
    let t = Instant::now();
    let cb = Nf4Codebook::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let n = 1_000_000;
    let mut bins = [0u64; 16];
    for _ in 0..n {
        bins[cb.nearest(gaussian(&mut rng) / cb.gaussian_scale()) as usize] += 1;
    }
    let pct: Vec<f64> = bins.iter().map(|&b| 100.0 * b as f64 / n as f64).collect();
    let worst = pct.iter().map(|p| (p - 6.25).abs()).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    (
        worst <= 0.5 && secs < 10.0,
        format!("bins {:.2}..{:.2}%, worst deviation {worst:.3}pp, {secs:.2}s", pct.iter().cloned().fold(f64::MAX, f64::min), pct.iter().cloned().fold(0.0, f64::max)),
    )
}

/// Per-group ∂L/∂s written element by element from the quantizer definition.
fn scale_grad_oracle(w: &Matrix, params: &[QuantParams], scales: &[f64], g: usize, x: &Matrix, gy: &Matrix) -> Vec<f64> {
    let per_row = w.cols() / g;
    let mut out = vec![0.0; scales.len()];
    for r in 0..w.rows() {
        for c in 0..w.cols() {
            let gi = r * per_row + c / g;
            let (p, s) = (params[gi], scales[gi]);
            let qmax = ((1u32 << p.bits) - 1) as f64;
            let what = w[(r, c)] / s;
            let code = round_half_away(what / p.delta) + p.zp as f64;
            let inside = (0.0..=qmax).contains(&code);
            let wq = p.delta * (code.clamp(0.0, qmax) - p.zp as f64);
            let d = wq - if inside { what } else { 0.0 };
            let gw: f64 = (0..x.rows()).map(|b| gy[(b, r)] * x[(b, c)]).sum();
            out[gi] += gw * d;
        }
    }
    out
}

fn central_diff_error(state: &ModelState, batch: &qslaw::data::ModalityBatch, with_dense: bool) -> f64 {
    let (_, grads) = batch_gradients(state, &state.prepare().unwrap(), batch, false).unwrap();
    let h = 1e-5;
    let (mut diff, mut norm) = (0.0, 0.0);
    let mut probe = |analytic: f64, bump: &dyn Fn(&mut ModelState, f64)| {
        let mut plus = state.clone();
        bump(&mut plus, h);
        let mut minus = state.clone();
        bump(&mut minus, -h);
        let numeric = (batch_loss(&plus, batch).unwrap() - batch_loss(&minus, batch).unwrap()) / (2.0 * h);
        diff += (analytic - numeric).powi(2);
        norm += numeric * numeric;
    };
    let len = grads.projector.w1.data().len();
    for i in (0..len).step_by(len / 24) {
        probe(grads.projector.w1.data()[i], &|s, d| s.projector.w1.data_mut()[i] += d);
    }
    let len = grads.projector.w2.data().len();
    for i in (0..len).step_by(len / 24) {
        probe(grads.projector.w2.data()[i], &|s, d| s.projector.w2.data_mut()[i] += d);
    }
    if with_dense {
        // attention projections of the first block
        for li in 0..4 {
            let len = grads.weights[li].data().len();
            for i in (0..len).step_by(len / 12) {
                probe(grads.weights[li].data()[i], &|s, d| {
                    if let Linear::Dense(w) = &mut s.blocks[0].linears[li] {
                        w.data_mut()[i] += d;
                    }
                });
            }
        }
    }
    (diff / norm).sqrt()
}

fn ste_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let g = [4, 8, 16][rng.random_range(0..3)];
        let (out, inp, batch) = (rng.random_range(1..9), g * rng.random_range(1..5), rng.random_range(1..5));
        let bits = rng.random_range(2..=8);
        let w = Matrix::from_fn(out, inp, |_, _| gaussian(&mut rng));
        let mut layer = ScaledQuantLinear::new(w.clone(), g, bits, &DEFAULT_CLIP_GRID, None).unwrap();
        let scales: Vec<f64> = (0..layer.scale_count()).map(|_| rng.random_range(0.5..2.0)).collect();
        layer.set_scales(&scales).unwrap();
        let x = Matrix::from_fn(batch, inp, |_, _| gaussian(&mut rng));
        let gy = Matrix::from_fn(batch, out, |_, _| gaussian(&mut rng));
        let got = layer.backward_scale(&x, &gy).unwrap();
        let want = scale_grad_oracle(&w, layer.params(), &scales, g, &x, &gy);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-12));
        }
    }

    let cfg = ToyConfig { d_model: 32, n_heads: 2, d_vision: 16, projector_hidden: 32, seed: 3, ..Default::default() };
    let batch = gen_multimodal_batch(3, 0, 2).unwrap();
    let dense = ModelState::init(&cfg).unwrap();
    let fd_dense = central_diff_error(&dense, &batch, true);
    let mut quant = dense.clone();
    quant.quantize_backbone_default().unwrap();
    let fd_quant = central_diff_error(&quant, &batch, false);
    (
        worst <= 1e-9 && fd_dense <= 1e-5 && fd_quant <= 1e-5,
        format!("oracle rel {worst:.1e} on 1000 layers; finite differences {fd_dense:.1e} (projector+attention), {fd_quant:.1e} (projector, quantized)"),
    )
}

fn parameter_accounting() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut exact = true;
    for _ in 0..1000 {
        let g = [1, 2, 16, 64, 128][rng.random_range(0..5)];
        let shapes: Vec<(usize, usize)> = (0..rng.random_range(1..6))
            .map(|_| (rng.random_range(1..500), g * rng.random_range(1..40)))
            .collect();
        let total: usize = shapes.iter().map(|(o, i)| o * i).sum();
        exact &= count_params(&shapes, g, 8).unwrap().scale_params == (total / g) as u64;
    }
    let ratio: f64 = 100.0 * 84.25 / 500.70;
    (
        exact && (ratio - 16.83).abs() <= 0.01,
        format!("scale_params exact on 1000 shape sets: {exact}; 84.25/500.70 = {ratio:.4}%"),
    )
}

fn schedule_law() -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for eta in [0u64, 10, 100] {
        let sched = WarmupSchedule::new(Some(eta), MixRatio::ONE_TO_ONE);
        let t = 10_000;
        let warm = (0..eta).all(|s| schedule_modality(s, &sched) == Modality::Multimodal);
        let mm = (eta..t).filter(|&s| schedule_modality(s, &sched) == Modality::Multimodal).count() as i64;
        let lm = (t - eta) as i64 - mm;
        ok &= warm && (mm - lm).abs() <= 1;
        notes.push(format!("eta {eta}: {mm}/{lm}"));
    }
    (ok, notes.join(", "))
}

struct SeedRun {
    seed: u64,
    base_alignment: f64,
    outcomes: Vec<RunOutcome>,
}

fn experiment_config(seed: u64) -> RunConfig {
    let mut c = RunConfig {
        steps: TRAIN_STEPS,
        eta: WARMUP_STEPS,
        eval_interval: WARMUP_STEPS,
        ..RunConfig::default()
    };
    c.set_seed(seed);
    c
}

fn run_experiments() -> (Vec<SeedRun>, f64) {
    let t = Instant::now();
    let runs = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = experiment_config(seed);
            let (base, outcomes) = run_arms(&cfg, &Arm::ALL, &mut |_| {}).unwrap();
            let (probe, _) = probe_batches(&cfg, 16).unwrap();
            let base_alignment = alignment_profile(&base.state, &probe).unwrap().mean();
            SeedRun { seed, base_alignment, outcomes }
        })
        .collect();
    (runs, t.elapsed().as_secs_f64())
}

fn last(o: &RunOutcome) -> &qslaw::analysis::MetricsRecord {
    o.records.last().unwrap()
}

fn majority(flags: &[bool]) -> bool {
    2 * flags.iter().filter(|&&f| f).count() > flags.len()
}

fn ordinal_reproduction(runs: &[SeedRun], secs: f64) -> (bool, String) {
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    let mut notes = Vec::new();
    for run in runs {
        let [mm, hy, wu] = [0, 1, 2].map(|i| last(&run.outcomes[i]));
        a.push(
            mm.train_loss < hy.train_loss.min(wu.train_loss) && mm.lm_perplexity > hy.lm_perplexity.max(wu.lm_perplexity),
        );
        b.push(wu.eval_accuracy >= hy.eval_accuracy);
        c.push(wu.lm_perplexity <= 1.1 * hy.lm_perplexity);
        notes.push(format!(
            "seed {}: loss {:.3}/{:.3}/{:.3} ppl {:.4}/{:.4}/{:.4} acc {:.3}/{:.3}/{:.3}",
            run.seed,
            mm.train_loss,
            hy.train_loss,
            wu.train_loss,
            mm.lm_perplexity,
            hy.lm_perplexity,
            wu.lm_perplexity,
            mm.eval_accuracy,
            hy.eval_accuracy,
            wu.eval_accuracy
        ));
    }
    let pass = majority(&a) && majority(&b) && majority(&c) && secs < TRAIN_BUDGET_SECS;
    (
        pass,
        format!(
            "(a) {a:?} (b) {b:?} (c) {c:?}; {TRAIN_STEPS} steps x 3 arms x 3 seeds in {secs:.0}s [arms mm-only/hybrid/warmup; {}]",
            notes.join("; ")
        ),
    )
}

fn outlier_contrast(runs: &[SeedRun]) -> (bool, String) {
    let mut flags = Vec::new();
    let mut notes = Vec::new();
    for run in runs {
        let cfg = experiment_config(run.seed);
        let (mm, text) = probe_batches(&cfg, 16).unwrap();
        let state = &run.outcomes[2].checkpoint.state;
        let stats = compare_modalities(state, &mm, &text, &[0], DEFAULT_KAPPA).unwrap();
        flags.push(stats[0].density >= stats[1].density);
        notes.push(format!("seed {}: {:.4} vs {:.4}", run.seed, stats[0].density, stats[1].density));
    }
    (majority(&flags), format!("block 0 density multimodal vs text: {}", notes.join(", ")))
}

fn alignment_trend(runs: &[SeedRun]) -> (bool, String) {
    let mut ok = true;
    let mut notes = Vec::new();
    for run in runs {
        let cfg = experiment_config(run.seed);
        let (probe, _) = probe_batches(&cfg, 16).unwrap();
        let end = alignment_profile(&run.outcomes[2].checkpoint.state, &probe).unwrap().mean();
        ok &= end > run.base_alignment;
        notes.push(format!("seed {}: {:.4} -> {:.4}", run.seed, run.base_alignment, end));
    }
    (ok, format!("warmup arm mean cosine step 0 -> end: {}", notes.join(", ")))
}

fn bit_exactness(runs: &[SeedRun]) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut pack_ok = true;
    for _ in 0..1_000_000 {
        let len: usize = rng.random_range(0..=16);
        let codes: Vec<u8> = (0..len).map(|_| rng.random_range(0..16)).collect();
        let packed = pack_nibbles(&codes).unwrap();
        pack_ok &= packed.len() == len.div_ceil(2) && unpack_nibbles(&packed, len).unwrap() == codes;
    }

    let ck = &runs[0].outcomes[2].checkpoint;
    let bytes = ck.to_bytes().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.qsck");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let save_ok = loaded.to_bytes().unwrap() == bytes && std::fs::read(&path).unwrap() == bytes;

    let cfg = RunConfig {
        steps: 40,
        eta: 10,
        eval_interval: 20,
        pretrain: qslaw::model::PretrainConfig { steps: 20, ..Default::default() },
        ..RunConfig::default()
    };
    let once = run_arms(&cfg, &Arm::ALL, &mut |_| {}).unwrap().1;
    let twice = run_arms(&cfg, &Arm::ALL, &mut |_| {}).unwrap().1;
    let repeat_ok = once.iter().zip(&twice).all(|(a, b)| {
        a.checkpoint.to_bytes().unwrap() == b.checkpoint.to_bytes().unwrap()
            && format!("{:?}", a.records) == format!("{:?}", b.records)
    });
    (
        pack_ok && save_ok && repeat_ok,
        format!("pack/unpack on 1e6 sequences: {pack_ok}; save/load/save: {save_ok}; repeated runs: {repeat_ok}"),
    )
}

fn main() {
    let mut verdicts = Vec::new();
    let mut record = |id, name, (pass, detail): (bool, String)| verdicts.push(Verdict { id, name, pass, detail });
    record(1, "quantization bound", quantization_bound());
    record(2, "NF4 equal-bin law", nf4_equal_bins());
    record(3, "STE gradient oracle", ste_oracle());
    record(4, "parameter accounting", parameter_accounting());
    record(5, "warmup schedule law", schedule_law());
    let (runs, secs) = run_experiments();
    record(6, "three-arm ordinal reproduction", ordinal_reproduction(&runs, secs));
    record(7, "outlier density contrast", outlier_contrast(&runs));
    record(8, "alignment trend", alignment_trend(&runs));
    record(9, "bit-exactness", bit_exactness(&runs));

    let mut failed = 0;
    for v in &verdicts {
        println!("{} {}. {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
