use std::io::Write;
use std::path::Path;

use qslaw::harness::{write_atomic, Checkpoint, CHECKPOINT_MAGIC};
use qslaw::numerics::Matrix;
use qslaw::quant::{Codebook, Nf4Codebook, PackedTensor, DEFAULT_CLIP_GRID};

use crate::{CliResult, Failure};

fn read_csv_matrix(path: &Path, bytes: &[u8]) -> CliResult<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::Runtime(format!("file error: {}: {e}", path.display())))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Runtime(format!("file error: {} line {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Failure::Runtime(format!("file error: {} holds no rows", path.display())));
    }
    Ok(Matrix::from_rows(&rows)?)
}

fn read_weights(path: &Path) -> CliResult<Vec<Matrix>> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Runtime(format!("file error: {}: {e}", path.display())))?;
    if bytes.starts_with(&CHECKPOINT_MAGIC) {
        let ck = Checkpoint::from_bytes(&bytes)?;
        Ok(ck.state.linears().map(|l| l.weight().clone()).collect())
    } else {
        Ok(vec![read_csv_matrix(path, &bytes)?])
    }
}

/// Per-group mean squared reconstruction error.
fn group_mse(w: &Matrix, q: &Matrix, g: usize) -> Vec<f64> {
    w.data()
        .chunks(g)
        .zip(q.data().chunks(g))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / g as f64)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run(inputs: &[std::path::PathBuf], g: usize, k: u8, codebook: &str, compare: bool, output: &Path) -> CliResult<()> {
    let codebook: Codebook = codebook.parse()?;
    if codebook == Codebook::Nf4 && k != 4 {
        return Err(Failure::Usage(format!("nf4 is a 4-bit codebook, got -k {k}")));
    }
    let nf4 = Nf4Codebook::standard();
    let mut layers = Vec::new();
    for path in inputs {
        layers.extend(read_weights(path)?);
    }
    let mut out = Vec::new();
    let (mut nf4_wins, mut groups) = (0usize, 0usize);
    for (i, w) in layers.iter().enumerate() {
        let packed = match codebook {
            Codebook::Uniform => PackedTensor::quantize_uniform(w, g, k, &DEFAULT_CLIP_GRID)?,
            Codebook::Nf4 => PackedTensor::quantize_nf4(w, g, nf4)?,
        };
        packed.write_to(&mut out)?;
        if compare {
            let uniform = PackedTensor::quantize_uniform(w, g, k, &[1.0])?.dequantize(nf4)?;
            let normal = PackedTensor::quantize_nf4(w, g, nf4)?.dequantize(nf4)?;
            let (u, n) = (group_mse(w, &uniform, g), group_mse(w, &normal, g));
            let wins = n.iter().zip(&u).filter(|(a, b)| a < b).count();
            nf4_wins += wins;
            groups += u.len();
            eprintln!(
                "layer {i} ({}x{}): uniform mse {:.6e} nf4 mse {:.6e} nf4 lower on {wins}/{} groups",
                w.rows(),
                w.cols(),
                mean(&u),
                mean(&n),
                u.len()
            );
        }
    }
    if compare {
        eprintln!("total: nf4 lower on {nf4_wins}/{groups} groups");
    }
    write_atomic(output, &out)?;
    let mut stderr = std::io::stderr();
    let _ = writeln!(stderr, "wrote {} layer(s) to {}", layers.len(), output.display());
    Ok(())
}
