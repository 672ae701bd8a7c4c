//! Linear layer over frozen quantized weights with learnable group-wise scales.
//!
//! Each weight is divided by its group's scale, fake-quantized with the
//! group's frozen step size and zero point, then multiplied back:
//!
//! ```text
//! ŵ = w / s      w̃ = Δ·(clamp(round(ŵ/Δ) + zp, 0, 2^k − 1) − zp)      w_eff = s·w̃
//! ```
//!
//! Gradients w.r.t. `s` use the straight-through estimator: rounding is the
//! identity and clamping passes gradient only for in-range elements, giving
//! `∂w_eff/∂s = w̃ − 1[in range]·ŵ`.

use crate::error::{config_err, dim_err, Error, Result};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::quant::{init_uniform_params, partition_groups, QuantParams};

#[derive(Clone, Debug, PartialEq)]
pub struct ScaledQuantLinear {
    weight: Matrix,
    params: Vec<QuantParams>,
    scales: Vec<f64>,
    bias: Option<Vec<f64>>,
    group_size: usize,
}

/// Effective weight together with its STE derivative in `s`.
#[derive(Clone, Debug)]
pub struct QuantizedView {
    pub effective: Matrix,
    /// `w̃ − 1[in range]·ŵ` per element.
    pub scale_derivative: Matrix,
}

impl ScaledQuantLinear {
    /// Quantizes `weight` (out × in) group-wise, initializing each group's
    /// step size and zero point by clip-ratio search. Scales start at 1.
    pub fn new(
        weight: Matrix,
        group_size: usize,
        bits: u8,
        clip_grid: &[f64],
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        let params = partition_groups(&weight, group_size)?
            .iter()
            .map(|g| init_uniform_params(g.values, bits, clip_grid))
            .collect::<Result<Vec<_>>>()?;
        let scales = vec![1.0; params.len()];
        Self::from_parts(weight, group_size, params, scales, bias)
    }

    pub fn from_parts(
        weight: Matrix,
        group_size: usize,
        params: Vec<QuantParams>,
        scales: Vec<f64>,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if group_size == 0 || weight.cols() % group_size != 0 {
            return config_err(format!(
                "group size {group_size} does not divide input dimension {}",
                weight.cols()
            ));
        }
        let groups = weight.rows() * weight.cols() / group_size;
        if params.len() != groups || scales.len() != groups {
            return dim_err(format!(
                "{groups} groups but {} quant params and {} scales",
                params.len(),
                scales.len()
            ));
        }
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return dim_err(format!("bias of {} for {} outputs", b.len(), weight.rows()));
            }
        }
        let layer = Self {
            weight,
            params,
            scales,
            bias,
            group_size,
        };
        layer.check_scales()?;
        Ok(layer)
    }

    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn params(&self) -> &[QuantParams] {
        &self.params
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn scale_count(&self) -> usize {
        self.scales.len()
    }

    pub fn set_scales(&mut self, scales: &[f64]) -> Result<()> {
        if scales.len() != self.scales.len() {
            return dim_err(format!("{} scales for {} groups", scales.len(), self.scales.len()));
        }
        let old = std::mem::replace(&mut self.scales, scales.to_vec());
        if let Err(e) = self.check_scales() {
            self.scales = old;
            return Err(e);
        }
        Ok(())
    }

    /// Multiplies scale `i` by `exp(-step[i])`, a gradient step on `ln s`.
    pub fn apply_log_step(&mut self, step: &[f64]) -> Result<()> {
        if step.len() != self.scales.len() {
            return dim_err("log-scale step length mismatch");
        }
        for (s, d) in self.scales.iter_mut().zip(step) {
            *s *= (-d).exp();
        }
        self.check_scales()
    }

    #[inline]
    pub fn group_of(&self, row: usize, col: usize) -> usize {
        row * (self.weight.cols() / self.group_size) + col / self.group_size
    }

    fn check_scales(&self) -> Result<()> {
        match self.scales.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            Some(i) => Err(Error::State(format!(
                "scale {i} is {}; scales must be positive and finite",
                self.scales[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn quantized_view(&self) -> Result<QuantizedView> {
        self.check_scales()?;
        let (rows, cols) = self.weight.shape();
        let per_row = cols / self.group_size;
        let mut effective = Matrix::zeros(rows, cols);
        let mut deriv = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let w_row = self.weight.row(r);
            for (j, chunk) in w_row.chunks_exact(self.group_size).enumerate() {
                let gi = r * per_row + j;
                let s = self.scales[gi];
                let p = &self.params[gi];
                for (k, &w) in chunk.iter().enumerate() {
                    let c = j * self.group_size + k;
                    let w_hat = w / s;
                    let (code, in_range) = p.encode(w_hat);
                    let w_tilde = p.decode(code);
                    effective[(r, c)] = s * w_tilde;
                    deriv[(r, c)] = if in_range { w_tilde - w_hat } else { w_tilde };
                }
            }
        }
        Ok(QuantizedView {
            effective,
            scale_derivative: deriv,
        })
    }

    pub fn effective_weight(&self) -> Result<Matrix> {
        Ok(self.quantized_view()?.effective)
    }

    /// `y = x · w_effᵀ + bias`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_with(&self.effective_weight()?, x)
    }

    /// Forward pass against a precomputed effective weight.
    pub fn forward_with(&self, effective: &Matrix, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_features() {
            return dim_err(format!(
                "input has {} features, layer expects {}",
                x.cols(),
                self.in_features()
            ));
        }
        let mut y = matmul_nt(x, effective)?;
        if let Some(b) = &self.bias {
            y.add_row_vector(b)?;
        }
        Ok(y)
    }

    /// Per-group gradient of the loss w.r.t. `s`, given the layer input and the
    /// gradient w.r.t. its output.
    pub fn backward_scale(&self, x: &Matrix, grad_out: &Matrix) -> Result<Vec<f64>> {
        if x.rows() != grad_out.rows()
            || x.cols() != self.in_features()
            || grad_out.cols() != self.out_features()
        {
            return dim_err("backward_scale shapes inconsistent with the layer");
        }
        let grad_weight = matmul_tn(grad_out, x)?;
        self.scale_grad_from_weight_grad(&grad_weight, &self.quantized_view()?)
    }

    /// Reduces an effective-weight gradient (out × in) to per-group scale gradients.
    pub fn scale_grad_from_weight_grad(
        &self,
        grad_weight: &Matrix,
        view: &QuantizedView,
    ) -> Result<Vec<f64>> {
        if grad_weight.shape() != self.weight.shape() {
            return dim_err("weight gradient shape mismatch");
        }
        let mut grads = vec![0.0; self.scales.len()];
        let cols = self.weight.cols();
        for r in 0..self.weight.rows() {
            let gw = grad_weight.row(r);
            let d = view.scale_derivative.row(r);
            for c in 0..cols {
                grads[self.group_of(r, c)] += gw[c] * d[c];
            }
        }
        Ok(grads)
    }

    /// `grad_x = grad_out · w_eff`; the effective weight is constant in `x`.
    pub fn backward_input(&self, grad_out: &Matrix) -> Result<Matrix> {
        self.backward_input_with(&self.effective_weight()?, grad_out)
    }

    pub fn backward_input_with(&self, effective: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
        if grad_out.cols() != self.out_features() {
            return dim_err(format!(
                "output gradient has {} features, layer produces {}",
                grad_out.cols(),
                self.out_features()
            ));
        }
        matmul(grad_out, effective)
    }
}

/// Trainable-parameter census of scale learning against LoRA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBudget {
    pub scale_params: u64,
    pub lora_params: u64,
    pub ratio: f64,
}

/// Counts one scale per group and `rank·(out + in)` LoRA parameters per layer.
pub fn count_params(shapes: &[(usize, usize)], g: usize, lora_rank: usize) -> Result<ParamBudget> {
    if lora_rank == 0 {
        return config_err("LoRA rank must be at least 1");
    }
    if g == 0 {
        return config_err("group size must be positive");
    }
    let mut scale_params = 0u64;
    let mut lora_params = 0u64;
    for &(out, inp) in shapes {
        if inp % g != 0 {
            return config_err(format!("group size {g} does not divide input dimension {inp}"));
        }
        scale_params += (out * inp / g) as u64;
        lora_params += (lora_rank * (out + inp)) as u64;
    }
    let ratio = if lora_params > 0 {
        scale_params as f64 / lora_params as f64
    } else {
        0.0
    };
    Ok(ParamBudget {
        scale_params,
        lora_params,
        ratio,
    })
}
