use crate::error::{config_err, Result};
use crate::numerics::Matrix;

/// A contiguous run of `g` weights along one row (input channels).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupView<'a> {
    pub layer: usize,
    pub row: usize,
    /// Global group index, `row * (cols / g) + column_block`.
    pub index: usize,
    pub values: &'a [f64],
}

pub fn partition_groups(weight: &Matrix, g: usize) -> Result<Vec<GroupView<'_>>> {
    partition_layer(0, weight, g)
}

pub fn partition_layer(layer: usize, weight: &Matrix, g: usize) -> Result<Vec<GroupView<'_>>> {
    if g == 0 || weight.cols() % g != 0 {
        return config_err(format!(
            "group size {g} does not divide the input dimension {}",
            weight.cols()
        ));
    }
    let per_row = weight.cols() / g;
    let mut groups = Vec::with_capacity(weight.rows() * per_row);
    for row in 0..weight.rows() {
        for (j, values) in weight.row(row).chunks_exact(g).enumerate() {
            groups.push(GroupView {
                layer,
                row,
                index: row * per_row + j,
                values,
            });
        }
    }
    Ok(groups)
}
