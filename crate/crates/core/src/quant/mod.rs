//! Group-wise weight quantization: group tiling, the NF4 codebook, clipped
//! uniform affine quantization, nibble packing and the packed-weight file.

mod container;
mod groups;
mod nf4;
mod pack;
mod uniform;

pub use container::{Codebook, PackedTensor, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use groups::{partition_groups, partition_layer, GroupView};
pub use nf4::{
    default_offset, nf4_dequantize, nf4_levels, nf4_quantize, Nf4Codebook, MAX_OFFSET,
};
pub use pack::{pack_nibbles, unpack_nibbles};
pub use uniform::{
    init_uniform_params, round_half_away, uniform_fakequant, FakeQuant, QuantParams,
    CONSTANT_GROUP_DELTA, DEFAULT_CLIP_GRID,
};

/// Default group size along the input-channel dimension.
pub const DEFAULT_GROUP_SIZE: usize = 128;
/// Default bit width.
pub const DEFAULT_BITS: u8 = 4;
