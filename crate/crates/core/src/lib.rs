//! Low-precision numerics: bit-exact posit, minifloat and fixed-point
//! formats, exact dot products accumulated in a quire, and the rounding and
//! linear quantization schemes used to map real tensors onto those formats.

pub mod emac;
pub mod numformats;
pub mod par;
pub mod quantize;

pub use emac::{EmacError, Quire};
pub use numformats::{Dyadic, Family, FormatError, FormatSpec, PositBits, PositSpec};
pub use quantize::{Beta, LayerStats, QTensor, QuantError, QuantScheme, SchemeKind};
