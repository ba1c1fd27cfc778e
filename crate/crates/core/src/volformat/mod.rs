//! Volume persistence, normalization, decimation, phantoms and patch sampling.
//!
//! DICOM or NIfTI input would slot in as a reader producing a raw-HU
//! [`Volume`]; everything downstream only sees that type.

mod patch;
mod phantom;
mod volume;

pub use patch::{sample_patch, PatchPair, CROP_MULTIPLE};
pub use phantom::{gen_phantom, PhantomSpec};
pub use volume::{
    decode_volume, downsample_axial, normalize_intensity, read_volume, write_volume,
    IntensityDomain, Volume, HU_HI, HU_LO,
};
