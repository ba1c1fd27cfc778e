//! The interpolation network, its checkpoint archive and whole-volume
//! inference.

mod checkpoint;
mod config;
pub mod interp;
pub mod layers;
mod net;
mod synth;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, OPTIM_PREFIX};
pub use config::{BlockKind, ModelConfig};
pub use net::{Block, BlockTrace, I3Net, NetCache, Trace};
pub use synth::{synthesize_volume, window_starts, SynthReport, Synthesis};
