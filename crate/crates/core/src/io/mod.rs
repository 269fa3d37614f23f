//! On-disk formats: tensor and checkpoint containers, PPM/PGM frames,
//! event streams, `key=value` configs and clip directories.

mod clipdir;
mod container;
mod evst;
mod kv;
mod ppm;

pub use clipdir::{frame_name, read_clip, read_dataset, read_pair, write_clip, write_pair};
pub use container::{
    decode_checkpoint, decode_tensor, encode_checkpoint, encode_tensor, read_checkpoint, read_tensor, write_checkpoint,
    write_tensor, StoredTensor, CHECKPOINT_MAGIC, TENSOR_MAGIC, VERSION,
};
pub use evst::{decode_events, encode_events, read_events, write_events, EVENT_MAGIC};
pub use kv::{format_kv, parse_kv};
pub use ppm::{decode_ppm, encode_pgm, encode_ppm, quantize, read_ppm, write_pgm, write_ppm};

use std::path::Path;

use crate::error::Result;

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    container::write_file(path.as_ref(), text.as_bytes())
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| crate::error::Error::io(path, e))
}
