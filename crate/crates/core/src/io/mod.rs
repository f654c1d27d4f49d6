//! On-disk formats: voxel containers, checkpoints, CSV reports and P5
//! montages. All binary formats are little-endian.

mod checkpoint;
mod csv;
mod pgm;
mod voxb;

pub use checkpoint::{
    load_checkpoint, model_from_checkpoint, model_to_checkpoint, read_checkpoint, save_checkpoint,
    write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use csv::{
    eval_summary, write_eval_csv, write_manifest_csv, write_trace_csv, write_training_log, EvalRow,
    ManifestRow, Summary, TRAINING_LOG_HEADER,
};
pub use pgm::{montage_slices, write_slice_montage, Montage};
pub use voxb::{decode_voxb, encode_voxb, read_voxb, write_voxb, VOXB_MAGIC, VOXB_VERSION};

use crate::error::{format_err, Result};

/// Byte reader that reports the offset of every failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn pos(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(format_err(
                self.bytes.len() as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
