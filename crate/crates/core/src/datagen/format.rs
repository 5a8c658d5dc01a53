//! `.amrd` dataset files.
//!
//! Layout: magic `AMRD`, `u32` version, `u32` manifest length, the JSON
//! manifest, then one record per frame: `u16` class id, `i16` SNR in dB and
//! `2 L` `f32` samples (I row, then Q row). Integers are little-endian.

use std::io::Write;
use std::path::Path;

use super::{Dataset, DatasetManifest, Frame};
use crate::error::{Error, Result};
use crate::pet::IQFrame;

pub const AMRD_MAGIC: &[u8; 4] = b"AMRD";
pub const AMRD_VERSION: u32 = 1;

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    if d.is_empty() {
        return Err(Error::input("refusing to write an empty dataset"));
    }
    let l = d.length();
    let json = serde_json::to_vec(&d.manifest)?;
    let mut out = Vec::with_capacity(12 + json.len() + d.len() * (4 + 8 * l));
    out.extend_from_slice(AMRD_MAGIC);
    out.extend_from_slice(&AMRD_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for f in &d.frames {
        if f.iq.len() != l {
            return Err(Error::dim(format!(
                "frame of length {} in a length-{l} dataset",
                f.iq.len()
            )));
        }
        out.extend_from_slice(&f.class_id.to_le_bytes());
        out.extend_from_slice(&f.snr_db.to_le_bytes());
        for v in f.iq.samples().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 4 || &bytes[..4] != AMRD_MAGIC {
        return Err(Error::format(0, "bad magic, expected AMRD"));
    }
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::format(at as u64, "truncated header"))
    };
    let version = word(4)?;
    if version != AMRD_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {AMRD_VERSION}"),
        ));
    }
    let json_len = word(8)? as usize;
    let body = 12 + json_len;
    if bytes.len() < body {
        return Err(Error::format(12, "truncated manifest"));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| Error::format(12, format!("invalid manifest: {e}")))?;
    manifest
        .validate()
        .map_err(|e| Error::format(12, e.to_string()))?;
    let l = manifest.length;
    let record = 4 + 8 * l;
    let count = manifest.total_frames();
    let expected = body + count * record;
    if bytes.len() < expected {
        let whole = (bytes.len() - body) / record;
        return Err(Error::format(
            (body + whole * record) as u64,
            format!("truncated at frame {whole} of {count}"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            expected as u64,
            "trailing bytes after last frame",
        ));
    }
    let mut frames = Vec::with_capacity(count);
    for (k, rec) in bytes[body..].chunks_exact(record).enumerate() {
        let offset = (body + k * record) as u64;
        let class_id = u16::from_le_bytes([rec[0], rec[1]]);
        let snr_db = i16::from_le_bytes([rec[2], rec[3]]);
        if class_id as usize >= manifest.num_classes() {
            return Err(Error::format(
                offset,
                format!("class id {class_id} out of range"),
            ));
        }
        let (i, q): (Vec<f32>, Vec<f32>) = {
            let vals: Vec<f32> = rec[4..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            (vals[..l].to_vec(), vals[l..].to_vec())
        };
        let iq = IQFrame::from_iq(&i, &q).map_err(|e| Error::format(offset + 4, e.to_string()))?;
        frames.push(Frame {
            iq,
            class_id,
            snr_db,
            channel: None,
        });
    }
    let d = Dataset { manifest, frames };
    d.validate()
        .map_err(|e| Error::format(body as u64, e.to_string()))?;
    Ok(d)
}

pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(d)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}
