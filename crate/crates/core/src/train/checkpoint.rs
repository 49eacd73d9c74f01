//! Training checkpoints: `"MGNC"`, version, channel schema, an embedded
//! parameter block, optimizer state and the three normalizers.

use std::fs;
use std::path::Path;

use super::{LrSchedule, Normalizer, Normalizers, OptimizerState, Simulator};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::mesh::ChannelSchema;
use crate::model::checkpoint::{read_params_from, write_params_into};
use crate::model::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGNC";
const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCheckpoint {
    pub schema: ChannelSchema,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub normalizers: Normalizers,
}

impl TrainingCheckpoint {
    pub fn simulator(&self) -> Simulator {
        Simulator {
            params: self.params.clone(),
            normalizers: self.normalizers.clone(),
            schema: self.schema.clone(),
        }
    }
}

fn write_names(w: &mut ByteWriter, names: &[&str]) -> Result<()> {
    w.u32(names.len() as u32);
    names.iter().try_for_each(|n| w.string(n))
}

fn read_names(r: &mut ByteReader<'_>, what: &str) -> Result<Vec<String>> {
    let n = r.u32(what)? as usize;
    (0..n).map(|_| r.string(what)).collect()
}

fn write_normalizer(w: &mut ByteWriter, n: &Normalizer) {
    w.u32(n.width() as u32);
    w.f64(n.count);
    w.f64(n.eps);
    w.u64(n.max_accumulations);
    w.u64(n.accumulations);
    w.f64s(&n.sum);
    w.f64s(&n.sum_sq);
}

fn read_normalizer(r: &mut ByteReader<'_>, want: usize) -> Result<Normalizer> {
    let at = r.offset();
    let width = r.u32("normalizer width")? as usize;
    if width != want {
        return Err(Error::format(at, format!("normalizer width {width}, model expects {want}")));
    }
    Ok(Normalizer {
        count: r.f64("normalizer count")?,
        eps: r.f64("normalizer eps")?,
        max_accumulations: r.u64("normalizer horizon")?,
        accumulations: r.u64("normalizer accumulations")?,
        sum: r.f64s(width, "normalizer sum")?,
        sum_sq: r.f64s(width, "normalizer sum of squares")?,
    })
}

pub fn encode_checkpoint(ckpt: &TrainingCheckpoint) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let names: Vec<&str> = ckpt.schema.names().iter().map(String::as_str).collect();
    write_names(&mut w, &names)?;
    write_names(&mut w, &ckpt.schema.input_names())?;
    write_names(&mut w, &ckpt.schema.output_names())?;
    write_names(&mut w, &ckpt.schema.direct_names())?;
    write_params_into(&ckpt.params, &mut w);
    let o = &ckpt.optimizer;
    w.u64(o.step);
    w.f64(o.schedule.initial);
    w.f64(o.schedule.decay);
    w.f64(o.schedule.floor);
    w.f64s(&o.m);
    w.f64s(&o.v);
    for n in [&ckpt.normalizers.node, &ckpt.normalizers.edge, &ckpt.normalizers.target] {
        write_normalizer(&mut w, n);
    }
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainingCheckpoint> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let at = r.offset();
    let names = read_names(&mut r, "channel names")?;
    let inputs = read_names(&mut r, "input channels")?;
    let outputs = read_names(&mut r, "output channels")?;
    let direct = read_names(&mut r, "direct channels")?;
    let schema = ChannelSchema::new(&names, &inputs, &outputs, &direct)
        .map_err(|e| Error::format(at, format!("invalid channel schema: {e}")))?;
    let params = read_params_from(&mut r)?;
    let n = params.param_count();
    let step = r.u64("optimizer step")?;
    let schedule = LrSchedule {
        initial: r.f64("learning rate")?,
        decay: r.f64("learning rate decay")?,
        floor: r.f64("learning rate floor")?,
    };
    let optimizer = OptimizerState {
        step,
        m: r.f64s(n, "adam first moments")?,
        v: r.f64s(n, "adam second moments")?,
        schedule,
    };
    let c = params.config.clone();
    let normalizers = Normalizers {
        node: read_normalizer(&mut r, c.node_in)?,
        edge: read_normalizer(&mut r, c.edge_in)?,
        target: read_normalizer(&mut r, c.node_out)?,
    };
    r.finish()?;
    if schema.output_count() != c.node_out {
        return Err(Error::Validation(format!(
            "schema has {} outputs, model decodes {}",
            schema.output_count(),
            c.node_out
        )));
    }
    Ok(TrainingCheckpoint {
        schema,
        params,
        optimizer,
        normalizers,
    })
}

pub fn write_checkpoint(ckpt: &TrainingCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<TrainingCheckpoint> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
