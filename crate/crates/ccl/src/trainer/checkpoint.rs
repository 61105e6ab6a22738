//! Checkpoint archive: one file holding a config echo plus every model's
//! parameters and optimizer moments, keyed by role. Values are raw
//! little-endian f64, so a round trip reproduces training bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AdamState, DiscUnit, ModelSet, Nets, PairUnit, SegUnit, SgdState, TrainConfig, TrainError,
    TrainMode, TrainState,
};
use crate::nets::ParamVector;

const MAGIC: &[u8; 8] = b"CCLCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct UnitMeta {
    role: String,
    kind: UnitKind,
    len: usize,
    #[serde(default)]
    adam_t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum UnitKind {
    Seg,
    Disc,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    num_classes: usize,
    step: usize,
    units: Vec<UnitMeta>,
}

fn push_seg(units: &mut Vec<UnitMeta>, data: &mut Vec<f64>, role: &str, u: &SegUnit) {
    units.push(UnitMeta { role: role.into(), kind: UnitKind::Seg, len: u.params.len(), adam_t: 0 });
    data.extend_from_slice(u.params.as_slice());
    data.extend_from_slice(&u.opt.velocity);
}

fn push_disc(units: &mut Vec<UnitMeta>, data: &mut Vec<f64>, role: &str, u: &DiscUnit) {
    units.push(UnitMeta {
        role: role.into(),
        kind: UnitKind::Disc,
        len: u.params.len(),
        adam_t: u.opt.t,
    });
    data.extend_from_slice(u.params.as_slice());
    data.extend_from_slice(&u.opt.m);
    data.extend_from_slice(&u.opt.v);
}

/// Write `state` to `path`.
pub fn save_checkpoint(
    path: &Path,
    state: &TrainState,
    cfg: &TrainConfig,
    num_classes: usize,
) -> Result<(), TrainError> {
    let mut units = Vec::new();
    let mut data = Vec::new();
    match &state.models {
        ModelSet::Ccl { experts, student, student_disc } => {
            for (i, e) in experts.iter().enumerate() {
                push_seg(&mut units, &mut data, &format!("expert_{}", i + 1), &e.seg);
            }
            push_seg(&mut units, &mut data, "student", student);
            for (i, e) in experts.iter().enumerate() {
                push_disc(&mut units, &mut data, &format!("disc_{}", i + 1), &e.disc);
            }
            push_disc(&mut units, &mut data, "disc_student", student_disc);
        }
        ModelSet::SourceOnly { model } => push_seg(&mut units, &mut data, "student", model),
        ModelSet::DataCombination { pair } => {
            push_seg(&mut units, &mut data, "student", &pair.seg);
            push_disc(&mut units, &mut data, "disc_student", &pair.disc);
        }
        ModelSet::Individual { pairs } => {
            for (i, p) in pairs.iter().enumerate() {
                push_seg(&mut units, &mut data, &format!("expert_{}", i + 1), &p.seg);
                push_disc(&mut units, &mut data, &format!("disc_{}", i + 1), &p.disc);
            }
        }
    }

    let header = Header {
        version: 1,
        config: cfg.clone(),
        num_classes,
        step: state.step,
        units,
    };
    let hjson =
        serde_json::to_vec(&header).map_err(|e| TrainError::Checkpoint(e.to_string()))?;

    let file = File::create(path).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| TrainError::Checkpoint(e.to_string());
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(hjson.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&hjson).map_err(io)?;
    for v in &data {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn take_vec(data: &mut impl Iterator<Item = f64>, len: usize) -> Result<Vec<f64>, TrainError> {
    let v: Vec<f64> = data.take(len).collect();
    if v.len() != len {
        return Err(TrainError::Checkpoint("payload shorter than header promises".into()));
    }
    Ok(v)
}

/// Read a checkpoint, returning the state, its config echo, and the class
/// count it was trained with.
pub fn load_checkpoint(path: &Path) -> Result<(TrainState, TrainConfig, usize), TrainError> {
    let file = File::open(path).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| TrainError::Checkpoint(e.to_string());

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(TrainError::Checkpoint("not a checkpoint file".into()));
    }
    let mut lenb = [0u8; 8];
    r.read_exact(&mut lenb).map_err(io)?;
    let hlen = u64::from_le_bytes(lenb) as usize;
    let mut hjson = vec![0u8; hlen];
    r.read_exact(&mut hjson).map_err(io)?;
    let header: Header =
        serde_json::from_slice(&hjson).map_err(|e| TrainError::Checkpoint(e.to_string()))?;

    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(io)?;
    if raw.len() % 8 != 0 {
        return Err(TrainError::Checkpoint("payload is not 8-byte aligned".into()));
    }
    let mut data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));

    let mut segs: Vec<(String, SegUnit)> = Vec::new();
    let mut discs: Vec<(String, DiscUnit)> = Vec::new();
    for u in &header.units {
        match u.kind {
            UnitKind::Seg => {
                let params = ParamVector::from_vec(take_vec(&mut data, u.len)?);
                let velocity = take_vec(&mut data, u.len)?;
                segs.push((u.role.clone(), SegUnit { params, opt: SgdState { velocity } }));
            }
            UnitKind::Disc => {
                let params = ParamVector::from_vec(take_vec(&mut data, u.len)?);
                let m = take_vec(&mut data, u.len)?;
                let v = take_vec(&mut data, u.len)?;
                discs.push((
                    u.role.clone(),
                    DiscUnit { params, opt: AdamState { m, v, t: u.adam_t } },
                ));
            }
        }
    }

    let find_seg = |role: &str, segs: &mut Vec<(String, SegUnit)>| -> Result<SegUnit, TrainError> {
        let idx = segs
            .iter()
            .position(|(r, _)| r == role)
            .ok_or_else(|| TrainError::Checkpoint(format!("missing role {role}")))?;
        Ok(segs.remove(idx).1)
    };
    let find_disc =
        |role: &str, discs: &mut Vec<(String, DiscUnit)>| -> Result<DiscUnit, TrainError> {
            let idx = discs
                .iter()
                .position(|(r, _)| r == role)
                .ok_or_else(|| TrainError::Checkpoint(format!("missing role {role}")))?;
            Ok(discs.remove(idx).1)
        };

    let cfg = header.config.clone();
    let models = match cfg.mode {
        TrainMode::Ccl => {
            let experts = (1..=cfg.targets)
                .map(|m| {
                    Ok(PairUnit {
                        seg: find_seg(&format!("expert_{m}"), &mut segs)?,
                        disc: find_disc(&format!("disc_{m}"), &mut discs)?,
                    })
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            ModelSet::Ccl {
                experts,
                student: find_seg("student", &mut segs)?,
                student_disc: find_disc("disc_student", &mut discs)?,
            }
        }
        TrainMode::SourceOnly => ModelSet::SourceOnly { model: find_seg("student", &mut segs)? },
        TrainMode::DataCombination => ModelSet::DataCombination {
            pair: PairUnit {
                seg: find_seg("student", &mut segs)?,
                disc: find_disc("disc_student", &mut discs)?,
            },
        },
        TrainMode::Individual => {
            let pairs = (1..=cfg.targets)
                .map(|m| {
                    Ok(PairUnit {
                        seg: find_seg(&format!("expert_{m}"), &mut segs)?,
                        disc: find_disc(&format!("disc_{m}"), &mut discs)?,
                    })
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            ModelSet::Individual { pairs }
        }
    };

    Ok((TrainState { models, step: header.step }, cfg, header.num_classes))
}

/// Convenience for evaluation tooling: network shapes for a loaded
/// checkpoint.
pub fn nets_for(cfg: &TrainConfig, num_classes: usize) -> Result<Nets, TrainError> {
    super::build_nets(cfg, num_classes)
}
