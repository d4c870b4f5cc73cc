//! Checkpoints (versioned header plus named tensors, hex-encoded f64 bits
//! for exact resume) and the per-epoch metrics CSV.

use std::fs;
use std::path::Path as FsPath;

use anyhow::{bail, Context, Result};

use ocmg_core::learner::{
    EpochRecord, Linear, ModelConfig, ModelParams, TrainConfig, TrainState, LAYER_NAMES,
};
use ocmg_core::losses::CurriculumSchedule;

use crate::store::{g17, write_atomic};

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub milestones: [usize; 2],
    pub state: TrainState,
}

pub fn write_checkpoint(path: &FsPath, ck: &Checkpoint) -> Result<()> {
    let mut out = String::from("ocmg-checkpoint v1\n");
    let m = &ck.model;
    out.push_str(&format!(
        "model {} {} {} {} {} {} {}\n",
        m.input_points, m.enc_hidden, m.feature_dim, m.dec_hidden, m.lambda, m.segment_slots, m.mask_slots
    ));
    let t = &ck.train;
    out.push_str(&format!(
        "train {} {} {} {} {} {} {}\n",
        t.total_epochs,
        g17(t.learning_rate),
        g17(t.beta1),
        g17(t.beta2),
        g17(t.epsilon),
        t.mask_activation,
        t.seed
    ));
    out.push_str(&format!("schedule {} {}\n", ck.milestones[0], ck.milestones[1]));
    out.push_str(&format!("epoch {}\n", ck.state.next_epoch));
    out.push_str(&format!("adam_t {}\n", ck.state.adam_t));
    for (prefix, params) in [
        ("params", &ck.state.params),
        ("adam_m", &ck.state.adam_m),
        ("adam_v", &ck.state.adam_v),
    ] {
        for (name, layer) in LAYER_NAMES.iter().zip(&params.layers) {
            push_tensor(&mut out, &format!("{prefix}.{name}.weight"), layer.rows, layer.cols, &layer.weight);
            push_tensor(&mut out, &format!("{prefix}.{name}.bias"), 1, layer.bias.len(), &layer.bias);
        }
    }
    out.push_str("end\n");
    write_atomic(path, out.as_bytes())
}

fn push_tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    out.push_str(&format!("tensor {name} {rows} {cols}\n"));
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let rendered: Vec<String> = row.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        out.push_str(&rendered.join(" "));
        out.push('\n');
    }
}

pub fn read_checkpoint(path: &FsPath) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some("ocmg-checkpoint v1") {
        bail!("{}: not a v1 checkpoint", path.display());
    }

    let mut model: Option<ModelConfig> = None;
    let mut train: Option<TrainConfig> = None;
    let mut milestones: Option<[usize; 2]> = None;
    let mut next_epoch = 0usize;
    let mut adam_t = 0u64;
    let mut tensors: Vec<(String, usize, usize, Vec<f64>)> = Vec::new();

    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "end" {
            break;
        }
        let (key, rest) = line
            .split_once(' ')
            .with_context(|| format!("{}: bad line {line:?}", path.display()))?;
        match key {
            "model" => {
                let v: Vec<usize> = ints(rest)?;
                if v.len() != 7 {
                    bail!("{}: model line needs 7 fields", path.display());
                }
                model = Some(ModelConfig {
                    input_points: v[0],
                    enc_hidden: v[1],
                    feature_dim: v[2],
                    dec_hidden: v[3],
                    lambda: v[4],
                    segment_slots: v[5],
                    mask_slots: v[6],
                });
            }
            "train" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 7 {
                    bail!("{}: train line needs 7 fields", path.display());
                }
                train = Some(TrainConfig {
                    total_epochs: parts[0].parse()?,
                    learning_rate: parts[1].parse()?,
                    beta1: parts[2].parse()?,
                    beta2: parts[3].parse()?,
                    epsilon: parts[4].parse()?,
                    mask_activation: parts[5].parse()?,
                    seed: parts[6].parse()?,
                });
            }
            "schedule" => {
                let v: Vec<usize> = ints(rest)?;
                if v.len() != 2 {
                    bail!("{}: schedule line needs 2 fields", path.display());
                }
                milestones = Some([v[0], v[1]]);
            }
            "epoch" => next_epoch = rest.trim().parse()?,
            "adam_t" => adam_t = rest.trim().parse()?,
            "tensor" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    bail!("{}: tensor line needs name rows cols", path.display());
                }
                let rows: usize = parts[1].parse()?;
                let cols: usize = parts[2].parse()?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let row = lines
                        .next()
                        .with_context(|| format!("{}: tensor {} truncated", path.display(), parts[0]))?;
                    for cell in row.split_whitespace() {
                        let bits = u64::from_str_radix(cell, 16)
                            .with_context(|| format!("{}: bad hex {cell:?}", path.display()))?;
                        data.push(f64::from_bits(bits));
                    }
                }
                if data.len() != rows * cols {
                    bail!("{}: tensor {} has wrong cell count", path.display(), parts[0]);
                }
                tensors.push((parts[0].to_string(), rows, cols, data));
            }
            other => bail!("{}: unknown key {other:?}", path.display()),
        }
    }

    let model = model.with_context(|| format!("{}: missing model line", path.display()))?;
    let train = train.with_context(|| format!("{}: missing train line", path.display()))?;
    let milestones =
        milestones.with_context(|| format!("{}: missing schedule line", path.display()))?;

    let mut build = |prefix: &str| -> Result<ModelParams> {
        let mut params = ModelParams::zeros(&model);
        for (name, layer) in LAYER_NAMES.iter().zip(&mut params.layers) {
            let wname = format!("{prefix}.{name}.weight");
            let bname = format!("{prefix}.{name}.bias");
            let w = take_tensor(&mut tensors, &wname, layer.rows, layer.cols)
                .with_context(|| format!("{}: missing {wname}", path.display()))?;
            let b = take_tensor(&mut tensors, &bname, 1, layer.bias.len())
                .with_context(|| format!("{}: missing {bname}", path.display()))?;
            *layer = Linear { rows: layer.rows, cols: layer.cols, weight: w, bias: b };
        }
        Ok(params)
    };
    let params = build("params")?;
    let adam_m = build("adam_m")?;
    let adam_v = build("adam_v")?;

    Ok(Checkpoint {
        model,
        train,
        milestones,
        state: TrainState { params, adam_m, adam_v, adam_t, next_epoch },
    })
}

impl Checkpoint {
    pub fn schedule(&self) -> Result<CurriculumSchedule> {
        let mut s = CurriculumSchedule::standard(self.train.total_epochs)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        s.milestones = self.milestones;
        Ok(s)
    }
}

fn take_tensor(
    tensors: &mut Vec<(String, usize, usize, Vec<f64>)>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    let idx = tensors
        .iter()
        .position(|(n, _, _, _)| n == name)
        .with_context(|| format!("tensor {name} absent"))?;
    let (_, r, c, data) = tensors.remove(idx);
    if r != rows || c != cols {
        bail!("tensor {name} has shape {r}x{c}, expected {rows}x{cols}");
    }
    Ok(data)
}

fn ints(s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|p| p.parse::<usize>().map_err(|e| anyhow::anyhow!("bad integer {p:?}: {e}")))
        .collect()
}

// ---------------------------------------------------------------------------
// Metrics CSV

pub const METRICS_HEADER: &str = "epoch,loss_p2s,loss_mask,lr,wbp,wbs";

pub fn metrics_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.epoch,
        g17(r.loss_p2s),
        g17(r.loss_mask),
        g17(r.lr),
        g17(r.weights.backward_point),
        g17(r.weights.backward_segment)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = ModelConfig {
            input_points: 4,
            enc_hidden: 5,
            feature_dim: 6,
            dec_hidden: 7,
            lambda: 2,
            segment_slots: 3,
            mask_slots: 2,
        };
        let train = TrainConfig::standard(60, 3);
        let mut state = TrainState::init(&model, 3);
        state.adam_t = 17;
        state.next_epoch = 17;
        state.adam_m = ModelParams::init(&model, 4);
        state.adam_v = ModelParams::init(&model, 5);
        let ck = Checkpoint { model, train, milestones: [12, 25], state };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.txt");
        write_checkpoint(&p, &ck).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(ck, back);
    }
}
