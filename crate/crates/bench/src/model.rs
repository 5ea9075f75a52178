//! Model files: a UTF-8 manifest whose first line counts the manifest lines
//! that follow, then the parameter blobs as `LRM1` matrices and an optional
//! `LRF1` probe map, in manifest order.
//!
//! ```text
//! 7
//! channels 1
//! state_dim 8
//! system full        # A_bar, B_bar, C
//! system lowrank     # U, V, B_bar, C
//! system selective   # A, B, C, W_delta, [bias]
//! system full
//! head 3 2 2         # W_box, b_box, W_cls, b_cls, w_conf, [b_conf]
//! ```

use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use lowrank_ss2d::detect::HeadWeights;
use lowrank_ss2d::lowrank::LowRankTransition;
use lowrank_ss2d::numlin::{Matrix, Rng};
use lowrank_ss2d::ss2d::{DirectionalSystem, FeatureMap, Ss2dLayer};
use lowrank_ss2d::ssm::{ContinuousSsm, DiscreteSsm, SelectiveDelta};

use crate::error::{BenchError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub layer: Ss2dLayer,
    pub head: Option<HeadWeights>,
    /// Reference input stored alongside the weights, e.g. for regression checks.
    pub probe: Option<FeatureMap>,
}

impl Model {
    pub fn new(layer: Ss2dLayer) -> Self {
        Self { layer, head: None, probe: None }
    }

    /// Mixed-variant model for round-trip testing: every system kind, a head
    /// and a probe map.
    pub fn random(state_dim: usize, channels: usize, rank: usize, rng: &mut Rng) -> Result<Self> {
        let full = Ss2dLayer::random_teacher(state_dim, channels, rng);
        let low = full.compress(rank)?;
        let sel = Ss2dLayer::random_selective(state_dim, channels, rng);
        let systems = (0..4 * channels)
            .map(|k| match k % 3 {
                0 => full.systems()[k].clone(),
                1 => low.systems()[k].clone(),
                _ => sel.systems()[k].clone(),
            })
            .collect();
        let classes = 1 + rng.below(3);
        Ok(Self {
            layer: Ss2dLayer::new(channels, systems)?,
            head: Some(HeadWeights::random(channels, classes, (1, 2), 0.5, rng)),
            probe: Some(FeatureMap::random(2, 3, channels, 1.0, rng)),
        })
    }
}

fn encode(model: &Model) -> Vec<u8> {
    let mut lines = vec![
        format!("channels {}", model.layer.channels()),
        format!("state_dim {}", model.layer.state_dim()),
    ];
    let mut blobs: Vec<u8> = Vec::new();
    let mut put = |m: &Matrix| blobs.extend_from_slice(&m.to_bytes());
    for sys in model.layer.systems() {
        match sys {
            DirectionalSystem::Full(d) => {
                lines.push("system full".into());
                for m in [d.a_bar(), d.b_bar(), d.c()] {
                    put(m);
                }
            }
            DirectionalSystem::LowRank { transition, b_bar, c } => {
                lines.push("system lowrank".into());
                for m in [transition.u(), transition.v(), b_bar, c] {
                    put(m);
                }
            }
            DirectionalSystem::Selective { ssm, delta } => {
                lines.push("system selective".into());
                for m in [ssm.a(), ssm.b(), ssm.c(), delta.w()] {
                    put(m);
                }
                put(&Matrix::from_vec(1, 1, vec![delta.bias()]).expect("1x1"));
            }
        }
    }
    if let Some(h) = &model.head {
        lines.push(format!("head {} {} {}", h.num_classes(), h.grid.0, h.grid.1));
        put(&h.w_box);
        put(&Matrix::row_vector(&h.b_box));
        put(&h.w_cls);
        put(&Matrix::row_vector(&h.b_cls));
        put(&h.w_conf);
        put(&Matrix::row_vector(&[h.b_conf]));
    }
    if model.probe.is_some() {
        lines.push("probe".into());
    }
    let mut out = format!("{}\n", lines.len()).into_bytes();
    for l in &lines {
        out.extend_from_slice(l.as_bytes());
        out.push(b'\n');
    }
    out.extend_from_slice(&blobs);
    if let Some(p) = &model.probe {
        out.extend_from_slice(&p.to_bytes());
    }
    out
}

fn keyed(line: &str, key: &str) -> std::result::Result<Vec<usize>, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(format!("expected `{key}`, found {line:?}"));
    }
    parts
        .map(|p| p.parse().map_err(|_| format!("bad number {p:?} in {line:?}")))
        .collect()
}

fn scalar_row(m: Matrix, len: usize, what: &str) -> std::result::Result<Vec<f64>, String> {
    if m.shape() != (1, len) {
        return Err(format!("{what} has shape {:?}, expected (1, {len})", m.shape()));
    }
    Ok(m.into_vec())
}

fn decode(bytes: &[u8]) -> std::result::Result<Model, String> {
    let mut cur = Cursor::new(bytes);
    let read_line = |cur: &mut Cursor<&[u8]>| -> std::result::Result<String, String> {
        let mut buf = Vec::new();
        cur.read_until(b'\n', &mut buf).map_err(|e| e.to_string())?;
        if buf.pop() != Some(b'\n') {
            return Err(String::from("truncated manifest"));
        }
        String::from_utf8(buf).map_err(|_| String::from("manifest is not UTF-8"))
    };
    let first = read_line(&mut cur)?;
    let count: usize = first
        .trim()
        .parse()
        .map_err(|_| format!("bad manifest line count {first:?}"))?;
    let lines = (0..count).map(|_| read_line(&mut cur)).collect::<std::result::Result<Vec<_>, _>>()?;
    if count < 2 {
        return Err(String::from("manifest too short"));
    }
    let one = |v: Vec<usize>, line: &str| match v[..] {
        [x] => Ok(x),
        _ => Err(format!("expected one value in {line:?}")),
    };
    let channels = one(keyed(&lines[0], "channels")?, &lines[0])?;
    let state_dim = one(keyed(&lines[1], "state_dim")?, &lines[1])?;

    let mat = |cur: &mut Cursor<&[u8]>| Matrix::read_from(cur).map_err(|e| e.to_string());
    let mut systems = Vec::new();
    let mut head = None;
    let mut probe = false;
    for line in &lines[2..] {
        let line = line.as_str();
        let core = |e: lowrank_ss2d::Error| e.to_string();
        match line.trim() {
            "system full" => {
                let (a, b, c) = (mat(&mut cur)?, mat(&mut cur)?, mat(&mut cur)?);
                systems.push(DirectionalSystem::Full(DiscreteSsm::new(a, b, c).map_err(core)?));
            }
            "system lowrank" => {
                let (u, v) = (mat(&mut cur)?, mat(&mut cur)?);
                let (b_bar, c) = (mat(&mut cur)?, mat(&mut cur)?);
                let transition = LowRankTransition::new(u, v).map_err(core)?;
                systems.push(DirectionalSystem::LowRank { transition, b_bar, c });
            }
            "system selective" => {
                let (a, b, c, w) = (mat(&mut cur)?, mat(&mut cur)?, mat(&mut cur)?, mat(&mut cur)?);
                let bias = scalar_row(mat(&mut cur)?, 1, "delta bias")?[0];
                systems.push(DirectionalSystem::Selective {
                    ssm: ContinuousSsm::new(a, b, c).map_err(core)?,
                    delta: SelectiveDelta::new(w, bias).map_err(core)?,
                });
            }
            "probe" => probe = true,
            l if l.starts_with("head") => {
                let v = keyed(l, "head")?;
                let [classes, gh, gw] = v[..] else {
                    return Err(format!("expected three values in {l:?}"));
                };
                let w_box = mat(&mut cur)?;
                let b_box = scalar_row(mat(&mut cur)?, 4, "b_box")?;
                let w_cls = mat(&mut cur)?;
                let b_cls = scalar_row(mat(&mut cur)?, classes, "b_cls")?;
                let w_conf = mat(&mut cur)?;
                let b_conf = scalar_row(mat(&mut cur)?, 1, "b_conf")?[0];
                if w_box.shape() != (4, channels) || w_cls.shape() != (classes, channels) || w_conf.shape() != (1, channels) {
                    return Err(String::from("head weights do not match the channel count"));
                }
                head = Some(HeadWeights {
                    w_box,
                    b_box: [b_box[0], b_box[1], b_box[2], b_box[3]],
                    w_cls,
                    b_cls,
                    w_conf,
                    b_conf,
                    grid: (gh, gw),
                });
            }
            other => return Err(format!("unknown manifest line {other:?}")),
        }
    }
    let probe = if probe { Some(FeatureMap::read_from(&mut cur).map_err(|e| e.to_string())?) } else { None };
    let mut rest = Vec::new();
    cur.read_to_end(&mut rest).map_err(|e| e.to_string())?;
    if !rest.is_empty() {
        return Err(format!("{} trailing bytes", rest.len()));
    }
    let layer = Ss2dLayer::new(channels, systems).map_err(|e| e.to_string())?;
    if layer.state_dim() != state_dim {
        return Err(format!("manifest says state_dim {state_dim}, systems have {}", layer.state_dim()));
    }
    Ok(Model { layer, head, probe })
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    encode(model)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    decode(bytes).map_err(|reason| BenchError::Model { path: "<memory>".into(), reason })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| BenchError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| BenchError::io(path, e))?;
    decode(&bytes).map_err(|reason| BenchError::Model { path: path.into(), reason })
}

/// Bitwise equality of every stored parameter; `PartialEq` would treat
/// `-0.0 == 0.0` and `NaN != NaN`.
pub fn bit_identical(a: &Model, b: &Model) -> bool {
    encode(a) == encode(b)
}
