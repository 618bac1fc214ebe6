//! Interventional episode datasets on disk.
//!
//! A dataset is a directory holding `manifest.json` and one binary blob per
//! tensor field. Every blob starts with the magic `CEL1`, a dtype byte, a rank
//! byte, two zero bytes, the dimensions as little-endian `u64`s, then the
//! row-major little-endian payload. See `FORMAT.md` at the repository root.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chemistry::ChemState;
use crate::env::{Env, EnvAction, EnvConfig, EnvState, EpisodeStreams, TARGET_ACTIONS};
use crate::error::{Error, Result};
use crate::noise;
use crate::physics::{Cell, ObjColor, PhysicsSetting, PhysicsState};
use crate::render::Frame;

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &[u8; 4] = b"CEL1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Zeroshot,
}

impl Split {
    fn code(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
            Split::Zeroshot => 2,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "zeroshot" => Ok(Split::Zeroshot),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Seed of episode `index` in `split`. The split occupies the top two bits,
/// so seeds from different splits never coincide.
pub fn episode_seed(base_seed: u64, split: Split, index: u64) -> u64 {
    (split.code() << 62) | (noise::hash_words(&[base_seed, index]) >> 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub config: EnvConfig,
    pub seed: u64,
    /// `steps + 1` states, starting with the reset.
    pub states: Vec<EnvState>,
    pub actions: Vec<EnvAction>,
    /// `rewards[t]` scores `states[t + 1]` against the target.
    pub rewards: Vec<f64>,
    pub obs: Vec<Frame>,
    pub target: EnvState,
    pub target_obs: Frame,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// Re-run the stored actions from the seed and compare.
    pub fn replays(&self, env: &Env) -> Result<bool> {
        let streams = EpisodeStreams::new(self.seed);
        let (mut state, mut cursor) = env.start(streams)?;
        if state != self.states[0] {
            return Ok(false);
        }
        for (t, a) in self.actions.iter().enumerate() {
            let (next, c) = env.step(&state, a, cursor)?;
            if next != self.states[t + 1] || env.reward(&next, &self.target)? != self.rewards[t] {
                return Ok(false);
            }
            state = next;
            cursor = c;
        }
        Ok(true)
    }
}

/// Roll one episode of uniformly random actions.
pub fn generate_episode(env: &Env, seed: u64, steps: usize) -> Result<Episode> {
    let streams = EpisodeStreams::new(seed);
    let (start, mut cursor) = env.start(streams)?;
    let (target, _) = env.random_target(&start, streams, TARGET_ACTIONS)?;
    let mut rng = streams.action_rng();
    let mut states = vec![start];
    let mut actions = Vec::with_capacity(steps);
    let mut rewards = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a = env.action(rng.gen_range(0..env.num_actions()));
        let (next, c) = env.step(states.last().expect("non-empty"), &a, cursor)?;
        cursor = c;
        rewards.push(env.reward(&next, &target)?);
        actions.push(a);
        states.push(next);
    }
    let obs = states.iter().map(|s| env.render(s)).collect();
    let target_obs = env.render(&target);
    Ok(Episode {
        config: *env.config(),
        seed,
        states,
        actions,
        rewards,
        obs,
        target,
        target_obs,
    })
}

/// Episodes of a split, generated in parallel on the current rayon pool.
/// The result does not depend on the pool size.
pub fn generate_episodes(
    config: &EnvConfig,
    episodes: usize,
    steps: usize,
    split: Split,
    seed: u64,
) -> Result<Vec<Episode>> {
    let config = match split {
        Split::Zeroshot => config.zero_shot()?,
        _ => *config,
    };
    let env = Env::new(config)?;
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| generate_episode(&env, episode_seed(seed, split, i), steps))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U32,
    U64,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::U8 => 0,
            Dtype::U32 => 1,
            Dtype::U64 => 2,
            Dtype::F64 => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [Dtype::U8, Dtype::U32, Dtype::U64, Dtype::F64].into_iter().find(|d| d.code() == c)
    }

    fn width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U32 => 4,
            Dtype::U64 | Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub env: EnvConfig,
    pub split: Split,
    pub base_seed: u64,
    pub episodes: usize,
    pub steps: usize,
    pub tensors: Vec<TensorInfo>,
}

/// A loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub episodes: Vec<Episode>,
}

impl IntoIterator for Dataset {
    type Item = Episode;
    type IntoIter = std::vec::IntoIter<Episode>;
    fn into_iter(self) -> Self::IntoIter {
        self.episodes.into_iter()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Episode;
    type IntoIter = std::slice::Iter<'a, Episode>;
    fn into_iter(self) -> Self::IntoIter {
        self.episodes.iter()
    }
}

#[derive(Default)]
struct Tensor {
    dtype: Option<Dtype>,
    shape: Vec<u64>,
    bytes: Vec<u8>,
}

impl Tensor {
    fn new(dtype: Dtype, shape: &[usize]) -> Self {
        Tensor {
            dtype: Some(dtype),
            shape: shape.iter().map(|&d| d as u64).collect(),
            bytes: Vec::new(),
        }
    }

    fn u8s(&mut self, v: impl IntoIterator<Item = u8>) {
        self.bytes.extend(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn encode(&self) -> Vec<u8> {
        let dtype = self.dtype.expect("typed tensor");
        let mut out = Vec::with_capacity(8 + 8 * self.shape.len() + self.bytes.len());
        out.extend_from_slice(MAGIC);
        out.push(dtype.code());
        out.push(self.shape.len() as u8);
        out.extend_from_slice(&[0, 0]);
        for d in &self.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.bytes);
        out
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn object_fields(state: &EnvState) -> (Vec<Cell>, Vec<u8>, Vec<u8>, Vec<f64>) {
    match state {
        EnvState::Physics(s) => (
            s.positions.clone(),
            s.colors.iter().map(|c| c.code()).collect(),
            s.shapes.clone(),
            s.weights.clone(),
        ),
        EnvState::Chem(s) => (s.positions.clone(), s.colors.clone(), s.shapes.clone(), Vec::new()),
    }
}

/// Write episodes as a dataset directory.
pub fn write_dataset(
    dir: &Path,
    env: &EnvConfig,
    split: Split,
    base_seed: u64,
    episodes: &[Episode],
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let e = episodes.len();
    let steps = episodes.first().map_or(0, |ep| ep.steps());
    if episodes.iter().any(|ep| ep.steps() != steps) {
        return Err(Error::Mismatch("episodes of different lengths".into()));
    }
    let m = env.num_objects();
    let side = env.grid_size() * crate::render::CELL_PX;
    let is_physics = matches!(env, EnvConfig::Physics(_));
    let t1 = steps + 1;

    let mut seeds = Tensor::new(Dtype::U64, &[e]);
    let mut obs = Tensor::new(Dtype::U8, &[e, t1, side, side, 3]);
    let mut target_obs = Tensor::new(Dtype::U8, &[e, side, side, 3]);
    let mut action = Tensor::new(Dtype::U32, &[e, steps]);
    let mut reward = Tensor::new(Dtype::F64, &[e, steps]);
    let mut pos = Tensor::new(Dtype::U8, &[e, t1, m, 2]);
    let mut color = Tensor::new(Dtype::U8, &[e, t1, m]);
    let mut shape = Tensor::new(Dtype::U8, &[e, t1, m]);
    let mut weight = Tensor::new(Dtype::F64, &[e, t1, m]);
    let mut t_pos = Tensor::new(Dtype::U8, &[e, m, 2]);
    let mut t_color = Tensor::new(Dtype::U8, &[e, m]);
    let mut t_shape = Tensor::new(Dtype::U8, &[e, m]);
    let mut t_weight = Tensor::new(Dtype::F64, &[e, m]);

    let probe = Env::new(*env)?;
    for ep in episodes {
        seeds.u64(ep.seed);
        for f in &ep.obs {
            obs.u8s(f.data.iter().copied());
        }
        target_obs.u8s(ep.target_obs.data.iter().copied());
        for a in &ep.actions {
            action.u32(probe.action_index(a) as u32);
        }
        for &r in &ep.rewards {
            reward.f64(r);
        }
        let put = |s: &EnvState, pos: &mut Tensor, color: &mut Tensor, shape: &mut Tensor, weight: &mut Tensor| {
            let (p, c, sh, w) = object_fields(s);
            pos.u8s(p.iter().flat_map(|c| [c.row as u8, c.col as u8]));
            color.u8s(c);
            shape.u8s(sh);
            for x in w {
                weight.f64(x);
            }
        };
        for s in &ep.states {
            put(s, &mut pos, &mut color, &mut shape, &mut weight);
        }
        put(&ep.target, &mut t_pos, &mut t_color, &mut t_shape, &mut t_weight);
    }

    let mut fields = vec![
        ("episode_seed", seeds),
        ("obs", obs),
        ("target_obs", target_obs),
        ("action", action),
        ("reward", reward),
        ("state_pos", pos),
        ("state_color", color),
        ("state_shape", shape),
        ("target_pos", t_pos),
        ("target_color", t_color),
        ("target_shape", t_shape),
    ];
    if is_physics {
        fields.push(("state_weight", weight));
        fields.push(("target_weight", t_weight));
    }

    let mut tensors = Vec::new();
    for (name, tensor) in &fields {
        let file = format!("{name}.bin");
        write_atomic(&dir.join(&file), &tensor.encode())?;
        tensors.push(TensorInfo {
            name: name.to_string(),
            file,
            dtype: tensor.dtype.expect("typed"),
            shape: tensor.shape.clone(),
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        env: *env,
        split,
        base_seed,
        episodes: e,
        steps,
        tensors,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

/// Generate a split and write it to `dir`.
pub fn generate_dataset(
    config: &EnvConfig,
    episodes: usize,
    steps: usize,
    split: Split,
    seed: u64,
    dir: &Path,
) -> Result<DatasetManifest> {
    let eps = generate_episodes(config, episodes, steps, split, seed)?;
    let stored = eps.first().map_or(match split {
        Split::Zeroshot => config.zero_shot()?,
        _ => *config,
    }, |ep| ep.config);
    write_dataset(dir, &stored, split, seed, &eps)
}

struct Blob {
    path: PathBuf,
    data: Vec<u8>,
    pos: usize,
}

impl Blob {
    fn open(dir: &Path, info: &TensorInfo) -> Result<Self> {
        let path = dir.join(&info.file);
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let format = |reason: String| Error::Format { path: path.clone(), reason };
        let corrupt = |reason: String| Error::Corruption { path: path.clone(), reason };
        if raw.len() < 8 || &raw[..4] != MAGIC {
            return Err(format("bad magic".into()));
        }
        let dtype = Dtype::from_code(raw[4]).ok_or_else(|| format(format!("unknown dtype code {}", raw[4])))?;
        if dtype != info.dtype {
            return Err(format(format!("dtype {dtype:?} but manifest says {:?}", info.dtype)));
        }
        let ndim = raw[5] as usize;
        let header = 8 + 8 * ndim;
        if raw.len() < header {
            return Err(corrupt("truncated header".into()));
        }
        let shape: Vec<u64> = (0..ndim)
            .map(|i| u64::from_le_bytes(raw[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")))
            .collect();
        if shape != info.shape {
            return Err(corrupt(format!("shape {shape:?} but manifest says {:?}", info.shape)));
        }
        let expect = shape.iter().product::<u64>() as usize * dtype.width();
        if raw.len() - header != expect {
            return Err(corrupt(format!("{} payload bytes, expected {expect}", raw.len() - header)));
        }
        Ok(Blob { path, data: raw[header..].to_vec(), pos: 0 })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Corruption { path: self.path.clone(), reason: "read past end".into() });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

struct StateBlobs {
    pos: Blob,
    color: Blob,
    shape: Blob,
    weight: Option<Blob>,
}

impl StateBlobs {
    fn read(&mut self, cfg: &EnvConfig) -> Result<EnvState> {
        let m = cfg.num_objects();
        let mut positions = Vec::with_capacity(m);
        for _ in 0..m {
            let r = self.pos.u8()? as usize;
            let c = self.pos.u8()? as usize;
            positions.push(Cell::new(r, c));
        }
        let colors: Vec<u8> = (0..m).map(|_| self.color.u8()).collect::<Result<_>>()?;
        let shapes: Vec<u8> = (0..m).map(|_| self.shape.u8()).collect::<Result<_>>()?;
        Ok(match cfg {
            EnvConfig::Physics(p) => {
                let w = self.weight.as_mut().ok_or_else(|| Error::Mismatch("physics dataset without weights".into()))?;
                let weights = (0..m).map(|_| w.f64()).collect::<Result<_>>()?;
                let colors = colors
                    .into_iter()
                    .map(|c| match p.setting {
                        PhysicsSetting::Observed => ObjColor::Intensity(c),
                        _ => ObjColor::Palette(c),
                    })
                    .collect();
                EnvState::Physics(PhysicsState { positions, weights, colors, shapes })
            }
            EnvConfig::Chemistry(_) => EnvState::Chem(ChemState { colors, positions, shapes }),
        })
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Format {
            path,
            reason: format!("unsupported format version {version:?}"),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Format { path, reason: e.to_string() })
}

/// Load every episode of a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let find = |name: &str| -> Result<Blob> {
        let info = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format { path: dir.join(MANIFEST), reason: format!("missing tensor {name}") })?;
        Blob::open(dir, info)
    };
    let cfg = manifest.env;
    let env = Env::new(cfg)?;
    let is_physics = matches!(cfg, EnvConfig::Physics(_));
    let side = cfg.grid_size() * crate::render::CELL_PX;
    let frame_bytes = side * side * 3;

    let mut seeds = find("episode_seed")?;
    let mut obs = find("obs")?;
    let mut target_obs = find("target_obs")?;
    let mut action = find("action")?;
    let mut reward = find("reward")?;
    let mut states = StateBlobs {
        pos: find("state_pos")?,
        color: find("state_color")?,
        shape: find("state_shape")?,
        weight: if is_physics { Some(find("state_weight")?) } else { None },
    };
    let mut targets = StateBlobs {
        pos: find("target_pos")?,
        color: find("target_color")?,
        shape: find("target_shape")?,
        weight: if is_physics { Some(find("target_weight")?) } else { None },
    };

    let frame = |blob: &mut Blob| -> Result<Frame> {
        Ok(Frame { width: side, height: side, data: blob.take(frame_bytes)?.to_vec() })
    };
    let mut episodes = Vec::with_capacity(manifest.episodes);
    for _ in 0..manifest.episodes {
        let seed = seeds.u64()?;
        let obs_frames = (0..=manifest.steps).map(|_| frame(&mut obs)).collect::<Result<Vec<_>>>()?;
        let t_obs = frame(&mut target_obs)?;
        let mut actions = Vec::with_capacity(manifest.steps);
        for _ in 0..manifest.steps {
            let idx = action.u32()? as usize;
            if idx >= env.num_actions() {
                return Err(Error::Corruption { path: action.path.clone(), reason: format!("action index {idx} out of range") });
            }
            actions.push(env.action(idx));
        }
        let rewards = (0..manifest.steps).map(|_| reward.f64()).collect::<Result<Vec<_>>>()?;
        let st = (0..=manifest.steps).map(|_| states.read(&cfg)).collect::<Result<Vec<_>>>()?;
        let target = targets.read(&cfg)?;
        episodes.push(Episode {
            config: cfg,
            seed,
            states: st,
            actions,
            rewards,
            obs: obs_frames,
            target,
            target_obs: t_obs,
        });
    }
    Ok(Dataset { manifest, episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{PhysicsConfig, PhysicsSetting};

    #[test]
    fn split_seed_domains_are_disjoint() {
        let train: std::collections::BTreeSet<u64> = (0..1000).map(|i| episode_seed(1, Split::Train, i)).collect();
        let test: std::collections::BTreeSet<u64> = (0..1000).map(|i| episode_seed(1, Split::Test, i)).collect();
        assert_eq!(train.len(), 1000);
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn generated_episode_replays() {
        let env = Env::new(EnvConfig::Physics(PhysicsConfig::new(3, PhysicsSetting::Observed, 0))).unwrap();
        let ep = generate_episode(&env, 9, 15).unwrap();
        assert_eq!(ep.states.len(), 16);
        assert_eq!(ep.obs.len(), 16);
        assert!(ep.replays(&env).unwrap());
        let mut bad = ep.clone();
        bad.actions.swap(0, 1);
        if bad.actions[0] != ep.actions[0] {
            assert!(!bad.replays(&env).unwrap() || bad.states == ep.states);
        }
    }

    #[test]
    fn blob_header_layout() {
        let mut t = Tensor::new(Dtype::U32, &[2]);
        t.u32(1);
        t.u32(0x0102_0304);
        let b = t.encode();
        assert_eq!(&b[..4], b"CEL1");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 1);
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[20..24], &[4, 3, 2, 1]);
    }
}
