//! Binary checkpoints: magic, version, precision tag, a JSON header with the
//! configuration, then little-endian blobs for every piece of mutable state.

use std::collections::VecDeque;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::trainer::{Episode, Streams};
use super::{AgentConfig, AgentError, AgentNetworks, Algo, Optimizers, ReplayBuffer, TrainConfig, Trainer};
use crate::envs::{MultigoalSpec, MultigoalState};
use crate::nn::{Adam, AdamConfig, Mlp, Real};
use crate::rng::RngState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MEDECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub algo: Algo,
    pub seed: u64,
    pub iterations: usize,
    pub agent: AgentConfig,
    pub env: MultigoalSpec,
    /// Bytes per parameter: 4 or 8.
    pub precision_bytes: u8,
    pub iteration: u64,
    pub env_steps: u64,
}

impl Checkpoint {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig::new(self.algo, self.seed, self.iterations, self.agent.clone())
    }

    /// Reads only the header.
    pub fn peek(path: &Path) -> Result<Self, AgentError> {
        let bytes = std::fs::read(path)?;
        let mut cur = Cursor::new(bytes.as_slice());
        read_header(&mut cur)
    }
}

fn err(msg: impl Into<String>) -> AgentError {
    AgentError::Checkpoint(msg.into())
}

fn read_header(cur: &mut Cursor<&[u8]>) -> Result<Checkpoint, AgentError> {
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(|_| err("truncated file"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(err("not a checkpoint file"));
    }
    let version = cur.read_u32::<LE>()?;
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("incompatible checkpoint version {version} (expected {CHECKPOINT_VERSION})")));
    }
    let len = cur.read_u64::<LE>()? as usize;
    let mut json = vec![0u8; len];
    cur.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| err(format!("header: {e}")))
}

fn put_real<F: Real>(w: &mut Vec<u8>, x: F) {
    if F::BYTES == 4 {
        w.write_u32::<LE>(x.to_bits_u64() as u32).expect("vec write");
    } else {
        w.write_u64::<LE>(x.to_bits_u64()).expect("vec write");
    }
}

fn get_real<F: Real>(r: &mut Cursor<&[u8]>) -> Result<F, AgentError> {
    Ok(F::from_bits_u64(if F::BYTES == 4 { r.read_u32::<LE>()? as u64 } else { r.read_u64::<LE>()? }))
}

fn put_reals<F: Real>(w: &mut Vec<u8>, xs: &[F]) {
    w.write_u64::<LE>(xs.len() as u64).expect("vec write");
    xs.iter().for_each(|&x| put_real(w, x));
}

fn get_len(r: &mut Cursor<&[u8]>) -> Result<usize, AgentError> {
    let n = r.read_u64::<LE>()? as usize;
    // Every element takes at least one byte.
    if n > r.get_ref().len() {
        return Err(err("corrupt length"));
    }
    Ok(n)
}

fn get_reals<F: Real>(r: &mut Cursor<&[u8]>) -> Result<Vec<F>, AgentError> {
    let n = get_len(r)?;
    (0..n).map(|_| get_real(r)).collect()
}

fn put_f64s(w: &mut Vec<u8>, xs: &[f64]) {
    w.write_u64::<LE>(xs.len() as u64).expect("vec write");
    xs.iter().for_each(|&x| w.write_f64::<LE>(x).expect("vec write"));
}

fn get_f64s(r: &mut Cursor<&[u8]>) -> Result<Vec<f64>, AgentError> {
    let n = get_len(r)?;
    (0..n).map(|_| Ok(r.read_f64::<LE>()?)).collect()
}

fn put_mlp<F: Real>(w: &mut Vec<u8>, net: &Mlp<F>) {
    let sizes = net.sizes();
    w.write_u32::<LE>(sizes.len() as u32).expect("vec write");
    sizes.iter().for_each(|&s| w.write_u64::<LE>(s as u64).expect("vec write"));
    put_reals(w, &net.flat_params());
}

fn get_mlp<F: Real>(r: &mut Cursor<&[u8]>) -> Result<Mlp<F>, AgentError> {
    let k = r.read_u32::<LE>()? as usize;
    if !(2..=64).contains(&k) {
        return Err(err("corrupt network shape"));
    }
    let sizes = (0..k).map(|_| Ok(r.read_u64::<LE>()? as usize)).collect::<Result<Vec<_>, AgentError>>()?;
    let mut net = Mlp::<F>::zeros(&sizes);
    let flat = get_reals::<F>(r)?;
    if flat.len() != net.num_params() {
        return Err(err("network parameter count mismatch"));
    }
    net.set_flat_params(&flat);
    Ok(net)
}

fn put_opt_mlp<F: Real>(w: &mut Vec<u8>, net: Option<&Mlp<F>>) {
    w.write_u8(net.is_some() as u8).expect("vec write");
    if let Some(n) = net {
        put_mlp(w, n);
    }
}

fn get_opt_mlp<F: Real>(r: &mut Cursor<&[u8]>) -> Result<Option<Mlp<F>>, AgentError> {
    Ok(if r.read_u8()? == 1 { Some(get_mlp(r)?) } else { None })
}

fn put_adam<F: Real>(w: &mut Vec<u8>, a: &Adam<F>) {
    let c = a.config;
    for x in [c.lr, c.beta1, c.beta2, c.eps] {
        w.write_f64::<LE>(x).expect("vec write");
    }
    w.write_u64::<LE>(a.t).expect("vec write");
    put_reals(w, &a.m);
    put_reals(w, &a.v);
}

fn get_adam<F: Real>(r: &mut Cursor<&[u8]>) -> Result<Adam<F>, AgentError> {
    let config = AdamConfig { lr: r.read_f64::<LE>()?, beta1: r.read_f64::<LE>()?, beta2: r.read_f64::<LE>()?, eps: r.read_f64::<LE>()? };
    let t = r.read_u64::<LE>()?;
    let m = get_reals(r)?;
    let v = get_reals(r)?;
    Ok(Adam { config, m, v, t })
}

fn put_rng(w: &mut Vec<u8>, s: &crate::rng::Rng) {
    let st = RngState::capture(s);
    w.write_all(&st.seed).expect("vec write");
    w.write_u64::<LE>(st.stream).expect("vec write");
    w.write_u128::<LE>(st.word_pos).expect("vec write");
}

fn get_rng(r: &mut Cursor<&[u8]>) -> Result<crate::rng::Rng, AgentError> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let stream = r.read_u64::<LE>()?;
    let word_pos = r.read_u128::<LE>()?;
    Ok(RngState { seed, stream, word_pos }.restore())
}

/// Serializes the complete trainer state.
pub fn encode_checkpoint<F: Real>(t: &Trainer<F>) -> Vec<u8> {
    let header = Checkpoint {
        algo: t.config.algo,
        seed: t.config.seed,
        iterations: t.config.iterations,
        agent: t.config.agent.clone(),
        env: t.env.clone(),
        precision_bytes: F::BYTES,
        iteration: t.iteration,
        env_steps: t.env_steps,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut w = Vec::new();
    w.extend_from_slice(CHECKPOINT_MAGIC);
    w.write_u32::<LE>(CHECKPOINT_VERSION).expect("vec write");
    w.write_u64::<LE>(json.len() as u64).expect("vec write");
    w.extend_from_slice(&json);

    let n = &t.nets;
    put_mlp(&mut w, &n.policy);
    w.write_u32::<LE>(n.critics.len() as u32).expect("vec write");
    n.critics.iter().chain(&n.target_critics).for_each(|c| put_mlp(&mut w, c));
    put_opt_mlp(&mut w, n.disc_sa.as_ref());
    put_opt_mlp(&mut w, n.disc_s.as_ref());

    let o = &t.opts;
    put_adam(&mut w, &o.policy);
    o.critics.iter().for_each(|a| put_adam(&mut w, a));
    for a in [&o.disc_sa, &o.disc_s] {
        w.write_u8(a.is_some() as u8).expect("vec write");
        if let Some(a) = a {
            put_adam(&mut w, a);
        }
    }

    let b = &t.buffer;
    let (sd, ad) = b.dims();
    let (states, actions, rewards, next_states, dones, zs) = b.columns();
    for x in [b.capacity(), sd, ad, b.cursor()] {
        w.write_u64::<LE>(x as u64).expect("vec write");
    }
    put_f64s(&mut w, states);
    put_f64s(&mut w, actions);
    put_f64s(&mut w, rewards);
    put_f64s(&mut w, next_states);
    w.write_u64::<LE>(dones.len() as u64).expect("vec write");
    dones.iter().for_each(|&d| w.write_u8(d as u8).expect("vec write"));
    zs.iter().for_each(|&z| w.write_u32::<LE>(z as u32).expect("vec write"));

    let s = &t.streams;
    for r in [&s.env, &s.acting, &s.replay, &s.noise, &s.latent] {
        put_rng(&mut w, r);
    }
    let e = &t.episode;
    w.write_f64::<LE>(e.state.position[0]).expect("vec write");
    w.write_f64::<LE>(e.state.position[1]).expect("vec write");
    w.write_u64::<LE>(e.state.steps as u64).expect("vec write");
    w.write_u64::<LE>(e.z as u64).expect("vec write");
    w.write_f64::<LE>(e.ret).expect("vec write");
    w.write_u32::<LE>(t.recent.len() as u32).expect("vec write");
    for window in &t.recent {
        put_f64s(&mut w, &window.iter().copied().collect::<Vec<_>>());
    }
    for c in [t.env_steps, t.iteration, t.grad_steps] {
        w.write_u64::<LE>(c).expect("vec write");
    }
    w
}

pub fn decode_checkpoint<F: Real>(bytes: &[u8]) -> Result<Trainer<F>, AgentError> {
    let mut r = Cursor::new(bytes);
    let header = read_header(&mut r)?;
    if header.precision_bytes != F::BYTES {
        return Err(err(format!("checkpoint stores {}-byte parameters, expected {}", header.precision_bytes, F::BYTES)));
    }
    let config = header.train_config();
    config.validate()?;
    let template = Trainer::<F>::new(config.clone(), header.env.clone())?;

    let policy = get_mlp(&mut r)?;
    let n_critics = r.read_u32::<LE>()? as usize;
    if n_critics != template.nets.critics.len() {
        return Err(err("critic count disagrees with configuration"));
    }
    let critics = (0..n_critics).map(|_| get_mlp(&mut r)).collect::<Result<Vec<_>, _>>()?;
    let target_critics = (0..n_critics).map(|_| get_mlp(&mut r)).collect::<Result<Vec<_>, _>>()?;
    let disc_sa = get_opt_mlp(&mut r)?;
    let disc_s = get_opt_mlp(&mut r)?;
    let nets = AgentNetworks { policy, critics, target_critics, disc_sa, disc_s, ..template.nets.clone() };
    let same_shapes = nets.policy.sizes() == template.nets.policy.sizes()
        && nets.critics.iter().zip(&template.nets.critics).all(|(a, b)| a.sizes() == b.sizes())
        && nets.disc_sa.as_ref().map(Mlp::sizes) == template.nets.disc_sa.as_ref().map(Mlp::sizes)
        && nets.disc_s.as_ref().map(Mlp::sizes) == template.nets.disc_s.as_ref().map(Mlp::sizes);
    if !same_shapes {
        return Err(err("network shapes disagree with configuration"));
    }

    let policy_opt = get_adam(&mut r)?;
    let critic_opts = (0..n_critics).map(|_| get_adam(&mut r)).collect::<Result<Vec<_>, _>>()?;
    let mut disc_opts = [None, None];
    for slot in &mut disc_opts {
        if r.read_u8()? == 1 {
            *slot = Some(get_adam::<F>(&mut r)?);
        }
    }
    let [disc_sa_opt, disc_s_opt] = disc_opts;
    let opts = Optimizers { policy: policy_opt, critics: critic_opts, disc_sa: disc_sa_opt, disc_s: disc_s_opt };

    let capacity = r.read_u64::<LE>()? as usize;
    let sd = r.read_u64::<LE>()? as usize;
    let ad = r.read_u64::<LE>()? as usize;
    let cursor = r.read_u64::<LE>()? as usize;
    let states = get_f64s(&mut r)?;
    let actions = get_f64s(&mut r)?;
    let rewards = get_f64s(&mut r)?;
    let next_states = get_f64s(&mut r)?;
    let n = get_len(&mut r)?;
    let dones = (0..n).map(|_| Ok(r.read_u8()? == 1)).collect::<Result<Vec<_>, AgentError>>()?;
    let zs = (0..n).map(|_| Ok(r.read_u32::<LE>()? as usize)).collect::<Result<Vec<_>, AgentError>>()?;
    let buffer = ReplayBuffer::from_columns(capacity, sd, ad, states, actions, rewards, next_states, dones, zs, cursor)?;

    let streams = Streams {
        env: get_rng(&mut r)?,
        acting: get_rng(&mut r)?,
        replay: get_rng(&mut r)?,
        noise: get_rng(&mut r)?,
        latent: get_rng(&mut r)?,
    };
    let position = [r.read_f64::<LE>()?, r.read_f64::<LE>()?];
    let steps = r.read_u64::<LE>()? as usize;
    let z = r.read_u64::<LE>()? as usize;
    let ret = r.read_f64::<LE>()?;
    let episode = Episode { state: MultigoalState { position, steps }, z, ret };
    let k = r.read_u32::<LE>()? as usize;
    if k != config.cardinality() || z >= k {
        return Err(err("latent cardinality disagrees with configuration"));
    }
    let recent = (0..k).map(|_| get_f64s(&mut r).map(VecDeque::from)).collect::<Result<Vec<_>, _>>()?;
    let env_steps = r.read_u64::<LE>()?;
    let iteration = r.read_u64::<LE>()?;
    let grad_steps = r.read_u64::<LE>()?;
    if (r.position() as usize) != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Ok(Trainer { config, env: header.env, nets, opts, buffer, streams, episode, recent, env_steps, iteration, grad_steps })
}

/// Writes through a temporary file so an interrupted save keeps the old one.
pub fn save_checkpoint<F: Real>(t: &Trainer<F>, path: &Path) -> Result<(), AgentError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&encode_checkpoint(t))?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Trainer<F>, AgentError> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained(algo: Algo) -> Trainer<f32> {
        let agent = AgentConfig {
            batch_size: 16,
            hidden: vec![8, 8],
            disc_hidden: vec![8],
            warmup_steps: 40,
            steps_per_iteration: 30,
            ..AgentConfig::default()
        };
        let mut t = Trainer::new(TrainConfig::new(algo, 6, 5, agent), MultigoalSpec::four_goals()).unwrap();
        for _ in 0..3 {
            t.train_iteration().unwrap();
        }
        t
    }

    #[test]
    fn round_trip_continues_bit_identically() {
        for algo in [Algo::Sac, Algo::Mede, Algo::Diayn] {
            let mut a = trained(algo);
            let bytes = encode_checkpoint(&a);
            let mut b = decode_checkpoint::<f32>(&bytes).unwrap();
            assert_eq!(a, b);
            for _ in 0..2 {
                assert_eq!(a.train_iteration().unwrap(), b.train_iteration().unwrap());
            }
            assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
        }
    }

    #[test]
    fn file_round_trip_and_header_peek() {
        let t = trained(Algo::Mede);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save_checkpoint(&t, &path).unwrap();
        assert_eq!(load_checkpoint::<f32>(&path).unwrap(), t);
        let header = Checkpoint::peek(&path).unwrap();
        assert_eq!((header.iteration, header.env_steps, header.precision_bytes), (3, 90, 4));
        assert_eq!(header.train_config(), t.config);
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = encode_checkpoint(&trained(Algo::Mede));
        let msg = |r: Result<Trainer<f32>, AgentError>| r.unwrap_err().to_string();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(msg(decode_checkpoint(&bad)).contains("not a checkpoint"));

        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(msg(decode_checkpoint(&bad)).contains("incompatible checkpoint version"));

        assert!(msg(decode_checkpoint::<f64>(&bytes).map(|_| unreachable!())).contains("4-byte"));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(msg(decode_checkpoint(&bad)).contains("trailing"));

        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 5]).is_err());
        assert!(decode_checkpoint::<f32>(&bytes[..4]).is_err());
    }

    #[test]
    fn double_precision_round_trip() {
        let agent = AgentConfig { batch_size: 8, hidden: vec![4], disc_hidden: vec![4], warmup_steps: 10, steps_per_iteration: 20, ..AgentConfig::default() };
        let mut t = Trainer::<f64>::new(TrainConfig::new(Algo::Mede, 1, 2, agent), MultigoalSpec::two_goals()).unwrap();
        t.train_iteration().unwrap();
        let back = decode_checkpoint::<f64>(&encode_checkpoint(&t)).unwrap();
        assert_eq!(back, t);
    }
}
