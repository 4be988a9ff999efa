//! Versioned binary checkpoints for the learner.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "EVSIMDQN"
//! 8       4     format version (u32), currently 1
//! 12      4     layer count L (u32) = number of weight layers
//! 16      4*(L+1)  layer sizes (u32 each), input width first
//! ...           evaluate network: per layer, weights row-major
//!               (outputs x inputs f64) then biases (outputs f64)
//! ...           target network, same shape
//! ...           Adam step counter t (u64)
//! ...           Adam moments: per layer m_weights, v_weights, m_biases,
//!               v_biases (f64 arrays, same shapes as the layer)
//! ...           env_steps (u64), learn_steps (u64), episodes (u64)
//! ...           epsilon (f64) as of env_steps
//! ...           RNG: seed (32 bytes), word position (u128), stream (u64)
//! ```
//!
//! Loading restores every byte of learner state, so a save/load round trip
//! continues bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{epsilon_at, DqnAgent, ReplayBuffer, TrainingConfig};
use crate::net::{AdamState, Layer, LayerMoments, QNetwork};

const MAGIC: &[u8; 8] = b"EVSIMDQN";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o failed at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u128(&mut self, v: u128) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn f64_slice(&mut self, vs: &[f64]) -> std::io::Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
    fn net(&mut self, net: &QNetwork) -> std::io::Result<()> {
        for l in &net.layers {
            self.f64_slice(&l.weights)?;
            self.f64_slice(&l.biases)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    input: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.input.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn u128(&mut self) -> std::io::Result<u128> {
        Ok(u128::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64_vec(&mut self, n: usize) -> std::io::Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn net(&mut self, sizes: &[usize]) -> std::io::Result<QNetwork> {
        let layers = sizes
            .windows(2)
            .map(|w| {
                Ok(Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: self.f64_vec(w[0] * w[1])?,
                    biases: self.f64_vec(w[1])?,
                })
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(QNetwork { layers })
    }
}

pub fn save(agent: &DqnAgent, path: &Path) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = Writer {
        out: BufWriter::new(file),
    };
    let write = (|| -> std::io::Result<()> {
        w.out.write_all(MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        let layer_count = agent.eval_net.layers.len() as u32;
        w.u32(layer_count)?;
        w.u32(agent.eval_net.input_width() as u32)?;
        for l in &agent.eval_net.layers {
            w.u32(l.outputs as u32)?;
        }
        w.net(&agent.eval_net)?;
        w.net(&agent.target_net)?;
        w.u64(agent.adam.t)?;
        for m in &agent.adam.m {
            w.f64_slice(&m.m_weights)?;
            w.f64_slice(&m.v_weights)?;
            w.f64_slice(&m.m_biases)?;
            w.f64_slice(&m.v_biases)?;
        }
        w.u64(agent.env_steps)?;
        w.u64(agent.learn_steps)?;
        w.u64(agent.episodes)?;
        w.f64(epsilon_at(agent.env_steps, &agent.cfg))?;
        w.out.write_all(&agent.rng.get_seed())?;
        w.u128(agent.rng.get_word_pos())?;
        w.u64(agent.rng.get_stream())?;
        w.out.flush()
    })();
    write.map_err(io_err)
}

/// Load a checkpoint. The training configuration is supplied by the caller
/// (it lives in the run configuration, not the checkpoint); the stored
/// epsilon is validated against the schedule implied by the counters.
pub fn load(path: &Path, cfg: TrainingConfig) -> Result<DqnAgent, CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut r = Reader {
        input: BufReader::new(file),
    };
    let mut read = || -> Result<DqnAgent, CheckpointError> {
        let magic: [u8; 8] = r.bytes().map_err(io_err)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32().map_err(io_err)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let layer_count = r.u32().map_err(io_err)? as usize;
        if layer_count == 0 || layer_count > 64 {
            return Err(CheckpointError::Malformed(format!(
                "implausible layer count {layer_count}"
            )));
        }
        let mut sizes = Vec::with_capacity(layer_count + 1);
        for _ in 0..layer_count + 1 {
            sizes.push(r.u32().map_err(io_err)? as usize);
        }
        if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
            return Err(CheckpointError::Malformed(format!(
                "implausible layer sizes {sizes:?}"
            )));
        }
        let eval_net = r.net(&sizes).map_err(io_err)?;
        let target_net = r.net(&sizes).map_err(io_err)?;
        let t = r.u64().map_err(io_err)?;
        let mut moments = Vec::with_capacity(layer_count);
        for l in &eval_net.layers {
            moments.push(LayerMoments {
                m_weights: r.f64_vec(l.weights.len()).map_err(io_err)?,
                v_weights: r.f64_vec(l.weights.len()).map_err(io_err)?,
                m_biases: r.f64_vec(l.biases.len()).map_err(io_err)?,
                v_biases: r.f64_vec(l.biases.len()).map_err(io_err)?,
            });
        }
        let env_steps = r.u64().map_err(io_err)?;
        let learn_steps = r.u64().map_err(io_err)?;
        let episodes = r.u64().map_err(io_err)?;
        let stored_epsilon = r.f64().map_err(io_err)?;
        let expected = epsilon_at(env_steps, &cfg);
        if (stored_epsilon - expected).abs() > 1e-12 {
            return Err(CheckpointError::Malformed(format!(
                "stored epsilon {stored_epsilon} does not match schedule value {expected}"
            )));
        }
        let seed: [u8; 32] = r.bytes().map_err(io_err)?;
        let word_pos = r.u128().map_err(io_err)?;
        let stream_id = r.u64().map_err(io_err)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream_id);
        rng.set_word_pos(word_pos);
        eval_net.assert_finite();
        target_net.assert_finite();
        Ok(DqnAgent {
            cfg,
            eval_net,
            target_net,
            adam: AdamState { m: moments, t },
            replay: ReplayBuffer::new(cfg.replay_capacity),
            rng,
            env_steps,
            learn_steps,
            episodes,
        })
    };
    read()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Action, Transition};
    use crate::perception::Observation;

    fn exercised_agent() -> DqnAgent {
        let mut agent = DqnAgent::new(TrainingConfig::default(), 21);
        let t = Transition {
            obs: Observation([0.3; 32]),
            action: Action::Left,
            reward: 0.2,
            next_obs: Observation([0.4; 32]),
            terminal: false,
        };
        for _ in 0..40 {
            agent.store(t);
        }
        for _ in 0..10 {
            agent.learn().unwrap();
        }
        agent.env_steps = 1234;
        agent.episodes = 7;
        agent
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        let agent = exercised_agent();
        save(&agent, &path).unwrap();
        let loaded = load(&path, agent.cfg).unwrap();
        assert_eq!(loaded.eval_net, agent.eval_net);
        assert_eq!(loaded.target_net, agent.target_net);
        assert_eq!(loaded.adam, agent.adam);
        assert_eq!(loaded.env_steps, agent.env_steps);
        assert_eq!(loaded.learn_steps, agent.learn_steps);
        assert_eq!(loaded.episodes, agent.episodes);
        assert_eq!(loaded.rng, agent.rng);
        // Saving the loaded agent reproduces the file byte for byte.
        let path2 = dir.path().join("again.ckpt");
        save(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let bogus = dir.path().join("bogus.ckpt");
        std::fs::write(&bogus, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            load(&bogus, TrainingConfig::default()),
            Err(CheckpointError::BadMagic)
        ));

        let path = dir.path().join("agent.ckpt");
        save(&exercised_agent(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let truncated = dir.path().join("short.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load(&truncated, TrainingConfig::default()),
            Err(CheckpointError::Io { .. })
        ));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load(Path::new("/nonexistent/agent.ckpt"), TrainingConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/agent.ckpt"));
    }
}
