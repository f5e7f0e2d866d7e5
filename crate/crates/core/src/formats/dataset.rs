use std::path::Path;

use crate::geometry::Pose2;
use crate::mazeworld::{Action, Observation, Trajectory, N_RAYS, RAY_CHANNELS};
use crate::{Error, Result};

use super::reader::Reader;

pub const DATASET_MAGIC: &[u8; 4] = b"NGOD";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_dataset(trajs: &[Trajectory]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(trajs.len() as u64).to_le_bytes());
    for t in trajs {
        t.validate()?;
        let n = u32::try_from(t.len()).map_err(|_| Error::Maze("trajectory too long".into()))?;
        out.extend_from_slice(&t.maze_seed.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend(t.actions.iter().map(|a| a.code()));
        for p in &t.gt_poses {
            for v in p.to_array() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for o in &t.observations {
            if o.rays.len() != N_RAYS {
                return Err(Error::LengthMismatch { what: "observation rays", left: o.rays.len(), right: N_RAYS });
            }
            for ray in &o.rays {
                for v in ray {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Vec<Trajectory>> {
    let mut r = Reader::new(bytes, path);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let count = r.u64()?;
    // each record needs at least its 12-byte header
    if count > (bytes.len() as u64) / 12 {
        return Err(r.bad(format!("trajectory count {count} exceeds file size")));
    }
    let mut trajs = Vec::with_capacity(count as usize);
    for i in 0..count {
        let maze_seed = r.u64()?;
        let t = r.u32()? as usize;
        if t == 0 {
            return Err(r.bad(format!("record {i}: zero-length trajectory")));
        }
        let needed = (t - 1) + t * 3 * 8 + t * N_RAYS * RAY_CHANNELS * 4;
        if r.remaining() < needed {
            return Err(r.bad(format!("record {i}: truncated ({} of {needed} bytes)", r.remaining())));
        }
        let actions = r
            .take(t - 1)?
            .iter()
            .map(|&c| Action::from_code(c).ok_or(c))
            .collect::<std::result::Result<Vec<_>, u8>>()
            .map_err(|c| r.bad(format!("record {i}: invalid action code {c}")))?;
        let mut gt_poses = Vec::with_capacity(t);
        for _ in 0..t {
            gt_poses.push(Pose2 { x: r.f64()?, y: r.f64()?, theta: r.f64()? });
        }
        let mut observations = Vec::with_capacity(t);
        for _ in 0..t {
            let mut rays = Vec::with_capacity(N_RAYS);
            for _ in 0..N_RAYS {
                rays.push([r.f32()?, r.f32()?, r.f32()?, r.f32()?]);
            }
            observations.push(Observation { rays });
        }
        let traj = Trajectory { maze_seed, observations, actions, gt_poses };
        traj.validate().map_err(|e| r.bad(format!("record {i}: {e}")))?;
        trajs.push(traj);
    }
    r.finish()?;
    Ok(trajs)
}

pub fn write_dataset(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let bytes = encode_dataset(trajs)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path)
}
