//! Binary checkpoints.
//!
//! Layout (all integers and floats little-endian, floats as raw IEEE-754 bits):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RHCK"
//! 4       4     u32 format version (currently 1)
//! 8       1     u8 kind: 1 = grid flow state, 2 = homogeneous state
//! 9       ...   sections: u32 tag, u64 payload length, payload bytes
//! ```
//!
//! Sections are written in ascending tag order and each appears exactly once.
//!
//! | tag | payload |
//! |-----|---------|
//! | 1 clock      | f64 sample origin, u64 sample index |
//! | 2 schedule   | coupling schedule as UTF-8 JSON |
//! | 3 rng        | u64 seed, u128 ChaCha8 word position |
//! | 10 grid      | u32 dim, u64 nodes per axis, f64 period (grid kind) |
//! | 11 target    | target spec as UTF-8 JSON (grid kind) |
//! | 12 time      | f64 `t` (grid kind) |
//! | 13 metric    | per node, upper triangle row-major, f64 (grid kind) |
//! | 14 background| same layout as the metric (grid kind) |
//! | 15 map       | u32 components, then node-major f64 values (grid kind) |
//! | 20 model     | model as UTF-8 JSON (homogeneous kind) |
//! | 21 state     | f64 `t, c, d, α` (homogeneous kind) |

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Result, RhError};
use crate::flow::{FlowState, SampleClock};
use crate::grid::{Grid, MapField, Mat2, MetricField, SymTensorField, TargetSpec, MAX_DIM};
use crate::homogeneous::{HomogeneousState, Model};
use crate::schedule::CouplingSchedule;

pub const MAGIC: &[u8; 4] = b"RHCK";
pub const VERSION: u32 = 1;

const KIND_GRID: u8 = 1;
const KIND_HOM: u8 = 2;

const TAG_CLOCK: u32 = 1;
const TAG_SCHEDULE: u32 = 2;
const TAG_RNG: u32 = 3;
const TAG_GRID: u32 = 10;
const TAG_TARGET: u32 = 11;
const TAG_TIME: u32 = 12;
const TAG_METRIC: u32 = 13;
const TAG_BACKGROUND: u32 = 14;
const TAG_MAP: u32 = 15;
const TAG_MODEL: u32 = 20;
const TAG_HOM_STATE: u32 = 21;

const GRID_TAGS: [u32; 9] = [TAG_CLOCK, TAG_SCHEDULE, TAG_RNG, TAG_GRID, TAG_TARGET, TAG_TIME, TAG_METRIC, TAG_BACKGROUND, TAG_MAP];
const HOM_TAGS: [u32; 5] = [TAG_CLOCK, TAG_SCHEDULE, TAG_RNG, TAG_MODEL, TAG_HOM_STATE];

/// Seed and stream position of the fixture generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self { seed, word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CheckpointState {
    Grid(FlowState),
    Homogeneous { model: Model, state: HomogeneousState },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: CheckpointState,
    pub schedule: CouplingSchedule,
    pub clock: SampleClock,
    pub rng: RngState,
}

fn put_section(out: &mut Vec<u8>, tag: u32, payload: &[u8]) {
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn f64s(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn metric_payload(g: &MetricField) -> Vec<u8> {
    let dim = g.dim();
    f64s(g.values().iter().flat_map(|m| (0..dim).flat_map(move |i| (i..dim).map(move |j| m[i][j]))))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.state {
            CheckpointState::Grid(_) => KIND_GRID,
            CheckpointState::Homogeneous { .. } => KIND_HOM,
        });
        let mut clock = self.clock.origin.to_le_bytes().to_vec();
        clock.extend_from_slice(&(self.clock.index as u64).to_le_bytes());
        put_section(&mut out, TAG_CLOCK, &clock);
        put_section(&mut out, TAG_SCHEDULE, serde_json::to_string(&self.schedule).expect("schedule").as_bytes());
        let mut rng = self.rng.seed.to_le_bytes().to_vec();
        rng.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_section(&mut out, TAG_RNG, &rng);
        match &self.state {
            CheckpointState::Grid(st) => {
                let grid = st.grid();
                let mut gp = (grid.dim() as u32).to_le_bytes().to_vec();
                gp.extend_from_slice(&(grid.nodes_per_axis() as u64).to_le_bytes());
                gp.extend_from_slice(&grid.period().to_le_bytes());
                put_section(&mut out, TAG_GRID, &gp);
                put_section(&mut out, TAG_TARGET, serde_json::to_string(&st.target).expect("target").as_bytes());
                put_section(&mut out, TAG_TIME, &st.t.to_le_bytes());
                put_section(&mut out, TAG_METRIC, &metric_payload(&st.g));
                put_section(&mut out, TAG_BACKGROUND, &metric_payload(&st.background));
                let mut mp = (st.phi.components as u32).to_le_bytes().to_vec();
                mp.extend(f64s(st.phi.values.iter().copied()));
                put_section(&mut out, TAG_MAP, &mp);
            }
            CheckpointState::Homogeneous { model, state } => {
                put_section(&mut out, TAG_MODEL, serde_json::to_string(model).expect("model").as_bytes());
                put_section(&mut out, TAG_HOM_STATE, &f64s([state.t, state.c, state.d, state.alpha]));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |offset: usize, message: String| RhError::Checkpoint { offset, message };
        if bytes.is_empty() {
            return Err(err(0, "empty file".into()));
        }
        if bytes.len() < 9 {
            return Err(err(bytes.len(), "truncated header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(err(0, "bad magic, not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(err(4, format!("unsupported format version {version}, this build reads version {VERSION}")));
        }
        let kind = bytes[8];
        let expected: &[u32] = match kind {
            KIND_GRID => &GRID_TAGS,
            KIND_HOM => &HOM_TAGS,
            k => return Err(err(8, format!("unknown state kind {k}"))),
        };

        // Sections: (tag, payload offset, payload).
        let mut sections: Vec<(u32, usize, &[u8])> = Vec::new();
        let mut pos = 9;
        while pos < bytes.len() {
            if bytes.len() - pos < 12 {
                return Err(err(pos, "truncated section header".into()));
            }
            let tag = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
            let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().expect("8 bytes"));
            let start = pos + 12;
            if len > (bytes.len() - start) as u64 {
                return Err(err(pos + 4, format!("section {tag} claims {len} bytes, only {} remain", bytes.len() - start)));
            }
            let idx = sections.len();
            if idx >= expected.len() || expected[idx] != tag {
                return Err(err(pos, format!("unexpected section tag {tag}")));
            }
            let end = start + len as usize;
            sections.push((tag, start, &bytes[start..end]));
            pos = end;
        }
        if sections.len() != expected.len() {
            return Err(err(pos, format!("missing section {}", expected[sections.len()])));
        }

        let fixed = |idx: usize, want: usize| -> Result<&[u8]> {
            let (tag, off, p) = sections[idx];
            if p.len() == want {
                Ok(p)
            } else {
                Err(err(off, format!("section {tag} has {} bytes, expected {want}", p.len())))
            }
        };
        let f64_at = |p: &[u8], i: usize| f64::from_le_bytes(p[8 * i..8 * i + 8].try_into().expect("8 bytes"));
        let json = |idx: usize| -> Result<&str> {
            let (tag, off, p) = sections[idx];
            std::str::from_utf8(p).map_err(|e| err(off + e.valid_up_to(), format!("section {tag} is not UTF-8")))
        };

        let clock_p = fixed(0, 16)?;
        let clock = SampleClock {
            origin: f64_at(clock_p, 0),
            index: u64::from_le_bytes(clock_p[8..16].try_into().expect("8 bytes")) as usize,
        };
        let schedule: CouplingSchedule =
            serde_json::from_str(json(1)?).map_err(|e| err(sections[1].1, format!("schedule: {e}")))?;
        schedule.validate().map_err(|e| err(sections[1].1, e.to_string()))?;
        let rng_p = fixed(2, 24)?;
        let rng = RngState {
            seed: u64::from_le_bytes(rng_p[0..8].try_into().expect("8 bytes")),
            word_pos: u128::from_le_bytes(rng_p[8..24].try_into().expect("16 bytes")),
        };

        let state = if kind == KIND_GRID {
            let gp = fixed(3, 20)?;
            let dim = u32::from_le_bytes(gp[0..4].try_into().expect("4 bytes")) as usize;
            let n = u64::from_le_bytes(gp[4..12].try_into().expect("8 bytes")) as usize;
            let period = f64_at(&gp[12..], 0);
            let grid = Grid::new(dim, n, period).map_err(|e| err(sections[3].1, e.to_string()))?;
            let target: TargetSpec =
                serde_json::from_str(json(4)?).map_err(|e| err(sections[4].1, format!("target: {e}")))?;
            let t = f64_at(fixed(5, 8)?, 0);
            let packed = dim * (dim + 1) / 2;
            let read_metric = |idx: usize| -> Result<MetricField> {
                let p = fixed(idx, 8 * packed * grid.len())?;
                let values = (0..grid.len())
                    .map(|node| {
                        let mut m: Mat2 = [[0.0; MAX_DIM]; MAX_DIM];
                        let mut k = node * packed;
                        for i in 0..dim {
                            for j in i..dim {
                                m[i][j] = f64_at(p, k);
                                m[j][i] = m[i][j];
                                k += 1;
                            }
                        }
                        m
                    })
                    .collect();
                MetricField::new(SymTensorField { grid, values }).map_err(|e| err(sections[idx].1, e.to_string()))
            };
            let g = read_metric(6)?;
            let background = read_metric(7)?;
            let (_, off, mp) = sections[8];
            if mp.len() < 4 {
                return Err(err(off, "map section too short".into()));
            }
            let components = u32::from_le_bytes(mp[0..4].try_into().expect("4 bytes")) as usize;
            let vals = fixed(8, 4 + 8 * components * grid.len()).map(|p| &p[4..])?;
            let phi = MapField { grid, components, values: (0..components * grid.len()).map(|i| f64_at(vals, i)).collect() };
            let st = FlowState { t, g, phi, background, target };
            st.validate().map_err(|e| err(off, e.to_string()))?;
            CheckpointState::Grid(st)
        } else {
            let model: Model = serde_json::from_str(json(3)?).map_err(|e| err(sections[3].1, format!("model: {e}")))?;
            let p = fixed(4, 32)?;
            let state = HomogeneousState { t: f64_at(p, 0), c: f64_at(p, 1), d: f64_at(p, 2), alpha: f64_at(p, 3) };
            CheckpointState::Homogeneous { model, state }
        };
        Ok(Self { state, schedule, clock, rng })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::homogeneous::ModelKind;

    fn grid_checkpoint() -> Checkpoint {
        let grid = Grid::torus(2, 8).unwrap();
        let st = FlowState::new(
            fixtures::smooth_metric(grid, 1, 0.2),
            fixtures::smooth_sphere_map(grid, 2, 0.4, 1.0),
            TargetSpec::sphere(2, 1.0).unwrap(),
        )
        .unwrap();
        Checkpoint {
            state: CheckpointState::Grid(FlowState { t: 0.3, ..st }),
            schedule: CouplingSchedule::piecewise_linear(vec![0.0, 1.0], vec![1.0, 0.5]).unwrap(),
            clock: SampleClock { origin: 0.0, index: 3 },
            rng: RngState { seed: 9, word_pos: 1 << 70 },
        }
    }

    #[test]
    fn round_trips_are_byte_identical() {
        let c = grid_checkpoint();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);

        let h = Checkpoint {
            state: CheckpointState::Homogeneous {
                model: Model::new(ModelKind::ProductS2L, true),
                state: HomogeneousState { t: 0.1, c: 0.9, d: 1.0 / 0.9, alpha: 1.0 / 3.0 },
            },
            schedule: CouplingSchedule::constant(1.0 / 3.0).unwrap(),
            clock: SampleClock { origin: 0.0, index: 100 },
            rng: RngState { seed: 0, word_pos: 0 },
        };
        let bytes = h.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn header_is_framed_as_documented() {
        let bytes = grid_checkpoint().to_bytes();
        assert_eq!(&bytes[..4], b"RHCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 1);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), TAG_CLOCK);
        assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 16);
    }

    #[test]
    fn rng_state_restores_the_stream() {
        use rand::RngCore;
        let mut a = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..7 {
            a.next_u64();
        }
        let saved = RngState::capture(5, &a);
        let mut b = saved.restore();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    fn offset_of(bytes: &[u8]) -> usize {
        match Checkpoint::from_bytes(bytes) {
            Err(RhError::Checkpoint { offset, .. }) => offset,
            other => panic!("expected a checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let good = grid_checkpoint().to_bytes();
        assert_eq!(offset_of(&[]), 0);
        let mut v = good.clone();
        v[4] = 2;
        assert_eq!(offset_of(&v), 4);
        match Checkpoint::from_bytes(&v) {
            Err(e) => assert!(e.to_string().contains("version 2")),
            Ok(_) => unreachable!(),
        }
        let mut v = good.clone();
        v[0] = b'X';
        assert_eq!(offset_of(&v), 0);
        assert_eq!(offset_of(&good[..good.len() - 3]), offset_of(&good[..good.len() - 3]));
        assert!(offset_of(&good[..good.len() - 3]) > 9);
        let mut v = good.clone();
        v.extend_from_slice(&[0; 5]);
        assert_eq!(offset_of(&v), good.len());
        // A non-positive metric is caught when the section is decoded.
        let mut v = good.clone();
        let metric_start = v.windows(4).position(|w| w == TAG_METRIC.to_le_bytes()).unwrap() + 12;
        v[metric_start..metric_start + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(offset_of(&v), metric_start);
    }
}
