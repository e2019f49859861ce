//! Track ingestion, resampling, instance extraction, maneuver labelling,
//! dataset splitting and the instance cache format.

mod formats;
pub mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{EgoPlan, GridSpec, Lateral, LocalFrame, Longitudinal, ManeuverLabel, Point};

pub use formats::{
    formats, load_tracks, parse_tracks, write_synthetic, FormatRegistry, HighD, Ngsim, SyntheticNative, TrackFormat,
};

/// Raw per-agent time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u64,
    pub frames: Vec<i64>,
    pub positions: Vec<Point>,
    pub lane_ids: Vec<i32>,
    pub source_rate: u32,
}

impl AgentTrack {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.positions.len() || self.frames.len() != self.lane_ids.len() {
            return Err(Error::Invalid(format!(
                "agent {}: frames, positions and lane ids differ in length",
                self.agent_id
            )));
        }
        if let Some(w) = self.frames.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotonicFrames {
                agent: self.agent_id,
                frame: w[1],
            });
        }
        Ok(())
    }

    pub fn index_of(&self, frame: i64) -> Option<usize> {
        self.frames.binary_search(&frame).ok()
    }

    /// Index of `t` when frames `t - back + 1 ..= t + forward` are all present.
    pub fn window(&self, t: i64, back: usize, forward: usize) -> Option<usize> {
        let i = self.index_of(t)?;
        if back == 0 || i + 1 < back || i + forward >= self.frames.len() {
            return None;
        }
        let first = self.frames[i + 1 - back];
        let last = self.frames[i + forward];
        (first == t - back as i64 + 1 && last == t + forward as i64).then_some(i)
    }

    /// Number of contiguous frames ending at index `i`, capped at `cap`.
    fn contiguous_back(&self, i: usize, cap: usize) -> usize {
        let mut n = 1;
        while n < cap && i >= n && self.frames[i - n] == self.frames[i] - n as i64 {
            n += 1;
        }
        n
    }
}

/// Decimates tracks to `target_rate` Hz, keeping frames divisible by the
/// rate ratio so that all agents stay aligned, and renumbering frames in
/// units of the new rate.
pub fn resample_tracks(tracks: &[AgentTrack], target_rate: u32) -> Result<Vec<AgentTrack>> {
    tracks
        .iter()
        .map(|t| {
            if target_rate == 0 || t.source_rate < target_rate || t.source_rate % target_rate != 0 {
                return Err(Error::Invalid(format!(
                    "agent {}: cannot resample {} Hz to {} Hz",
                    t.agent_id, t.source_rate, target_rate
                )));
            }
            let ratio = (t.source_rate / target_rate) as i64;
            let mut out = AgentTrack {
                agent_id: t.agent_id,
                frames: Vec::new(),
                positions: Vec::new(),
                lane_ids: Vec::new(),
                source_rate: target_rate,
            };
            for k in 0..t.frames.len() {
                if t.frames[k].rem_euclid(ratio) == 0 {
                    out.frames.push(t.frames[k].div_euclid(ratio));
                    out.positions.push(t.positions[k]);
                    out.lane_ids.push(t.lane_ids[k]);
                }
            }
            Ok(out)
        })
        .collect()
}

/// Window lengths and sampling stride for instance extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub t_obs: usize,
    pub t_pred: usize,
}

impl Default for Horizon {
    fn default() -> Self {
        Self { t_obs: 15, t_pred: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub agent_id: u64,
    /// Up to `t_obs` contiguous points ending at the prediction instant.
    pub history: Vec<Point>,
    /// Position at the prediction instant in the target's frame.
    pub rel_to_target: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub agent_id: u64,
    pub history: Vec<Point>,
    pub future: Option<Vec<Point>>,
    pub maneuver: Option<ManeuverLabel>,
    /// Position at the prediction instant in the ego's frame.
    pub rel_to_ego: Point,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceId {
    pub ego: u64,
    pub t: i64,
}

impl std::fmt::Display for InstanceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.ego, self.t)
    }
}

/// One ego-centric sample. All points are in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub ego_history: Vec<Point>,
    /// The ego's actual future at 5 Hz.
    pub ego_plan: EgoPlan,
    pub targets: Vec<Target>,
}

impl Instance {
    pub fn ego_frame(&self) -> LocalFrame {
        LocalFrame::from_history(&self.ego_history)
    }

    pub fn with_plan(&self, plan: EgoPlan) -> Instance {
        Instance {
            ego_plan: plan,
            ..self.clone()
        }
    }

    pub fn has_ground_truth(&self) -> bool {
        self.targets
            .iter()
            .all(|t| t.future.is_some() && t.maneuver.is_some())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub instants: usize,
    pub skipped_instants: usize,
    pub instances: usize,
    pub targets: usize,
    pub excluded_targets: usize,
}

/// Extracts ego-centric instances from 5 Hz tracks.
///
/// Every agent is tried as the ego at every frame divisible by `stride`.
/// An instant qualifies when the ego has `t_obs` frames of history and
/// `t_pred` of future; targets are the other agents inside the ego's grid
/// with complete windows of their own. Output is sorted by `(ego, t)`.
pub fn extract_instances(
    tracks: &[AgentTrack],
    grid: &GridSpec,
    horizon: Horizon,
    stride: usize,
) -> Result<(Vec<Instance>, ExtractSummary)> {
    grid.validate()?;
    if stride == 0 || horizon.t_obs < 2 || horizon.t_pred == 0 {
        return Err(Error::Invalid("stride, t_obs >= 2 and t_pred must be positive".into()));
    }
    let mut order: Vec<&AgentTrack> = tracks.iter().collect();
    order.sort_by_key(|t| t.agent_id);
    for t in &order {
        t.validate()?;
    }
    let mut present: HashMap<i64, Vec<(usize, usize)>> = HashMap::new();
    for (a, t) in order.iter().enumerate() {
        for (i, &f) in t.frames.iter().enumerate() {
            present.entry(f).or_default().push((a, i));
        }
    }
    let Horizon { t_obs, t_pred } = horizon;
    let mut summary = ExtractSummary::default();
    let mut out = Vec::new();

    for (e, ego) in order.iter().enumerate() {
        for (ei, &t) in ego.frames.iter().enumerate() {
            if t.rem_euclid(stride as i64) != 0 {
                continue;
            }
            summary.instants += 1;
            if ego.window(t, t_obs, t_pred) != Some(ei) {
                summary.skipped_instants += 1;
                continue;
            }
            let ego_history = ego.positions[ei + 1 - t_obs..=ei].to_vec();
            let ego_frame = LocalFrame::from_history(&ego_history);
            let plan = EgoPlan::new(ego.positions[ei + 1..=ei + t_pred].to_vec(), 5)?;
            let here = &present[&t];
            let mut targets = Vec::new();
            for &(a, ai) in here {
                if a == e {
                    continue;
                }
                let agent = order[a];
                let rel = ego_frame.to_local(agent.positions[ai]);
                if grid.cell_of(rel).is_none() {
                    continue;
                }
                if agent.window(t, t_obs, t_pred).is_none() {
                    summary.excluded_targets += 1;
                    continue;
                }
                let history = agent.positions[ai + 1 - t_obs..=ai].to_vec();
                let frame = LocalFrame::from_history(&history);
                let mut neighbors = Vec::new();
                for &(b, bi) in here {
                    if b == a {
                        continue;
                    }
                    let other = order[b];
                    let rel_b = frame.to_local(other.positions[bi]);
                    if grid.cell_of(rel_b).is_none() {
                        continue;
                    }
                    let n = other.contiguous_back(bi, t_obs);
                    if n < 2 {
                        continue;
                    }
                    neighbors.push(Neighbor {
                        agent_id: other.agent_id,
                        history: other.positions[bi + 1 - n..=bi].to_vec(),
                        rel_to_target: rel_b,
                    });
                }
                neighbors.sort_by_key(|n| n.agent_id);
                targets.push(Target {
                    agent_id: agent.agent_id,
                    history,
                    future: Some(agent.positions[ai + 1..=ai + t_pred].to_vec()),
                    maneuver: Some(label_maneuver(agent, t, horizon)?),
                    rel_to_ego: rel,
                    neighbors,
                });
            }
            targets.sort_by_key(|t| t.agent_id);
            summary.targets += targets.len();
            out.push(Instance {
                id: InstanceId { ego: ego.agent_id, t },
                ego_history,
                ego_plan: plan,
                targets,
            });
        }
    }
    summary.instances = out.len();
    Ok((out, summary))
}

/// Speed ratio below which the future counts as braking.
pub const BRAKE_RATIO: f64 = 0.8;

/// Labels the maneuver an agent performs around frame `t`.
///
/// Lateral: a lane id change between `t` and `t + t_pred` (or, failing
/// that, between `t - t_obs` and `t`) decides left (decreasing id) or right.
/// Longitudinal: braking when the mean speed over the future window drops
/// below [`BRAKE_RATIO`] times the speed at `t`.
pub fn label_maneuver(track: &AgentTrack, t: i64, horizon: Horizon) -> Result<ManeuverLabel> {
    let Horizon { t_obs, t_pred } = horizon;
    let i = track
        .window(t, 2, t_pred)
        .ok_or_else(|| Error::Invalid(format!("agent {}: no labelling window at frame {t}", track.agent_id)))?;
    let rate = track.source_rate as f64;

    let lane_now = track.lane_ids[i];
    let lane_future = track.lane_ids[i + t_pred];
    let back = track.contiguous_back(i, t_obs + 1);
    let lane_past = track.lane_ids[i + 1 - back];
    let lateral = match lane_future.cmp(&lane_now) {
        std::cmp::Ordering::Less => Lateral::Left,
        std::cmp::Ordering::Greater => Lateral::Right,
        std::cmp::Ordering::Equal => match lane_now.cmp(&lane_past) {
            std::cmp::Ordering::Less => Lateral::Left,
            std::cmp::Ordering::Greater => Lateral::Right,
            std::cmp::Ordering::Equal => Lateral::Keep,
        },
    };

    let p = &track.positions;
    let speed_now = p[i].sub(p[i - 1]).norm() * rate;
    let mean_future =
        (1..=t_pred).map(|k| p[i + k].sub(p[i + k - 1]).norm() * rate).sum::<f64>() / t_pred as f64;
    let longitudinal = if mean_future < BRAKE_RATIO * speed_now {
        Longitudinal::Brake
    } else {
        Longitudinal::Normal
    };
    Ok(ManeuverLabel::new(lateral, longitudinal))
}

/// Reduces a 5 Hz plan to 1 Hz by keeping every fifth point (offsets
/// 1 s, 2 s, ...).
pub fn downsample_plan(plan: &EgoPlan, expected_len: usize) -> Result<EgoPlan> {
    if plan.rate() != 5 || plan.len() != expected_len || expected_len % 5 != 0 {
        return Err(Error::Invalid(format!(
            "expected a {expected_len}-point 5 Hz plan, got {} points at {} Hz",
            plan.len(),
            plan.rate()
        )));
    }
    let points = plan.points().iter().skip(4).step_by(5).copied().collect();
    EgoPlan::new(points, 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// Partitions instances by ego id so no ego appears in two splits.
pub fn split_dataset(instances: Vec<Instance>, spec: &SplitSpec) -> Result<Splits> {
    let fr = [spec.train_frac, spec.val_frac, spec.test_frac];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split fractions {fr:?} must be in [0,1] and sum to 1")));
    }
    let ids: BTreeSet<u64> = instances.iter().map(|i| i.id.ego).collect();
    let mut ids: Vec<u64> = ids.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n = ids.len();
    let n_train = (spec.train_frac * n as f64).round() as usize;
    let n_val = ((spec.val_frac * n as f64).round() as usize).min(n - n_train);
    let group: HashMap<u64, usize> = ids
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, if k < n_train { 0 } else if k < n_train + n_val { 1 } else { 2 }))
        .collect();
    let mut splits = Splits::default();
    for inst in instances {
        match group[&inst.id.ego] {
            0 => splits.train.push(inst),
            1 => splits.val.push(inst),
            _ => splits.test.push(inst),
        }
    }
    Ok(splits)
}

/// Full preparation path from raw tracks: resampling to 5 Hz, instance
/// extraction and splitting.
pub fn build_splits(
    tracks: &[AgentTrack],
    grid: &GridSpec,
    horizon: Horizon,
    stride: usize,
    split: &SplitSpec,
) -> Result<(Splits, ExtractSummary)> {
    let tracks = resample_tracks(tracks, crate::scene::WORKING_RATE_HZ)?;
    let (instances, summary) = extract_instances(&tracks, grid, horizon, stride)?;
    Ok((split_dataset(instances, split)?, summary))
}

pub const CACHE_FORMAT: &str = "condpred-instances";
pub const CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub format: String,
    pub version: u32,
    pub t_obs: usize,
    pub t_pred: usize,
    pub rate_hz: u32,
    pub count: usize,
}

/// Writes a JSON-lines instance cache: a header record, then one
/// instance per line.
pub fn write_instances(path: &Path, instances: &[Instance], horizon: Horizon) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let header = CacheHeader {
        format: CACHE_FORMAT.into(),
        version: CACHE_VERSION,
        t_obs: horizon.t_obs,
        t_pred: horizon.t_pred,
        rate_hz: 5,
        count: instances.len(),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w).map_err(io)?;
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_instances(path: &Path) -> Result<(CacheHeader, Vec<Instance>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Missing(format!("header in {}", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: CacheHeader = serde_json::from_str(&first)?;
    if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
        return Err(Error::Invalid(format!(
            "{}: unsupported cache {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let mut out = Vec::with_capacity(header.count);
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n as u64 + 2,
            column: "record".into(),
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    if out.len() != header.count {
        return Err(Error::Invalid(format!(
            "{}: header announces {} instances, found {}",
            path.display(),
            header.count,
            out.len()
        )));
    }
    Ok((header, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(id: u64, x0: f64, y: f64, v: f64, frames: std::ops::Range<i64>, lane: i32) -> AgentTrack {
        let frames: Vec<i64> = frames.collect();
        AgentTrack {
            agent_id: id,
            positions: frames.iter().map(|&f| Point::new(x0 + v * 0.2 * f as f64, y)).collect(),
            lane_ids: vec![lane; frames.len()],
            frames,
            source_rate: 5,
        }
    }

    #[test]
    fn resample_decimates() {
        let mut t = straight(1, 0.0, 0.0, 10.0, 0..30, 1);
        t.source_rate = 10;
        let r = resample_tracks(&[t.clone()], 5).unwrap();
        assert_eq!(r[0].frames.len(), 15);
        assert_eq!(r[0].frames[..3], [0, 1, 2]);
        assert_eq!(r[0].positions[1], t.positions[2]);

        let mut h = straight(2, 0.0, 0.0, 10.0, 0..50, 1);
        h.source_rate = 25;
        let r = resample_tracks(&[h.clone()], 5).unwrap();
        assert_eq!(r[0].frames.len(), 10);
        assert_eq!(r[0].positions[1], h.positions[5]);

        let same = resample_tracks(&[t.clone()], 10).unwrap();
        assert_eq!(same[0].positions, t.positions);
        let five = straight(3, 0.0, 0.0, 10.0, 0..7, 1);
        assert_eq!(resample_tracks(&[five.clone()], 5).unwrap()[0], five);
    }

    #[test]
    fn resample_rejects_non_integer_ratio() {
        let mut t = straight(1, 0.0, 0.0, 10.0, 0..30, 1);
        t.source_rate = 12;
        assert!(resample_tracks(&[t], 5).is_err());
    }

    #[test]
    fn isolated_ego_gives_empty_instances() {
        let ego = straight(1, 0.0, 0.0, 20.0, 0..41, 2);
        let (inst, summary) = extract_instances(&[ego], &GridSpec::default(), Horizon::default(), 5).unwrap();
        // t in {15} satisfies 14 frames back and 25 forward within 0..40? t=14 needs t%5==0.
        assert!(!inst.is_empty());
        assert!(inst.iter().all(|i| i.targets.is_empty()));
        assert_eq!(summary.instances, inst.len());
        for i in &inst {
            assert_eq!(i.ego_history.len(), 15);
            assert_eq!(i.ego_plan.len(), 25);
        }
    }

    #[test]
    fn follower_is_target_with_ego_as_neighbor() {
        let ego = straight(1, 0.0, 0.0, 20.0, 0..41, 2);
        let follower = straight(2, -20.0, 0.0, 20.0, 0..41, 2);
        let (inst, _) =
            extract_instances(&[ego, follower], &GridSpec::default(), Horizon::default(), 5).unwrap();
        let from_ego: Vec<_> = inst.iter().filter(|i| i.id.ego == 1).collect();
        assert_eq!(from_ego.len(), 1);
        let i = from_ego[0];
        assert_eq!(i.id.t, 15);
        assert_eq!(i.targets.len(), 1);
        let target = &i.targets[0];
        assert_eq!(target.agent_id, 2);
        assert!((target.rel_to_ego.x + 20.0).abs() < 1e-9);
        assert_eq!(target.neighbors.len(), 1);
        assert_eq!(target.neighbors[0].agent_id, 1);
        assert_eq!(target.neighbors[0].history, i.ego_history);
        // Oracle: the ego sits 20 m ahead of the follower, inside its grid.
        assert!((target.neighbors[0].rel_to_target.x - 20.0).abs() < 1e-9);
        assert_eq!(target.maneuver, Some(ManeuverLabel::ALL[0]));
    }

    #[test]
    fn truncated_target_is_excluded() {
        let ego = straight(1, 0.0, 0.0, 20.0, 0..41, 2);
        let short = straight(2, -20.0, 0.0, 20.0, 0..30, 2);
        let (inst, summary) =
            extract_instances(&[ego, short], &GridSpec::default(), Horizon::default(), 5).unwrap();
        let i = inst.iter().find(|i| i.id.ego == 1).unwrap();
        assert!(i.targets.is_empty());
        assert!(summary.excluded_targets >= 1);
    }

    #[test]
    fn far_agent_is_not_a_target() {
        let ego = straight(1, 0.0, 0.0, 20.0, 0..41, 2);
        let far = straight(2, -40.0, 0.0, 20.0, 0..41, 2);
        let (inst, _) = extract_instances(&[ego, far], &GridSpec::default(), Horizon::default(), 5).unwrap();
        assert!(inst.iter().all(|i| i.targets.is_empty()));
    }

    #[test]
    fn extraction_is_translation_invariant() {
        let tracks = vec![
            straight(1, 0.0, 0.0, 20.0, 0..45, 2),
            straight(2, -15.0, 3.5, 22.0, 0..45, 3),
            straight(3, 12.0, -3.5, 18.0, 0..45, 1),
        ];
        let moved: Vec<AgentTrack> = tracks
            .iter()
            .map(|t| AgentTrack {
                positions: t.positions.iter().map(|p| p.add(Point::new(1024.0, -64.0))).collect(),
                ..t.clone()
            })
            .collect();
        let key = |inst: &[Instance]| -> Vec<(InstanceId, Vec<(u64, Vec<u64>, Option<ManeuverLabel>)>)> {
            inst.iter()
                .map(|i| {
                    (
                        i.id,
                        i.targets
                            .iter()
                            .map(|t| (t.agent_id, t.neighbors.iter().map(|n| n.agent_id).collect(), t.maneuver))
                            .collect(),
                    )
                })
                .collect()
        };
        let (a, _) = extract_instances(&tracks, &GridSpec::default(), Horizon::default(), 5).unwrap();
        let (b, _) = extract_instances(&moved, &GridSpec::default(), Horizon::default(), 5).unwrap();
        assert_eq!(key(&a), key(&b));
        assert!(a.iter().any(|i| !i.targets.is_empty()));
    }

    #[test]
    fn labels_null_case() {
        let t = straight(1, 0.0, 0.0, 20.0, 0..41, 2);
        assert_eq!(
            label_maneuver(&t, 15, Horizon::default()).unwrap(),
            ManeuverLabel::new(Lateral::Keep, Longitudinal::Normal)
        );
    }

    #[test]
    fn labels_left_lane_change() {
        let mut t = straight(1, 0.0, 0.0, 20.0, 0..41, 3);
        for k in 25..41 {
            t.lane_ids[k] = 2;
            t.positions[k].y = -3.6;
        }
        let label = label_maneuver(&t, 15, Horizon::default()).unwrap();
        assert_eq!(label.lateral, Lateral::Left);
        let mut r = straight(1, 0.0, 0.0, 20.0, 0..41, 3);
        for k in 25..41 {
            r.lane_ids[k] = 4;
        }
        assert_eq!(label_maneuver(&r, 15, Horizon::default()).unwrap().lateral, Lateral::Right);
    }

    #[test]
    fn labels_past_lane_change() {
        let mut t = straight(1, 0.0, 0.0, 20.0, 0..41, 3);
        for k in 0..10 {
            t.lane_ids[k] = 2;
        }
        assert_eq!(label_maneuver(&t, 15, Horizon::default()).unwrap().lateral, Lateral::Right);
    }

    #[test]
    fn labels_braking_from_speed_drop() {
        // 20 m/s up to t, then 12 m/s: 12 < 0.8 * 20.
        let frames: Vec<i64> = (0..41).collect();
        let mut x = 0.0;
        let mut positions = Vec::new();
        for &f in &frames {
            positions.push(Point::new(x, 0.0));
            x += if f < 15 { 20.0 * 0.2 } else { 12.0 * 0.2 };
        }
        let t = AgentTrack {
            agent_id: 1,
            lane_ids: vec![1; frames.len()],
            frames,
            positions,
            source_rate: 5,
        };
        let label = label_maneuver(&t, 15, Horizon::default()).unwrap();
        assert_eq!(label.longitudinal, Longitudinal::Brake);
        // A mild slowdown to 17 m/s stays normal.
        let mut mild = t.clone();
        let mut x = 0.0;
        for (k, p) in mild.positions.iter_mut().enumerate() {
            *p = Point::new(x, 0.0);
            x += if k < 15 { 4.0 } else { 3.4 };
        }
        assert_eq!(label_maneuver(&mild, 15, Horizon::default()).unwrap().longitudinal, Longitudinal::Normal);
    }

    #[test]
    fn label_needs_a_window() {
        let t = straight(1, 0.0, 0.0, 20.0, 0..30, 2);
        assert!(label_maneuver(&t, 15, Horizon::default()).is_err());
    }

    #[test]
    fn downsample_keeps_every_fifth_point() {
        let pts: Vec<Point> = (1..=25).map(|k| Point::new(2.0 * k as f64, 0.0)).collect();
        let plan = EgoPlan::new(pts, 5).unwrap();
        let d = downsample_plan(&plan, 25).unwrap();
        assert_eq!(d.rate(), 1);
        // 10 m/s at 5 Hz: 2 m per frame, so 10 m per second.
        let xs: Vec<f64> = d.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![10.0, 20.0, 30.0, 40.0, 50.0]);

        let still = EgoPlan::new(vec![Point::new(3.0, 1.0); 25], 5).unwrap();
        assert!(downsample_plan(&still, 25).unwrap().points().iter().all(|p| *p == Point::new(3.0, 1.0)));

        let short = EgoPlan::new(vec![Point::ORIGIN; 20], 5).unwrap();
        assert!(downsample_plan(&short, 25).is_err());
    }

    fn dummy(ego: u64) -> Instance {
        Instance {
            id: InstanceId { ego, t: 0 },
            ego_history: vec![Point::ORIGIN; 2],
            ego_plan: EgoPlan::new(vec![Point::ORIGIN; 2], 5).unwrap(),
            targets: vec![],
        }
    }

    #[test]
    fn split_by_ego_id() {
        let instances: Vec<Instance> = (0..10).flat_map(|e| [dummy(e), dummy(e)]).collect();
        let spec = SplitSpec { seed: 3, ..SplitSpec::default() };
        let s = split_dataset(instances.clone(), &spec).unwrap();
        let ids = |v: &[Instance]| v.iter().map(|i| i.id.ego).collect::<BTreeSet<_>>();
        assert_eq!((ids(&s.train).len(), ids(&s.val).len(), ids(&s.test).len()), (7, 1, 2));
        assert!(ids(&s.train).is_disjoint(&ids(&s.test)));
        assert!(ids(&s.train).is_disjoint(&ids(&s.val)));
        assert!(ids(&s.val).is_disjoint(&ids(&s.test)));
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 20);
        assert_eq!(split_dataset(instances, &spec).unwrap(), s);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let spec = SplitSpec { train_frac: 0.8, ..SplitSpec::default() };
        assert!(split_dataset(vec![], &spec).is_err());
    }
}
