//! Seeded generator for straight multi-lane highway scenarios at 5 Hz.
//!
//! Each scenario has one lead agent (id `s * 1000`) around which the others
//! are placed. In the reactive family the lead may brake and every agent
//! behind it in its lane copies its speed profile with a fixed lag, so the
//! followers' futures depend on the lead's future.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::AgentTrack;
use crate::error::{Error, Result};
use crate::scene::{Point, FEET_TO_METERS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMix {
    pub cruise: f64,
    pub lane_change: f64,
    pub brake: f64,
    pub reactive: f64,
}

impl Default for ScenarioMix {
    fn default() -> Self {
        Self {
            cruise: 0.25,
            lane_change: 0.25,
            brake: 0.25,
            reactive: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cruise,
    LaneChange,
    Brake,
    Reactive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub lanes: usize,
    pub lane_width_m: f64,
    /// Agents per scenario, the lead included.
    pub agents: usize,
    pub scenarios: usize,
    pub frames: usize,
    pub mix: ScenarioMix,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Spread of the other agents' speeds around the lead's.
    pub speed_spread: f64,
    pub decel: f64,
    /// Braking stops at this fraction of the initial speed.
    pub brake_floor: f64,
    pub lane_change_s: f64,
    pub reaction_lag_s: f64,
    /// Probability that the lead brakes in a reactive scenario.
    pub reactive_brake_prob: f64,
    /// Standard deviation of position noise (meters).
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            lanes: 3,
            lane_width_m: 12.0 * FEET_TO_METERS,
            agents: 4,
            scenarios: 20,
            frames: 80,
            mix: ScenarioMix::default(),
            speed_min: 20.0,
            speed_max: 30.0,
            speed_spread: 2.0,
            decel: 4.0,
            brake_floor: 0.5,
            lane_change_s: 4.0,
            reaction_lag_s: 0.6,
            reactive_brake_prob: 0.5,
            noise: 0.0,
        }
    }
}

pub const RATE_HZ: u32 = 5;
const DT: f64 = 1.0 / RATE_HZ as f64;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synthetic config: {m}")));
        if self.lanes == 0 || self.agents == 0 || self.scenarios == 0 {
            return bad("lanes, agents and scenarios must be positive");
        }
        if self.frames < 2 {
            return bad("need at least 2 frames");
        }
        let m = self.mix;
        let w = [m.cruise, m.lane_change, m.brake, m.reactive];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return bad("scenario mix weights must be non-negative with a positive sum");
        }
        if !(self.speed_min > 0.0 && self.speed_max >= self.speed_min) {
            return bad("speed range must be positive and ordered");
        }
        if !(self.decel > 0.0 && (0.0..=1.0).contains(&self.brake_floor)) {
            return bad("decel must be positive and brake_floor in [0, 1]");
        }
        if !(self.lane_width_m > 0.0 && self.lane_change_s > 0.0 && self.reaction_lag_s >= 0.0) {
            return bad("lane width, lane change time and reaction lag must be positive");
        }
        if !(0.0..=1.0).contains(&self.reactive_brake_prob) || !(self.noise >= 0.0) || self.speed_spread < 0.0 {
            return bad("probabilities, noise and spread out of range");
        }
        Ok(())
    }

    pub fn lag_frames(&self) -> usize {
        (self.reaction_lag_s * RATE_HZ as f64).round() as usize
    }

    fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width_m
    }

    /// 1-based lane id of a lateral position, clamped to the road.
    pub fn lane_of(&self, y: f64) -> i32 {
        let l = (y / self.lane_width_m).floor().clamp(0.0, self.lanes as f64 - 1.0);
        l as i32 + 1
    }

    /// First frame of scenario `s`; scenarios never share frames.
    pub fn frame_offset(&self, s: usize) -> i64 {
        let span = (self.frames + 50).div_ceil(5) * 5;
        (s * span) as i64
    }
}

fn pick_family(mix: &ScenarioMix, rng: &mut impl Rng) -> Family {
    let w = [mix.cruise, mix.lane_change, mix.brake, mix.reactive];
    let mut u = rng.gen::<f64>() * w.iter().sum::<f64>();
    for (f, wi) in [Family::Cruise, Family::LaneChange, Family::Brake, Family::Reactive]
        .into_iter()
        .zip(w)
    {
        if u < wi {
            return f;
        }
        u -= wi;
    }
    Family::Reactive
}

/// Speed profile braking from `v0` at `decel` starting after frame `start`.
fn braking(v0: f64, cfg: &SynthConfig, start: usize) -> Vec<f64> {
    let floor = cfg.brake_floor * v0;
    let mut v = vec![v0; cfg.frames];
    for k in start + 1..cfg.frames {
        v[k] = (v[k - 1] - cfg.decel * DT).max(floor);
    }
    v
}

fn integrate(x0: f64, speeds: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(speeds.len());
    let mut cur = x0;
    for &v in speeds {
        x.push(cur);
        cur += v * DT;
    }
    x
}

struct Agent {
    lane: usize,
    x0: f64,
    speeds: Vec<f64>,
    lateral: Vec<f64>,
}

/// Generates the scenarios of `cfg` together with the family of each one.
pub fn generate_scenarios(cfg: &SynthConfig, seed: u64) -> Result<Vec<(Family, Vec<AgentTrack>)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Invalid(e.to_string()))?;
    let n = cfg.frames;
    let lag = cfg.lag_frames();
    let mut out = Vec::with_capacity(cfg.scenarios);

    for s in 0..cfg.scenarios {
        let family = pick_family(&cfg.mix, &mut rng);
        let lead_lane = cfg.lanes / 2;
        let v_lead = rng.gen_range(cfg.speed_min..=cfg.speed_max);
        let event_lo = n.min(15);
        let event_hi = n.saturating_sub(15).max(event_lo + 1);

        // Slots relative to the lead: its own lane behind and ahead, and
        // the neighbouring lanes. Followers in the lead's lane come first.
        let mut slots: Vec<(usize, f64)> = vec![(lead_lane, -20.0), (lead_lane, 20.0)];
        for lane in 0..cfg.lanes {
            if lane != lead_lane {
                for off in [-12.0, 6.0, 24.0, -28.0] {
                    slots.push((lane, off));
                }
            }
        }
        slots.push((lead_lane, -40.0));
        if family != Family::Reactive {
            slots.shuffle(&mut rng);
        }

        let x_start = rng.gen_range(0.0..500.0);
        let lead_speeds = match family {
            Family::Reactive if rng.gen::<f64>() < cfg.reactive_brake_prob => {
                braking(v_lead, cfg, rng.gen_range(event_lo..event_hi))
            }
            _ => vec![v_lead; n],
        };
        let mut agents = vec![Agent {
            lane: lead_lane,
            x0: x_start,
            lateral: vec![cfg.lane_center(lead_lane); n],
            speeds: lead_speeds,
        }];
        for j in 1..cfg.agents {
            let (lane, off) = slots.get(j - 1).copied().unwrap_or((j % cfg.lanes, -60.0 - 8.0 * j as f64));
            let jitter = rng.gen_range(-2.0..2.0);
            let same_lane = lane == lead_lane;
            let v = if same_lane {
                v_lead
            } else {
                (v_lead + rng.gen_range(-cfg.speed_spread..=cfg.speed_spread)).max(0.1)
            };
            agents.push(Agent {
                lane,
                x0: x_start + off + jitter,
                lateral: vec![cfg.lane_center(lane); n],
                speeds: vec![v; n],
            });
        }

        match family {
            Family::Cruise => {}
            Family::Reactive => {
                // Same-lane agents behind the lead react in order of distance.
                let mut behind: Vec<usize> = (1..agents.len())
                    .filter(|&j| agents[j].lane == lead_lane && agents[j].x0 < x_start)
                    .collect();
                behind.sort_by(|&a, &b| agents[b].x0.total_cmp(&agents[a].x0));
                let mut leader = 0;
                for j in behind {
                    let lead = agents[leader].speeds.clone();
                    agents[j].speeds = (0..n).map(|k| lead[k.saturating_sub(lag)]).collect();
                    leader = j;
                }
            }
            Family::Brake => {
                let j = rng.gen_range(0..agents.len());
                let v0 = agents[j].speeds[0];
                agents[j].speeds = braking(v0, cfg, rng.gen_range(event_lo..event_hi));
            }
            Family::LaneChange => {
                let j = rng.gen_range(0..agents.len());
                let lane = agents[j].lane;
                let dirs: Vec<i64> = [-1i64, 1]
                    .into_iter()
                    .filter(|d| (0..cfg.lanes as i64).contains(&(lane as i64 + d)))
                    .collect();
                if let Some(&d) = dirs.get(rng.gen_range(0..dirs.len().max(1))) {
                    let dur = (cfg.lane_change_s * RATE_HZ as f64).round().max(1.0);
                    let last_start = n.saturating_sub(dur as usize + 1).max(event_lo + 1);
                    let start = rng.gen_range(event_lo..last_start);
                    let y0 = cfg.lane_center(lane);
                    let dy = d as f64 * cfg.lane_width_m;
                    for k in 0..n {
                        let u = ((k as f64 - start as f64) / dur).clamp(0.0, 1.0);
                        agents[j].lateral[k] = y0 + dy * (1.0 - (std::f64::consts::PI * u).cos()) / 2.0;
                    }
                }
            }
        }

        let offset = cfg.frame_offset(s);
        let tracks = agents
            .into_iter()
            .enumerate()
            .map(|(j, a)| {
                let xs = integrate(a.x0, &a.speeds);
                let positions: Vec<Point> = (0..n)
                    .map(|k| {
                        let mut p = Point::new(xs[k], a.lateral[k]);
                        if cfg.noise > 0.0 {
                            p.x += noise.sample(&mut rng);
                            p.y += noise.sample(&mut rng);
                        }
                        p
                    })
                    .collect();
                AgentTrack {
                    agent_id: (s * 1000 + j) as u64,
                    frames: (0..n as i64).map(|k| offset + k).collect(),
                    lane_ids: a.lateral.iter().map(|&y| cfg.lane_of(y)).collect(),
                    positions,
                    source_rate: RATE_HZ,
                }
            })
            .collect();
        out.push((family, tracks));
    }
    Ok(out)
}

/// Flat track list of [`generate_scenarios`], sorted by agent id.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Vec<AgentTrack>> {
    let mut tracks: Vec<AgentTrack> = generate_scenarios(cfg, seed)?
        .into_iter()
        .flat_map(|(_, t)| t)
        .collect();
    tracks.sort_by_key(|t| t.agent_id);
    Ok(tracks)
}
