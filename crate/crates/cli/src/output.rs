//! JSON-lines prediction records.

use condpred_core::decoder::PredictionSet;
use condpred_core::scene::{ManeuverLabel, Point};
use serde::Serialize;

#[derive(Serialize)]
pub struct Frame {
    /// Seconds after the prediction instant.
    pub t: f64,
    pub mu: Point,
    pub sigma: Point,
    pub rho: f64,
}

/// One target under one maneuver.
#[derive(Serialize)]
pub struct Record {
    pub instance: String,
    pub target: u64,
    pub maneuver: String,
    pub p_lat: f64,
    pub p_lon: f64,
    pub p_joint: f64,
    pub frames: Vec<Frame>,
}

pub fn records(set: &PredictionSet) -> Vec<Record> {
    let mut out = Vec::new();
    for t in &set.targets {
        for (k, m) in ManeuverLabel::ALL.iter().enumerate() {
            out.push(Record {
                instance: set.instance.to_string(),
                target: t.target,
                maneuver: m.name(),
                p_lat: t.maneuvers.p_lat[m.lateral.index()],
                p_lon: t.maneuvers.p_lon[m.longitudinal.index()],
                p_joint: t.maneuvers.p_joint[k],
                frames: t.trajectories[k]
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Frame {
                        t: (i + 1) as f64 / 5.0,
                        mu: s.mu,
                        sigma: s.sigma,
                        rho: s.rho,
                    })
                    .collect(),
            });
        }
    }
    out
}
