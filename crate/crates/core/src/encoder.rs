//! Temporal encoder: a width-3 1D convolution lifting 2-D points to
//! feature channels, followed by an LSTM whose final state is the agent
//! encoding. Target, ego and neighbor roles each own a parameter set.

use condpred_tape::{Graph, Grid, Mat, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impl_params;
use crate::nn::{Conv, Init, Lstm, ALPHA};
use crate::scene::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Ego,
    Neighbor,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Target, Role::Ego, Role::Neighbor];

    pub fn name(self) -> &'static str {
        match self {
            Role::Target => "target",
            Role::Ego => "ego",
            Role::Neighbor => "neighbor",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Role::Target => 1,
            Role::Ego => 2,
            Role::Neighbor => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub role: Role,
    pub conv: Conv,
    pub lstm: Lstm,
}

impl_params!(EncoderParams { conv, lstm });

impl EncoderParams {
    pub fn init(role: Role, seed: u64, conv_channels: usize, dim: usize) -> Self {
        let mut rng = Init::new(seed).stream(role.stream());
        Self {
            role,
            conv: Conv::new(3, 1, 2, conv_channels, &mut rng),
            lstm: Lstm::new(conv_channels, dim, &mut rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.lstm.hidden()
    }

    /// Encodes sequences of relative points (`n x len x 2` flattened to
    /// `(n * len) x 2`, one sequence after the other), all of length `len`.
    pub fn forward_equal<'a>(&'a self, g: &mut Graph<'a>, points: Var, n: usize, len: usize) -> Var {
        let grid = Grid::new(n, len, 1);
        let x = self.conv.forward(g, points, grid);
        let x = g.leaky_relu(x, ALPHA);
        let wx = g.param(&self.lstm.wx);
        let xw = g.matmul(x, wx);
        let (mut h, mut c) = self.lstm.zero_state(g, n);
        for t in 0..len {
            let idx: Vec<usize> = (0..n).map(|k| k * len + t).collect();
            let xt = g.gather_rows(xw, &idx);
            (h, c) = self.lstm.step(g, xt, h, c);
        }
        h
    }

    /// Encodes sequences of any lengths. Row `k` of the result is the
    /// encoding of `seqs[k]`. Sequences are grouped by length so each group
    /// runs its recurrence over exactly its own steps.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, seqs: &[Vec<Point>]) -> Var {
        let mut lengths: Vec<usize> = seqs.iter().map(Vec::len).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let mut parts = Vec::new();
        let mut order = Vec::with_capacity(seqs.len());
        for len in lengths {
            let members: Vec<usize> = (0..seqs.len()).filter(|&k| seqs[k].len() == len).collect();
            let mut m = Mat::zeros((members.len() * len, 2));
            for (r, &k) in members.iter().enumerate() {
                for (t, p) in seqs[k].iter().enumerate() {
                    m[[r * len + t, 0]] = p.x;
                    m[[r * len + t, 1]] = p.y;
                }
            }
            let pts = g.constant(m);
            parts.push(self.forward_equal(g, pts, members.len(), len));
            order.extend(members);
        }
        let stacked = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        // `order[r]` is the sequence held in stacked row `r`.
        let mut inverse = vec![0; seqs.len()];
        for (r, &k) in order.iter().enumerate() {
            inverse[k] = r;
        }
        if inverse.iter().enumerate().all(|(k, &r)| k == r) {
            stacked
        } else {
            g.gather_rows(stacked, &inverse)
        }
    }
}

pub fn init_params(role: Role, seed: u64) -> EncoderParams {
    EncoderParams::init(role, seed, 32, 64)
}

/// Expresses `points` relative to `reference`, flipped by `heading` and
/// divided by `unit`.
pub fn relative(points: &[Point], reference: Point, heading: f64, unit: f64) -> Vec<Point> {
    points
        .iter()
        .map(|p| p.sub(reference).scale(heading / unit))
        .collect()
}

/// Encodes one sequence of relative points.
pub fn encode(points: &[Point], params: &EncoderParams) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::Invalid(format!(
            "encoder needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Invalid("non-finite encoder input".into()));
    }
    let mut g = Graph::new();
    let h = params.forward(&mut g, &[points.to_vec()]);
    Ok(g.value(h).row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{fill, named};

    fn line(n: usize, v: f64) -> Vec<Point> {
        (0..n).map(|k| Point::new(v * k as f64, 0.25 * k as f64)).collect()
    }

    #[test]
    fn output_has_state_dimension() {
        let p = init_params(Role::Target, 0);
        assert_eq!(encode(&line(15, 4.0), &p).unwrap().len(), 64);
        assert_eq!(encode(&line(5, 20.0), &init_params(Role::Ego, 0)).unwrap().len(), 64);
    }

    #[test]
    fn zero_input_zero_params_gives_zero() {
        let mut p = init_params(Role::Neighbor, 0);
        fill(&mut p, 0.0);
        let e = encode(&vec![Point::ORIGIN; 15], &p).unwrap();
        assert!(e.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_short_or_nan_input() {
        let p = init_params(Role::Target, 0);
        assert!(encode(&[Point::ORIGIN], &p).is_err());
        assert!(encode(&[Point::ORIGIN, Point::new(f64::NAN, 0.0)], &p).is_err());
    }

    #[test]
    fn roles_get_independent_parameters() {
        let a = init_params(Role::Target, 5);
        let b = init_params(Role::Ego, 5);
        assert_eq!(a, init_params(Role::Target, 5));
        for ((name, x), (_, y)) in named(&a).into_iter().zip(named(&b)) {
            // Biases start at constants; weights must differ.
            if !name.ends_with(".b") {
                assert_ne!(x, y, "{name}");
            }
        }
    }

    #[test]
    fn relative_encoding_ignores_absolute_offset() {
        let p = init_params(Role::Target, 2);
        let hist = line(15, 4.0);
        let shifted: Vec<Point> = hist.iter().map(|q| q.add(Point::new(512.0, -32.0))).collect();
        let a = encode(&relative(&hist, hist[14], 1.0, 1.0), &p).unwrap();
        let b = encode(&relative(&shifted, shifted[14], 1.0, 1.0), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_lengths_match_single_encodings() {
        let p = EncoderParams::init(Role::Neighbor, 4, 6, 5);
        let seqs = vec![line(15, 1.0), line(3, 2.0), line(15, -1.0), line(2, 0.5)];
        let mut g = Graph::new();
        let h = p.forward(&mut g, &seqs);
        for (k, s) in seqs.iter().enumerate() {
            let single = encode(s, &p).unwrap();
            for (a, b) in g.value(h).row(k).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
