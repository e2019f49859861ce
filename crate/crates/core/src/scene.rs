//! Units, reference frames, grid geometry and the trajectory and maneuver
//! types shared by the rest of the crate.
//!
//! Positions are in meters. `x` runs along the road, `y` across it, growing
//! in the same direction as lane ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEET_TO_METERS: f64 = 0.3048;

/// Rate of every model-facing sequence.
pub const WORKING_RATE_HZ: u32 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point::new(p[0], p[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    Feet,
    Meters,
}

pub fn convert_units(value: f64, from: LengthUnit) -> f64 {
    match from {
        LengthUnit::Feet => value * FEET_TO_METERS,
        LengthUnit::Meters => value,
    }
}

/// Agent-centred frame whose `x` axis points in the agent's direction of
/// travel. Agents driving towards decreasing `x` get both axes flipped
/// (a half turn), which keeps left and right consistent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub origin: Point,
    pub heading: f64,
}

impl LocalFrame {
    pub fn new(origin: Point, heading: f64) -> Self {
        Self { origin, heading }
    }

    /// Frame anchored at the last point of `history`, heading inferred from
    /// its net longitudinal displacement (forward when stationary).
    pub fn from_history(history: &[Point]) -> Self {
        let last = *history.last().expect("history must not be empty");
        let first = history[0];
        let heading = if last.x - first.x < 0.0 { -1.0 } else { 1.0 };
        Self::new(last, heading)
    }

    pub fn to_local(&self, p: Point) -> Point {
        p.sub(self.origin).scale(self.heading)
    }

    pub fn to_world(&self, p: Point) -> Point {
        self.origin.add(p.scale(self.heading))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Point>,
    rate: f64,
    t0: i64,
}

impl Trajectory {
    pub fn new(points: Vec<Point>, rate: f64, t0: i64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("trajectory must not be empty".into()));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::Invalid(format!("trajectory rate {rate} must be positive")));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::Invalid(format!("non-finite trajectory point {p:?}")));
        }
        Ok(Self { points, rate, t0 })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Future motion plan of the ego agent, in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanRepr")]
pub struct EgoPlan {
    points: Vec<Point>,
    rate: u32,
}

#[derive(Deserialize)]
struct PlanRepr {
    points: Vec<Point>,
    rate: u32,
}

impl TryFrom<PlanRepr> for EgoPlan {
    type Error = Error;
    fn try_from(r: PlanRepr) -> Result<Self> {
        EgoPlan::new(r.points, r.rate)
    }
}

impl EgoPlan {
    pub fn new(points: Vec<Point>, rate: u32) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid(format!(
                "ego plan needs at least 2 points, got {}",
                points.len()
            )));
        }
        if rate != 1 && rate != 5 {
            return Err(Error::Invalid(format!("ego plan rate must be 1 or 5 Hz, got {rate}")));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::Invalid(format!("non-finite plan point {p:?}")));
        }
        Ok(Self { points, rate })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Covered horizon in seconds.
    pub fn duration_s(&self) -> f64 {
        self.points.len() as f64 / self.rate as f64
    }
}

/// Rectangular agent-centred grid. Rows run longitudinally, columns
/// laterally; the centre cell is centred on the grid's agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length_ft: f64,
    pub width_ft: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            length_ft: 200.0,
            width_ft: 35.0,
            rows: 25,
            cols: 5,
        }
    }
}

/// A `(row, col)` grid cell.
pub type Cell = (usize, usize);

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Invalid("grid needs at least one row and column".into()));
        }
        if !(self.length_ft > 0.0 && self.width_ft > 0.0) {
            return Err(Error::Invalid("grid extent must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_length_m(&self) -> f64 {
        convert_units(self.length_ft, LengthUnit::Feet) / self.rows as f64
    }

    pub fn cell_width_m(&self) -> f64 {
        convert_units(self.width_ft, LengthUnit::Feet) / self.cols as f64
    }

    pub fn center(&self) -> Cell {
        (self.rows / 2, self.cols / 2)
    }

    /// Cell containing `pos` (relative to the grid's agent), using half-open
    /// intervals so boundary points go to the higher index.
    pub fn cell_of(&self, pos: Point) -> Option<Cell> {
        if !pos.is_finite() {
            return None;
        }
        let r = (pos.x / self.cell_length_m() + self.rows as f64 / 2.0).floor();
        let c = (pos.y / self.cell_width_m() + self.cols as f64 / 2.0).floor();
        if r < 0.0 || c < 0.0 || r >= self.rows as f64 || c >= self.cols as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// Row index of a cell in the row-major flattening.
    pub fn index(&self, cell: Cell) -> usize {
        cell.0 * self.cols + cell.1
    }
}

pub fn grid_cell_of(pos: Point, spec: &GridSpec) -> Option<Cell> {
    spec.cell_of(pos)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lateral {
    Keep,
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Longitudinal {
    Normal,
    Brake,
}

impl Lateral {
    pub const ALL: [Lateral; 3] = [Lateral::Keep, Lateral::Left, Lateral::Right];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 2] = [Longitudinal::Normal, Longitudinal::Brake];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManeuverLabel {
    pub lateral: Lateral,
    pub longitudinal: Longitudinal,
}

impl ManeuverLabel {
    /// The six maneuver classes, indexed `lateral * 2 + longitudinal`.
    pub const ALL: [ManeuverLabel; 6] = [
        ManeuverLabel::new(Lateral::Keep, Longitudinal::Normal),
        ManeuverLabel::new(Lateral::Keep, Longitudinal::Brake),
        ManeuverLabel::new(Lateral::Left, Longitudinal::Normal),
        ManeuverLabel::new(Lateral::Left, Longitudinal::Brake),
        ManeuverLabel::new(Lateral::Right, Longitudinal::Normal),
        ManeuverLabel::new(Lateral::Right, Longitudinal::Brake),
    ];

    pub const fn new(lateral: Lateral, longitudinal: Longitudinal) -> Self {
        Self {
            lateral,
            longitudinal,
        }
    }

    pub fn index(self) -> usize {
        self.lateral.index() * 2 + self.longitudinal.index()
    }

    pub fn from_index(k: usize) -> Option<Self> {
        Self::ALL.get(k).copied()
    }

    /// `one_hot(lateral) ++ one_hot(longitudinal)`.
    pub fn encoding(self) -> [f64; 5] {
        let mut e = [0.0; 5];
        e[self.lateral.index()] = 1.0;
        e[3 + self.longitudinal.index()] = 1.0;
        e
    }

    pub fn name(self) -> String {
        format!("{:?}-{:?}", self.lateral, self.longitudinal).to_lowercase()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_maps_to_center_cell() {
        assert_eq!(GridSpec::default().cell_of(Point::ORIGIN), Some((12, 2)));
    }

    #[test]
    fn forty_meters_ahead_is_outside() {
        // Half extent is 100 ft = 30.48 m.
        let spec = GridSpec::default();
        assert_eq!(spec.cell_of(Point::new(40.0, 0.0)), None);
        assert_eq!(spec.cell_of(Point::new(-40.0, 0.0)), None);
        assert!(spec.cell_of(Point::new(30.0, 0.0)).is_some());
    }

    #[test]
    fn boundary_goes_to_higher_index() {
        let spec = GridSpec::default();
        // Centre cell spans [-0.5, 0.5) cell lengths, so +0.5 cell is the
        // lower edge of row 13.
        let edge = 0.5 * spec.cell_length_m();
        assert_eq!(spec.cell_of(Point::new(edge, 0.0)), Some((13, 2)));
        assert_eq!(spec.cell_of(Point::new(-edge, 0.0)), Some((12, 2)));
        let side = 0.5 * spec.cell_width_m();
        assert_eq!(spec.cell_of(Point::new(0.0, side)), Some((12, 3)));
    }

    #[test]
    fn default_cells_are_eight_by_seven_feet() {
        let spec = GridSpec::default();
        assert!((spec.cell_length_m() - 8.0 * FEET_TO_METERS).abs() < 1e-12);
        assert!((spec.cell_width_m() - 7.0 * FEET_TO_METERS).abs() < 1e-12);
    }

    #[test]
    fn unit_conversion() {
        assert!((convert_units(200.0, LengthUnit::Feet) - 60.96).abs() < 1e-12);
        assert_eq!(convert_units(0.0, LengthUnit::Feet), 0.0);
        assert_eq!(convert_units(1.5, LengthUnit::Meters), 1.5);
    }

    #[test]
    fn maneuver_indexing_round_trips() {
        for (k, m) in ManeuverLabel::ALL.iter().enumerate() {
            assert_eq!(m.index(), k);
            assert_eq!(ManeuverLabel::from_index(k), Some(*m));
            assert_eq!(m.encoding().iter().sum::<f64>(), 2.0);
        }
    }

    #[test]
    fn plan_validation() {
        assert!(EgoPlan::new(vec![Point::ORIGIN], 5).is_err());
        assert!(EgoPlan::new(vec![Point::ORIGIN; 3], 2).is_err());
        assert!(EgoPlan::new(vec![Point::ORIGIN; 3], 1).is_ok());
        assert!(Trajectory::new(vec![], 5.0, 0).is_err());
        assert!(Trajectory::new(vec![Point::new(f64::NAN, 0.0)], 5.0, 0).is_err());
    }

    #[test]
    fn reversed_heading_flips_both_axes() {
        let f = LocalFrame::from_history(&[Point::new(10.0, 1.0), Point::new(5.0, 1.0)]);
        assert_eq!(f.heading, -1.0);
        assert_eq!(f.to_local(Point::new(3.0, 2.0)), Point::new(2.0, -1.0));
        assert_eq!(f.to_world(f.to_local(Point::new(3.0, 2.0))), Point::new(3.0, 2.0));
    }

    proptest! {
        #[test]
        fn cells_are_in_range_iff_inside(x in -40.0f64..40.0, y in -8.0f64..8.0) {
            let spec = GridSpec::default();
            let half_l = 100.0 * FEET_TO_METERS;
            let half_w = 17.5 * FEET_TO_METERS;
            let inside = (-half_l..half_l).contains(&x) && (-half_w..half_w).contains(&y);
            match spec.cell_of(Point::new(x, y)) {
                Some((r, c)) => {
                    prop_assert!(inside);
                    prop_assert!(r < spec.rows && c < spec.cols);
                    // The cell actually contains the point.
                    let lo_x = (r as f64 - 12.5) * spec.cell_length_m();
                    let lo_y = (c as f64 - 2.5) * spec.cell_width_m();
                    prop_assert!(x >= lo_x - 1e-9 && x < lo_x + spec.cell_length_m() + 1e-9);
                    prop_assert!(y >= lo_y - 1e-9 && y < lo_y + spec.cell_width_m() + 1e-9);
                }
                None => prop_assert!(!inside || (x.abs() - half_l).abs() < 1e-9 || (y.abs() - half_w).abs() < 1e-9),
            }
        }

        #[test]
        fn cells_are_translation_consistent(
            x in -30.0f64..30.0, y in -5.0f64..5.0,
            cx in -1000i32..1000, cy in -20i32..20,
        ) {
            // Dyadic offsets keep the subtraction exact.
            let spec = GridSpec::default();
            let center = Point::new(cx as f64 * 0.25, cy as f64 * 0.25);
            let pos = Point::new((x * 64.0).round() / 64.0, (y * 64.0).round() / 64.0);
            let shifted = pos.add(center);
            prop_assert_eq!(spec.cell_of(shifted.sub(center)), spec.cell_of(pos));
        }
    }
}
