//! Intersection layout: lane-level paths, their conflict areas and the nested
//! regions (junction box, signal-visibility range, communication range).
//!
//! Every path is a chain of straight and circular-arc segments parametrized by
//! arc length `s`, measured from the upstream end of its approach lane. The
//! layout is built for one approach in a local frame where traffic heads north
//! (+y) and is then rotated onto the other three arms.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::Params;
use crate::separation::{self, SeparationParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn rotated(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Planar position and heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// A constant-curvature piece of a centerline. `curvature` is signed:
/// positive turns left (counter-clockwise), zero is a straight line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: Pose,
    pub length: f64,
    pub curvature: f64,
}

impl Segment {
    pub fn pose_at(&self, u: f64) -> Pose {
        let Pose { x, y, theta } = self.start;
        let k = self.curvature;
        if k == 0.0 {
            Pose { x: x + u * theta.cos(), y: y + u * theta.sin(), theta }
        } else {
            let th = theta + k * u;
            Pose { x: x + (th.sin() - theta.sin()) / k, y: y - (th.cos() - theta.cos()) / k, theta: th }
        }
    }

    pub fn end(&self) -> Pose {
        self.pose_at(self.length)
    }

    /// Distance from `p` to the segment, and the local arc length of the
    /// closest point.
    fn closest(&self, p: Point) -> (f64, f64) {
        let a = self.start.point();
        let b = self.end().point();
        let mut best = (p.distance(a), 0.0);
        let at_end = p.distance(b);
        if at_end < best.0 {
            best = (at_end, self.length);
        }
        if self.curvature == 0.0 {
            let (dx, dy) = (self.start.theta.cos(), self.start.theta.sin());
            let u = (p.x - a.x) * dx + (p.y - a.y) * dy;
            if u > 0.0 && u < self.length {
                let d = ((p.x - a.x) * dy - (p.y - a.y) * dx).abs();
                if d < best.0 {
                    best = (d, u);
                }
            }
        } else {
            let k = self.curvature;
            let radius = 1.0 / k.abs();
            let th0 = self.start.theta;
            let c = Point::new(a.x - th0.sin() / k, a.y + th0.cos() / k);
            let phi = (p.y - c.y).atan2(p.x - c.x);
            // Polar angle of the arc point at local length u is th0 + k u ∓ π/2.
            let sweep =
                if k > 0.0 { (phi + FRAC_PI_2 - th0).rem_euclid(TAU) } else { (th0 + FRAC_PI_2 - phi).rem_euclid(TAU) };
            let u = sweep * radius;
            if u < self.length {
                let d = (p.distance(c) - radius).abs();
                if d < best.0 {
                    best = (d, u);
                }
            }
        }
        best
    }

    fn rotated(&self, angle: f64) -> Segment {
        let p = self.start.point().rotated(angle);
        Segment {
            start: Pose { x: p.x, y: p.y, theta: self.start.theta + angle },
            length: self.length,
            curvature: self.curvature,
        }
    }
}

/// Compass direction of the arm a path comes from (traffic on the south arm
/// drives north).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    South,
    East,
    North,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::South, Approach::East, Approach::North, Approach::West];

    pub fn index(self) -> usize {
        self as usize
    }

    fn rotation(self) -> f64 {
        self.index() as f64 * FRAC_PI_2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Left,
    Straight,
    Right,
}

/// One legal lane-level route through the junction.
#[derive(Clone, Debug)]
pub struct PathGeometry {
    pub id: usize,
    pub turn: Turn,
    pub approach: Approach,
    /// In-lane index counted from the road centerline.
    pub lane: u32,
    pub segments: Vec<Segment>,
    segment_starts: Vec<f64>,
    pub length: f64,
    /// Arc length of the stop line, where the path crosses into the junction.
    pub entry_point: f64,
    /// Arc length where the path crosses the junction box boundary.
    pub box_exit: f64,
    /// Arc length past which the vehicle has left the junction (box plus all
    /// conflict areas).
    pub exit_point: f64,
}

impl PathGeometry {
    fn new(id: usize, turn: Turn, approach: Approach, lane: u32, segments: Vec<Segment>) -> Self {
        let mut starts = Vec::with_capacity(segments.len());
        let mut total = 0.0;
        for seg in &segments {
            starts.push(total);
            total += seg.length;
        }
        Self {
            id,
            turn,
            approach,
            lane,
            segments,
            segment_starts: starts,
            length: total,
            entry_point: 0.0,
            box_exit: 0.0,
            exit_point: 0.0,
        }
    }

    fn segment_index(&self, s: f64) -> usize {
        match self.segment_starts.partition_point(|&start| start <= s) {
            0 => 0,
            n => n - 1,
        }
    }

    /// Centerline pose at arc length `s`. Beyond the end the final segment
    /// is extended, so vehicles can run off the modelled tail smoothly.
    pub fn pose_at(&self, s: f64) -> Pose {
        let s = s.max(0.0);
        let i = self.segment_index(s);
        self.segments[i].pose_at(s - self.segment_starts[i])
    }

    pub fn point_at(&self, s: f64) -> Point {
        self.pose_at(s).point()
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        self.segments[self.segment_index(s.clamp(0.0, self.length))].curvature
    }

    /// Arc-length coordinates where curvature changes, strictly inside (a, b).
    pub fn breakpoints_between(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.segment_starts.iter().copied().filter(move |&s| s > a && s < b)
    }

    /// Distance from `p` to the centerline and the arc length of the closest point.
    pub fn closest(&self, p: Point) -> (f64, f64) {
        self.segments
            .iter()
            .zip(&self.segment_starts)
            .map(|(seg, start)| {
                let (d, u) = seg.closest(p);
                (d, start + u)
            })
            .fold((f64::INFINITY, 0.0), |best, cand| if cand.0 < best.0 { cand } else { best })
    }
}

/// Signed distance along a path: positive when `from` is behind `to`.
pub fn path_distance(from: f64, to: f64) -> f64 {
    to - from
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaKind {
    /// The two centerlines cross.
    Crossing,
    /// The two paths end in the same exit lane.
    Merge,
}

/// Arc-length stretch of one path inside a conflict area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub path: usize,
    pub s_in: f64,
    pub s_out: f64,
}

impl Occupancy {
    pub fn contains(&self, s: f64) -> bool {
        s >= self.s_in && s <= self.s_out
    }
}

/// Disk around a conflict point of two paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionArea {
    pub id: usize,
    pub kind: AreaKind,
    pub center: Point,
    pub radius: f64,
    pub intervals: [Occupancy; 2],
}

impl CollisionArea {
    pub fn interval_for(&self, path: usize) -> Option<&Occupancy> {
        self.intervals.iter().find(|o| o.path == path)
    }
}

/// Alignment between two paths that share their downstream exit lane.
///
/// A position `s_partner` on the partner path corresponds to
/// `s_partner + offset` on this path once both are on the shared stretch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeLink {
    pub partner: usize,
    pub offset: f64,
    /// Where the partner path's stop line lands on this path. When it lies
    /// past this path's own stop line, partner vehicles that are already in
    /// the junction appear ahead of everything still queued here, so they are
    /// visible from upstream; otherwise they only become relevant once this
    /// path's vehicle has itself entered.
    pub partner_entry_here: f64,
    pub visible_from_upstream: bool,
}

/// Where a point or a vehicle is with respect to the junction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Outside,
    /// Within V2I range but beyond signal visibility.
    Communication,
    /// Within signal-visibility range (also within V2I range).
    SignalVisible,
    /// Inside the junction proper.
    Junction,
    /// Downstream of the junction on an outbound lane.
    Exited,
}

/// Lane counts of one approach, from the centerline outwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneCounts {
    pub left_only: u32,
    pub left_or_straight: u32,
    pub straight_only: u32,
    pub straight_or_right: u32,
    pub right_only: u32,
}

impl Default for LaneCounts {
    fn default() -> Self {
        Self { left_only: 1, left_or_straight: 0, straight_only: 2, straight_or_right: 0, right_only: 1 }
    }
}

impl LaneCounts {
    pub const NONE: LaneCounts =
        LaneCounts { left_only: 0, left_or_straight: 0, straight_only: 0, straight_or_right: 0, right_only: 0 };

    fn total(&self) -> u32 {
        self.left_only + self.left_or_straight + self.straight_only + self.straight_or_right + self.right_only
    }
}

/// Geometric description from which [`IntersectionModel`] is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntersectionSpec {
    /// Lane counts for the south, east, north and west approaches.
    pub approaches: [LaneCounts; 4],
    pub lane_width: f64,
    /// Clearance between the outermost lane and the junction box edge.
    pub corner_margin: f64,
    /// V2I communication range, measured from the stop line.
    pub d_c: f64,
    /// Signal-visibility range, measured from the stop line.
    pub d_h: f64,
    pub area_radius: f64,
    /// Two centerlines closer than this are treated as conflicting.
    pub conflict_clearance: f64,
    /// Turns use the largest radius that fits the corner, capped here. A
    /// smaller cap moves the curves towards the junction center, which keeps
    /// conflict areas of adjacent left turns clear of the stop lines.
    pub max_turn_radius: f64,
    /// Length of approach lane modelled beyond the communication range.
    pub approach_margin: f64,
    /// Outbound lane length modelled beyond the junction box.
    pub tail_length: f64,
}

impl Default for IntersectionSpec {
    fn default() -> Self {
        Self {
            approaches: [LaneCounts::default(); 4],
            lane_width: 3.5,
            corner_margin: 6.0,
            d_c: 60.0,
            d_h: 50.0,
            area_radius: 10.0,
            conflict_clearance: 2.5,
            max_turn_radius: 12.0,
            approach_margin: 5.0,
            tail_length: 35.0,
        }
    }
}

impl IntersectionSpec {
    /// Four identical arms, each with one left-turn lane, two straight lanes
    /// and one right-turn lane: sixteen paths.
    pub fn four_way() -> Self {
        Self::default()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension `{name}` must be positive (got {value})")]
    InvalidDimension { name: &'static str, value: f64 },
    #[error("the lane configuration produces no paths")]
    NoPaths,
    #[error("{approach:?} approach: shared lanes (left-or-straight / straight-or-right) are not supported")]
    SharedLanes { approach: Approach },
    #[error("path {path}: turn radius {radius:.3} m is below the minimum {rho_min:.3} m")]
    TurnRadiusTooSmall { path: usize, radius: f64, rho_min: f64 },
    #[error("signal-visibility range d_H = {d_h} m must be smaller than communication range d_C = {d_c} m")]
    RegionOrder { d_h: f64, d_c: f64 },
    #[error("signal-visibility range d_H = {d_h} m is below the HV stopping distance at top speed ({required:.3} m)")]
    SignalRangeTooShort { d_h: f64, required: f64 },
    #[error("communication range d_C = {d_c} m is below the worst-case AV stopping requirement ({required:.3} m)")]
    CommunicationRangeTooShort { d_c: f64, required: f64 },
    #[error("right-turn path {path} conflicts with {count} paths; at most one is supported")]
    RightTurnConflicts { path: usize, count: usize },
    #[error("conflict area {area} reaches upstream of the stop line of path {path}; widen the corner margin")]
    AreaBeforeStopLine { area: usize, path: usize },
    #[error("path {path}: outbound tail too short to hold conflict area {area}")]
    TailTooShort { path: usize, area: usize },
}

/// The built intersection: paths, conflict areas, regions.
#[derive(Clone, Debug)]
pub struct IntersectionModel {
    pub spec: IntersectionSpec,
    pub paths: Vec<PathGeometry>,
    pub areas: Vec<CollisionArea>,
    /// Half the side of the square junction box.
    pub half_size: f64,
    pub d_c: f64,
    pub d_h: f64,
    conflict_areas: Vec<Vec<Vec<usize>>>,
    merges: Vec<Option<MergeLink>>,
}

const SAMPLE_STEP: f64 = 0.05;
const COARSE_FACTOR: usize = 20;

impl IntersectionModel {
    pub fn path(&self, id: usize) -> &PathGeometry {
        &self.paths[id]
    }

    /// Conflict areas shared by two paths. A path never conflicts with itself.
    pub fn conflicts(&self, a: usize, b: usize) -> Vec<&CollisionArea> {
        self.conflict_areas[a][b].iter().map(|&i| &self.areas[i]).collect()
    }

    pub fn in_conflict(&self, a: usize, b: usize) -> bool {
        !self.conflict_areas[a][b].is_empty()
    }

    pub fn merge_link(&self, path: usize) -> Option<&MergeLink> {
        self.merges[path].as_ref()
    }

    pub fn right_turn_paths(&self) -> Vec<usize> {
        self.paths.iter().filter(|p| p.turn == Turn::Right).map(|p| p.id).collect()
    }

    /// Paths in conflict with `path`, ascending.
    pub fn conflicting_paths(&self, path: usize) -> Vec<usize> {
        (0..self.paths.len()).filter(|&other| self.in_conflict(path, other)).collect()
    }

    /// Region of a vehicle at arc length `s` on `path`.
    pub fn region_at(&self, path: usize, s: f64) -> Region {
        let p = &self.paths[path];
        if s > p.exit_point {
            Region::Exited
        } else if s >= p.entry_point {
            Region::Junction
        } else {
            let d = p.entry_point - s;
            if d <= self.d_h {
                Region::SignalVisible
            } else if d <= self.d_c {
                Region::Communication
            } else {
                Region::Outside
            }
        }
    }

    /// Region of an arbitrary point in the plane.
    pub fn region_of(&self, q: Point) -> Region {
        let h = self.half_size;
        if (q.x.abs() <= h && q.y.abs() <= h) || self.areas.iter().any(|a| q.distance(a.center) <= a.radius) {
            return Region::Junction;
        }
        // Rotate into the frame of the nearest arm, where inbound traffic
        // drives north at positive x and the arm extends to negative y.
        let arm = if q.y.abs() >= q.x.abs() {
            if q.y < 0.0 {
                Approach::South
            } else {
                Approach::North
            }
        } else if q.x > 0.0 {
            Approach::East
        } else {
            Approach::West
        };
        let local = q.rotated(-arm.rotation());
        if local.x < 0.0 {
            return Region::Exited;
        }
        let d = -h - local.y;
        if d <= self.d_h {
            Region::SignalVisible
        } else if d <= self.d_c {
            Region::Communication
        } else {
            Region::Outside
        }
    }
}

struct Flow {
    turn: Turn,
    lane: u32,
    out_lane: u32,
}

/// Build the intersection model, validating the range assumptions that the
/// safety argument relies on.
pub fn build_intersection(spec: &IntersectionSpec, params: &Params) -> Result<IntersectionModel, GeometryError> {
    for (name, value) in [
        ("lane_width", spec.lane_width),
        ("corner_margin", spec.corner_margin),
        ("d_c", spec.d_c),
        ("d_h", spec.d_h),
        ("area_radius", spec.area_radius),
        ("conflict_clearance", spec.conflict_clearance),
        ("max_turn_radius", spec.max_turn_radius),
        ("approach_margin", spec.approach_margin),
        ("tail_length", spec.tail_length),
    ] {
        if !(value.is_finite() && value > 0.0) {
            return Err(GeometryError::InvalidDimension { name, value });
        }
    }
    check_ranges(spec, params)?;
    for (k, lanes) in spec.approaches.iter().enumerate() {
        if lanes.left_or_straight > 0 || lanes.straight_or_right > 0 {
            return Err(GeometryError::SharedLanes { approach: Approach::ALL[k] });
        }
    }
    if spec.approaches.iter().all(|l| l.total() == 0) {
        return Err(GeometryError::NoPaths);
    }

    let flows = assign_lanes(&spec.approaches);
    let lanes_needed = spec
        .approaches
        .iter()
        .map(LaneCounts::total)
        .chain(flows.iter().flatten().map(|f| f.out_lane + 1))
        .max()
        .unwrap_or(0);
    let half = f64::from(lanes_needed) * spec.lane_width + spec.corner_margin;
    let upstream = spec.d_c + spec.approach_margin;

    let mut paths = Vec::new();
    for approach in Approach::ALL {
        for flow in &flows[approach.index()] {
            let id = paths.len();
            let local = local_segments(flow, spec, half, upstream);
            if let Some(radius) = local.iter().find(|s| s.curvature != 0.0).map(|s| 1.0 / s.curvature.abs()) {
                if radius < params.rho_min - 1e-9 {
                    return Err(GeometryError::TurnRadiusTooSmall { path: id, radius, rho_min: params.rho_min });
                }
            }
            let segments = local.iter().map(|s| s.rotated(approach.rotation())).collect();
            let mut path = PathGeometry::new(id, flow.turn, approach, flow.lane, segments);
            path.entry_point = upstream;
            path.box_exit = path.length - spec.tail_length;
            path.exit_point = path.box_exit;
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(GeometryError::NoPaths);
    }

    let n = paths.len();
    let mut areas: Vec<CollisionArea> = Vec::new();
    let mut conflict_areas = vec![vec![Vec::new(); n]; n];
    let mut merges = vec![None; n];
    for i in 0..n {
        for j in (i + 1)..n {
            for (kind, center) in conflict_points(&paths[i], &paths[j], spec.conflict_clearance) {
                let id = areas.len();
                let intervals =
                    [occupancy(&paths[i], center, spec.area_radius), occupancy(&paths[j], center, spec.area_radius)];
                if kind == AreaKind::Merge {
                    let mi = paths[i].closest(center).1;
                    let mj = paths[j].closest(center).1;
                    for (a, b, ma, mb) in [(i, j, mi, mj), (j, i, mj, mi)] {
                        let offset = ma - mb;
                        let partner_entry_here = paths[b].entry_point + offset;
                        merges[a] = Some(MergeLink {
                            partner: b,
                            offset,
                            partner_entry_here,
                            visible_from_upstream: partner_entry_here > paths[a].entry_point,
                        });
                    }
                }
                areas.push(CollisionArea { id, kind, center, radius: spec.area_radius, intervals });
                conflict_areas[i][j].push(id);
                conflict_areas[j][i].push(id);
            }
        }
    }

    for area in &areas {
        for occ in &area.intervals {
            let path = &mut paths[occ.path];
            if occ.s_in < path.entry_point - 1e-9 {
                return Err(GeometryError::AreaBeforeStopLine { area: area.id, path: occ.path });
            }
            if occ.s_out >= path.length - 1e-6 {
                return Err(GeometryError::TailTooShort { path: occ.path, area: area.id });
            }
            path.exit_point = path.exit_point.max(occ.s_out);
        }
    }

    let model = IntersectionModel {
        spec: spec.clone(),
        paths,
        areas,
        half_size: half,
        d_c: spec.d_c,
        d_h: spec.d_h,
        conflict_areas,
        merges,
    };
    for path in model.paths.iter().filter(|p| p.turn == Turn::Right) {
        let count = model.conflicting_paths(path.id).len();
        if count > 1 {
            return Err(GeometryError::RightTurnConflicts { path: path.id, count });
        }
    }
    Ok(model)
}

fn check_ranges(spec: &IntersectionSpec, params: &Params) -> Result<(), GeometryError> {
    if spec.d_h >= spec.d_c {
        return Err(GeometryError::RegionOrder { d_h: spec.d_h, d_c: spec.d_c });
    }
    let sep = SeparationParams::from(params);
    let hv_stop = separation::s_hv(params.v_max, 0.0, &sep);
    if spec.d_h < hv_stop {
        return Err(GeometryError::SignalRangeTooShort { d_h: spec.d_h, required: hv_stop });
    }
    let av_stop = params.v_max * params.v_max / (-2.0 * params.a_min_hv) + params.v_max * params.h
        - params.a_min_hv * params.h * params.h / 2.0
        + params.v_max * params.t_r_hv
        + params.s_min;
    if spec.d_c < av_stop {
        return Err(GeometryError::CommunicationRangeTooShort { d_c: spec.d_c, required: av_stop });
    }
    Ok(())
}

/// Decide every flow's in-lane and out-lane. Straight lanes keep their
/// lateral position; left turns take the innermost outbound lanes; right turns
/// join the outermost lanes already fed by other flows, which makes each of
/// them merge with exactly one other path in the standard layout.
fn assign_lanes(approaches: &[LaneCounts; 4]) -> Vec<Vec<Flow>> {
    let fed_lanes = |dest: usize| -> u32 {
        let straights_from = &approaches[(dest + 2) % 4];
        let lefts_from = &approaches[(dest + 1) % 4];
        let straight_top =
            if straights_from.straight_only > 0 { straights_from.left_only + straights_from.straight_only } else { 0 };
        straight_top.max(lefts_from.left_only)
    };
    approaches
        .iter()
        .enumerate()
        .map(|(k, lanes)| {
            let mut flows = Vec::new();
            let right_dest = (k + 1) % 4;
            let first_right_out = fed_lanes(right_dest).saturating_sub(lanes.right_only);
            let first_right_in = lanes.left_only + lanes.straight_only;
            for r in (0..lanes.right_only).rev() {
                flows.push(Flow { turn: Turn::Right, lane: first_right_in + r, out_lane: first_right_out + r });
            }
            for m in (0..lanes.straight_only).rev() {
                let lane = lanes.left_only + m;
                flows.push(Flow { turn: Turn::Straight, lane, out_lane: lane });
            }
            for q in (0..lanes.left_only).rev() {
                flows.push(Flow { turn: Turn::Left, lane: q, out_lane: q });
            }
            flows
        })
        .collect()
}

/// Centerline of one flow in the frame of the south approach (traffic heading +y).
fn local_segments(flow: &Flow, spec: &IntersectionSpec, half: f64, upstream: f64) -> Vec<Segment> {
    let w = spec.lane_width;
    let x_in = (f64::from(flow.lane) + 0.5) * w;
    let offset_out = (f64::from(flow.out_lane) + 0.5) * w;
    let mut segs = vec![Segment {
        start: Pose { x: x_in, y: -half - upstream, theta: FRAC_PI_2 },
        length: upstream,
        curvature: 0.0,
    }];
    let push_line = |segs: &mut Vec<Segment>, length: f64| {
        if length > 1e-12 {
            let start = segs.last().map(Segment::end).expect("path has a first segment");
            segs.push(Segment { start, length, curvature: 0.0 });
        }
    };
    match flow.turn {
        Turn::Straight => push_line(&mut segs, 2.0 * half),
        Turn::Left | Turn::Right => {
            // Turning corner Q = (x_in, y_out); the arc is tangent to both legs.
            let (y_out, leg_out, curvature_sign) = match flow.turn {
                Turn::Left => (offset_out, x_in + half, 1.0),
                _ => (-offset_out, half - x_in, -1.0),
            };
            let leg_in = y_out + half;
            let radius = leg_in.min(leg_out).min(spec.max_turn_radius);
            push_line(&mut segs, leg_in - radius);
            let start = segs.last().map(Segment::end).expect("path has a first segment");
            segs.push(Segment { start, length: radius * FRAC_PI_2, curvature: curvature_sign / radius });
            push_line(&mut segs, leg_out - radius);
        }
    }
    push_line(&mut segs, spec.tail_length);
    segs
}

/// Sample `a` against `b` and return one conflict point per stretch where the
/// centerlines come closer than `clearance`.
fn conflict_points(a: &PathGeometry, b: &PathGeometry, clearance: f64) -> Vec<(AreaKind, Point)> {
    let shared_end = a.point_at(a.length).distance(b.point_at(b.length)) < 1e-6;
    let steps = (a.length / SAMPLE_STEP).ceil() as usize;
    let mut out = Vec::new();
    let mut run: Option<(f64, f64, f64)> = None; // (s_start, s_best, d_best)
    let mut close_run = |run: &mut Option<(f64, f64, f64)>, reaches_end: bool| {
        if let Some((s_start, s_best, _)) = run.take() {
            if shared_end && reaches_end {
                // Shared outbound lane: the conflict point is where the
                // centerlines first coincide.
                let merge = first_coincidence(a, b, s_start, a.length);
                out.push((AreaKind::Merge, a.point_at(merge)));
            } else {
                let s = refine_minimum(a, b, (s_best - SAMPLE_STEP).max(0.0), (s_best + SAMPLE_STEP).min(a.length));
                let p = a.point_at(s);
                let q = b.point_at(b.closest(p).1);
                out.push((AreaKind::Crossing, Point::new((p.x + q.x) / 2.0, (p.y + q.y) / 2.0)));
            }
        }
    };
    // Distance to `b` changes by at most the distance travelled along `a`,
    // so stretches whose coarse end samples are far enough apart can be
    // skipped without sampling them finely.
    let coarse: Vec<f64> = (0..=steps / COARSE_FACTOR + 1)
        .map(|c| b.closest(a.point_at((c * COARSE_FACTOR) as f64 * SAMPLE_STEP)).0)
        .collect();
    let margin = clearance + COARSE_FACTOR as f64 * SAMPLE_STEP;
    for k in 0..=steps {
        let c = k / COARSE_FACTOR;
        if coarse[c].min(coarse[c + 1]) >= margin {
            close_run(&mut run, false);
            continue;
        }
        let s = (k as f64 * SAMPLE_STEP).min(a.length);
        let d = b.closest(a.point_at(s)).0;
        if d < clearance {
            run = Some(match run {
                None => (s, s, d),
                Some((s0, sb, db)) => {
                    if d < db {
                        (s0, s, d)
                    } else {
                        (s0, sb, db)
                    }
                }
            });
        } else {
            close_run(&mut run, false);
        }
    }
    close_run(&mut run, true);
    out
}

fn refine_minimum(a: &PathGeometry, b: &PathGeometry, mut lo: f64, mut hi: f64) -> f64 {
    let f = |s: f64| b.closest(a.point_at(s)).0;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    (lo + hi) / 2.0
}

fn first_coincidence(a: &PathGeometry, b: &PathGeometry, lo: f64, hi: f64) -> f64 {
    let coincident = |s: f64| b.closest(a.point_at(s)).0 < 1e-7;
    // Coarse scan then bisection on the first coincident sample.
    let mut prev = lo;
    let mut s = lo;
    while s <= hi {
        if coincident(s) {
            let (mut l, mut r) = (prev, s);
            for _ in 0..80 {
                let m = 0.5 * (l + r);
                if coincident(m) {
                    r = m;
                } else {
                    l = m;
                }
            }
            return r;
        }
        prev = s;
        s += SAMPLE_STEP;
    }
    hi
}

/// Arc-length interval of `path` within `radius` of `center`: the connected
/// stretch around the closest point.
fn occupancy(path: &PathGeometry, center: Point, radius: f64) -> Occupancy {
    let inside = |s: f64| path.point_at(s).distance(center) <= radius;
    let s_c = path.closest(center).1;
    let edge = |step: f64| -> f64 {
        let mut s = s_c;
        loop {
            let next = (s + step).clamp(0.0, path.length);
            if next == s || !inside(next) {
                if next == s {
                    return s;
                }
                let (mut good, mut bad) = (s, next);
                for _ in 0..80 {
                    let m = 0.5 * (good + bad);
                    if inside(m) {
                        good = m;
                    } else {
                        bad = m;
                    }
                }
                return good;
            }
            s = next;
        }
    };
    Occupancy { path: path.id, s_in: edge(-SAMPLE_STEP), s_out: edge(SAMPLE_STEP) }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::Outside => "outside",
            Region::Communication => "communication",
            Region::SignalVisible => "signal_visible",
            Region::Junction => "junction",
            Region::Exited => "exited",
        };
        f.write_str(s)
    }
}

/// Normalize an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}
