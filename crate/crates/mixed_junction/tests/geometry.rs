use mixed_junction::geometry::{
    build_intersection, path_distance, GeometryError, IntersectionModel, IntersectionSpec, LaneCounts, PathGeometry,
    Point, Region, Turn,
};
use mixed_junction::Params;

fn four_way() -> IntersectionModel {
    build_intersection(&IntersectionSpec::four_way(), &Params::default()).unwrap()
}

fn straight_only(arms: [bool; 4]) -> IntersectionModel {
    let one = LaneCounts { straight_only: 1, ..LaneCounts::NONE };
    let spec = IntersectionSpec {
        approaches: arms.map(|on| if on { one } else { LaneCounts::NONE }),
        // A one-lane box is small; keep the conflict disk clear of the stop lines.
        corner_margin: 12.0,
        ..IntersectionSpec::default()
    };
    build_intersection(&spec, &Params::default()).unwrap()
}

fn samples(path: &PathGeometry, step: f64) -> Vec<(f64, Point)> {
    let n = (path.length / step) as usize;
    (0..=n).map(|i| i as f64 * step).map(|s| (s, path.point_at(s))).collect()
}

#[test]
fn perpendicular_straights_match_proximity_sweep() {
    let model = straight_only([true, true, false, false]);
    assert_eq!(model.paths.len(), 2);
    assert_eq!(model.areas.len(), 1);
    let area = &model.areas[0];

    // Oracle: closest approach of the two centerlines at 1 cm resolution.
    let (a, b) = (samples(&model.paths[0], 0.01), samples(&model.paths[1], 0.01));
    let mut best = (f64::INFINITY, Point::new(0.0, 0.0));
    for &(_, p) in &a {
        for &(_, q) in b.iter().step_by(10) {
            let d = p.distance(q);
            if d < best.0 {
                best = (d, p);
            }
        }
    }
    assert!(best.0 < 0.1, "centerlines cross");
    assert!(area.center.distance(best.1) < 0.1, "area centred on the crossing");

    // Occupancy intervals: the stretch of each centerline inside the disk.
    for (path, pts) in [(&model.paths[0], &a), (&model.paths[1], &b)] {
        let inside: Vec<f64> =
            pts.iter().filter(|(_, p)| p.distance(area.center) <= area.radius).map(|(s, _)| *s).collect();
        let occ = area.interval_for(path.id).unwrap();
        assert!((occ.s_in - inside[0]).abs() <= 0.011, "{} vs {}", occ.s_in, inside[0]);
        assert!((occ.s_out - inside[inside.len() - 1]).abs() <= 0.011);
    }
}

#[test]
fn single_straight_has_no_areas() {
    let model = straight_only([true, false, false, false]);
    assert_eq!(model.paths.len(), 1);
    assert!(model.areas.is_empty());
}

#[test]
fn right_turns_conflict_with_exactly_one_path() {
    let model = four_way();
    assert_eq!(model.right_turn_paths(), vec![0, 4, 8, 12]);
    for p in model.right_turn_paths() {
        assert_eq!(model.conflicting_paths(p).len(), 1, "path {p}");
    }
}

#[test]
fn conflict_relation() {
    let model = four_way();
    // Opposing straight-through movements never meet.
    assert!(model.conflicts(1, 9).is_empty());
    let n = model.paths.len();
    for a in 0..n {
        assert!(!model.in_conflict(a, a));
        for b in 0..n {
            let ab: Vec<usize> = model.conflicts(a, b).iter().map(|x| x.id).collect();
            let ba: Vec<usize> = model.conflicts(b, a).iter().map(|x| x.id).collect();
            assert_eq!(ab, ba);
        }
    }
    // A crossing straight (south) and straight (east) do conflict.
    assert!(model.in_conflict(1, 5));
}

#[test]
fn signed_path_distance() {
    assert_eq!(path_distance(10.0, 35.0), 25.0);
    assert_eq!(path_distance(35.0, 35.0), 0.0);
    assert_eq!(path_distance(35.0, 10.0), -25.0);
}

#[test]
fn regions() {
    let model = four_way();
    assert_eq!(model.region_of(Point::new(0.0, 0.0)), Region::Junction);
    let path = &model.paths[1];
    let upstream = |d: f64| path.point_at(path.entry_point - d);
    assert_eq!(model.region_of(upstream(model.d_c + 1.0)), Region::Outside);
    assert_eq!(model.region_of(upstream((model.d_h + model.d_c) / 2.0)), Region::Communication);
    assert_eq!(model.region_of(upstream(model.d_h / 2.0)), Region::SignalVisible);
    assert_eq!(model.region_at(1, path.exit_point + 1.0), Region::Exited);
    for p in &model.paths {
        for s in [0.0, p.entry_point - model.d_h / 2.0, (p.entry_point + p.exit_point) / 2.0] {
            // Both classifications agree along the centerline.
            assert_eq!(model.region_of(p.point_at(s)), model.region_at(p.id, s), "path {} s {s}", p.id);
        }
    }
}

#[test]
fn occupancy_is_sound() {
    let model = four_way();
    for area in &model.areas {
        for occ in &area.intervals {
            let path = &model.paths[occ.path];
            let mut s = occ.s_in;
            while s <= occ.s_out {
                assert!(path.point_at(s).distance(area.center) <= area.radius + 1e-6);
                s += 0.05;
            }
        }
    }
}

#[test]
fn turn_radii_respect_minimum() {
    let params = Params::default();
    for p in &four_way().paths {
        for seg in &p.segments {
            if seg.curvature != 0.0 {
                assert!(1.0 / seg.curvature.abs() >= params.rho_min);
            }
        }
        assert!(p.turn != Turn::Straight || p.segments.iter().all(|s| s.curvature == 0.0));
    }
}

#[test]
fn range_assumptions_are_enforced() {
    let params = Params::default();
    let spec = IntersectionSpec { d_h: 60.0, d_c: 60.0, ..IntersectionSpec::default() };
    assert!(matches!(build_intersection(&spec, &params), Err(GeometryError::RegionOrder { .. })));
    let spec = IntersectionSpec { d_h: 40.0, ..IntersectionSpec::default() };
    assert!(matches!(build_intersection(&spec, &params), Err(GeometryError::SignalRangeTooShort { .. })));
    let spec = IntersectionSpec { d_h: 45.0, d_c: 50.0, ..IntersectionSpec::default() };
    assert!(matches!(build_intersection(&spec, &params), Err(GeometryError::CommunicationRangeTooShort { .. })));
}
