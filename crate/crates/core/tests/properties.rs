use maxcon::io::{format_cloud, parse_cloud, CloudFile};
use maxcon::objectives::HeadingLayer;
use maxcon::search::{search, Execution, SearchIndex};
use maxcon::{brute_force_oracle, Accumulator, Error, MapCloud, Objective, Point3, Pose2, ScanCloud, SearchSpec, UnitNormal3};
use proptest::prelude::*;

fn spec() -> SearchSpec {
    SearchSpec {
        half_extent_xy: 0.3,
        heading_half_range: 0.5f64.to_radians(),
        ..SearchSpec::default()
    }
}

fn normal() -> impl Strategy<Value = UnitNormal3> {
    (-1.0..1.0f64, -1.0..1.0f64, -0.3..0.3f64)
        .prop_filter_map("non-zero normal", |(x, y, z)| UnitNormal3::new(x, y, z))
}

fn point(span: f64) -> impl Strategy<Value = Point3> {
    (-span..span, -span..span, 0.0..0.3f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn map_cloud() -> impl Strategy<Value = MapCloud> {
    prop::collection::vec((point(1.0), normal()), 1..120).prop_map(|v| {
        let (points, normals) = v.into_iter().unzip();
        MapCloud::new(points, normals).unwrap()
    })
}

fn scan_cloud() -> impl Strategy<Value = ScanCloud> {
    prop::collection::vec((point(1.0), prop::option::weighted(0.9, normal())), 1..25).prop_map(|v| {
        let (points, normals) = v.into_iter().unzip();
        ScanCloud::new(points, Some(normals)).unwrap()
    })
}

fn layers(scan: &ScanCloud, map: &MapCloud, init: &Pose2, objective: Objective, exec: Execution) -> Vec<HeadingLayer> {
    let index = SearchIndex::new(map, spec()).unwrap();
    match search(scan, &index, init, objective, exec) {
        Ok(r) => r.accumulator.layers,
        Err(Error::EmptyConsensus) => Accumulator::new(objective, &spec()).layers,
        Err(e) => panic!("{e}"),
    }
}

fn assert_close(a: &[HeadingLayer], b: &[HeadingLayer]) {
    for (a, b) in a.iter().zip(b) {
        match (a, b) {
            (HeadingLayer::Count(a), HeadingLayer::Count(b)) => assert_eq!(a, b),
            (HeadingLayer::Helmert(a), HeadingLayer::Helmert(b)) => {
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    assert_eq!(x.n_obs, y.n_obs);
                    assert!((x.sxx - y.sxx).abs() < 1e-9);
                    assert!((x.sxy - y.sxy).abs() < 1e-9);
                    assert!((x.syy - y.syy).abs() < 1e-9);
                }
            }
            _ => panic!("objective mismatch"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn search_matches_brute_force(
        scan in scan_cloud(),
        map in map_cloud(),
        tx in -0.2..0.2f64,
        ty in -0.2..0.2f64,
        theta in -0.1..0.1f64,
        helmert in any::<bool>(),
    ) {
        let objective = if helmert { Objective::Helmert } else { Objective::Count };
        let init = Pose2::new(tx, ty, theta);
        let oracle = brute_force_oracle(&scan, &map, &init, &spec(), objective).unwrap();
        assert_close(&layers(&scan, &map, &init, objective, Execution::Parallel), &oracle.layers);
    }

    #[test]
    fn serial_and_parallel_agree(scan in scan_cloud(), map in map_cloud(), helmert in any::<bool>()) {
        let objective = if helmert { Objective::Helmert } else { Objective::Count };
        let init = Pose2::identity();
        assert_close(
            &layers(&scan, &map, &init, objective, Execution::Serial),
            &layers(&scan, &map, &init, objective, Execution::Parallel),
        );
    }

    #[test]
    fn cloud_text_round_trips(map in map_cloud()) {
        let text = format_cloud(&CloudFile::from(&map)).unwrap();
        let back = parse_cloud(&text).unwrap().into_map().unwrap();
        prop_assert_eq!(back.len(), map.len());
        for (a, b) in back.points.iter().zip(&map.points) {
            prop_assert!(a.dist_linf(b) <= 5e-7);
        }
        for (a, b) in back.normals.iter().zip(&map.normals) {
            prop_assert!(a.dot(b) > 1.0 - 1e-9);
        }
    }
}
