use std::collections::{BTreeSet, HashMap};
use std::fs;

use clearance::aggregate::{select_frame_indices, ConcatConfig};
use clearance::pipeline::{
    analyze, run_pipeline, run_sweep, sweep_sequence, PipelineConfig, SweepParameter, INLIERS_FILE,
    REPORT_FILE,
};
use clearance::synth::{generate_scene, write_scene, SceneSpec};
use clearance::{Error, Point3, SemanticClass};

fn bits(p: &Point3) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

fn found_indices(
    world: &clearance::LabeledPointCloud,
    found: &clearance::LabeledPointCloud,
) -> BTreeSet<usize> {
    let lookup: HashMap<[u64; 3], usize> = world
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| (bits(p), i))
        .collect();
    found.points().iter().map(|p| lookup[&bits(p)]).collect()
}

#[test]
fn branch_scene_matches_ground_truth_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneSpec::branch_scene(1)).unwrap();
    write_scene(&scene, &dir.path().join("in")).unwrap();
    let cfg = PipelineConfig {
        input: dir.path().join("in"),
        output: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&cfg).unwrap();
    assert!(report.check_invariants());
    let truth: BTreeSet<usize> = scene.truth.inliers.iter().copied().collect();
    assert_eq!(found_indices(&scene.world, &report.inliers), truth);

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.output.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(json["counts"]["vegetation_inliers"], 50);
    let rows = fs::read_to_string(cfg.output.join(INLIERS_FILE)).unwrap();
    assert_eq!(rows.lines().count(), 50);
    assert!(rows.lines().all(|l| l.ends_with(" 5")));
}

#[test]
fn sparse_frames_see_their_share_of_the_branch() {
    let mut spec = SceneSpec::branch_scene(2);
    spec.frame_count = 20;
    // Two of twenty frames must still cover the road densely enough for a
    // closed contour.
    spec.road.density = 100.0;
    let scene = generate_scene(&spec).unwrap();
    let cfg = PipelineConfig::default();
    let report = analyze(&scene.sequence, &cfg).unwrap();
    let positions = select_frame_indices(20, cfg.concat.step);
    let expect: BTreeSet<usize> = scene
        .truth
        .inliers_in_frames(&positions)
        .into_iter()
        .collect();
    assert_eq!(report.counts.frames_concatenated, 2);
    assert!(!expect.is_empty());
    assert_eq!(found_indices(&scene.world, &report.inliers), expect);
}

#[test]
fn scene_without_road_fails_at_filter_stage() {
    let mut spec = SceneSpec::branch_scene(3);
    spec.road.density = 1e-9;
    let scene = generate_scene(&spec).unwrap();
    assert!(scene
        .world
        .classes()
        .iter()
        .all(|c| *c != SemanticClass::Road));
    match analyze(&scene.sequence, &PipelineConfig::default()) {
        Err(Error::Stage {
            stage: "filter",
            source,
        }) => assert!(matches!(*source, Error::NoRoadPoints)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn failed_run_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        input: dir.path().join("missing"),
        output: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    assert!(run_pipeline(&cfg).is_err());
    assert!(!cfg.output.join(REPORT_FILE).exists());
}

#[test]
fn thread_count_does_not_change_results() {
    let mut spec = SceneSpec::branch_scene(4);
    spec.frame_count = 5;
    let scene = generate_scene(&spec).unwrap();
    let run = |threads| {
        let cfg = PipelineConfig {
            threads,
            concat: ConcatConfig { step: 1 },
            ..PipelineConfig::default()
        };
        clearance::pipeline::with_threads(threads, || analyze(&scene.sequence, &cfg))
            .unwrap()
            .unwrap()
    };
    let (a, b) = (run(1), run(8));
    assert_eq!(a.counts, b.counts);
    assert_eq!(a.inliers, b.inliers);
    assert_eq!(a.contour, b.contour);
    assert_eq!(a.hits, b.hits);
}

#[test]
fn step_sweep_reproduces_frame_counts() {
    let mut spec = SceneSpec::straight_road(40.0, 6.0, 3.0);
    spec.frame_count = 80;
    let scene = generate_scene(&spec).unwrap();
    let table = sweep_sequence(
        &scene.sequence,
        &PipelineConfig::default(),
        SweepParameter::Step,
        &[1.0, 5.0, 10.0, 20.0, 40.0],
    );
    let frames: Vec<usize> = table.rows.iter().map(|r| r.frames.unwrap()).collect();
    assert_eq!(frames, vec![80, 16, 8, 4, 2]);
}

#[test]
fn threshold_sweep_is_strictly_decreasing() {
    let scene = generate_scene(&SceneSpec::branch_scene(5)).unwrap();
    let table = sweep_sequence(
        &scene.sequence,
        &PipelineConfig::default(),
        SweepParameter::Threshold,
        &[60.0, 90.0, 120.0, 150.0],
    );
    let counts: Vec<usize> = table
        .rows
        .iter()
        .map(|r| r.contour_points.unwrap())
        .collect();
    assert!(counts.windows(2).all(|w| w[1] < w[0]), "{counts:?}");
}

#[test]
fn sweep_rows_record_failures_and_csv_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneSpec::branch_scene(6)).unwrap();
    write_scene(&scene, &dir.path().join("in")).unwrap();
    let cfg = PipelineConfig {
        input: dir.path().join("in"),
        output: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    let table = run_sweep(&cfg, SweepParameter::Samples, &[200.0, 500.0]).unwrap();
    assert!(table.rows.iter().all(|r| r.error.is_none()));
    let csv = fs::read_to_string(cfg.output.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let empty = run_sweep(&cfg, SweepParameter::Radius, &[]).unwrap();
    assert!(empty.rows.is_empty());
    assert_eq!(
        fs::read_to_string(cfg.output.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );

    assert!(run_sweep(&cfg, SweepParameter::Step, &[1.5]).is_err());
}

#[test]
fn shuffled_sweep_values_permute_rows() {
    let scene = generate_scene(&SceneSpec::branch_scene(7)).unwrap();
    let cfg = PipelineConfig::default();
    let counts = |values: &[f64]| {
        let table = sweep_sequence(&scene.sequence, &cfg, SweepParameter::Radius, values);
        let mut rows: Vec<(u64, Option<usize>, Option<usize>)> = table
            .rows
            .iter()
            .map(|r| (r.value.to_bits(), r.contour_points, r.vegetation_inliers))
            .collect();
        rows.sort();
        rows
    };
    assert_eq!(counts(&[2.0, 6.0, 10.0]), counts(&[10.0, 2.0, 6.0]));
}
