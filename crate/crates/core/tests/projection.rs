use std::fs;

use clearance::ingest::{image_path, load_sequence_with_own_labels};
use clearance::pipeline::{run_pipeline, PipelineConfig};
use clearance::project::{project_points, render_overlays, MARKER_COLOR};
use clearance::synth::{camera_mount, generate_scene, write_scene, SceneSpec};
use clearance::{CoordinateFrame, LabeledPointCloud, Point3, SemanticClass};

#[test]
fn point_ahead_is_seen_by_exactly_one_camera() {
    let scene = generate_scene(&SceneSpec::branch_scene(1)).unwrap();
    let seq = &scene.sequence;
    let frame = seq.frames[0].frame_index();
    let vehicle = seq.frames[0].pose;
    let ahead = vehicle.apply(Point3::new(20.0, 0.0, 0.0)).unwrap();
    let cloud = LabeledPointCloud::uniform(
        vec![ahead],
        SemanticClass::Vegetation,
        "w",
        CoordinateFrame::World,
    );
    let hits = project_points(seq, &cloud, &[frame]).unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].camera_id, seq.cameras[0].camera_id);
    let _ = camera_mount(0);
}

#[test]
fn overlays_differ_from_source_only_at_markers() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SceneSpec::branch_scene(2);
    spec.cameras.write_images = true;
    let scene = generate_scene(&spec).unwrap();
    let input = dir.path().join("in");
    write_scene(&scene, &input).unwrap();
    let cfg = PipelineConfig {
        input: input.clone(),
        output: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&cfg).unwrap();
    assert!(!report.hits.is_empty());

    let mut changed_images = 0;
    for cam in &scene.sequence.cameras {
        let frame = report.annotated_frames[0];
        let src = image::open(image_path(&input, &cam.camera_id, frame))
            .unwrap()
            .to_rgb8();
        let out = image::open(
            cfg.output
                .join("overlays")
                .join(format!("{frame}_{}.png", cam.camera_id)),
        )
        .unwrap()
        .to_rgb8();
        let mut changed = 0;
        for (a, b) in src.pixels().zip(out.pixels()) {
            if a != b {
                assert_eq!(*b, MARKER_COLOR);
                changed += 1;
            }
        }
        let hits = report
            .hits
            .iter()
            .filter(|h| h.camera_id == cam.camera_id)
            .count();
        assert_eq!(changed > 0, hits > 0, "{}", cam.camera_id);
        changed_images += usize::from(changed > 0);
    }
    assert!(changed_images >= 1);
}

#[test]
fn missing_images_give_csv_only() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&SceneSpec::branch_scene(3)).unwrap();
    let input = dir.path().join("in");
    write_scene(&scene, &input).unwrap();
    let (seq, _) = load_sequence_with_own_labels(&input).unwrap();
    let out = dir.path().join("out");
    let written = render_overlays(&seq, &[0], &[], &out).unwrap();
    assert_eq!(written.len(), seq.cameras.len());
    assert!(written.iter().all(|p| p.extension().unwrap() == "csv"));
    assert!(!out.join("overlays").exists());
    let text = fs::read_to_string(&written[0]).unwrap();
    assert_eq!(text, "frame,camera,u,v,point_index\n");
}
