use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fusepose::fusion::PairingPolicy;
use fusepose::lifter::{fit, InputKind};
use fusepose::pipeline::tensor::{decode, encode, read_pose, PoseTensor, TensorError};
use fusepose::pipeline::{
    export_training_set, load_training_set, run_pipeline, GeneratorConfig, Manifest,
    PipelineConfig, PipelineError, SampleStatus, SourceDataset, MANIFEST_FILE,
};
use fusepose::skeleton::{coco_body, h36m_17, FrameTag, Pose2DSequence, Pose3DSequence};
use fusepose::synth::CorruptionKnob;
use fusepose::toy::{write_dataset, ToySpec};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

/// Scenes in one dataset, mirrored motions in another: cross-only pairing
/// yields `scenes * motions` samples.
fn two_by_two(root: &Path, scenes: usize, motions: usize) -> PipelineConfig {
    let a = write_dataset(&root.join("studio"), &ToySpec::new("studio", scenes, 0, 1)).unwrap();
    let mut spec = ToySpec::new("outdoor", 0, motions, 2);
    spec.flip_axis = Some(1);
    let b = write_dataset(&root.join("outdoor"), &spec).unwrap();
    let mut cfg = PipelineConfig::new(vec![a, b]);
    cfg.pairing = PairingPolicy::CrossOnly;
    cfg.seed = 42;
    cfg.workers = 2;
    cfg.generator = GeneratorConfig::Mock {
        knob: CorruptionKnob {
            pose_drift_sigma: 40.0,
            drift_correlation: 0.9,
            failure_prob: 0.5,
        },
    };
    cfg
}

#[test]
fn two_by_two_cross_only_counts_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_by_two(tmp.path(), 2, 2);
    let out = tmp.path().join("run");
    let summary = run_pipeline(&cfg, &out).unwrap();
    assert_eq!(summary.attempted, 4);
    assert_eq!(summary.failed, 0);
    assert_eq!(summary.kept, 1);
    let m = Manifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.samples.len(), 4);
    assert_eq!(m.count(SampleStatus::Kept), 1);
    assert!(m.validate(&out).is_empty(), "{:?}", m.validate(&out));
    let ids: Vec<_> = m.samples.iter().map(|s| s.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    // The kept sample scores lowest.
    let kept = m.kept().next().unwrap().quality_score.unwrap();
    assert!(m.samples.iter().all(|s| s.quality_score.unwrap() >= kept));
}

#[test]
fn same_seed_gives_identical_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_by_two(tmp.path(), 2, 2);
    let a = run_pipeline(&cfg, &tmp.path().join("a")).unwrap().manifest;
    let mut cfg_b = cfg.clone();
    cfg_b.workers = 1;
    let b = run_pipeline(&cfg_b, &tmp.path().join("b")).unwrap().manifest;
    assert_eq!(a.without_timestamp(), b.without_timestamp());
    let mut cfg_c = cfg.clone();
    cfg_c.seed = 43;
    let c = run_pipeline(&cfg_c, &tmp.path().join("c")).unwrap().manifest;
    assert_ne!(a.without_timestamp(), c.without_timestamp());
}

#[test]
fn rerun_resumes_and_repairs_tampered_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_by_two(tmp.path(), 2, 2);
    let out = tmp.path().join("run");
    let first = run_pipeline(&cfg, &out).unwrap();
    assert_eq!(first.resumed, 0);
    let second = run_pipeline(&cfg, &out).unwrap();
    assert_eq!(second.resumed, 4);
    assert_eq!(first.manifest.without_timestamp(), second.manifest.without_timestamp());

    let victim = &second.manifest.samples[2];
    let path = out.join(&victim.files.as_ref().unwrap().detected_2d.path);
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    let issues = second.manifest.validate(&out);
    assert!(!issues.is_empty());
    assert!(issues.iter().all(|i| i.sample.as_deref() == Some(victim.id.as_str())));

    let third = run_pipeline(&cfg, &out).unwrap();
    assert_eq!(third.resumed, 3);
    assert!(third.manifest.validate(&out).is_empty());
    assert_eq!(first.manifest.without_timestamp(), third.manifest.without_timestamp());
}

#[test]
fn missing_file_is_reported_with_sample_id() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_by_two(tmp.path(), 1, 2);
    let out = tmp.path().join("run");
    let m = run_pipeline(&cfg, &out).unwrap().manifest;
    let s = &m.samples[0];
    fs::remove_file(out.join(&s.files.as_ref().unwrap().frames[0].path)).unwrap();
    let issues = m.validate(&out);
    assert_eq!(issues.len(), 1);
    assert_eq!(issues[0].sample.as_deref(), Some(s.id.as_str()));
    assert!(issues[0].problem.contains("missing"));
}

fn break_scene(descriptor: &Path, scene: usize) {
    let mut ds: SourceDataset = serde_json::from_str(&fs::read_to_string(descriptor).unwrap()).unwrap();
    ds.scenes[scene].ground_height = 1.0e7;
    fs::write(descriptor, serde_json::to_string(&ds).unwrap()).unwrap();
}

#[test]
fn failures_are_isolated_per_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_by_two(tmp.path(), 2, 2);
    break_scene(&cfg.sources[0], 1);
    let out = tmp.path().join("run");
    let summary = run_pipeline(&cfg, &out).unwrap();
    assert_eq!((summary.attempted, summary.failed, summary.kept), (4, 2, 1));
    for s in &summary.manifest.samples {
        if s.scene_ref.sample == "s1" {
            assert_eq!(s.status, SampleStatus::Failed);
            assert!(s.reason.as_ref().unwrap().contains("placement"));
        }
    }
    assert!(summary.manifest.validate(&out).is_empty());
}

#[test]
fn all_failed_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_by_two(tmp.path(), 1, 2);
    break_scene(&cfg.sources[0], 0);
    let r = run_pipeline(&cfg, &tmp.path().join("run"));
    assert!(matches!(r, Err(PipelineError::AllFailed(2))), "{r:?}");
}

#[test]
fn export_channels_copy_stored_tensors_and_feed_the_lifter() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = two_by_two(tmp.path(), 2, 3);
    cfg.filter_fraction = 0.5;
    let out = tmp.path().join("run");
    let m = run_pipeline(&cfg, &out).unwrap().manifest;
    assert_eq!(m.count(SampleStatus::Kept), 3);
    for (channel, pick) in [(InputKind::Gt, 0), (InputKind::Hpe, 1)] {
        let dir = tmp.path().join(format!("export-{channel}"));
        let index = export_training_set(&out.join(MANIFEST_FILE), channel, &dir).unwrap();
        assert_eq!(index.pairs.len(), 3);
        for (pair, s) in index.pairs.iter().zip(m.kept()) {
            let files = s.files.as_ref().unwrap();
            let stored = if pick == 0 { &files.guidance_2d } else { &files.detected_2d };
            assert_eq!(
                fs::read(dir.join(&pair.input)).unwrap(),
                fs::read(out.join(&stored.path)).unwrap()
            );
        }
        let (_, inputs, targets) = load_training_set(&dir).unwrap();
        let model = fit(&inputs, &targets, 1.0).unwrap();
        assert_eq!(model.input_schema().name(), "coco-body");
        assert_eq!(model.output_schema().name(), "h36m-17");
    }
}

#[test]
fn export_without_detections_is_missing_channel() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_by_two(tmp.path(), 1, 2);
    let out = tmp.path().join("run");
    let m = run_pipeline(&cfg, &out).unwrap().manifest;
    let kept = m.kept().next().unwrap();
    fs::remove_file(out.join(&kept.files.as_ref().unwrap().detected_2d.path)).unwrap();
    let r = export_training_set(&out.join(MANIFEST_FILE), InputKind::Hpe, &tmp.path().join("x"));
    assert!(matches!(r, Err(PipelineError::MissingChannel { .. })));
}

#[test]
fn reloaded_samples_keep_guidance_consistency() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = two_by_two(tmp.path(), 2, 2);
    cfg.filter_fraction = 1.0;
    let out = tmp.path().join("run");
    let m = run_pipeline(&cfg, &out).unwrap().manifest;
    let mapping = m.mapping().unwrap();
    for s in m.kept() {
        assert!(m.guidance_gap(&out, s, &mapping).unwrap() <= 1e-6);
        let f = m.load_sample(&out, s).unwrap();
        assert_eq!(f.gt_3d_camera.frame_tag(), FrameTag::Camera);
    }
}

/// Byte layout written field by field, independent of the library encoder.
fn reference_writer(schema: &str, kind: u8, flags: u8, t: u32, j: u32, payload: &[f32]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"PSEQ");
    b.extend_from_slice(&[1, 0]);
    b.push(kind);
    b.push(flags);
    b.extend_from_slice(&t.to_le_bytes());
    b.extend_from_slice(&j.to_le_bytes());
    b.extend_from_slice(&(schema.len() as u16).to_le_bytes());
    b.extend_from_slice(schema.as_bytes());
    for v in payload {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

#[test]
fn independently_written_files_read_back() {
    let payload: Vec<f32> = (0..2 * 17 * 3).map(|i| i as f32 * 1.25 - 7.0).collect();
    let bytes = reference_writer("h36m-17", 3, 0, 2, 17, &payload);
    let t = decode(&bytes).unwrap().into_3d().unwrap();
    assert_eq!(t.joint(1, 16), Vector3::new(payload[99] as f64, payload[100] as f64, payload[101] as f64));
    assert_eq!(encode(&PoseTensor::Pose3D(t)).unwrap(), bytes);

    let mut p2: Vec<f32> = (0..17 * 2).map(|i| i as f32).collect();
    p2.extend((0..17).map(|i| i as f32 / 16.0));
    let bytes = reference_writer("coco-body", 2, 1, 1, 17, &p2);
    let k = decode(&bytes).unwrap().into_2d().unwrap();
    assert_eq!(k.joint_confidence(0, 16), 1.0);
    assert_eq!(encode(&PoseTensor::Pose2D(k)).unwrap(), bytes);

    // 2D without a confidence block reads as fully confident.
    let bytes = reference_writer("coco-body", 2, 0, 1, 17, &p2[..34]);
    let k = decode(&bytes).unwrap().into_2d().unwrap();
    assert!(k.confidence().iter().all(|&c| c == 1.0));
}

#[test]
fn corrupted_files_give_distinct_errors() {
    let payload = vec![0.5f32; 17 * 3];
    let good = reference_writer("h36m-17", 3, 0, 1, 17, &payload);
    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"PSEX");
    assert!(matches!(decode(&magic), Err(TensorError::BadMagic { .. })));
    assert!(matches!(decode(&good[..good.len() - 1]), Err(TensorError::Truncated { .. })));
    assert!(matches!(decode(&good[..10]), Err(TensorError::Truncated { .. })));
    let mut nan = payload.clone();
    nan[7] = f32::INFINITY;
    let bad = reference_writer("h36m-17", 3, 0, 1, 17, &nan);
    assert!(matches!(decode(&bad), Err(TensorError::NonFinite { index: 7 })));
    let kind = reference_writer("h36m-17", 4, 0, 1, 17, &payload);
    assert!(matches!(decode(&kind), Err(TensorError::BadKind(4))));
    let dims = reference_writer("h36m-17", 3, 0, 1, 16, &payload[..48]);
    assert!(matches!(decode(&dims), Err(TensorError::JointCount { .. })));
    let unknown = reference_writer("nope", 3, 0, 1, 17, &payload);
    assert!(matches!(decode(&unknown), Err(TensorError::UnknownSchema(_))));
}

#[test]
fn read_pose_from_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("x.pseq");
    let s = Arc::new(h36m_17());
    let pose = Pose3DSequence::new(s, FrameTag::World, vec![Vector3::new(1.0, 2.0, 3.0); 17]).unwrap();
    fusepose::pipeline::tensor::write_pose(&p, &PoseTensor::Pose3D(pose.clone())).unwrap();
    assert_eq!(read_pose(&p).unwrap(), PoseTensor::Pose3D(pose));
    let missing: PathBuf = tmp.path().join("none.pseq");
    assert!(matches!(read_pose(&missing), Err(TensorError::Io { .. })));
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(
        frames in 1usize..5,
        seed in any::<u64>(),
        three_d in any::<bool>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tensor = if three_d {
            let s = Arc::new(h36m_17());
            let data = (0..frames * 17)
                .map(|_| Vector3::new(
                    rng.random::<f32>() as f64 * 4000.0,
                    rng.random::<f32>() as f64,
                    -(rng.random::<f32>() as f64),
                ).map(|v| v as f32 as f64))
                .collect();
            PoseTensor::Pose3D(Pose3DSequence::new(s, FrameTag::Camera, data).unwrap())
        } else {
            let s = Arc::new(coco_body());
            let data = (0..frames * 17)
                .map(|_| Vector2::new(rng.random::<f32>() as f64 * 640.0, rng.random::<f32>() as f64).map(|v| v as f32 as f64))
                .collect();
            let conf = (0..frames * 17).map(|_| rng.random::<f32>() as f64).collect();
            PoseTensor::Pose2D(Pose2DSequence::new(s, data, conf).unwrap())
        };
        let bytes = encode(&tensor).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &tensor);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }
}
