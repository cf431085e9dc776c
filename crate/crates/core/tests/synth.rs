use std::fs;
use std::path::Path;
use std::sync::Arc;

use fusepose::pipeline::tensor::read_pose;
use fusepose::skeleton::{coco_body, Pose2DSequence};
use fusepose::synth::{
    detect, frame_file_name, generate, mock_generate, synth_detect, CorruptionKnob,
    DetectorNoiseConfig, GeneratorAdapter, GeneratorRequest, MockGenerator, PixelDetector,
    SubprocessGenerator, SynthError, SyntheticDetector, TRUTH_SIDECAR,
};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Spread-out figure so joint discs never overlap.
fn figure(frames: usize, width: f64, height: f64) -> Pose2DSequence {
    let s = Arc::new(coco_body());
    let mut data = Vec::new();
    for t in 0..frames {
        for j in 0..s.len() {
            let col = (j % 6) as f64;
            let row = (j / 6) as f64;
            data.push(Vector2::new(
                width * (0.12 + 0.15 * col) + 1.37 * t as f64,
                height * (0.2 + 0.25 * row) + 0.61 * t as f64,
            ));
        }
    }
    Pose2DSequence::with_full_confidence(s, data).unwrap()
}

fn request(dir: &Path, guidance: Pose2DSequence, seed: u64) -> GeneratorRequest {
    GeneratorRequest {
        reference_frame_paths: vec![],
        guidance,
        output_dir: dir.to_path_buf(),
        seed,
        image_width: 320,
        image_height: 240,
    }
}

fn hash_dir(dir: &Path) -> String {
    let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(&p).unwrap());
    }
    hex::encode(h.finalize())
}

#[test]
fn mock_generation_writes_deterministic_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let knob = CorruptionKnob {
        pose_drift_sigma: 30.0,
        drift_correlation: 0.8,
        failure_prob: 0.5,
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    mock_generate(&request(&a, figure(5, 320.0, 240.0), 11), knob).unwrap();
    mock_generate(&request(&b, figure(5, 320.0, 240.0), 11), knob).unwrap();
    for t in 0..5 {
        assert!(a.join(frame_file_name(t)).exists());
    }
    assert!(!a.join(frame_file_name(5)).exists());
    assert_eq!(hash_dir(&a), hash_dir(&b));
}

#[test]
fn zero_knob_sidecar_equals_guidance() {
    let tmp = tempfile::tempdir().unwrap();
    let g = figure(4, 320.0, 240.0);
    mock_generate(&request(tmp.path(), g.clone(), 3), CorruptionKnob::default()).unwrap();
    let side = read_pose(&tmp.path().join(TRUTH_SIDECAR)).unwrap().into_2d().unwrap();
    for (p, q) in side.data().iter().zip(g.data()) {
        assert!((p - q).norm() < 1e-4);
    }
}

#[test]
fn full_failure_drifts_beyond_sigma() {
    let g = figure(30, 2000.0, 1500.0);
    let knob = CorruptionKnob {
        pose_drift_sigma: 20.0,
        drift_correlation: 0.5,
        failure_prob: 1.0,
    };
    for seed in 0..20 {
        let d = fusepose::synth::apply_drift(&g, &knob, 2000, seed).unwrap();
        let mean = d
            .data()
            .iter()
            .zip(g.data())
            .map(|(p, q)| (p - q).norm())
            .sum::<f64>()
            / g.data().len() as f64;
        assert!(mean > knob.pose_drift_sigma, "seed {seed}: {mean}");
    }
}

#[test]
fn pixel_detector_reads_back_rendered_positions() {
    let tmp = tempfile::tempdir().unwrap();
    let g = figure(3, 320.0, 240.0);
    mock_generate(&request(tmp.path(), g.clone(), 1), CorruptionKnob::default()).unwrap();
    let det = PixelDetector::new(g.schema().clone());
    let found = detect(tmp.path(), &det, 0).unwrap();
    for (p, q) in found.data().iter().zip(g.data()) {
        assert!((p - q).norm() <= 1.0, "{p} vs {q}");
    }
    assert!(found.confidence().iter().all(|&c| c > 0.5 && c <= 1.0));
}

#[test]
fn noiseless_synthetic_detector_returns_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let g = figure(3, 320.0, 240.0);
    let knob = CorruptionKnob {
        pose_drift_sigma: 50.0,
        drift_correlation: 0.3,
        failure_prob: 1.0,
    };
    mock_generate(&request(tmp.path(), g.clone(), 9), knob).unwrap();
    let side = read_pose(&tmp.path().join(TRUTH_SIDECAR)).unwrap().into_2d().unwrap();
    let det = SyntheticDetector::new(g.schema().clone(), DetectorNoiseConfig::noiseless()).unwrap();
    assert_eq!(detect(tmp.path(), &det, 4).unwrap(), side);
}

#[test]
fn empty_frame_directory_is_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let det = PixelDetector::new(Arc::new(coco_body()));
    assert!(matches!(detect(tmp.path(), &det, 0), Err(SynthError::MissingInput(_))));
}

#[test]
fn schema_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = MockGenerator::new(Arc::new(fusepose::skeleton::h36m_17()), CorruptionKnob::default())
        .unwrap();
    let r = generate(&request(tmp.path(), figure(2, 320.0, 240.0), 0), &gen);
    assert!(matches!(r, Err(SynthError::SchemaMismatch { .. })));
}

#[test]
fn missing_reference_frame_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut req = request(tmp.path(), figure(2, 320.0, 240.0), 0);
    req.reference_frame_paths = vec![tmp.path().join("nope.png")];
    let r = mock_generate(&req, CorruptionKnob::default());
    assert!(matches!(r, Err(SynthError::UnreadableReference { .. })));
}

#[test]
fn unreadable_png_reference_falls_back_to_gray() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("ref.png");
    fs::write(&bogus, b"not a png").unwrap();
    let out = tmp.path().join("out");
    let mut req = request(&out, figure(1, 320.0, 240.0), 0);
    req.reference_frame_paths = vec![bogus];
    mock_generate(&req, CorruptionKnob::default()).unwrap();
    let img = fusepose::synth::raster::read_png(&out.join(frame_file_name(0))).unwrap();
    assert_eq!(img.get(0, 0), [128, 128, 128]);
}

/// Generator that writes one frame fewer than requested.
struct ShortGenerator(MockGenerator);

impl GeneratorAdapter for ShortGenerator {
    fn name(&self) -> &str {
        "short"
    }
    fn schema(&self) -> &Arc<fusepose::skeleton::JointSchema> {
        self.0.schema()
    }
    fn run(&self, req: &GeneratorRequest) -> fusepose::synth::Result<()> {
        self.0.run(req)?;
        let last = req.guidance.num_frames() - 1;
        fs::remove_file(req.output_dir.join(frame_file_name(last))).unwrap();
        Ok(())
    }
}

#[test]
fn faulty_adapter_frame_count_error() {
    let tmp = tempfile::tempdir().unwrap();
    let g = figure(4, 320.0, 240.0);
    let gen = ShortGenerator(MockGenerator::new(g.schema().clone(), CorruptionKnob::default()).unwrap());
    let r = generate(&request(tmp.path(), g, 0), &gen);
    assert!(matches!(r, Err(SynthError::FrameCount { expected: 4, found: 3 })));
}

#[test]
fn corrupt_output_frame_is_unreadable_output() {
    struct Garbage;
    impl GeneratorAdapter for Garbage {
        fn name(&self) -> &str {
            "garbage"
        }
        fn schema(&self) -> &Arc<fusepose::skeleton::JointSchema> {
            static S: std::sync::OnceLock<Arc<fusepose::skeleton::JointSchema>> = std::sync::OnceLock::new();
            S.get_or_init(|| Arc::new(coco_body()))
        }
        fn run(&self, req: &GeneratorRequest) -> fusepose::synth::Result<()> {
            for t in 0..req.guidance.num_frames() {
                fs::write(req.output_dir.join(frame_file_name(t)), b"xx").unwrap();
            }
            Ok(())
        }
    }
    let tmp = tempfile::tempdir().unwrap();
    let r = generate(&request(tmp.path(), figure(2, 320.0, 240.0), 0), &Garbage);
    assert!(matches!(r, Err(SynthError::UnreadableOutput { .. })));
}

#[cfg(unix)]
#[test]
fn subprocess_exit_failure_is_adapter_error() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = SubprocessGenerator::new(
        "sh".into(),
        vec!["-c".into(), "echo boom >&2; exit 7".into(), "adapter".into()],
        Arc::new(coco_body()),
    );
    let r = generate(&request(tmp.path(), figure(2, 320.0, 240.0), 0), &gen);
    match r {
        Err(SynthError::AdapterFailed { reason, .. }) => assert!(reason.contains("boom")),
        other => panic!("{other:?}"),
    }
}

#[cfg(unix)]
#[test]
fn subprocess_generator_receives_request_file() {
    let tmp = tempfile::tempdir().unwrap();
    // Copies pre-rendered frames and checks the request names the guidance file.
    let src = tmp.path().join("src");
    let g = figure(2, 320.0, 240.0);
    mock_generate(&request(&src, g.clone(), 0), CorruptionKnob::default()).unwrap();
    let script = format!(
        "grep -q guidance_file \"$0\" && cp {}/frame_*.png \"$(dirname \"$0\")\"",
        src.display()
    );
    let gen = SubprocessGenerator::new("sh".into(), vec!["-c".into(), script], g.schema().clone());
    let out = tmp.path().join("out");
    generate(&request(&out, g, 0), &gen).unwrap();
    assert!(out.join("guidance_2d.pseq").exists());
}

fn normalized_errors(cfg: &DetectorNoiseConfig) -> Vec<f64> {
    let s = Arc::new(coco_body());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames = 60;
    let data: Vec<_> = (0..frames * s.len())
        .map(|_| Vector2::new(rng.random_range(200.0..1800.0), rng.random_range(200.0..1300.0)))
        .collect();
    let truth = Pose2DSequence::with_full_confidence(s, data).unwrap();
    let det = synth_detect(&truth, cfg, 2000).unwrap();
    det.data().iter().zip(truth.data()).map(|(p, q)| (p - q).norm()).collect()
}

#[test]
fn default_noise_is_in_real_detector_range() {
    let e = normalized_errors(&DetectorNoiseConfig::default());
    assert!(e.len() >= 1000);
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    assert!((15.0..=35.0).contains(&mean), "mean {mean}");
}

#[test]
fn outliers_make_the_tail_heavy() {
    let cfg = DetectorNoiseConfig {
        miss_prob: 0.0,
        ..Default::default()
    };
    let mut e = normalized_errors(&cfg);
    e.sort_by(f64::total_cmp);
    let q = |p: f64| e[((e.len() - 1) as f64 * p).round() as usize];
    assert!(q(0.99) - q(0.90) >= cfg.outlier_radius.0, "{} {}", q(0.99), q(0.90));
}
