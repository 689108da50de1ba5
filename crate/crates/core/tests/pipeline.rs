use cloud_layers::flow::{self, WlkConfig};
use cloud_layers::imaging::{self, Frame, Grid, SegmentationMask};
use cloud_layers::pipeline::{process_sequence, Detector, PipelineConfig, PipelineError};
use cloud_layers::synth::{self, SynthSpec};

fn sequence(spec: &SynthSpec) -> Vec<(Frame, SegmentationMask)> {
    synth::generate(spec)
        .unwrap()
        .into_iter()
        .map(|f| (f.frame, f.mask))
        .collect()
}

fn accuracy(spec: &SynthSpec, cfg: &PipelineConfig) -> f64 {
    let recs = process_sequence(&sequence(spec), cfg).unwrap();
    let hits = recs.iter().filter(|r| r.chosen == spec.layers_at(r.t)).count();
    hits as f64 / recs.len() as f64
}

#[test]
fn one_record_per_frame_after_the_first() {
    let recs = process_sequence(&sequence(&SynthSpec::one_layer(4)), &PipelineConfig::default()).unwrap();
    assert_eq!(recs.len(), 30);
    assert_eq!(recs.first().unwrap().t, 1);
    assert_eq!(recs.last().unwrap().t, 30);
    assert!(recs.iter().all(|r| r.error.is_none() && (1..=2).contains(&r.chosen)));
}

#[test]
fn single_layer_sequence_is_detected() {
    assert!(accuracy(&SynthSpec::one_layer(1), &PipelineConfig::default()) >= 0.9);
}

#[test]
fn two_layer_sequence_is_detected() {
    assert!(accuracy(&SynthSpec::two_layer(1), &PipelineConfig::default()) >= 0.9);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let seq = sequence(&SynthSpec::change_point(2, 5));
    let cfg = PipelineConfig {
        seed: 9,
        ..PipelineConfig::default()
    };
    let a = serde_json::to_string(&process_sequence(&seq[..10], &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&process_sequence(&seq[..10], &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn written_sequence_gives_the_same_records() {
    let spec = SynthSpec {
        frames: 6,
        ..SynthSpec::two_layer(3)
    };
    let frames = synth::generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_sequence(dir.path(), &spec, &frames).unwrap();
    let loaded = imaging::load_sequence(&manifest).unwrap();
    let cfg = PipelineConfig::default();
    let direct = process_sequence(&sequence(&spec), &cfg).unwrap();
    let reread = process_sequence(&loaded, &cfg).unwrap();
    assert_eq!(direct.len(), 5);
    for (a, b) in direct.iter().zip(&reread) {
        assert_eq!(a.chosen, b.chosen);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x.posterior_sum - y.posterior_sum).abs() <= 1e-6 * (1.0 + x.posterior_sum.abs()));
        }
    }
    let truth = synth::read_truth(&dir.path().join("truth.json")).unwrap();
    assert_eq!(truth.frames.len(), 6);
    assert_eq!(truth.layers_at(5), Some(2));
}

#[test]
fn switches_soon_after_a_change_point_without_stickiness() {
    let change = 15;
    let cfg = PipelineConfig {
        beta: 0.0,
        ..PipelineConfig::default()
    };
    let recs = process_sequence(&sequence(&SynthSpec::change_point(1, change)), &cfg).unwrap();
    let first_two = recs.iter().find(|r| r.t >= change && r.chosen == 2).map(|r| r.t);
    assert!(matches!(first_two, Some(t) if t <= change + 2), "first L=2 at {first_two:?}");
}

#[test]
fn one_layer_merged_flow_is_the_unweighted_flow() {
    let seq = sequence(&SynthSpec::two_layer(5));
    let (prev, cur) = (&seq[3], &seq[4]);
    let mut det = Detector::new(PipelineConfig::default()).unwrap();
    let out = det.process_frame((&prev.0, &prev.1), (&cur.0, &cur.1)).unwrap();
    let one = out.artifacts.iter().find(|a| a.l == 1).unwrap();

    let cfg = WlkConfig::default();
    let (a, b) = flow::to_intensity((&prev.0, &prev.1), (&cur.0, &cur.1)).unwrap();
    let deriv = flow::derivatives(&a, &b, cfg.sigma).unwrap();
    let (rows, cols) = cur.1.shape();
    let ones = Grid::from_fn(rows, cols, |i, j| if cur.1.get(i, j) { 1.0 } else { 0.0 });
    let direct = flow::wlk_solve(&deriv, &[ones], &cur.1, &cfg).unwrap();
    assert_eq!(one.flow, direct.fields[0]);
}

#[test]
fn records_ignore_unmasked_pixel_values() {
    let seq = sequence(&SynthSpec {
        frames: 4,
        ..SynthSpec::two_layer(6)
    });
    // Replace every sky pixel with a different value that stays below the
    // cloud threshold.
    let perturbed: Vec<(Frame, SegmentationMask)> = seq
        .iter()
        .map(|(f, m)| {
            let (rows, cols) = f.shape();
            let grid = Grid::from_fn(rows, cols, |i, j| {
                if m.get(i, j) {
                    f.temperatures().get(i, j)
                } else {
                    200.0 + ((i * 7 + j * 13) % 17) as f64
                }
            });
            (Frame::new(f.index, grid).unwrap(), m.clone())
        })
        .collect();
    let cfg = PipelineConfig::default();
    let a = process_sequence(&seq, &cfg).unwrap();
    let b = process_sequence(&perturbed, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn sparse_frames_are_flagged_and_keep_the_state() {
    let mut seq = sequence(&SynthSpec {
        frames: 5,
        ..SynthSpec::one_layer(2)
    });
    let (rows, cols) = seq[2].1.shape();
    seq[2].1 = SegmentationMask::from_fn(rows, cols, |i, j| i < 3 && j < 3);
    let recs = process_sequence(&seq, &PipelineConfig::default()).unwrap();
    assert_eq!(recs.len(), 4);
    let skipped = &recs[1];
    assert_eq!(skipped.t, 2);
    assert!(skipped.error.as_deref().unwrap().contains("cloud pixels"));
    assert_eq!(skipped.chosen, recs[0].chosen);
    assert!(recs[2].error.is_none());

    let mut det = Detector::new(PipelineConfig::default()).unwrap();
    let err = det.process_frame((&seq[1].0, &seq[1].1), (&seq[2].0, &seq[2].1)).unwrap_err();
    assert!(matches!(err, PipelineError::InsufficientMask { found: 9, required: 289, .. }));
}
