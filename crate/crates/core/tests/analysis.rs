use din_core::analysis::{
    cost_report, export_pooled_features, export_responses, response_rows, ReferenceCost,
};
use din_core::data_io::checkpoint::parameter_scalar_count;
use din_core::data_io::{save_checkpoint, synth_order_task, Sample, SyntheticTaskConfig};
use din_core::{count_parameters, ModelParams, ModelShape, OptimizerState, TrainConfig};

fn samples() -> Vec<Sample> {
    let mut s = synth_order_task(&SyntheticTaskConfig {
        samples_per_class: 3,
        val_samples_per_class: 1,
        seed: 8,
        ..SyntheticTaskConfig::default()
    })
    .unwrap()
    .train;
    s.reverse();
    s
}

fn shape() -> ModelShape {
    ModelShape {
        input_dim: 16,
        reduced_dim: 4,
        segments: 8,
        widths: vec![2, 3, 4],
        channels: 5,
        classes: 2,
    }
}

#[test]
fn count_matches_checkpoint_scalars() {
    let dir = tempfile::tempdir().unwrap();
    for shape in [shape(), ModelShape { classes: 7, channels: 2, ..shape() }] {
        let params = ModelParams::init(&shape, 1).unwrap();
        let config = TrainConfig::default();
        let opt = OptimizerState::new(&params, &config).unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &params, &opt, &config, 0).unwrap();
        assert_eq!(parameter_scalar_count(&path).unwrap() as u64, count_parameters(&shape).total());
    }
}

#[test]
fn full_size_report_total() {
    let report = cost_report(
        &ModelShape::full_size(27),
        vec![ReferenceCost {
            name: "other".into(),
            parameters: Some(1.0e7),
            flops: None,
        }],
    )
    .unwrap();
    assert_eq!(report.parameter_count, 1_609_095);
    let text = report.to_string();
    assert!(text.contains("1609095"));
    assert!(text.contains("other"));
}

#[test]
fn response_rows_have_window_length_and_sorted_ids() {
    let params = ModelParams::init(&shape(), 2).unwrap();
    let data = samples();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resp.csv");
    let rows = export_responses(&params, &data, 3, &path).unwrap();
    assert_eq!(rows.len(), data.len());
    assert!(rows.iter().all(|r| r.intensities.len() == 6));
    assert!(rows.windows(2).all(|w| w[0].sample_id < w[1].sample_id));

    let mut reader = csv::Reader::from_path(&path).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), 8 + 6);
    assert_eq!(&header[0], "sample_id");
    assert_eq!(reader.records().count(), data.len());

    assert!(response_rows(&params, &data, 5).is_err());
}

#[test]
fn zero_model_has_flat_zero_responses() {
    let params = ModelParams::zeros(&shape()).unwrap();
    let rows = response_rows(&params, &samples(), 2).unwrap();
    assert!(rows.iter().all(|r| r.intensities == vec![0.0; 7] && r.argmax_window == 0));
}

#[test]
fn pooled_features_and_mean_vector() {
    let params = ModelParams::init(&shape(), 3).unwrap();
    let mut data = samples();
    let mut twin = data[0].clone();
    twin.id = "zz-twin".into();
    data.push(twin);
    let dir = tempfile::tempdir().unwrap();
    let rows = export_pooled_features(&params, &data, dir.path().join("f.csv")).unwrap();
    assert!(rows.iter().all(|r| r.features.len() == 15 && r.frame_mean.len() == 4));
    let first = rows.iter().find(|r| r.sample_id == data[0].id).unwrap();
    let last = rows.last().unwrap();
    assert_eq!(first.features, last.features);

    let pass = params.forward_eval(&data[0].features).unwrap();
    let x = pass.conv.input.matrix();
    for c in 0..4 {
        let mean = (0..8).map(|r| x.get(r, c)).sum::<f64>() / 8.0;
        assert!((mean - first.frame_mean[c]).abs() < 1e-12);
    }
}

#[test]
fn full_size_feature_length() {
    let shape = ModelShape::full_size(27);
    assert_eq!(shape.channels * shape.widths.len(), 1280);
}
