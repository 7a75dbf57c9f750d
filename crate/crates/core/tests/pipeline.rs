mod common;

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use windrom::density::{BandwidthRule, KdeModel};
use windrom::ingest::write_tower_csv;
use windrom::model_file::{self, ModelFile, ModelFileError};
use windrom::pipeline::{self, PipelineError};
use windrom::synth::{ModeBundle, Provenance, ReducedModel};
use windrom::{InnerProduct, PipelineConfig, VelocityEnsemble};

use common::*;

const STEP_S: f64 = 10.0;

/// Two-sensor days sampled every 10 s: a daily cycle plus noise whose level
/// varies with the day.
fn write_days(dir: &Path, days: usize) -> Vec<PathBuf> {
    let rows = (86_400.0 / STEP_S) as usize;
    let t: Vec<f64> = (0..rows).map(|i| i as f64 * STEP_S).collect();
    (0..days)
        .map(|d| {
            let noise = normals(40 + d as u64, 2 * rows);
            let cycle = |i: usize| (2.0 * std::f64::consts::PI * i as f64 / rows as f64).sin();
            let low: Vec<f64> = (0..rows)
                .map(|i| 5.0 + 0.1 * d as f64 + cycle(i) + 0.4 * noise[i])
                .collect();
            let high: Vec<f64> = (0..rows)
                .map(|i| 7.0 + 0.15 * d as f64 + 1.3 * cycle(i) + 0.5 * noise[rows + i])
                .collect();
            let path = dir.join(format!("day{d:02}.csv"));
            let f = std::fs::File::create(&path).unwrap();
            write_tower_csv(f, &t, &[4.5, 10.0], &[low, high]).unwrap();
            path
        })
        .collect()
}

fn config(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        input: vec![dir.join("days")],
        output: Some(dir.join("model.bin")),
        ensemble_output: Some(dir.join("source.ens")),
        nz: 4,
        welch_segment: 32,
        inner_product: InnerProduct::SecondMoment,
        ..PipelineConfig::default()
    }
}

fn setup() -> (tempfile::TempDir, PipelineConfig) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("days")).unwrap();
    write_days(&dir.path().join("days"), 6);
    let cfg = config(dir.path());
    (dir, cfg)
}

#[test]
fn decompose_synthesize_diagnose() {
    let (dir, cfg) = setup();
    let summary = pipeline::cmd_decompose(&cfg).unwrap();
    assert!(summary.retained_modes >= 1);
    assert_eq!(summary.terms_per_mode.len(), summary.retained_modes);
    let text = summary.to_string();
    assert!(text.contains("retained M ="), "{text}");

    let synth = dir.path().join("synth.ens");
    pipeline::cmd_synthesize(cfg.output.as_ref().unwrap(), &synth, 6, 11, false).unwrap();
    let again = dir.path().join("again.ens");
    pipeline::cmd_synthesize(cfg.output.as_ref().unwrap(), &again, 6, 11, false).unwrap();
    assert_eq!(
        std::fs::read(&synth).unwrap(),
        std::fs::read(&again).unwrap()
    );

    let reports = dir.path().join("reports");
    let source = cfg.ensemble_output.as_ref().unwrap();
    let report = pipeline::cmd_diagnose(source, &synth, &reports, &cfg).unwrap();
    assert!(report.epsilon.is_finite() && report.epsilon >= 0.0);
    for name in [
        "psd_source.csv",
        "psd_synth.csv",
        "coherence_source.csv",
        "coherence_synth.csv",
        "epsilon.csv",
        "energy.csv",
    ] {
        let body = std::fs::read_to_string(reports.join(name)).unwrap();
        assert!(body.lines().count() >= 2, "{name} is empty");
    }
    let psd = std::fs::read_to_string(reports.join("psd_synth.csv")).unwrap();
    assert!(psd.starts_with("# segment_len=32"));
}

#[test]
fn source_against_itself_has_zero_error() {
    let (dir, cfg) = setup();
    pipeline::cmd_decompose(&cfg).unwrap();
    let source = cfg.ensemble_output.as_ref().unwrap();
    let report = pipeline::cmd_diagnose(source, source, &dir.path().join("r"), &cfg).unwrap();
    assert_eq!(report.epsilon, 0.0);
}

#[test]
fn fluctuation_free_synthetic_has_unit_error() {
    let (_dir, cfg) = setup();
    let source = pipeline::load_input(&cfg).unwrap();
    let p = source.points();
    let mut flat = source.clone();
    for (i, v) in flat.data.iter_mut().enumerate() {
        *v = 6.0 + (i % p) as f64 * 0.01;
    }
    let report = pipeline::diagnose(&source, &flat, &cfg).unwrap();
    assert!((report.epsilon - 1.0).abs() < 1e-12, "{}", report.epsilon);
}

#[test]
fn full_rank_projected_round_trip_is_lossless() {
    let (dir, mut cfg) = setup();
    cfg.bd_threshold = 1.0;
    cfg.kle_threshold = 1.0;
    pipeline::cmd_decompose(&cfg).unwrap();
    let rebuilt = dir.path().join("rebuilt.ens");
    pipeline::cmd_synthesize(cfg.output.as_ref().unwrap(), &rebuilt, 0, 0, true).unwrap();
    let report = pipeline::cmd_diagnose(
        cfg.ensemble_output.as_ref().unwrap(),
        &rebuilt,
        &dir.path().join("r"),
        &cfg,
    )
    .unwrap();
    assert!(report.epsilon <= 1e-6, "{}", report.epsilon);
}

#[test]
fn missing_input_names_the_path() {
    let (dir, mut cfg) = setup();
    let missing = dir.path().join("nowhere.csv");
    cfg.input = vec![missing.clone()];
    let err = pipeline::cmd_decompose(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Io { .. }), "{err:?}");
    assert!(
        err.to_string().contains(&missing.display().to_string()),
        "{err}"
    );
}

#[test]
fn truncated_model_is_corrupt() {
    let (dir, cfg) = setup();
    pipeline::cmd_decompose(&cfg).unwrap();
    let model = cfg.output.as_ref().unwrap();
    let bytes = std::fs::read(model).unwrap();
    let cut = dir.path().join("cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let err = pipeline::cmd_synthesize(&cut, &dir.path().join("x.ens"), 2, 0, false).unwrap_err();
    assert!(
        matches!(
            err,
            PipelineError::ModelFile(ModelFileError::CorruptModel(_))
        ),
        "{err:?}"
    );
    assert!(pipeline::cmd_info(&cut).is_err());
}

#[test]
fn info_lists_modes_and_terms() {
    let (_dir, cfg) = setup();
    let summary = pipeline::cmd_decompose(&cfg).unwrap();
    let info = pipeline::cmd_info(cfg.output.as_ref().unwrap()).unwrap();
    assert_eq!(info.retained_modes, summary.retained_modes);
    assert_eq!(info.terms_per_mode, summary.terms_per_mode);
    assert_eq!(info.file_size, summary.file_size);
    let text = info.to_string();
    assert!(
        text.contains(&format!("M = {}", summary.retained_modes)),
        "{text}"
    );
    assert!(text.contains("mode 1: N ="), "{text}");
}

#[test]
fn model_bytes_do_not_depend_on_paths() {
    let (dir, cfg) = setup();
    pipeline::cmd_decompose(&cfg).unwrap();
    let other = PipelineConfig {
        output: Some(dir.path().join("elsewhere").join("m.bin")),
        ensemble_output: None,
        ..cfg.clone()
    };
    std::fs::create_dir(dir.path().join("elsewhere")).unwrap();
    pipeline::cmd_decompose(&other).unwrap();
    assert_eq!(
        std::fs::read(cfg.output.as_ref().unwrap()).unwrap(),
        std::fs::read(other.output.as_ref().unwrap()).unwrap()
    );
}

#[test]
fn ensemble_input_matches_csv_input() {
    let (dir, cfg) = setup();
    pipeline::cmd_decompose(&cfg).unwrap();
    let from_ensemble = PipelineConfig {
        input: vec![cfg.ensemble_output.clone().unwrap()],
        output: Some(dir.path().join("m2.bin")),
        ensemble_output: None,
        ..cfg.clone()
    };
    pipeline::cmd_decompose(&from_ensemble).unwrap();
    assert_eq!(
        std::fs::read(cfg.output.as_ref().unwrap()).unwrap(),
        std::fs::read(from_ensemble.output.as_ref().unwrap()).unwrap()
    );
}

/// A model with the dimensions of a 28-day, 144-interval, 20 x 600 study
/// retaining 5 temporal modes of 7 terms each. File size depends only on
/// the dimensions, so the values are arbitrary.
fn paper_scale_model() -> ReducedModel {
    let (n, m, modes, terms) = (28, 144, 5, 7);
    let g = grid(20, 600, 2.0, 600.0);
    let p = g.points();
    let values = normals(5, p);
    let bundle = |i: usize| ModeBundle {
        abar: values.clone(),
        lambda: (0..n).map(|j| 1.0 / (1 + i + j) as f64).collect(),
        x: DMatrix::from_fn(p, terms, |r, c| values[(r + c) % p]),
        kdes: (0..terms)
            .map(|j| {
                KdeModel::fit(
                    normals(100 + (i * terms + j) as u64, n),
                    BandwidthRule::SilvermanApprox,
                )
                .unwrap()
            })
            .collect(),
    };
    ReducedModel {
        grid: g,
        n_intervals: m,
        n_training: n,
        inner_product: InnerProduct::MeanProduct,
        vbar: values.clone(),
        mu: (0..m).map(|i| 1.0 / (1 + i) as f64).collect(),
        temporal: (0..modes)
            .map(|i| temporal_cosine(m, i + 1, 600.0))
            .collect(),
        modes: (0..modes).map(bundle).collect(),
        provenance: Provenance {
            source_hash: [7; 32],
            config: PipelineConfig::default().echo(),
        },
    }
}

#[test]
fn paper_scale_model_fits_in_five_megabytes() {
    let file = ModelFile {
        model: paper_scale_model(),
        temporal_covariance: None,
    };
    let bytes = file.to_bytes();
    let info = pipeline::model_info(&file, bytes.len() as u64);
    assert!(bytes.len() <= 5_000_000, "{} bytes", bytes.len());
    assert_eq!(info.raw_ensemble_bytes, 28 * 144 * 12_000 * 8);
    // Uncompressed binary64 storage of 35 spatial functions plus 5 mode means
    // and the mean field gives a ratio just under 100.
    let ratio = info.raw_ensemble_bytes as f64 / bytes.len() as f64;
    assert!(ratio > 97.0, "ratio {ratio}");
    assert_eq!(ModelFile::from_bytes(&bytes).unwrap().to_bytes(), bytes);
}

#[test]
fn model_file_rejects_ensemble_file() {
    let (_dir, cfg) = setup();
    pipeline::cmd_decompose(&cfg).unwrap();
    let ens: VelocityEnsemble =
        model_file::read_ensemble(cfg.ensemble_output.as_ref().unwrap()).unwrap();
    assert_eq!(ens.grid.nz(), 4);
    let err = ModelFile::read(cfg.ensemble_output.as_ref().unwrap()).unwrap_err();
    assert!(matches!(err, ModelFileError::CorruptModel(_)), "{err:?}");
}
