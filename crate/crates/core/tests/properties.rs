mod common;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

use windrom::bd::{self, InnerProduct, Truncation};
use windrom::density::{BandwidthRule, KdeModel};
use windrom::diagnostics::{self, covariance_error, WelchConfig};
use windrom::ingest::{
    interpolate_vertical, read_tower_csv, write_tower_csv, TowerSeries, VelocityEnsemble,
};
use windrom::model_file::{self, ModelFile};
use windrom::pipeline;
use windrom::synth;
use windrom::PipelineConfig;

use common::*;

fn small_config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

fn tower() -> impl Strategy<Value = TowerSeries> {
    (2usize..5, 2usize..24).prop_flat_map(|(sensors, rows)| {
        (
            prop::collection::vec(0.5f64..4.0, sensors),
            prop::collection::vec(prop::collection::vec(0.0f64..25.0, rows), sensors),
        )
            .prop_map(move |(gaps, speeds)| {
                let heights: Vec<f64> = gaps
                    .iter()
                    .scan(2.0, |h, g| {
                        *h += g;
                        Some(*h)
                    })
                    .collect();
                TowerSeries::new((0..rows).map(|t| t as f64).collect(), speeds, heights).unwrap()
            })
    })
}

fn permuted(ens: &VelocityEnsemble, order: &[usize]) -> VelocityEnsemble {
    let data = order
        .iter()
        .flat_map(|&k| ens.realization(k).to_vec())
        .collect();
    VelocityEnsemble::new(data, ens.grid.clone(), ens.n_realizations, ens.n_intervals).unwrap()
}

fn mu_of(ens: VelocityEnsemble, kind: InnerProduct) -> Vec<f64> {
    let fluct = bd::remove_mean(ens);
    bd::decompose(&fluct, kind, Truncation::Energy(1.0))
        .unwrap()
        .0
        .mu
}

fn kind_strategy() -> impl Strategy<Value = InnerProduct> {
    (0u8..3).prop_map(|i| InnerProduct::from_index(i).unwrap())
}

proptest! {
    #![proptest_config(small_config())]

    #[test]
    fn tower_csv_round_trip(t in tower()) {
        let mut buf = Vec::new();
        write_tower_csv(&mut buf, &t.timestamps, &t.sensor_heights, &t.speeds).unwrap();
        let back = read_tower_csv(buf.as_slice(), None).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn interpolation_commutes_with_affine_maps(t in tower(), a in -3.0f64..3.0, b in -10.0f64..10.0, f in 0.0f64..1.0) {
        let (lo, hi) = (t.sensor_heights[0], *t.sensor_heights.last().unwrap());
        let levels = [lo, lo + f * (hi - lo), hi];
        let mapped = TowerSeries {
            speeds: t.speeds.iter().map(|s| s.iter().map(|v| a * v + b).collect()).collect(),
            ..t.clone()
        };
        let plain = interpolate_vertical(&t, &levels).unwrap();
        let after = interpolate_vertical(&mapped, &levels).unwrap();
        for (p, q) in plain.series.iter().zip(&after.series) {
            for (x, y) in p.iter().zip(q) {
                assert_relative_eq!(a * x + b, *y, epsilon = 1e-9, max_relative = 1e-12);
            }
        }
        prop_assert_eq!(&plain.series[0], &t.speeds[0]);
        prop_assert_eq!(plain.series.last().unwrap(), t.speeds.last().unwrap());
    }

    #[test]
    fn bd_spectrum_ignores_realization_order(seed in 0u64..1000, kind in kind_strategy(), rot in 1usize..5) {
        let ens = random_ensemble(seed, 5, 6, 3, 4);
        let order: Vec<usize> = (0..5).map(|k| (k + rot) % 5).rev().collect();
        let a = mu_of(ens.clone(), kind);
        let b = mu_of(permuted(&ens, &order), kind);
        let scale = a[0].max(1e-300);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn bd_spectrum_scales_quadratically(seed in 0u64..1000, kind in kind_strategy(), c in 0.1f64..10.0) {
        let ens = random_ensemble(seed, 4, 5, 3, 4);
        let mut scaled = ens.clone();
        scaled.data.iter_mut().for_each(|v| *v *= c);
        let a = mu_of(ens, kind);
        let b = mu_of(scaled, kind);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((c * c * x - y).abs() <= 1e-9 * c * c * a[0]);
        }
    }

    #[test]
    fn temporal_covariance_is_symmetric_psd(seed in 0u64..1000, kind in kind_strategy()) {
        let fluct = bd::remove_mean(random_ensemble(seed, 4, 7, 2, 5));
        let cov = bd::temporal_covariance(&fluct, kind);
        let c = &cov.c;
        prop_assert!((c - c.transpose()).amax() <= 1e-12 * c.amax());
        let eig = c.clone().symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|&l| l >= -1e-10 * c.amax()));
    }

    #[test]
    fn kde_ignores_observation_order(obs in prop::collection::vec(-50.0f64..50.0, 3..40), x in -60.0f64..60.0) {
        prop_assume!(obs.iter().any(|&v| v != obs[0]));
        let mut rev = obs.clone();
        rev.reverse();
        let a = KdeModel::fit(obs, BandwidthRule::SilvermanApprox).unwrap();
        let b = KdeModel::fit(rev, BandwidthRule::SilvermanApprox).unwrap();
        prop_assert!((a.bandwidth() - b.bandwidth()).abs() <= 1e-12 * a.bandwidth());
        let (pa, pb) = (a.pdf(x).unwrap(), b.pdf(x).unwrap());
        prop_assert!((pa - pb).abs() <= 1e-12 * pa.max(1e-300));
        prop_assert!(a.bandwidth() > 0.0);
    }

    #[test]
    fn covariance_error_is_a_relative_norm(entries in prop::collection::vec(-5.0f64..5.0, 16), noise in prop::collection::vec(-1.0f64..1.0, 16), c in 0.1f64..10.0) {
        let m = DMatrix::from_row_slice(4, 4, &entries);
        prop_assume!(m.norm() > 1e-6);
        let d = DMatrix::from_row_slice(4, 4, &noise);
        let hat = &m + &d;
        let e = covariance_error(&m, &hat).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert_eq!(covariance_error(&m, &m).unwrap(), 0.0);
        prop_assert!((e - d.norm() / m.norm()).abs() <= 1e-12 * (1.0 + e));
        let scaled = covariance_error(&(&m * c), &(&hat * c)).unwrap();
        prop_assert!((scaled - e).abs() <= 1e-12 * (1.0 + e));
        prop_assert_eq!(e == 0.0, d.norm() == 0.0);
    }

    #[test]
    fn psd_is_quadratic_and_coherence_bounded(seed in 0u64..1000, a in 0.1f64..5.0) {
        let cfg = WelchConfig { segment_len: 32, ..WelchConfig::default() };
        let x = normals(seed, 160);
        let y: Vec<f64> = normals(seed + 1, 160).iter().zip(&x).map(|(n, v)| 0.5 * v + n).collect();
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let p = diagnostics::psd(&x, 2.0, &cfg).unwrap();
        let q = diagnostics::psd(&ax, 2.0, &cfg).unwrap();
        for (u, v) in p.psd.iter().zip(&q.psd) {
            prop_assert!((a * a * u - v).abs() <= 1e-10 * (1.0 + v));
        }
        let xy = diagnostics::coherence(&x, &y, 2.0, &cfg).unwrap();
        let yx = diagnostics::coherence(&y, &x, 2.0, &cfg).unwrap();
        for (u, v) in xy.coherence.iter().zip(&yx.coherence) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(u));
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_rank_model_reproduces_its_own_covariance(seed in 0u64..1000, kind in kind_strategy()) {
        let ens = random_ensemble(seed, 4, 5, 3, 4);
        let cfg = PipelineConfig {
            inner_product: kind,
            bd_threshold: 1.0,
            kle_threshold: 1.0,
            ..PipelineConfig::default()
        };
        let d = pipeline::decompose_ensemble(ens.clone(), &cfg).unwrap();
        let rebuilt = synth::reconstruct_training(&d.model);
        let c = pipeline::ensemble_covariance(&ens, kind);
        let c_hat = pipeline::ensemble_covariance(&rebuilt, kind);
        prop_assert!(covariance_error(&c, &c_hat).unwrap() <= 1e-6);
    }

    #[test]
    fn model_file_bytes_survive_a_round_trip(seed in 0u64..1000, store in any::<bool>(), terms in 1usize..3) {
        let cfg = PipelineConfig {
            bd_modes: Some(2),
            kle_terms: Some(terms),
            inner_product: InnerProduct::SecondMoment,
            ..PipelineConfig::default()
        };
        let d = pipeline::decompose_ensemble(random_ensemble(seed, 4, 5, 2, 3), &cfg).unwrap();
        let bytes = d.model_file(store).to_bytes();
        let back = ModelFile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        let ens = random_ensemble(seed, 2, 3, 2, 3);
        let round = model_file::ensemble_from_bytes(&model_file::ensemble_to_bytes(&ens)).unwrap();
        prop_assert_eq!(round, ens);
    }

    #[test]
    fn synthetic_realizations_do_not_depend_on_ensemble_size(seed in any::<u64>(), n in 1usize..5) {
        let cfg = PipelineConfig { inner_product: InnerProduct::SecondMoment, ..PipelineConfig::default() };
        let d = pipeline::decompose_ensemble(random_ensemble(7, 5, 4, 2, 3), &cfg).unwrap();
        let big = synth::generate_ensemble(&d.model, n + 2, seed);
        let small = synth::generate_ensemble(&d.model, n, seed);
        prop_assert_eq!(&big.data[..small.data.len()], &small.data[..]);
        let last = synth::generate_realization(&d.model, synth::derive_seed(seed, n as u64 + 1));
        prop_assert_eq!(big.realization(n + 1), &last[..]);
    }

    #[test]
    fn config_echo_round_trips(
        seed in any::<u64>(),
        n_synth in 1usize..500,
        bd in 0.01f64..=1.0,
        kle in 0.01f64..=1.0,
        modes in prop::option::of(1usize..10),
        kind in kind_strategy(),
        detrend in any::<bool>(),
        interval in prop::sample::select(vec![300.0, 600.0, 900.0, 1200.0, 3600.0]),
    ) {
        let cfg = PipelineConfig {
            seed,
            n_synth,
            bd_threshold: bd,
            kle_threshold: kle,
            bd_modes: modes,
            inner_product: kind,
            welch_detrend: detrend,
            interval_s: interval,
            ..PipelineConfig::default()
        };
        prop_assert_eq!(PipelineConfig::parse(&cfg.echo()).unwrap(), cfg);
    }
}
