use spdcast::baselines::forecast_rw;
use spdcast::dataset::{
    load_series, load_weights, save_series, save_weights, simulate_daily_returns, simulate_series, SeriesFormat,
    SimulateConfig,
};
use spdcast::eval::{loss_panel, mcs, regime_split, trace_variance, BootstrapConfig, LossMetric};
use spdcast::frechet::FrechetMetric;
use spdcast::optim::{LossKind, TrainConfig};
use spdcast::portfolio::{gmv_path, naive_weights, portfolio_report, WeightPath};
use spdcast::respdnet::predict;
use spdcast::rolling::{rolling_forecast, ForecastRun, ModelKind, ModelSpec, RollingConfig};

fn small_config() -> RollingConfig {
    RollingConfig {
        window: 60,
        train: TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        ..RollingConfig::default()
    }
}

fn models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new("rw", ModelKind::RandomWalk),
        ModelSpec::new("favar", ModelKind::Favar { n_factors: None }),
        ModelSpec::new(
            "net",
            ModelKind::ReSpdNet {
                lags: 2,
                loss: LossKind::LogEuclidean,
                layer_dims: None,
            },
        ),
        ModelSpec::new(
            "geohar",
            ModelKind::GeoHar {
                metric: FrechetMetric::LogEuclidean,
                loss: LossKind::Mse,
                layer_dims: None,
            },
        ),
    ]
}

#[test]
fn simulate_forecast_evaluate_and_backtest() {
    let series = simulate_series(&SimulateConfig {
        n: 3,
        len: 90,
        seed: 21,
        ..SimulateConfig::default()
    })
    .unwrap();
    let cfg = small_config();
    let runs: Vec<ForecastRun> = models()
        .iter()
        .map(|m| rolling_forecast(&series, m, &cfg).unwrap())
        .collect();
    for run in &runs {
        assert_eq!(run.forecasts.len(), 30, "{}", run.model);
        assert_eq!(run.dates, series.dates()[60..]);
        assert!(run.forecasts.iter().all(|f| f.is_strictly_pd()));
    }
    assert_eq!(runs[0].forecasts[0], series.matrices()[59]);
    assert!(runs[2].network.is_some());

    for metric in LossMetric::ALL {
        let panel = loss_panel(&runs, &series, metric).unwrap();
        assert_eq!(panel.models.len(), 4);
        assert!(panel.mean_losses().iter().all(|l| l.is_finite() && *l >= 0.0));
        let res = mcs(
            &panel,
            0.1,
            &BootstrapConfig {
                replicates: 200,
                block_len: 3,
                seed: 1,
            },
        )
        .unwrap();
        assert!(!res.surviving.is_empty());
        assert!(res.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    let test_dates = runs[0].dates.clone();
    let split = regime_split(&trace_variance(&series, &test_dates).unwrap(), &test_dates, 0.9).unwrap();
    assert_eq!(split.calm.len() + split.turbulent.len(), test_dates.len());

    let returns = simulate_daily_returns(&series, 22).unwrap().select(&test_dates).unwrap();
    for run in &runs {
        for long_only in [false, true] {
            let path = gmv_path(&run.dates, &run.forecasts, long_only).unwrap();
            if long_only {
                assert!(path.weights.iter().all(|&w| w >= -1e-12));
            }
            let report = portfolio_report(&path, &returns).unwrap();
            assert!(report.annualized_std > 0.0 && report.avg_turnover >= 0.0);
        }
    }
    let naive = WeightPath::constant(test_dates, &naive_weights(3)).unwrap();
    assert!(portfolio_report(&naive, &returns).unwrap().annualized_std > 0.0);
}

#[test]
fn saved_series_and_weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let series = simulate_series(&SimulateConfig {
        n: 4,
        len: 75,
        seed: 2,
        ..SimulateConfig::default()
    })
    .unwrap();
    for (file, format) in [("s.bin", SeriesFormat::MatBin), ("s.csv", SeriesFormat::CsvLong)] {
        let path = dir.path().join(file);
        save_series(&path, &series, format).unwrap();
        let back = load_series(&path, SeriesFormat::from_path(&path)).unwrap();
        assert_eq!(back.dates(), series.dates());
        for (a, b) in back.matrices().iter().zip(series.matrices()) {
            assert_eq!(a.matrix(), b.matrix(), "{file}");
        }
    }

    let run = rolling_forecast(
        &series,
        &ModelSpec::new(
            "net",
            ModelKind::ReSpdNet {
                lags: 1,
                loss: LossKind::LogEuclidean,
                layer_dims: Some(vec![3, 4]),
            },
        ),
        &small_config(),
    )
    .unwrap();
    let net = run.network.unwrap();
    let path = dir.path().join("w.bin");
    save_weights(&path, &net).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back.spec, net.spec);
    let x = &series.matrices()[10];
    assert_eq!(predict(&back, x).unwrap(), predict(&net, x).unwrap());
}

#[test]
fn forecasts_saved_as_series_reload_for_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let series = simulate_series(&SimulateConfig {
        n: 2,
        len: 70,
        ..SimulateConfig::default()
    })
    .unwrap();
    let run = rolling_forecast(&series, &ModelSpec::new("rw", ModelKind::RandomWalk), &small_config()).unwrap();
    let path = dir.path().join("rw.bin");
    save_series(&path, &run.as_series().unwrap(), SeriesFormat::MatBin).unwrap();
    let reloaded = ForecastRun::from_series("rw", &load_series(&path, SeriesFormat::MatBin).unwrap());
    let a = loss_panel(&[run], &series, LossMetric::Frobenius).unwrap();
    let b = loss_panel(&[reloaded], &series, LossMetric::Frobenius).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(forecast_rw(&series, 59).unwrap(), series.matrices()[59]);
}
