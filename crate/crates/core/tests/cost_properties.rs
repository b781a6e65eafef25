use costenv_core::domain::{EnvConfig, TaskName};
use costenv_core::engine::instance_library;
use costenv_core::querygen::{build_queries, PreferenceSpace, Split};
use costenv_core::toolgen::{composite_noise, derive_seed};

#[test]
fn composite_noise_scales_with_sqrt_k() {
    for sigma in [0.1, 1.0] {
        for k in 2..=5u32 {
            let draws: Vec<f64> = (0..10_000)
                .map(|i| composite_noise(derive_seed(7, "noise", &format!("t{k}_{i}")), sigma, k))
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var =
                draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
            let expected = sigma * (k as f64).sqrt();
            assert!(
                (var.sqrt() - expected).abs() / expected < 0.05,
                "sigma {sigma} k {k}: {}",
                var.sqrt()
            );
        }
    }
}

#[test]
fn costs_depend_on_query_id_and_are_pure() {
    let config = EnvConfig::default();
    let space = PreferenceSpace::builtin(TaskName::Attraction);
    let qs = build_queries(config.seed, &space, Split::Test);
    let tables: Vec<Vec<_>> = qs
        .iter()
        .take(101)
        .map(|q| {
            instance_library(&config, &space, q)
                .unwrap()
                .tools
                .iter()
                .map(|t| t.cost)
                .collect()
        })
        .collect();
    for pair in tables.windows(2) {
        assert_ne!(pair[0], pair[1]);
    }
    let again: Vec<_> = instance_library(&config, &space, &qs[0])
        .unwrap()
        .tools
        .iter()
        .map(|t| t.cost)
        .collect();
    assert_eq!(again, tables[0]);
}

#[test]
fn unfiltered_combination_counts() {
    let mut total = 0;
    for task in TaskName::ALL {
        let space = PreferenceSpace::builtin(task);
        space.validate().unwrap();
        let test = build_queries(0, &space, Split::Test);
        let train = build_queries(0, &space, Split::Train);
        assert_eq!(test.len() + train.len(), 1552);
        assert!(test
            .iter()
            .all(|q| train.iter().all(|t| t.combination != q.combination)));
        let mut texts: Vec<_> = test.iter().chain(&train).map(|q| q.text.clone()).collect();
        texts.sort();
        texts.dedup();
        assert_eq!(texts.len(), 1552);
        total += texts.len();
    }
    assert_eq!(total, 9312);
}
