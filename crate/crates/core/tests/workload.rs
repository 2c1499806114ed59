use fairserve_core::workload::{
    build_app_profiles, generate_trace, read_records, write_records, AppConfig, AppId, Behavior,
    CallSampler, GraphBucket, LengthModel, PopulationConfig, Trace, UserGroup,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{DiscreteCDF, Poisson};

fn one_app(mix: Vec<GraphBucket>) -> Vec<AppConfig> {
    vec![AppConfig {
        app_id: AppId(0),
        rpm_limit: 60,
        graph_mix: mix,
        length_model: LengthModel::default(),
        think_time_ms: 0.0,
        stages: None,
    }]
}

fn population(users: u32, rate: f64, abusive_fraction: f64) -> PopulationConfig {
    PopulationConfig {
        groups: vec![UserGroup {
            app_id: AppId(0),
            users,
            rate_per_s: rate,
            priority: 1.0,
        }],
        abusive_fraction,
        abusive_multiplier: 20.0,
    }
}

#[test]
fn two_to_ten_bucket_mean_input() {
    let bucket = GraphBucket::range(1.0, 2, 10, 21352.13, 241.19);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut sampler = CallSampler::default();
    let n = 10_000;
    let (mut input, mut output, mut calls) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let cs = sampler.sample_calls(&mut rng, &bucket, LengthModel::default());
        assert!((2..=10).contains(&cs.len()));
        input += cs.iter().map(|c| c.input_tokens as f64).sum::<f64>();
        output += cs.iter().map(|c| c.output_tokens_true as f64).sum::<f64>();
        calls += cs.len() as f64;
    }
    let mean_in = input / n as f64;
    assert!((mean_in - 21352.13).abs() / 21352.13 < 0.05, "{mean_in}");
    let mean_out = output / n as f64;
    assert!((mean_out - 241.19).abs() / 241.19 < 0.05, "{mean_out}");
    assert!((calls / n as f64 - 6.0).abs() < 0.1);
}

#[test]
fn poisson_head_arrivals() {
    let p = Poisson::new(10.0).unwrap();
    let interval = (p.inverse_cdf(0.005), p.inverse_cdf(0.995));
    assert_eq!(interval, (3, 19));

    let profiles = build_app_profiles(&one_app(vec![GraphBucket::single(1.0, 1, 10.0, 5.0)])).unwrap();
    let pop = population(1, 1.0, 0.0);
    let runs = 2_000;
    let mut inside = 0;
    let mut total = 0;
    for seed in 0..runs {
        let n = generate_trace(&profiles, &pop, seed, 10_000.0).unwrap().interactions.len() as u64;
        total += n;
        inside += (interval.0..=interval.1).contains(&n) as u32;
    }
    let mean = total as f64 / runs as f64;
    assert!((mean - 10.0).abs() < 0.3, "{mean}");
    assert!(inside as f64 / runs as f64 > 0.98);
}

#[test]
fn abusive_users_are_a_fixed_fraction_at_inflated_rate() {
    let profiles = build_app_profiles(&one_app(vec![GraphBucket::single(1.0, 1, 10.0, 5.0)])).unwrap();
    let tr = generate_trace(&profiles, &population(40, 0.5, 0.1), 3, 1000.0).unwrap();
    let abusive: Vec<_> = tr.users.iter().filter(|u| u.behavior == Behavior::Abusive).collect();
    assert_eq!(abusive.len(), 4);
    assert!(abusive.iter().all(|u| u.request_rate == 10.0));
    assert!(generate_trace(&profiles, &population(4, 1.0, 1.0), 3, 1000.0).is_err());
}

#[test]
fn generation_is_a_function_of_the_seed() {
    let profiles = build_app_profiles(&one_app(vec![GraphBucket::range(1.0, 1, 5, 500.0, 50.0)])).unwrap();
    let pop = population(5, 2.0, 0.2);
    let a = generate_trace(&profiles, &pop, 11, 5_000.0).unwrap();
    assert_eq!(a, generate_trace(&profiles, &pop, 11, 5_000.0).unwrap());
    assert_ne!(a, generate_trace(&profiles, &pop, 12, 5_000.0).unwrap());
    assert!(a.validate().is_ok());
}

fn round_trip(tr: &Trace) -> Trace {
    let mut buf = Vec::new();
    write_records(tr, &mut buf).unwrap();
    read_records(buf.as_slice()).unwrap()
}

#[test]
fn large_trace_round_trips() {
    let mix = vec![
        GraphBucket::single(0.7, 1, 1200.0, 80.0).with_system(40.0),
        GraphBucket::range(0.3, 2, 10, 21352.13, 241.19),
    ];
    let profiles = build_app_profiles(&one_app(mix)).unwrap();
    let tr = generate_trace(&profiles, &population(100, 1.0, 0.1), 5, 100_000.0).unwrap();
    assert!(tr.interactions.len() >= 10_000);
    assert_eq!(round_trip(&tr), tr);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_traces_round_trip(
        seed in any::<u64>(),
        users in 1u32..8,
        rate in 0.1f64..5.0,
        sigma in 0.1f64..2.0,
    ) {
        let mut app = one_app(vec![
            GraphBucket::single(0.5, 1, 333.3, 77.7),
            GraphBucket::range(0.5, 2, 6, 1000.0, 100.0).with_system(12.5),
        ]);
        app[0].length_model = LengthModel::LogNormal { sigma };
        app[0].think_time_ms = 12.25;
        let profiles = build_app_profiles(&app).unwrap();
        let tr = generate_trace(&profiles, &population(users, rate, 0.25), seed, 3_000.0).unwrap();
        prop_assert_eq!(round_trip(&tr), tr);
    }
}
