#![allow(dead_code)]

pub mod reference;

use std::collections::{BTreeMap, HashSet};

use fairserve_core::engine::{self, Engine, EngineConfig, EventKind, RequestMeta};
use fairserve_core::sched::{
    build_policy, AppLimit, FairServe, FairServeConfig, PolicyConfig, RpmConfig, RpmScope,
    ServiceState, VtcConfig,
};
use fairserve_core::workload::{
    build_app_profiles, generate_trace, AppConfig, AppId, AppProfile, AppStageProfile, Behavior,
    CallSpec, GraphBucket, Interaction, InteractionId, LengthModel, PopulationConfig, RequestId,
    TokenWeights, Trace, UserGroup, UserId, UserProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stage(input: f64, system: f64, output: f64) -> AppStageProfile {
    AppStageProfile {
        expected_input_tokens: input,
        expected_system_tokens: system,
        expected_output_tokens: output,
    }
}

pub fn app(id: u32, stages: Vec<AppStageProfile>, rpm_limit: u32) -> AppProfile {
    let s = stages[0];
    AppProfile {
        app_id: AppId(id),
        stages,
        rpm_limit,
        graph_mix: vec![GraphBucket::single(
            1.0,
            1,
            s.expected_input_tokens,
            s.expected_output_tokens,
        )],
        length_model: LengthModel::Constant,
        think_time_ms: 0.0,
    }
}

pub fn user(id: u32, app: u32) -> UserProfile {
    UserProfile {
        user_id: UserId(id),
        app_id: AppId(app),
        priority: 1.0,
        behavior: Behavior::Benign,
        request_rate: 1.0,
    }
}

pub fn call(k: u32, input: u32, system: u32, output: u32) -> CallSpec {
    CallSpec {
        stage_index: k,
        input_tokens: input,
        system_tokens: system,
        output_tokens_true: output,
    }
}

/// Builds a trace; interactions are `(user, head_arrival, think, calls)` and
/// get sorted by arrival. Each user's app comes from `users`.
pub fn trace(
    apps: Vec<AppProfile>,
    users: Vec<UserProfile>,
    mut interactions: Vec<(u32, f64, f64, Vec<CallSpec>)>,
) -> Trace {
    interactions.sort_by(|a, b| a.1.total_cmp(&b.1));
    let app_of: BTreeMap<u32, AppId> = users.iter().map(|u| (u.user_id.0, u.app_id)).collect();
    Trace {
        seed: 0,
        duration_ms: interactions.last().map_or(1.0, |i| i.1 + 1.0),
        interactions: interactions
            .into_iter()
            .enumerate()
            .map(|(i, (u, t, think, calls))| Interaction {
                interaction_id: InteractionId(i as u64),
                user_id: UserId(u),
                app_id: app_of[&u],
                head_arrival_ms: t,
                think_time_ms: think,
                calls,
            })
            .collect(),
        users,
        apps,
    }
}

/// Policies tuned so that small traces hit blocks, ties and overload.
pub fn small_policies() -> Vec<PolicyConfig> {
    let fs = FairServeConfig {
        global_user_limit: 1,
        per_app_limits: vec![AppLimit {
            app_id: AppId(1),
            limit: 2,
        }],
        window_ms: 50,
        ..Default::default()
    };
    vec![
        PolicyConfig::Fcfs,
        PolicyConfig::Rpm(RpmConfig {
            scope: RpmScope::Combined,
            user_limit: 2,
            app_limits: vec![],
            window_ms: 40,
        }),
        PolicyConfig::Vtc(VtcConfig::default()),
        PolicyConfig::FsW(fs.clone()),
        PolicyConfig::FsWi(fs),
    ]
}

/// Random trace with at most `max_requests` calls over at most 3 users.
pub fn random_small_trace<R: Rng>(rng: &mut R, max_requests: u32) -> Trace {
    let n_users = rng.random_range(1..=3u32);
    let n_apps = rng.random_range(1..=n_users.min(2));
    let apps = (0..n_apps)
        .map(|a| {
            let stages = (0..rng.random_range(1..=3))
                .map(|_| {
                    stage(
                        rng.random_range(1..60) as f64,
                        rng.random_range(0..10) as f64,
                        rng.random_range(1..12) as f64,
                    )
                })
                .collect();
            app(a, stages, rng.random_range(1..5))
        })
        .collect();
    let users: Vec<UserProfile> = (0..n_users).map(|u| user(u, u % n_apps)).collect();
    let mut budget = rng.random_range(1..=max_requests);
    let mut its = Vec::new();
    while budget > 0 {
        let n = rng.random_range(1..=budget.min(4));
        budget -= n;
        let calls = (1..=n)
            .map(|k| {
                call(
                    k,
                    rng.random_range(0..80),
                    rng.random_range(0..15),
                    rng.random_range(1..15),
                )
            })
            .collect();
        // coarse times so arrivals collide
        let t = rng.random_range(0..6) as f64 * 2.5;
        let think = [0.0, 1.0, 7.5][rng.random_range(0..3)];
        its.push((rng.random_range(0..n_users), t, think, calls));
    }
    trace(apps, users, its)
}

pub fn random_engine_config<R: Rng>(rng: &mut R) -> EngineConfig {
    EngineConfig {
        kv_capacity_tokens: [60, 120, 250, 10_000][rng.random_range(0..4)],
        overload_threshold: [0.2, 0.5, 0.9][rng.random_range(0..3)],
        max_batch_size: [1, 2, 3, 64][rng.random_range(0..4)],
        default_output_reserve: 4,
        horizon_ms: [None, Some(30.0), Some(80.0)][rng.random_range(0..3)],
        ..Default::default()
    }
}

/// WSC selection by exhaustive scan over every queued request.
pub fn brute_select(state: &ServiceState) -> Option<RequestId> {
    let all: Vec<&RequestMeta> = state
        .queue
        .users()
        .flat_map(|(_, q)| q.fresh.iter().chain(q.continuations.iter()))
        .collect();
    let conts: Vec<&RequestMeta> = all.iter().copied().filter(|r| r.stage > 1).collect();
    let pool = if conts.is_empty() { all } else { conts };
    let mut best: Option<&RequestMeta> = None;
    for r in pool {
        let key = |x: &RequestMeta| (state.counter(x.user), x.arrival_ms, x.user, x.id);
        best = match best {
            None => Some(r),
            Some(b) => {
                let (kb, kr) = (key(b), key(r));
                let less = kr.0 < kb.0
                    || (kr.0 == kb.0
                        && (kr.1 < kb.1
                            || (kr.1 == kb.1 && (kr.2 < kb.2 || (kr.2 == kb.2 && kr.3 < kb.3)))));
                Some(if less { r } else { b })
            }
        };
    }
    best.map(|r| r.id)
}

/// Every `(trace, engine)` of the exhaustive small grid: 1-3 users, 1-2
/// interactions per user, 1-3 calls each, two arrival patterns, two KV sizes
/// and two batch limits. At most 18 requests per trace.
pub fn small_grid() -> Vec<(Trace, EngineConfig)> {
    let mut out = Vec::new();
    for n_users in 1..=3u32 {
        for per_user in 1..=2u32 {
            for n_calls in 1..=3u32 {
                for spacing in [0.0, 3.0] {
                    let apps = vec![
                        app(0, vec![stage(20.0, 0.0, 4.0), stage(10.0, 5.0, 3.0)], 1),
                        app(1, vec![stage(40.0, 0.0, 8.0)], 2),
                    ];
                    let users: Vec<UserProfile> = (0..n_users).map(|u| user(u, u % 2)).collect();
                    let mut its = Vec::new();
                    for u in 0..n_users {
                        for k in 0..per_user {
                            let calls = (1..=n_calls)
                                .map(|j| call(j, 5 + 7 * (u + j), 3 * k, 1 + (u + j + k) % 5))
                                .collect();
                            its.push((u, (u * per_user + k) as f64 * spacing, 0.5 * k as f64, calls));
                        }
                    }
                    let tr = trace(apps, users, its);
                    for kv in [60, 1000] {
                        for batch in [1, 8] {
                            out.push((
                                tr.clone(),
                                EngineConfig {
                                    kv_capacity_tokens: kv,
                                    overload_threshold: 0.4,
                                    max_batch_size: batch,
                                    ..Default::default()
                                },
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Runs every small policy through both engines and compares logs. Returns
/// the event kinds seen, for coverage checks.
pub fn engines_agree(tr: &Trace, cfg: EngineConfig) -> Result<HashSet<EventKind>, String> {
    let mut kinds = HashSet::new();
    for pc in small_policies() {
        let fast = engine::run(tr, build_policy(&pc, tr).unwrap(), cfg).map_err(|e| e.to_string())?;
        let mut p = build_policy(&pc, tr).unwrap();
        let slow = reference::run(tr, &mut *p, cfg)?;
        if fast.events != slow.events {
            let i = fast
                .events
                .iter()
                .zip(&slow.events)
                .position(|(a, b)| a != b)
                .unwrap_or(fast.events.len().min(slow.events.len()));
            return Err(format!(
                "{}: logs diverge at event {i}: engine {:?} vs reference {:?}",
                pc.name(),
                fast.events.get(i),
                slow.events.get(i)
            ));
        }
        if fast.interaction_status != slow.status || fast.iterations != slow.iterations {
            return Err(format!("{}: outcome mismatch", pc.name()));
        }
        kinds.extend(fast.events.iter().map(|e| e.kind));
    }
    Ok(kinds)
}

/// Random scheduler state with small integer counters and arrival slots, so
/// ties are common.
pub fn random_state<R: Rng>(rng: &mut R) -> ServiceState {
    let mut s = ServiceState::new(TokenWeights::default());
    let n_users = rng.random_range(1..=5u32);
    for u in 0..n_users {
        s.counters.insert(UserId(u), rng.random_range(0..4) as f64);
    }
    for id in 0..rng.random_range(0..12u64) {
        let user = rng.random_range(0..n_users);
        let stage = if rng.random_bool(0.3) { rng.random_range(2..5) } else { 1 };
        let arrival = rng.random_range(0..4) as f64;
        s.queue.push(RequestMeta {
            id: RequestId(id),
            user: UserId(user),
            app: AppId(0),
            interaction: InteractionId(id),
            stage,
            num_calls: 5,
            input_tokens: 1,
            system_tokens: 0,
            arrival_ms: arrival,
            head_arrival_ms: arrival,
        });
    }
    s
}

/// Generated multi-app workload with abusive users, sized by `seed`, plus an
/// engine small enough to be overloaded most of the time.
pub fn stressed_workload(seed: u64) -> (Trace, EngineConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let app_cfg = |id: u32, mix: Vec<GraphBucket>, think: f64| AppConfig {
        app_id: AppId(id),
        rpm_limit: 30,
        graph_mix: mix,
        length_model: LengthModel::default(),
        think_time_ms: think,
        stages: None,
    };
    let apps = vec![
        app_cfg(
            0,
            vec![
                GraphBucket::single(0.5, 1, 300.0, 40.0),
                GraphBucket::range(0.5, 2, 8, 1600.0, 200.0),
            ],
            20.0,
        ),
        app_cfg(1, vec![GraphBucket::range(1.0, 3, 12, 4000.0, 300.0).with_system(400.0)], 5.0),
    ];
    let profiles = build_app_profiles(&apps).unwrap();
    let population = PopulationConfig {
        groups: vec![
            UserGroup {
                app_id: AppId(0),
                users: rng.random_range(2..12),
                rate_per_s: rng.random_range(0.2..2.0),
                priority: 1.0,
            },
            UserGroup {
                app_id: AppId(1),
                users: rng.random_range(1..6),
                rate_per_s: rng.random_range(0.1..1.0),
                priority: 1.0,
            },
        ],
        abusive_fraction: rng.random_range(0.0..0.5),
        abusive_multiplier: 10.0,
    };
    let duration = rng.random_range(5_000.0..30_000.0);
    let tr = generate_trace(&profiles, &population, seed, duration).unwrap();
    let cfg = EngineConfig {
        kv_capacity_tokens: rng.random_range(6_000..20_000),
        overload_threshold: rng.random_range(0.2..0.9),
        max_batch_size: 32,
        ..Default::default()
    };
    (tr, cfg)
}

/// FairServe with throttling tight enough to block on [`stressed_workload`].
pub fn stressed_fs_wi() -> PolicyConfig {
    PolicyConfig::FsWi(FairServeConfig {
        global_user_limit: 2,
        window_ms: 5_000,
        ..Default::default()
    })
}

/// Two users of different apps, one with calls ten times longer, both
/// flooding the queue at time zero. Actual lengths scatter around the app
/// expectations.
pub fn two_user_backlog(seed: u64, per_user: u32) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apps = vec![
        app(0, vec![stage(100.0, 0.0, 10.0)], 1000),
        app(1, vec![stage(1000.0, 0.0, 100.0)], 1000),
    ];
    let users = vec![user(0, 0), user(1, 1)];
    let mut its = Vec::new();
    for _ in 0..per_user {
        for (u, scale) in [(0u32, 1.0), (1, 10.0)] {
            let f = rng.random_range(0.5..1.5);
            let g = rng.random_range(0.5..1.5);
            let input = (100.0 * scale * f) as u32;
            let output = ((10.0 * scale * g) as u32).max(1);
            its.push((u, 0.0, 0.0, vec![call(1, input, 0, output)]));
        }
    }
    trace(apps, users, its)
}

/// Steps FS(W) over [`two_user_backlog`] with batch size 2 and returns the
/// worst `|u_A - u_B| / (2 * max increment)` seen while both users were
/// backlogged.
pub fn fairness_gap_ratio(seed: u64) -> f64 {
    let tr = two_user_backlog(seed, 40);
    let cfg = EngineConfig {
        kv_capacity_tokens: 1_000_000,
        max_batch_size: 2,
        ..Default::default()
    };
    let policy = FairServe::weighted(&tr, &FairServeConfig::default()).unwrap();
    let mut e = Engine::new(&tr, cfg, policy).unwrap();
    let mut worst: f64 = 0.0;
    let mut both_seen = false;
    while !e.is_done() {
        e.step().unwrap();
        let backlogged = e.backlogged_users().count();
        if backlogged == 2 {
            both_seen = true;
        } else if both_seen {
            break;
        }
        if backlogged < 2 {
            continue;
        }
        let s = &e.policy().service;
        let gap = (s.counter(UserId(0)) - s.counter(UserId(1))).abs();
        if gap > 0.0 {
            worst = worst.max(gap / (2.0 * s.max_increment));
        }
    }
    assert!(both_seen);
    worst
}
