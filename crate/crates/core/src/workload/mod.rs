//! Users, apps, interactions and synthetic traces.

mod generate;
mod profiles;
mod trace_io;
mod types;

pub use generate::{
    generate_trace, truncated_lognormal_mean, CallSampler, PopulationConfig, UserGroup,
    TRUNCATION_FACTOR,
};
pub use profiles::{build_app_profiles, AppConfig};
pub use trace_io::{read_records, read_trace, write_records, write_trace, TRACE_FORMAT_VERSION};
pub use types::{
    AppId, AppProfile, AppStageProfile, Behavior, CallSpec, GraphBucket, Interaction,
    InteractionId, InteractionStatus, LengthModel, RequestId, TokenWeights, Trace, UserId,
    UserProfile,
};

/// Graph-size buckets used when summarizing call-count distributions.
pub const GRAPH_SIZE_BUCKETS: [(&str, u32, u32); 7] = [
    ("1", 1, 1),
    ("2-10", 2, 10),
    ("11-20", 11, 20),
    ("21-30", 21, 30),
    ("31-40", 31, 40),
    ("41-50", 41, 50),
    (">50", 51, u32::MAX),
];

/// Counts interactions per graph-size bucket, in `GRAPH_SIZE_BUCKETS` order.
pub fn bucket_histogram(trace: &Trace) -> [u64; 7] {
    let mut hist = [0u64; 7];
    for it in &trace.interactions {
        let n = it.num_calls();
        let idx = GRAPH_SIZE_BUCKETS
            .iter()
            .position(|&(_, lo, hi)| (lo..=hi).contains(&n))
            .expect("buckets cover all sizes >= 1");
        hist[idx] += 1;
    }
    hist
}
