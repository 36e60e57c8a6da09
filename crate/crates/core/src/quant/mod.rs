//! Embedded deployment emulation: fixed-point inference and the TTL counting front end.

mod fixed;
mod latency;
mod ttl;

pub use fixed::{
    dequantize, fixed_infer, quantize, quantize_value, FixedInference, FixedLayer, FixedPointNet,
    IntervalBound, FIXED_FORMAT, FRAC_BITS, ONE, RANGE_LIMIT,
};
pub use latency::{latency_bench, LatencyStats};
pub use ttl::{
    divider_counter, simulate_ttl, simulated_boundaries, CounterConfig, FrequencyDivider,
    TtlEdgeStream,
};
pub use crate::nn::load_weights;
