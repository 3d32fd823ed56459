//! Shared fixtures for the criterion benches.

use hbf_core::channel::generate_channel;
use hbf_core::{
    init_precoders, ChannelModelParams, ChannelRealization, ConstraintKind, ConstraintSet, HybridPrecoder,
    InitStrategy, SystemDims,
};

pub struct Fixture {
    pub h: ChannelRealization,
    pub dims: SystemDims,
    pub constraint: ConstraintSet,
    pub init: HybridPrecoder,
}

/// One channel of the default rig (`M = 12`, `N = 4`, `F = 16`) at 10 dB with `k` RF
/// chains and a matched-filter start.
pub fn fixture(k: usize) -> Fixture {
    let params = ChannelModelParams { m: 12, n: 4, f: 16, ..Default::default() };
    let h = generate_channel(&params, 1).expect("valid channel model");
    let dims = SystemDims::new(12, k, 4, 16, 10.0, 1.0).expect("valid dims");
    let constraint = ConstraintSet::fully(ConstraintKind::UnitModulus, 12, k).expect("valid constraint");
    let init = init_precoders(&h, &dims, &constraint, InitStrategy::MatchedFilter, 0).expect("init");
    Fixture { h, dims, constraint, init }
}
