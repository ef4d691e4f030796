//! Finite-difference checks for every differentiable block, model head
//! and loss.

mod support;

use support::grad_suite::{run_case, Case, INSTANCES, TOL};

fn check(case: Case) {
    for seed in 0..INSTANCES {
        let err = run_case(case, seed);
        assert!(err < TOL, "{case:?} instance {seed}: max relative error {err:e}");
    }
}

#[test]
fn channel_attention() {
    check(Case::ChannelAttention);
}

#[test]
fn spatial_attention() {
    check(Case::SpatialAttention);
}

#[test]
fn dual_attention_block() {
    check(Case::Dab);
}

#[test]
fn residual_group() {
    check(Case::Rrg);
}

#[test]
fn rgb2raw_head() {
    check(Case::Rgb2RawHead);
}

#[test]
fn raw_denoiser_head() {
    check(Case::DenoiserHeadRaw);
}

#[test]
fn srgb_denoiser_head() {
    check(Case::DenoiserHeadSrgb);
}

#[test]
fn s2r_loss() {
    check(Case::LossS2r);
}

#[test]
fn r2s_loss() {
    check(Case::LossR2s);
}
