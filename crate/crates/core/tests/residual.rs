//! A residual block whose branch computes zero passes its skip input through.

mod common;

use common::residual::{self, blocks, resnet34};
use common::rng;
use netscope::{Mode, Tensor};
use rand::Rng;

#[test]
fn zeroed_branches_pass_the_skip_through() {
    assert_eq!(residual::zeroed_branches_pass_the_skip_through(), 13);
}

#[test]
fn zeroed_branches_pass_the_skip_through_in_train_mode() {
    assert_eq!(residual::zeroed_branches_pass_the_skip_through_in_train_mode(), 13);
}

#[test]
fn live_branches_change_the_output() {
    let m = resnet34(64);
    let mut r = rng(80);
    let x: Tensor<f32> = Tensor::from_fn((1, 3, 64, 64), |_, _, _, _| r.random_range(-2.0..2.0));
    let trace = m.run(&x, Mode::Eval, None).unwrap();
    for (add, skip, _) in blocks(&m) {
        assert_ne!(trace.output(add).unwrap().data(), trace.output(skip).unwrap().data());
    }
}
