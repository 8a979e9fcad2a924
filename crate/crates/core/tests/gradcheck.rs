mod common;

use common::{directional_error, micro_problem, Objective};

#[test]
fn every_objective_matches_central_differences() {
    for obj in Objective::ALL {
        for trial in 0..20u64 {
            let p = micro_problem(100 + trial);
            let (rel, a, n) = directional_error(&p, obj, trial, 1e-4);
            assert!(rel < 1e-4, "{obj:?} trial {trial}: autodiff {a:e} vs numeric {n:e} (rel {rel:e})");
        }
    }
}

#[test]
fn gradients_are_nonzero_for_every_frame() {
    let p = micro_problem(7);
    let (_, grads) = common::objective(&p, &p.frames, Objective::Total);
    assert_eq!(grads.len(), p.frames.len());
    for g in &grads {
        assert!(g.max_abs() > 0.0);
    }
}
