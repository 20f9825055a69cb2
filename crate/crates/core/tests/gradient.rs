mod common;

use common::{check_gradient_fidelity, gradient_instance};
use bilevel_core::{CostKind, RegulariserKind};

#[test]
fn adjoint_gradient_matches_central_differences() {
    let (check, all) = check_gradient_fidelity(4);
    for g in &all {
        println!("{} {} adjoint {:?} fd {:?} rel {:.2e}", g.kind, g.cost, g.adjoint, g.fd, g.rel_err);
    }
    assert!(check.pass, "{}", check.detail);
}

#[test]
fn tv_gradient_single_instance() {
    let g = gradient_instance(RegulariserKind::Tv, CostKind::L22, 5);
    assert!(g.rel_err < 1e-3, "{g:?}");
}
