//! Kernel and GP results checked against independent dense-algebra oracles.

mod common;

#[test]
fn weighted_sum_model_matches_unnormalized_kernel() {
    common::check_weighted_sum_model().unwrap();
}

#[test]
fn gp_matches_explicit_inverse_and_direct_density() {
    common::check_gpr_oracle().unwrap();
}

#[test]
fn kernel_matrices_are_symmetric_and_psd() {
    common::check_symmetric_psd().unwrap();
}

#[test]
fn attentive_diagonal_and_bound() {
    common::check_attentive_diagonal_and_bound().unwrap();
}

#[test]
fn gibbs_with_constant_lengthscale_is_rbf() {
    common::check_gibbs_constant_is_rbf().unwrap();
}

#[test]
fn orthogonal_memberships_mask_correlation() {
    common::check_orthogonal_masking().unwrap();
}

#[test]
fn posterior_variance_shrinks_with_data() {
    common::check_variance_monotone().unwrap();
}
