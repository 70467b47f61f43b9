mod common;

use common::properties as p;

#[test]
fn pca_conservation_orthonormality_translation() {
    p::pca_properties().unwrap();
}

#[test]
fn hdbscan_is_permutation_invariant() {
    p::hdbscan_permutation_invariance().unwrap();
}

#[test]
fn hdbscan_mst_oracle_and_selection() {
    p::hdbscan_structure().unwrap();
}

#[test]
fn mlp_gradients_match_finite_differences() {
    p::mlp_gradient_check().unwrap();
}

#[test]
fn boosting_loss_is_monotone() {
    p::boosting_loss_monotone().unwrap();
}

#[test]
fn tree_shap_adds_up_on_random_trees() {
    p::tree_shap_additivity().unwrap();
}

#[test]
fn flatten_and_plot_orderings() {
    p::tensor_and_plot_orderings().unwrap();
}
