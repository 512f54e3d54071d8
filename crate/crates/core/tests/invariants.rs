//! Property tests for the structural invariants of every module.

#[path = "support/invariants.rs"]
mod invariants;

#[test]
fn ladder_adjoint() {
    invariants::ladder_adjoint().unwrap();
}

#[test]
fn canonical_commutator() {
    invariants::canonical_commutator().unwrap();
}

#[test]
fn projectors_complete() {
    invariants::projectors_complete().unwrap();
}

#[test]
fn tensor_associative() {
    invariants::tensor_associative().unwrap();
}

#[test]
fn index_round_trip() {
    invariants::index_round_trip().unwrap();
}

#[test]
fn hamiltonian_hermitian() {
    invariants::hamiltonian_hermitian().unwrap();
}

#[test]
fn excitation_conserved() {
    invariants::excitation_conserved().unwrap();
}

#[test]
fn dephasing_projector_form() {
    invariants::dephasing_projector_form().unwrap();
}

#[test]
fn liouvillian_traceless_hermitian() {
    invariants::liouvillian_traceless_hermitian().unwrap();
}

#[test]
fn norm_non_increasing() {
    invariants::norm_non_increasing().unwrap();
}

#[test]
fn me_hermitian_positive() {
    invariants::me_hermitian_positive().unwrap();
}

#[test]
fn steady_fixed_point() {
    invariants::steady_fixed_point().unwrap();
}

#[test]
fn eigenvectors_orthonormal() {
    invariants::eigenvectors_orthonormal().unwrap();
}

#[test]
fn truncation_guard() {
    invariants::truncation_guard().unwrap();
}

#[test]
fn seed_determinism() {
    invariants::seed_determinism().unwrap();
}

#[test]
fn q_nonnegative_normalized() {
    invariants::q_nonnegative_normalized().unwrap();
}

#[test]
fn amplifier_preserves_mass() {
    invariants::amplifier_preserves_mass().unwrap();
}

#[test]
fn telegraph_reconstructs() {
    invariants::telegraph_reconstructs().unwrap();
}

#[test]
fn partial_trace_keeps_trace() {
    invariants::partial_trace_keeps_trace().unwrap();
}

#[test]
fn histogram_counts_every_sample() {
    invariants::histogram_counts_every_sample().unwrap();
}
