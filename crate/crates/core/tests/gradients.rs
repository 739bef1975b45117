mod common;

#[test]
fn every_layer_matches_finite_differences() {
    for r in common::layer_suite(5, 11) {
        assert!(r.worst < 1e-4, "{}: worst relative error {:.2e}", r.name, r.worst);
    }
}

#[test]
fn composed_network_matches_finite_differences() {
    let r = common::net_suite(3, 5);
    assert!(r.worst < 1e-4, "worst relative error {:.2e}", r.worst);
}

