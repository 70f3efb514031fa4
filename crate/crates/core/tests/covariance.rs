use pspin_core::hamiltonian::{verify_covariance_structure, DisorderTensor, SpherePoint};
use pspin_core::rng::{self, TaskKind};
use pspin_core::ModelParams;

#[test]
fn local_field_statistics_for_p3() {
    let r = verify_covariance_structure(ModelParams::new(3, 6).unwrap(), 10_000, 17).unwrap();
    let entry = |name: &str| r.entries.iter().find(|e| e.name == name).unwrap_or_else(|| panic!("no entry {name}"));
    assert_eq!(entry("var_grad").target, 3.0);
    assert_eq!(entry("var_hess_ii").target, 21.0);
    assert_eq!(entry("cov_hess_grad").target, 0.0);
    for e in &r.entries {
        assert!(e.z <= 3.0, "{} estimate {} ± {} vs {}", e.name, e.estimate, e.std_error, e.target);
        assert!(e.fd_error <= 1e-6, "{}: finite difference {} vs {}", e.name, e.finite_difference, e.target);
    }
}

#[test]
fn even_p_entries_match_as_well() {
    let r = verify_covariance_structure(ModelParams::new(4, 5).unwrap(), 10_000, 18).unwrap();
    assert!(r.max_z() <= 3.0, "{r:?}");
    assert!(r.max_fd_error() <= 1e-6);
}

#[test]
fn saved_disorder_reproduces_the_landscape() {
    let params = ModelParams::new(3, 7).unwrap();
    let j = DisorderTensor::sample(params, 99).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("disorder.bin");
    j.save(&path).unwrap();
    let k = DisorderTensor::load(&path).unwrap();
    assert_eq!(k.params(), params);
    assert_eq!(k.coefficients(), j.coefficients());
    let mut r = rng::stream(5, TaskKind::Generic, 0);
    for _ in 0..10 {
        let s = SpherePoint::random(7, &mut r);
        assert_eq!(j.evaluate(&s), k.evaluate(&s));
    }
}
