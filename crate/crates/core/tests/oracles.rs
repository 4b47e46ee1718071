use levyx_core::limit_model::SigmaVariant;
use levyx_core::scenario::builtin;

fn point(name: &str, variant: SigmaVariant) -> levyx_core::limit_model::LimitPoint {
    let lab = builtin(name).unwrap().lab().unwrap();
    lab.limit(variant).at(&[0.0]).unwrap()
}

#[test]
fn alternating_pair_has_no_diffusion_under_the_full_variants() {
    for v in [SigmaVariant::FullSource, SigmaVariant::FullDestination] {
        let p = point("alt2", v);
        assert!(p.sigma[(0, 0)].abs() < 1e-12, "{v:?}: {}", p.sigma[(0, 0)]);
        assert!(p.beta[0].abs() < 1e-12);
        assert_eq!(p.lambda, 0.0);
    }
    let lit = point("alt2", SigmaVariant::PaperLiteral);
    assert!((lit.sigma[(0, 0)] - 1.0).abs() < 1e-12);
}

#[test]
fn iid_pair_has_unit_diffusion() {
    let p = point("iid2", SigmaVariant::FullSource);
    assert!((p.sigma[(0, 0)] - 1.0).abs() < 1e-12);
    let lit = point("iid2", SigmaVariant::PaperLiteral);
    assert!((lit.sigma[(0, 0)] - 2.0).abs() < 1e-12);
}

#[test]
fn drift_and_jump_fixtures() {
    let m2q = point("m2q", SigmaVariant::FullSource);
    assert!((m2q.beta[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!(m2q.sigma[(0, 0)].abs() < 1e-12);

    let p = point("poisson2", SigmaVariant::FullSource);
    assert!((p.lambda - 1.0).abs() < 1e-12);
    assert!((p.jump_law.mean(1)[0] - 1.0).abs() < 1e-12);
    assert!((p.jump_law.second_moment(1)[(0, 0)] - 1.25).abs() < 1e-12);

    let d = point("driftonly", SigmaVariant::FullSource);
    assert!((d.beta[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((d.sigma[(0, 0)] - 1.0).abs() < 1e-12);
}

#[test]
fn stationary_laws_of_the_fixtures() {
    let lab = builtin("poisson2").unwrap().lab().unwrap();
    assert!((lab.sp.q_bar - 4.0 / 3.0).abs() < 1e-12);
    assert!((lab.sp.pi[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((lab.sp.rho[0] - 0.5).abs() < 1e-12);
    // R0 of the swap chain with q = (1, 2): (Π − Q)^-1 − Π.
    let r0 = &lab.r0.r0;
    assert!((r0[(0, 0)] - 1.0 / 9.0).abs() < 1e-12);
    assert!((r0[(0, 1)] + 1.0 / 9.0).abs() < 1e-12);
    assert!((r0[(1, 0)] + 2.0 / 9.0).abs() < 1e-12);
    assert!((r0[(1, 1)] - 2.0 / 9.0).abs() < 1e-12);
}
