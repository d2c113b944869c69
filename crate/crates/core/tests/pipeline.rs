use poroscale::upscale::{mixture_density, run_pipeline, EffectiveCoefficients, Mu1, PipelineConfig, Regime, BOOKKEEPING_TOL};
use proptest::prelude::*;

fn config(pore: &str, crack: &str) -> PipelineConfig {
    toml::from_str(&format!(
        "mu1 = 1.0\nlambda0 = 10.0\nrho_f = 1.0\nrho_s = 2.7\n\
         [pore]\nn = 6\ngeometry = {pore}\n[crack]\nn = 6\ngeometry = {crack}\n[elastic]\ntol = 1e-9\n"
    ))
    .unwrap()
}

fn check_bookkeeping(e: &EffectiveCoefficients) {
    assert!((e.m - (e.m_c + (1.0 - e.m_c) * e.m_p)).abs() <= BOOKKEEPING_TOL);
    assert!((e.rho_hat - (e.m * e.rho_f + (1.0 - e.m) * e.rho_s)).abs() <= BOOKKEEPING_TOL);
    assert_eq!(e.rho_hat, mixture_density(e.m, e.rho_f, e.rho_s));
}

#[test]
fn connected_cracks_give_case2_and_spd_tensors() {
    let cfg = config(
        "{ shape = \"sphere\", radius = 0.35 }",
        "{ shape = \"tube\", axis = \"xyz\", radius = 0.2 }",
    );
    let e = run_pipeline(&cfg).unwrap();
    check_bookkeeping(&e);
    assert_eq!(e.regime, Regime::CaseII);
    assert!(e.diagnostics.pore.a_c_report.is_spd());
    assert!(e.diagnostics.crack.a_s_report.is_spd());
    // Cubic symmetry of both cells carries over to B_c.
    assert!((e.b_c[0][0] - e.b_c[2][2]).abs() <= 1e-8 * e.b_c[0][0]);
    // Cracks soften the skeleton.
    assert!(e.a_s.0[0][0] < e.a_c.0[0][0]);
    let v = &e.diagnostics.velocity_relations;
    assert!(v.v_c.is_none());
    assert_eq!(v.v_skeleton, Some(1.0 - e.m_c));
}

#[test]
fn infinite_viscosity_forces_case1() {
    let mut cfg = config(
        "{ shape = \"sphere\", radius = 0.3 }",
        "{ shape = \"tube\", axis = \"x\", radius = 0.25 }",
    );
    cfg.mu1 = Mu1::Infinite;
    let e = run_pipeline(&cfg).unwrap();
    assert_eq!(e.regime, Regime::CaseI);
    let v = &e.diagnostics.velocity_relations;
    assert_eq!(v.v_c, Some(e.m_c));
}

#[test]
fn solid_crack_cell_reproduces_pore_stiffness() {
    let cfg = config("{ shape = \"sphere\", radius = 0.3 }", "{ shape = \"sphere\", radius = 0.0 }");
    let e = run_pipeline(&cfg).unwrap();
    assert_eq!(e.m_c, 0.0);
    assert_eq!(e.regime, Regime::CaseI);
    assert_eq!(e.b_c, [[0.0; 3]; 3]);
    assert!((e.a_s - e.a_c).norm() <= 1e-12 * e.a_c.norm());
    check_bookkeeping(&e);
}

#[test]
fn json_is_reproducible_and_round_trips() {
    let cfg = config(
        "{ shape = \"tube\", axis = \"xyz\", radius = 0.2 }",
        "{ shape = \"sphere\", radius = 0.3 }",
    );
    let a = run_pipeline(&cfg).unwrap().to_json();
    let b = run_pipeline(&cfg).unwrap().to_json();
    assert!(a == b, "repeated runs differ");
    let back: EffectiveCoefficients = serde_json::from_str(&a).unwrap();
    assert!(back.to_json() == a);
    assert!(a.contains("\"regime\": \"CASE_I\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn bookkeeping_holds_on_random_geometries(
        rp in 0.2f64..0.4,
        rc in 0.12f64..0.22,
        rho_f in 0.5f64..1.5,
        rho_s in 1.5f64..4.0,
    ) {
        let mut cfg = config(
            &format!("{{ shape = \"sphere\", radius = {rp} }}"),
            &format!("{{ shape = \"tube\", axis = \"xyz\", radius = {rc} }}"),
        );
        cfg.rho_f = rho_f;
        cfg.rho_s = rho_s;
        let e = run_pipeline(&cfg).unwrap();
        check_bookkeeping(&e);
        prop_assert!(e.diagnostics.crack.a_s_report.is_spd());
    }
}
