use blowup_core::duhamel::h_lambda;
use blowup_core::ModelParams;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (1.2f64..7.0, -1.9f64..3.0).prop_map(|(p, a)| ModelParams::new_unrestricted(p, a, 1).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn f_is_odd_and_g_even(m in params(), u in -1e6f64..1e6) {
        prop_assert_eq!(m.f(-u), -m.f(u));
        prop_assert_eq!(m.g(-u), m.g(u));
        prop_assert!(m.g(u) > 0.0);
    }

    #[test]
    fn potential_is_even_and_positive(m in params(), u in 1e-3f64..1e4) {
        let (fp, fm) = (m.potential(u).unwrap(), m.potential(-u).unwrap());
        prop_assert_eq!(fp, fm);
        prop_assert!(fp > 0.0);
    }

    #[test]
    fn potential_decomposes(m in params(), lu in -2.0f64..6.0) {
        let u = 10f64.powf(lu);
        let f = m.potential(u).unwrap();
        let parts = u * m.f(u) / (m.p + 1.0) + m.potential_f1(u) + m.potential_f2(u).unwrap();
        prop_assert!((f - parts).abs() <= 1e-9 * (1.0 + f), "{} vs {}", f, parts);
    }

    #[test]
    fn envelope_grows_toward_the_blowup_time(m in params(), t0 in 0.4f64..3.0, x in 0.001f64..0.36, y in 0.001f64..0.36) {
        let (near, far) = if x < y { (x, y) } else { (y, x) };
        prop_assume!(far - near > 1e-9);
        // d ln ψ/ds = (2 - a/(s ln s))/(p-1): monotone only where 2 s ln s > a.
        let s = -far.ln();
        prop_assume!(2.0 * s * s.ln() > m.a);
        prop_assert!(m.psi(t0, t0 - near).unwrap() > m.psi(t0, t0 - far).unwrap());
    }

    #[test]
    fn envelope_turns_near_tau_one_over_e_for_large_a(p in 1.5f64..5.0) {
        let m = ModelParams::new_unrestricted(p, 2.5, 1).unwrap();
        let t0 = 1.0;
        let tau = (-1.05f64).exp();
        prop_assert!(m.psi(t0, t0 - tau).unwrap() < m.psi(t0, t0 - tau * 1.01).unwrap());
    }

    #[test]
    fn rescaled_nonlinearity_matches(m in params(), u in -1e4f64..1e4, ll in -20.0f64..3.0) {
        let lambda = ll.exp();
        let lhs = h_lambda(&m, lambda, lambda.powf(m.beta()) * u);
        let rhs = lambda.powf(m.beta() * m.p) * m.f(u);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + m.f(u).abs()) * lambda.powf(m.beta() * m.p));
    }
}
