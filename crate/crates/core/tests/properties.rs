use polybranch::estimators;
use polybranch::fitting;
use polybranch::model::{sample_correlated_jump, sample_uniform_sphere};
use polybranch::netgraph::{self, PeriodicBox, PolymerNetwork};
use polybranch::theory::{self, RateFunction};
use polybranch::RngStream;
use proptest::prelude::*;

fn norm(v: &[f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn network(n: usize, l: f64, coords: &[f64], links: &[(usize, usize, u64)]) -> PolymerNetwork {
    let nodes = (0..n).map(|i| (i as u64, [coords[3 * i] * l, coords[3 * i + 1] * l, coords[3 * i + 2] * l])).collect();
    let mut seen = std::collections::HashSet::new();
    let edges = links
        .iter()
        .map(|&(a, b, w)| ((a % n) as u64, (b % n) as u64, w))
        .filter(|&(a, b, _)| a != b && seen.insert((a.min(b), a.max(b))))
        .collect();
    PolymerNetwork::new(
        PeriodicBox {
            lengths: [l; 3],
            periodic: [true; 3],
        },
        nodes,
        edges,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn rho_is_the_perron_root(kappa in 0.0f64..0.9, nu in 0.0f64..0.1) {
        let r = theory::rho(kappa, nu).unwrap();
        let m = theory::mean_matrix(kappa, nu);
        let det = (m[0][0] - r) * (m[1][1] - r) - m[0][1] * m[1][0];
        prop_assert!(det.abs() < 1e-10);
    }

    #[test]
    fn supercritical_iff_growth_exceeds_loss(kappa in 0.0f64..0.9, nu in 0.0f64..0.1) {
        prop_assume!((2.0 * kappa * (1.0 - nu) - nu).abs() > 1e-6);
        let r = theory::rho(kappa, nu).unwrap();
        prop_assert_eq!(r > 1.0, 2.0 * kappa * (1.0 - nu) > nu);
    }

    #[test]
    fn extinction_root_is_a_fixed_point(kappa in 0.0f64..0.9, nu in 0.0f64..0.1) {
        let q = theory::extinction_probability(kappa, nu).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert!((theory::extinction_map(kappa, nu, q) - q).abs() < 1e-9);
        if theory::rho(kappa, nu).unwrap() <= 1.0 {
            prop_assert!((q - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_rate_is_quadratic(std in 0.1f64..5.0, x in 0.01f64..10.0) {
        let rf = RateFunction::gaussian(std).unwrap();
        let exact = x * x / (2.0 * std * std);
        prop_assert!((rf.evaluate(x).unwrap() - exact).abs() < 1e-8 * exact.max(1.0));
        prop_assert!((rf.derivative(x).unwrap() - x / (std * std)).abs() < 1e-6 * (x / (std * std)).max(1.0));
    }

    #[test]
    fn sphere_rate_dominates_every_tangent(len in 0.2f64..3.0, u in 0.01f64..0.99, lambda in 0.01f64..30.0) {
        // Legendre transform: I(x) >= l x - log M(l) for every l
        let rf = RateFunction::uniform_sphere(len).unwrap();
        let x = u * rf.domain_sup();
        let i = rf.evaluate(x).unwrap();
        prop_assert!(i >= lambda * x - rf.log_mgf(lambda) - 1e-9);
        prop_assert!(i > 0.0 && rf.derivative(x).unwrap() > 0.0);
    }

    #[test]
    fn speed_constants_solve_their_equations(kappa in 0.02f64..0.95, nu in 0.0f64..0.01, len in 0.5f64..2.0) {
        prop_assume!(2.0 * kappa * (1.0 - nu) > nu * 1.5);
        for rf in [RateFunction::uniform_sphere(len).unwrap(), RateFunction::gaussian(len).unwrap()] {
            let rho = theory::rho(kappa, nu).unwrap();
            if let Ok((c1, c2)) = theory::solve_c1_c2(&rf, rho) {
                prop_assert!((rf.evaluate(c1).unwrap() - rho.ln()).abs() < 1e-9 * rho.ln().max(1.0));
                prop_assert!((rf.derivative(c1).unwrap() - c2).abs() < 1e-6 * c2.max(1.0));
            }
        }
    }

    #[test]
    fn closed_form_msid_rises_to_the_characteristic_ratio(alpha in 0.0f64..0.9, n in 1usize..5000) {
        let m = estimators::msid_closed_form(alpha, n);
        let next = estimators::msid_closed_form(alpha, n + 1);
        let cinf = estimators::characteristic_ratio(alpha);
        prop_assert!(m >= 1.0 - 1e-12 && m <= cinf + 1e-12);
        prop_assert!(next >= m - 1e-12);
    }

    #[test]
    fn jumps_have_unit_length(seed in any::<u64>(), stream in 0u64..1000, beta in 0.01f64..0.99) {
        let mut rng = RngStream::new(seed, stream);
        let a = sample_uniform_sphere::<3, _>(&mut rng);
        prop_assert!((norm(&a) - 1.0).abs() < 1e-12);
        let b = sample_correlated_jump::<3, _>(&a, beta, &mut rng);
        prop_assert!((norm(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loglinear_fit_recovers_generator(a in 0.1f64..5.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
        let pts: Vec<(f64, f64)> = fitting::linspace(20.0, 60.0, 5)
            .into_iter()
            .map(|q| (q, a * q + b * q.ln() + c))
            .collect();
        let f = fitting::log_linear_fit(&pts).unwrap();
        prop_assert!((f.coefficient("A") - a).abs() < 1e-8);
        prop_assert!((f.coefficient("B") - b).abs() < 1e-7);
        prop_assert!((f.speed() - 1.0 / a).abs() < 1e-8);
    }

    #[test]
    fn network_text_round_trips(
        n in 2usize..20,
        coords in proptest::collection::vec(0.0f64..1.0, 60),
        links in proptest::collection::vec((0usize..20, 0usize..20, 1u64..9), 0..40),
    ) {
        let net = network(n, 7.3, &coords, &links);
        let text = net.to_text();
        let back = PolymerNetwork::from_reader(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn shortest_paths_form_a_metric(
        n in 2usize..12,
        coords in proptest::collection::vec(0.0f64..1.0, 36),
        links in proptest::collection::vec((0usize..12, 0usize..12, 1u64..9), 0..30),
    ) {
        let net = network(n, 5.0, &coords, &links);
        let sp = |i: usize, j: usize| netgraph::shortest_path(&net, i as u64, j as u64, false).unwrap();
        for i in 0..n {
            prop_assert_eq!(sp(i, i), Some(0));
            for j in 0..n {
                prop_assert_eq!(sp(i, j), sp(j, i));
                for k in 0..n {
                    if let (Some(a), Some(b)) = (sp(i, k), sp(k, j)) {
                        prop_assert!(sp(i, j).is_some_and(|d| d <= a + b));
                    }
                }
            }
        }
    }
}
