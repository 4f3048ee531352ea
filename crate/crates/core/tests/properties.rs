//! Randomised invariants over rate vectors.

use intertwine_core::*;
use proptest::prelude::*;

fn rate() -> impl Strategy<Value = f64> {
    (0.1f64.ln()..=10f64.ln()).prop_map(f64::exp)
}

/// Stopped chain with `1 <= N <= max_n` and log-uniform rates in `[0.1, 10]`.
fn stopped_spec(max_n: usize) -> impl Strategy<Value = BirthDeathSpec> {
    (1..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(rate(), n),
            prop::collection::vec(rate(), n - 1),
        )
            .prop_map(|(b, mut d)| {
                d.push(0.0);
                BirthDeathSpec::stopped(b, d).unwrap()
            })
    })
}

fn stochastic(n: usize) -> impl Strategy<Value = MarkovKernel> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), n).prop_map(|rows| {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-3;
                let mut r: Vec<f64> = r.iter().map(|v| v / s).collect();
                r[0] += 1.0 - r.iter().sum::<f64>();
                r
            })
            .collect();
        MarkovKernel::from_rows(&rows).unwrap()
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generator_adjoint_pairing(
        spec in stopped_spec(10),
        seed in prop::collection::vec(-1.0f64..1.0, 11),
    ) {
        let g = build_generator(&spec);
        let n = spec.dim();
        let f = &seed[..n];
        let pi: Vec<f64> = seed.iter().rev().take(n).copied().collect();
        let lhs = dot(&pi, &g.apply(f).unwrap());
        let rhs = dot(&g.adjoint_apply(&pi).unwrap(), f);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * spec.max_rate() * n as f64);
        let dense = spec.dense_generator();
        for x in 0..n {
            prop_assert!(dense.row(x).iter().sum::<f64>().abs() <= 1e-13 * spec.max_rate());
        }
    }

    #[test]
    fn kernel_composition_is_associative(
        (a, b, c) in (1usize..6).prop_flat_map(|n| (stochastic(n), stochastic(n), stochastic(n)))
    ) {
        let left = compose_kernels(&[compose_kernels(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
        let right = compose_kernels(&[a.clone(), compose_kernels(&[b, c]).unwrap()]).unwrap();
        let diff = (left.matrix() - right.matrix()).abs().max();
        prop_assert!(diff <= 1e-14);
        prop_assert!(left.validate(false, false).passes(1e-12));
    }

    #[test]
    fn spectrum_trace_and_determinant(spec in stopped_spec(12)) {
        let s = spectrum_oracle(&spec).unwrap();
        prop_assert_eq!(s.lambdas.len(), spec.top());
        let r = s.identity_residuals(&spec);
        prop_assert!(r.trace <= 1e-12, "trace {:e}", r.trace);
        prop_assert!(r.determinant <= 1e-12, "determinant {:e}", r.determinant);
        prop_assert!(s.min_relative_gap() > 1e-10);
    }

    #[test]
    fn leading_rate_is_smallest_oracle_eigenvalue(spec in stopped_spec(12)) {
        let lead = leading_eigenpair(&build_generator(&spec)).unwrap();
        let oracle = spectrum_oracle(&spec).unwrap().lambdas[0];
        prop_assert!((lead.lambda - oracle).abs() <= 1e-10 * oracle);
        let (rf, rpi) = lead.residuals(&build_generator(&spec)).unwrap();
        prop_assert!(rf.max(rpi) <= 1e-10 * spec.max_rate());
        prop_assert!(lead.f.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(lead.pi[..spec.top()].iter().all(|&p| p > 0.0));
    }

    #[test]
    fn chains_are_ordered_and_intertwined(spec in stopped_spec(10)) {
        let plus = build_plus_chain(&spec).unwrap();
        let minus = build_minus_chain(&spec).unwrap();
        for chain in [&plus, &minus] {
            let r = chain.report().unwrap();
            prop_assert!(r.passes(1e-10, 1e-12), "{:?}", r);
            prop_assert!(chain.check_linkage().unwrap() == 0.0);
            prop_assert_eq!(chain.stages.len(), spec.top() - 1);
        }
        let oracle = spectrum_oracle(&spec).unwrap().lambdas;
        let n = spec.top();
        for (i, &l) in oracle.iter().enumerate() {
            let p = plus.rates()[n - 1 - i];
            let m = minus.rates()[i];
            prop_assert!((p - l).abs() <= 1e-8 * l);
            prop_assert!((m - l).abs() <= 1e-8 * l);
        }
    }

    #[test]
    fn stage_targets_follow_the_documented_patterns(spec in stopped_spec(8)) {
        let n = spec.top();
        let plus = build_plus_chain(&spec).unwrap();
        for (k, s) in plus.stages.iter().enumerate() {
            prop_assert_eq!(s.index, n - 1 - k);
            prop_assert!(s.target.check_plus_pattern(s.index - 1).is_ok());
        }
        let minus = build_minus_chain(&spec).unwrap();
        for (k, s) in minus.stages.iter().enumerate() {
            prop_assert_eq!(s.index, k);
            if s.index < n.saturating_sub(2) {
                prop_assert!(s.target.check_minus_pattern(s.index + 1).is_ok());
            }
        }
    }

    #[test]
    fn passage_cdf_is_a_distribution_function(
        rates in prop::collection::vec(rate(), 1..8),
        times in prop::collection::vec(0.0f64..20.0, 2..20),
    ) {
        let mut rates = rates;
        rates.sort_by(f64::total_cmp);
        rates.dedup_by(|a, b| (*a - *b).abs() <= 1e-6 * *b);
        let law = HypoexponentialLaw::new(rates).unwrap();
        let mut times = times;
        times.sort_by(f64::total_cmp);
        let mut last = 0.0;
        for t in times {
            let c = hypo_cdf(&law, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(c >= last - 1e-13, "{c} after {last}");
            last = c;
        }
    }

    #[test]
    fn transition_rows_are_distributions(spec in stopped_spec(8), t in 0.0f64..30.0) {
        let row = transition_probability(&spec, 0, t).unwrap();
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(row.iter().all(|&p| p >= -1e-15));
    }

    #[test]
    fn mixture_from_origin_is_the_hypoexponential_law(spec in stopped_spec(8), t in 0.0f64..10.0) {
        let minus = build_minus_chain(&spec).unwrap();
        let mixture = mixture_passage_law(&spec, &minus.composed, 0).unwrap();
        let law = HypoexponentialLaw::new(minus.rates().to_vec()).unwrap();
        prop_assert!((mixture.cdf(t).unwrap() - law.cdf(t).unwrap()).abs() <= 1e-12);
        prop_assert!((mixture.mean() - law.mean()).abs() <= 1e-12 * law.mean());
    }

    #[test]
    fn joint_generator_projects_to_both_margins(spec in stopped_spec(4)) {
        let plus = build_plus_chain(&spec).unwrap();
        let minus = build_minus_chain(&spec).unwrap();
        let c = build_triple_coupling(&spec, &plus, &minus).unwrap();
        let g = c.level1.joint_generator();
        let states = c.level1.states();
        let g_plus = plus.pure_birth.dense_generator();
        let g_spec = spec.dense_generator();
        // the second coordinate sees G from every joint state; the first sees
        // G⁺ once the second is averaged against K⁺(a, ·)
        let dim = spec.dim();
        let mut filtered = vec![vec![0.0; dim]; dim];
        for (s, &(a, v)) in states.iter().enumerate() {
            let mut by_v = vec![0.0; dim];
            for (t, &(an, vn)) in states.iter().enumerate() {
                by_v[vn] += g[(s, t)];
                filtered[a][an] += plus.composed.get(a, v) * g[(s, t)];
            }
            for y in 0..dim {
                prop_assert!((by_v[y] - g_spec[(v, y)]).abs() <= 1e-10 * c.theta());
            }
        }
        for a in 0..dim {
            for y in 0..dim {
                prop_assert!((filtered[a][y] - g_plus[(a, y)]).abs() <= 1e-10 * c.theta());
            }
        }
    }
}
