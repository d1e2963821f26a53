use ergolab_core::averages::{ergodic_average_stream, AverageSpec};
use ergolab_core::correlations::cumulants::{cumulants_to_moments, moments_to_cumulants, SubsetTable};
use ergolab_core::correlations::{exact_correlation, linfty_induction_check, CorrelationQuery};
use ergolab_core::sequences::{generate, multiplicity, SequenceSpec};
use ergolab_core::systems::{
    eval, sample_shift_point, shift_apply, Cylinder, Observable, Point, ShiftPoint, ShiftSystem, System,
    TorusAutomorphism, TrigPolynomial, TrigTerm,
};
use proptest::prelude::*;

fn markov() -> ShiftSystem {
    ShiftSystem::new(vec![vec![1, 1], vec![1, 0]], vec![vec![0.6, 0.4], vec![1.0, 0.0]], false).unwrap()
}

fn code_of(w: &[usize], m: usize) -> usize {
    w.iter().fold(0, |acc, &x| acc * m + x)
}

fn cylinder(s: &ShiftSystem, offset: i64, values: &[f64]) -> Cylinder {
    let m = s.alphabet_size();
    let mut length = 0;
    while m.pow(length as u32) < values.len() {
        length += 1;
    }
    Cylinder::from_fn(s, offset, length, |w| values[code_of(w, m)]).unwrap()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_composition(symbols in prop::collection::vec(0u8..3, 40), a in -10i64..10, b in -10i64..10, k in -5i64..5) {
        let p = ShiftPoint::from_symbols(symbols, -20);
        let once = shift_apply(&p, a + b);
        let twice = shift_apply(&shift_apply(&p, a), b);
        prop_assert_eq!(once.symbol(k).ok(), twice.symbol(k).ok());
    }

    #[test]
    fn bernoulli_disjoint_windows_are_independent(
        p in 0.05f64..0.95,
        g in values(4),
        h in values(2),
        gap in 0i64..3,
    ) {
        let s = ShiftSystem::bernoulli(&[p, 1.0 - p]).unwrap();
        let cg = cylinder(&s, 0, &g);
        let ch = cylinder(&s, 2 + gap, &h);
        let len = 3 + gap as usize;
        let prod = Cylinder::from_fn(&s, 0, len, |w| g[code_of(&w[..2], 2)] * h[w[len - 1]]).unwrap();
        let lhs = prod.exact_mean(&s);
        let rhs = cg.exact_mean(&s) * ch.exact_mean(&s);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn exact_oracle_is_translation_invariant(
        vs in prop::collection::vec(values(4), 1..4),
        gaps in prop::collection::vec(1i64..6, 3),
        shift in -20i64..20,
    ) {
        let s = markov();
        let system = System::Shift(s.clone());
        let fs: Vec<Observable> = vs.iter().map(|v| cylinder(&s, 0, v).into()).collect();
        let mut times = vec![0i64];
        for g in gaps.iter().take(fs.len() - 1) {
            times.push(times.last().unwrap() + g);
        }
        let base = exact_correlation(&system, &CorrelationQuery::new(fs.clone(), times.clone()).unwrap()).unwrap();
        let moved: Vec<i64> = times.iter().map(|t| t + shift).collect();
        let other = exact_correlation(&system, &CorrelationQuery::new(fs, moved).unwrap()).unwrap();
        prop_assert!((base - other).abs() <= 1e-12, "{base} vs {other}");
    }

    #[test]
    fn torus_correlations_survive_frequency_negation(
        terms in prop::collection::vec(((-3i64..=3, -3i64..=3), -1.0f64..1.0, -1.0f64..1.0), 1..4),
        t1 in 1i64..4,
    ) {
        let mut terms = terms;
        terms.sort_by_key(|t| t.0);
        terms.dedup_by_key(|t| t.0);
        let cat = System::Torus(TorusAutomorphism::cat_map(128));
        let build = |sign: i64| -> Observable {
            TrigPolynomial::new(2, terms.iter().map(|&((a, b), c, s)| TrigTerm { freq: vec![sign * a, sign * b], cos: c, sin: s }).collect())
                .unwrap()
                .into()
        };
        let q = |f: Observable| CorrelationQuery::new(vec![f.clone(), f], vec![0, t1]).unwrap();
        let plus = exact_correlation(&cat, &q(build(1))).unwrap();
        let minus = exact_correlation(&cat, &q(build(-1))).unwrap();
        prop_assert!((plus - minus).abs() <= 1e-12, "{plus} vs {minus}");
    }

    #[test]
    fn multiple_defect_bounded_by_single_mixing(
        f0 in values(4),
        rest in prop::collection::vec(values(2), 1..3),
        n1 in 1i64..5,
        step in 1i64..3,
    ) {
        let s = ShiftSystem::new(vec![vec![1, 1], vec![1, 1]], vec![vec![0.7, 0.3], vec![0.3, 0.7]], true).unwrap();
        let c0 = cylinder(&s, 0, &f0);
        let c0 = c0.minus(c0.exact_mean(&s));
        let mut obs = vec![c0];
        let mut times = vec![0i64];
        for (i, v) in rest.iter().enumerate() {
            obs.push(cylinder(&s, 0, v));
            times.push(n1 + step * i as i64);
        }
        let r = linfty_induction_check(&s, &obs, &times).unwrap();
        prop_assert!(r.pass, "{r:?}");
    }

    #[test]
    fn cumulant_roundtrip(vars in 1usize..=6, seed in any::<u64>()) {
        let mut x = seed;
        let moments = SubsetTable::from_fn(vars, |_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        }).unwrap();
        let back = cumulants_to_moments(&moments_to_cumulants(&moments).unwrap().cumulants).unwrap();
        prop_assert!(back.max_abs_diff(&moments) <= 1e-10);
    }

    #[test]
    fn polynomial_multiplicity_within_bound(c in prop::collection::vec(-4i64..5, 2..4), n in 1u64..200) {
        let mut coefficients = c;
        // keep values positive on n >= 1 by a large constant term
        coefficients[0] = 10_000;
        let spec = SequenceSpec::Polynomial { coefficients };
        if let Ok(terms) = generate(&spec, n) {
            prop_assert!(multiplicity(&terms) as u64 <= spec.multiplicity_bound());
        }
    }
}

fn direct_average(system: &System, spec: &AverageSpec, point: &Point, n: u64) -> f64 {
    let terms = generate(&spec.sequence, n).unwrap();
    let mut sum = 0.0;
    for &r in &terms {
        let mut prod = 1.0;
        for (f, &m) in spec.observables.iter().zip(&spec.multipliers) {
            prod *= eval(f, &system.apply(point, m * r as i64).unwrap()).unwrap();
        }
        sum += prod;
    }
    sum / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stream_matches_direct_evaluation(
        g in values(2),
        h in values(4),
        m in prop::sample::select(vec![(1i64, 2i64), (2, 3), (-1, 1)]),
        seed in any::<u64>(),
    ) {
        let s = markov();
        let fs: Vec<Observable> = vec![cylinder(&s, 0, &g).into(), cylinder(&s, -1, &h).into()];
        let system = System::Shift(s.clone());
        let spec = AverageSpec::new(fs, vec![m.0, m.1], SequenceSpec::Polynomial { coefficients: vec![1, 1, 1] }, 1024).unwrap();
        let window = spec.required_window().unwrap() as usize;
        let point = Point::Shift(sample_shift_point(&s, window, seed));
        let series = ergodic_average_stream(&system, &spec, &point).unwrap();
        let target = spec.target(&system).unwrap();
        prop_assert!(series.rows.windows(2).all(|w| w[0].n < w[1].n));
        for row in &series.rows {
            let direct = direct_average(&system, &spec, &point, row.n);
            prop_assert!((row.average - direct).abs() <= 1e-12 * direct.abs().max(1.0), "{} vs {direct}", row.average);
            let centred = row.n as f64 * (row.average - target);
            prop_assert!((row.centered_sum - centred).abs() <= 1e-9 * centred.abs().max(1.0));
        }
    }

    #[test]
    fn permuting_factors_keeps_the_average(g in values(2), h in values(2), seed in any::<u64>()) {
        let s = markov();
        let system = System::Shift(s.clone());
        let a: Observable = cylinder(&s, 0, &g).into();
        let b: Observable = cylinder(&s, 0, &h).into();
        let seq = SequenceSpec::Primes;
        let one = AverageSpec::new(vec![a.clone(), b.clone()], vec![1, 3], seq.clone(), 256).unwrap();
        let two = AverageSpec::new(vec![b, a], vec![3, 1], seq, 256).unwrap();
        let point = Point::Shift(sample_shift_point(&s, one.required_window().unwrap() as usize, seed));
        let x = ergodic_average_stream(&system, &one, &point).unwrap();
        let y = ergodic_average_stream(&system, &two, &point).unwrap();
        for (r, q) in x.rows.iter().zip(&y.rows) {
            prop_assert!((r.average - q.average).abs() <= 1e-14 * r.average.abs().max(1.0));
        }
    }
}
