use locem_core::bounds::{
    assemble_prop1, assemble_theorem1, assemble_theorem2, class_complexity_bound, compute_mr, default_margin_grid,
    empirical_rademacher, fit_weak_margin, BoundInputs, FunctionClassSpec, RademacherClass,
};
use locem_core::rng::rng_from;
use locem_core::{Dataset, LossSpec};
use proptest::prelude::*;
use rand::Rng;

/// `P(S = 2j − m)` for a sum of `m` independent signs.
fn binomial_half(m: usize) -> Vec<f64> {
    let ln_fact: Vec<f64> = (0..=m)
        .scan(0.0, |acc, k| {
            if k > 0 {
                *acc += (k as f64).ln();
            }
            Some(*acc)
        })
        .collect();
    (0..=m)
        .map(|j| (ln_fact[m] - ln_fact[j] - ln_fact[m - j] - m as f64 * 2f64.ln()).exp())
        .collect()
}

#[test]
fn exhaustive_linear_ball_equals_enumeration() {
    let mut rng = rng_from(5, 0);
    for m in [1usize, 3, 7, 12] {
        let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let data = Dataset::from_rows(&rows, vec![0; m], 1).unwrap();
        let b = 1.7;
        let mut want = 0.0;
        for bits in 0..1usize << m {
            let mut s = [0.0; 3];
            for (i, r) in rows.iter().enumerate() {
                let sign = if bits >> i & 1 == 1 { 1.0 } else { -1.0 };
                for j in 0..3 {
                    s[j] += sign * r[j];
                }
            }
            want += b * s.iter().map(|v| v * v).sum::<f64>().sqrt() / m as f64;
        }
        want /= (1usize << m) as f64;
        let est = empirical_rademacher(&data, &RademacherClass::LinearBall { radius: b }, 1, 0).unwrap();
        assert!(est.exhaustive);
        assert!((est.value - want).abs() <= 1e-10, "m={m}: {} vs {want}", est.value);
    }
}

#[test]
fn monte_carlo_linear_ball_at_m_200() {
    // 100 copies of e1 and 100 of e2: Σσx = (S1, S2) with S1, S2 independent
    // sums of 100 signs, so E‖Σσx‖ is a finite double sum.
    let half = 100;
    let p = binomial_half(half);
    let mut expect = 0.0;
    for (a, pa) in p.iter().enumerate() {
        for (b, pb) in p.iter().enumerate() {
            let (s1, s2) = (2.0 * a as f64 - half as f64, 2.0 * b as f64 - half as f64);
            expect += pa * pb * (s1 * s1 + s2 * s2).sqrt();
        }
    }
    let b = 2.0;
    let closed = b * expect / 200.0;
    let rows: Vec<Vec<f64>> = (0..200).map(|i| if i < half { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
    let data = Dataset::from_rows(&rows, vec![0; 200], 1).unwrap();
    let est = empirical_rademacher(&data, &RademacherClass::LinearBall { radius: b }, 4000, 17).unwrap();
    assert!(!est.exhaustive);
    assert!((est.value - closed).abs() <= 3.0 * est.std_error, "{} vs {closed} (se {})", est.value, est.std_error);
}

#[test]
fn loss_composed_estimate_is_bounded_by_lipschitz_contraction() {
    // |ℓ(γ) − ℓ(γ')| ≤ |γ − γ'| and |γ| ≤ 2‖W‖ ‖x‖, so the centred class
    // is dominated by 4B max‖x‖.
    let mut rng = rng_from(3, 0);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels = (0..30).map(|i| i % 2).collect();
    let data = Dataset::from_rows(&rows, labels, 2).unwrap();
    let class = RademacherClass::LossComposedLinear {
        radius: 0.5,
        loss: LossSpec::MulticlassLogistic,
        anchor: Some((vec![0.2, 0.1], 0)),
        restarts: 2,
        steps: 30,
    };
    let est = empirical_rademacher(&data, &class, 64, 9).unwrap();
    assert!(est.lower_bound);
    let max_norm = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    assert!(est.value >= 0.0 && est.value <= 4.0 * 0.5 * max_norm);
}

fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed, 0);
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}

#[test]
fn weak_margin_recovers_exponents() {
    let grid = default_margin_grid();
    let linear = uniform(10_000, 1);
    let root: Vec<f64> = uniform(10_000, 2).into_iter().map(|u| u * u).collect();
    for (margins, alpha) in [(linear, 1.0), (root, 0.5)] {
        let fit = fit_weak_margin(&margins, &grid).unwrap();
        let a = fit.alpha.unwrap();
        assert!((a - alpha).abs() <= 0.1, "alpha {a} vs {alpha}");
        let mut sorted: Vec<f64> = margins.iter().map(|m| m.abs()).collect();
        sorted.sort_unstable_by(f64::total_cmp);
        for &t in &grid {
            let cdf = sorted.partition_point(|&v| v <= t) as f64 / sorted.len() as f64;
            assert!(fit.eval(t) >= cdf);
        }
    }
}

#[test]
fn local_bound_hand_evaluation() {
    let inputs = BoundInputs {
        loss_lipschitz: 1.0,
        local_lipschitz: 2.0,
        global_lipschitz: 0.5,
        true_lipschitz: 1.5,
        alpha_true: 0.8,
        c_true: 1.2,
        eps_x: 0.03,
        eps_loc: 0.02,
        sup_norm_local: 3.0,
        sup_norm_global: 1.0,
        delta: 0.05,
        n_retrieved: 40.0,
        radius: 0.3,
        rademacher: 0.11,
    };
    // M_r(L) = 2 L_ℓ (L r + (max(L r, 2‖F‖) − L r) c (2 L_true r)^α)
    let tail = 1.2 * (2.0f64 * 1.5 * 0.3).powf(0.8);
    let mr_loc = 2.0 * (0.6 + (6.0 - 0.6) * tail);
    let mr_glob = 2.0 * (0.15 + (2.0 - 0.15) * tail);
    let l = (4.0f64 / 0.05).ln();
    let want = 0.05
        + mr_loc
        + mr_glob
        + 2.0 * 0.11
        + 5.0 * mr_loc * (2.0 * l / 40.0).sqrt()
        + 4.0 * 0.05 * 3.0 * (2.0 + (2.0 * l).sqrt());
    let report = assemble_theorem1(&inputs).unwrap();
    assert!((report.total - want).abs() <= 1e-12);
    assert_eq!(report.total, report.term_i + report.term_ii + report.term_iii);
    assert!((compute_mr(2.0, 0.3, 1.0, 3.0, 1.2, 0.8, 1.5) - mr_loc).abs() <= 1e-12);
}

#[test]
fn two_stage_and_extended_bound_hand_values() {
    let v = assemble_prop1(1.0, 0.0, 3.0, 2.0, 2, (-1.0f64).exp()).unwrap();
    assert!((v - 0.5).abs() <= 1e-12);
    let a = assemble_prop1(1.0, 0.1, 1.0, 1.0, 100, 0.1).unwrap();
    let b = assemble_prop1(1.0, 0.1, 1.0, 1.0, 400, 0.1).unwrap();
    assert!(b > a);

    let t = assemble_theorem2(0.5, 1.5, 2.0, 100, 2, 50.0, 0.1).unwrap();
    let want = 0.5 / 10.0 * (1.0 + (2f64.sqrt() * 200.0).ln().powf(1.5))
        + 1.5 * ((1000.0f64).ln() / 50.0).sqrt()
        + 2.0 * ((10.0f64).ln() / 100.0).sqrt();
    assert!((t - want).abs() <= 1e-12);
}

#[test]
fn rkhs_complexity_hand_value() {
    let spec = FunctionClassSpec::RkhsInf {
        bound: 1.0,
        num_classes: 2,
        constant: 1.0,
    };
    let v = class_complexity_bound(&spec, 1.0, 1.0, std::f64::consts::E - 1.0, 0.0).unwrap();
    assert!((v - 2f64.sqrt()).abs() <= 1e-12);
}

fn base_inputs(r: f64, n: f64, eps: f64, delta: f64, sup: f64) -> BoundInputs {
    BoundInputs {
        radius: r,
        n_retrieved: n,
        eps_x: eps,
        eps_loc: eps / 2.0,
        delta,
        sup_norm_local: sup,
        rademacher: 0.05,
        ..BoundInputs::default()
    }
}

proptest! {
    // Defaults give c (2 L_true r)^α = 2r, a probability while r ≤ 0.5.
    #[test]
    fn local_bound_monotone(
        r in 0.0f64..0.4, dr in 0.0f64..0.1,
        n in 1.0f64..500.0, dn in 1.0f64..100.0,
        eps in 0.0f64..0.5, de in 0.0f64..0.5,
        sup in 0.1f64..5.0, ds in 0.0f64..2.0,
        delta in 0.01f64..0.5,
    ) {
        let total = |i: BoundInputs| assemble_theorem1(&i).unwrap();
        let base = total(base_inputs(r, n, eps, delta, sup));
        prop_assert!(total(base_inputs(r + dr, n, eps, delta, sup)).total >= base.total);
        prop_assert!(total(base_inputs(r, n, eps + de, delta, sup)).total >= base.total);
        prop_assert!(total(base_inputs(r, n, eps, delta, sup + ds)).total >= base.total);
        let smaller_n = total(base_inputs(r, (n - dn).max(1.0), eps, delta, sup));
        if n - dn >= 1.0 && r > 0.0 {
            prop_assert!(smaller_n.deviation_term > base.deviation_term);
        }
    }

    // Monotonicity in L and r needs c (2 L_true r)^α ≤ 1, i.e. a margin
    // bound that is a probability; the ranges keep it there.
    #[test]
    fn mr_nondecreasing_in_each_argument(
        l in 0.0f64..3.0, r in 0.0f64..0.3, ll in 0.0f64..2.0, c in 0.0f64..0.9, d in 0.0f64..0.08,
    ) {
        let f = |l: f64, r: f64, ll: f64, c: f64| compute_mr(l, r, ll, 1.0, c, 0.7, 1.3);
        let base = f(l, r, ll, c);
        prop_assert!(base >= 0.0);
        prop_assert!(f(l + d, r, ll, c) >= base);
        prop_assert!(f(l, r + d, ll, c) >= base);
        prop_assert!(f(l, r, ll + d, c) >= base);
        prop_assert!(f(l, r, ll, c + d) >= base);
    }
}
