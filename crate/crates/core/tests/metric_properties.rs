use guardrl::mdp::{OfflineDataset, Policy, Standardization, Trajectory};
use guardrl::metrics::{acp, air, aggregate_reports, build_report, mcr, EvalConfig, SeedMetrics, VitalThreshold};
use guardrl::rng::Rng;
use proptest::prelude::*;

/// Recommends `a_j = offset_j + s_j`.
struct Shift(Vec<f64>);

impl Policy for Shift {
    fn state_dim(&self) -> usize {
        self.0.len()
    }
    fn action_dim(&self) -> usize {
        self.0.len()
    }
    fn mean_action(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(&self.0).map(|(x, o)| x + o).collect()
    }
    fn sample_action(&self, s: &[f64], _rng: &mut Rng) -> Vec<f64> {
        self.mean_action(s)
    }
}

fn dataset(trajs: &[Vec<(Vec<f64>, Vec<f64>)>]) -> OfflineDataset {
    let dim = trajs[0][0].0.len();
    let trajectories = trajs
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let rows = rows.iter().map(|(s, a)| (s.clone(), a.clone(), 0.0, vec![])).collect();
            Trajectory::from_rows(i as u64, rows, false, false, None)
        })
        .collect();
    OfflineDataset::new(trajectories, dim, dim, 1.0, vec![])
        .unwrap()
        .with_standardization(Standardization::identity(dim, dim))
        .unwrap()
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 2)
}

fn trajectories() -> impl Strategy<Value = Vec<Vec<(Vec<f64>, Vec<f64>)>>> {
    prop::collection::vec(prop::collection::vec((point(), point()), 1..6), 1..5)
}

fn config(threshold: f64, margin: f64) -> EvalConfig {
    EvalConfig {
        concordance_epsilon: None,
        intensification_margin: margin,
        vitals: vec![VitalThreshold { feature: 0, threshold }],
        n_me_rollouts: 1,
        seed: 0,
    }
}

proptest! {
    #[test]
    fn mcr_is_monotone_in_epsilon(trajs in trajectories(), offset in point(), e1 in 0.01f64..5.0, e2 in 0.01f64..5.0) {
        let ds = dataset(&trajs);
        let p = Shift(offset);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = mcr(&p, &ds, lo).unwrap();
        let b = mcr(&p, &ds, hi).unwrap();
        prop_assert!(a <= b);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
    }

    #[test]
    fn air_is_antitone_in_margin(trajs in trajectories(), offset in point(), threshold in -3.0f64..3.0, m1 in 0.0f64..2.0, m2 in 0.0f64..2.0) {
        let ds = dataset(&trajs);
        let p = Shift(offset);
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        let a = air(&p, &ds, &config(threshold, lo)).unwrap();
        let b = air(&p, &ds, &config(threshold, hi)).unwrap();
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn acp_ignores_sequence_order(seqs in prop::collection::vec(prop::collection::vec(point(), 2..6), 1..6)) {
        let forward = acp(&seqs).unwrap();
        let mut rev = seqs.clone();
        rev.reverse();
        let backward = acp(&rev).unwrap();
        prop_assert!((forward.scalar - backward.scalar).abs() <= 1e-12 * (1.0 + forward.scalar));
        for (x, y) in forward.per_dim.iter().zip(&backward.per_dim) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
        }
    }

    #[test]
    fn acp_of_concatenated_lists_is_the_pair_weighted_mean(
        a in prop::collection::vec(prop::collection::vec(point(), 2..6), 1..4),
        b in prop::collection::vec(prop::collection::vec(point(), 2..6), 1..4),
    ) {
        let pairs = |s: &[Vec<Vec<f64>>]| s.iter().map(|x| x.len() - 1).sum::<usize>() as f64;
        let (na, nb) = (pairs(&a), pairs(&b));
        let both: Vec<_> = a.iter().chain(&b).cloned().collect();
        let joint = acp(&both).unwrap().scalar;
        let weighted = (acp(&a).unwrap().scalar * na + acp(&b).unwrap().scalar * nb) / (na + nb);
        prop_assert!((joint - weighted).abs() <= 1e-12 * (1.0 + joint));
    }

    #[test]
    fn single_step_sequences_contribute_nothing(seqs in prop::collection::vec(prop::collection::vec(point(), 2..5), 1..4), lone in point()) {
        let mut padded = seqs.clone();
        padded.push(vec![lone]);
        prop_assert_eq!(acp(&seqs), acp(&padded));
    }
}

#[test]
fn report_over_five_seeds_gives_sample_sd() {
    let cfg = config(0.0, 0.0);
    let reports: Vec<_> = [0.1, 0.2, 0.1, 0.2, 0.15]
        .iter()
        .enumerate()
        .map(|(i, &me)| {
            let m = SeedMetrics {
                seed: i as u64,
                mcr: 0.5,
                air: None,
                me,
                acp: None,
                ood_visit_rate: 0.0,
                cumulative_rewards: vec![1.0, 2.0],
            };
            build_report(&[m], 0.1, &cfg).unwrap()
        })
        .collect();
    let rows = aggregate_reports(&reports);
    let me = rows.iter().find(|r| r.metric == "ME").unwrap();
    assert!((me.mean.unwrap() - 0.15).abs() < 1e-12);
    assert!((me.sd.unwrap() - 0.05).abs() < 1e-12);
    assert_eq!(me.n, 5);
    let air = rows.iter().find(|r| r.metric == "AIR").unwrap();
    assert_eq!((air.mean, air.sd, air.n), (None, None, 0));
}
