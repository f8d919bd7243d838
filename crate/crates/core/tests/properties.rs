use fedlink_core::autoenc::{from_bytes, to_bytes, Activation, Model};
use fedlink_core::embedding::{fit_shared_pca, kmeanspp_init, lloyd_iterate, local_moments, wcss};
use fedlink_core::federation::{aggregate_fedavg, select_stragglers};
use fedlink_core::graphrl::{policy_probabilities, q_update, uniform_graph, QState};
use fedlink_core::rng::stream;
use fedlink_core::Matrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

/// (n, client, initial q, buffer of (action, reward)) with actions never equal to `client`.
fn agent_state() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<(usize, f64)>)> {
    (2usize..=5, 1usize..=10).prop_flat_map(|(n, m)| {
        (0..n).prop_flat_map(move |client| {
            (
                Just(n),
                Just(client),
                prop::collection::vec(-1.0f64..2.0, n),
                prop::collection::vec(
                    (0..n - 1).prop_map(move |a| if a >= client { a + 1 } else { a }).prop_flat_map(|a| (Just(a), -2.0f64..2.0)),
                    m,
                ),
            )
        })
    })
}

proptest! {
    #[test]
    fn q_update_adds_group_means((n, client, q, buffer) in agent_state()) {
        let mut qs = QState::with_q(client, q.clone(), buffer.len()).unwrap();
        for &(a, r) in &buffer {
            qs.push(a, r).unwrap();
        }
        q_update(&mut qs);
        let mut expected = q.clone();
        for a in 0..n {
            let rs: Vec<f64> = buffer.iter().filter(|e| e.0 == a).map(|e| e.1).collect();
            if !rs.is_empty() {
                expected[a] += rs.iter().fold(0.0, |s, r| s + r) / rs.len() as f64;
            }
        }
        let min = (0..n).filter(|&j| j != client).map(|j| expected[j]).fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            for j in (0..n).filter(|&j| j != client) {
                expected[j] += 1e-6 - min;
            }
        }
        for j in (0..n).filter(|&j| j != client) {
            prop_assert_eq!(qs.q()[j].to_bits(), expected[j].to_bits());
            prop_assert!(qs.q()[j] > 0.0);
        }
        prop_assert_eq!(qs.q()[client], f64::NEG_INFINITY);
        prop_assert_eq!(qs.t(), 1);
        prop_assert_eq!(qs.history().len(), 1);
    }

    #[test]
    fn policy_is_a_distribution_without_self_mass(
        n in 2usize..12,
        client_frac in 0.0f64..1.0,
        q in prop::collection::vec(1e-6f64..10.0, 12),
        gamma in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let client = ((n as f64 * client_frac) as usize).min(n - 1);
        let qs = QState::with_q(client, q[..n].to_vec(), 1).unwrap();
        let mut rng = stream(seed, &[]);
        let pi = policy_probabilities(&qs, gamma, &mut rng);
        prop_assert_eq!(pi.len(), n);
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(pi.iter().all(|&p| p >= 0.0));
        prop_assert_eq!(pi[client], 0.0);
    }

    #[test]
    fn pca_components_are_orthonormal(x in matrix(30, 6), split in 1usize..29, q in 1usize..=6) {
        let a = x.select_rows(&(0..split).collect::<Vec<_>>());
        let b = x.select_rows(&(split..30).collect::<Vec<_>>());
        let basis = fit_shared_pca(&[local_moments(&a).unwrap(), local_moments(&b).unwrap()], q).unwrap();
        for i in 0..q {
            for j in 0..q {
                let g: f64 = basis.components.row(i).iter().zip(basis.components.row(j)).map(|(u, v)| u * v).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g - target).abs() <= 1e-8);
            }
        }
        prop_assert!(basis.explained_variance.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn pooled_moments_match_concatenated_covariance(x in matrix(25, 4), split in 1usize..24) {
        let a = x.select_rows(&(0..split).collect::<Vec<_>>());
        let b = x.select_rows(&(split..25).collect::<Vec<_>>());
        let mut pooled = local_moments(&a).unwrap();
        pooled.merge(&local_moments(&b).unwrap()).unwrap();
        let direct = local_moments(&x).unwrap().covariance();
        let mean: Vec<f64> = (0..4).map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / 25.0).collect();
        for (k, c) in pooled.covariance().iter().enumerate() {
            let (i, j) = (k / 4, k % 4);
            let two_pass = x.iter_rows().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / 25.0;
            prop_assert!((c - two_pass).abs() <= 1e-8);
            prop_assert!((c - direct[k]).abs() <= 1e-8);
        }
    }

    #[test]
    fn lloyd_never_increases_wcss(x in matrix(20, 3), k in 1usize..6, seed in any::<u64>()) {
        let mut rng = stream(seed, &[]);
        let mut c = kmeanspp_init(&x, k, &mut rng).unwrap();
        let mut prev = wcss(&x, &c);
        for _ in 0..20 {
            let step = lloyd_iterate(&x, &c);
            prop_assert!(step.wcss <= prev * (1.0 + 1e-12) + 1e-12);
            prev = step.wcss;
            c = step.centroids;
        }
    }

    #[test]
    fn fedavg_ignores_client_order(
        params in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 7), 2..6),
        weights in prop::collection::vec(1.0f64..100.0, 6),
        rot in 0usize..6,
    ) {
        let k = params.len();
        let refs: Vec<&[f64]> = params.iter().map(Vec::as_slice).collect();
        let w = &weights[..k];
        let base = aggregate_fedavg(&refs, w).unwrap();
        let r = rot % k;
        let mut rp = refs.clone();
        rp.rotate_left(r);
        let mut rw = w.to_vec();
        rw.rotate_left(r);
        prop_assert_eq!(base, aggregate_fedavg(&rp, &rw).unwrap());
    }

    #[test]
    fn stragglers_are_distinct_and_in_range(n in 2usize..30, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let count = ((n as f64 * frac) as usize).min(n - 1);
        let s = select_stragglers(n, count, seed).unwrap();
        prop_assert_eq!(s.len(), count);
        prop_assert!(s.iter().all(|&i| i < n));
    }

    #[test]
    fn uniform_graphs_have_one_foreign_parent(n in 2usize..20, seed in any::<u64>()) {
        let g = uniform_graph(n, seed).unwrap();
        prop_assert!(g.validate().is_ok());
        for (i, j) in g.incoming.iter().enumerate() {
            let j = j.expect("every receiver has a transmitter");
            prop_assert!(j != i && j < n);
        }
    }

    #[test]
    fn checkpoint_round_trips(d in 2usize..6, z in 1usize..3, seed in any::<u64>(), relu in any::<bool>()) {
        let act = if relu { Activation::Relu } else { Activation::Sigmoid };
        let model = Model::init(&[d, z, d], act, seed).unwrap();
        let back = from_bytes(&to_bytes(&model)).unwrap();
        prop_assert_eq!(back.dims(), model.dims());
        prop_assert_eq!(back.activations(), model.activations());
        prop_assert!(back.params().iter().zip(model.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
