//! Property tests for projections, partitions, streams and the flow step.

use nalgebra::DVector;
use proptest::prelude::*;
use tvsaddle::apps::QuadToy;
use tvsaddle::channel::{ChannelModel, ChannelState, RngStream};
use tvsaddle::flow::{pd_step, IntegratorConfig, Partition};
use tvsaddle::metrics::summarize;
use tvsaddle::problem::{FeasibleSet, PsdBlock};
use tvsaddle::psd::{embedded_eigenvalues, embedded_len, project_capped_simplex};
use tvsaddle::JointState;

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn coordinate_projections_are_idempotent_and_feasible(v in vector(6), lo in -3.0f64..0.0, width in 0.0f64..5.0) {
        for set in [FeasibleSet::Orthant, FeasibleSet::Box { lower: lo, upper: lo + width }, FeasibleSet::Free] {
            let p = set.projected(&DVector::from_vec(v.clone())).unwrap();
            prop_assert!(set.contains(&p, 1e-12).unwrap());
            prop_assert_eq!(set.projected(&p).unwrap(), p);
        }
    }

    #[test]
    fn capped_simplex_projection_is_feasible_and_optimal(v in vector(5), budget in 0.0f64..8.0) {
        let p = project_capped_simplex(&v, budget);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!(p.iter().sum::<f64>() <= budget + 1e-9);
        // Variational inequality: <v - p, w - p> <= 0 at the vertices and the origin.
        let mut candidates = vec![vec![0.0; 5]];
        for i in 0..5 {
            let mut w = vec![0.0; 5];
            w[i] = budget;
            candidates.push(w);
        }
        for w in candidates {
            let ip: f64 = v.iter().zip(&p).zip(&w).map(|((vi, pi), wi)| (vi - pi) * (wi - pi)).sum();
            prop_assert!(ip <= 1e-9);
        }
    }

    #[test]
    fn trace_psd_projection_lands_in_set(v in vector(8), budget in 0.1f64..5.0) {
        let set = FeasibleSet::TracePsd(vec![
            PsdBlock { offset: 0, size: 2, budget },
            PsdBlock { offset: embedded_len(2), size: 2, budget },
        ]);
        let p = set.projected(&DVector::from_vec(v)).unwrap();
        prop_assert!(set.contains(&p, 1e-9).unwrap());
        let again = set.projected(&p).unwrap();
        prop_assert!((again - &p).amax() < 1e-9);
        let eig = embedded_eigenvalues(&p.as_slice()[0..4], 2).unwrap();
        prop_assert!(eig.iter().sum::<f64>() <= budget + 1e-9);
    }

    #[test]
    fn max_step_stays_feasible(v in vector(4), d in vector(4)) {
        let set = FeasibleSet::Box { lower: -10.0, upper: 10.0 };
        let v = DVector::from_vec(v);
        let d = DVector::from_vec(d);
        let t = set.max_step(&v, &d).unwrap();
        if t.is_finite() {
            prop_assert!(set.contains(&(&v + &d * t), 1e-9).unwrap());
        }
    }

    #[test]
    fn partitions_accept_permutations_only(perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(), cut in 1usize..5) {
        let groups = vec![perm[..cut].to_vec(), perm[cut..].to_vec()];
        prop_assert!(Partition::new(groups.clone(), 6).is_ok());
        let mut dup = groups;
        let repeated = dup[1][0];
        dup[0].push(repeated);
        prop_assert!(Partition::new(dup, 6).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct(master in any::<u64>(), index in 0u64..1000) {
        let a: Vec<f64> = (0..4).map({ let mut r = RngStream::new(master, index); move |_| r.normal() }).collect();
        let b: Vec<f64> = (0..4).map({ let mut r = RngStream::new(master, index); move |_| r.normal() }).collect();
        let c: Vec<f64> = (0..4).map({ let mut r = RngStream::new(master, index + 1); move |_| r.normal() }).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }

    #[test]
    fn quad_step_contracts_toward_saddle(x in -5.0f64..5.0, l in 0.0f64..5.0, h in -3.0f64..3.0) {
        let p = QuadToy::new();
        let hv = DVector::from_element(1, h);
        let cfg = IntegratorConfig::new(1.0, 0.01, 1.0);
        let s = JointState::new(DVector::from_element(1, x), DVector::from_element(1, l));
        let next = pd_step(&p, &s, &hv, &cfg).unwrap();
        let star = QuadToy::saddle(h).to_vector();
        prop_assert!((next.to_vector() - &star).norm() <= (s.to_vector() - &star).norm() + 1e-12);
        prop_assert!(next.lambda[0] >= 0.0);
    }

    #[test]
    fn noise_free_channel_at_mean_stays_put(h in vector(3)) {
        let model = ChannelModel::isotropic(
            DVector::from_vec(h.clone()),
            0.1,
            tvsaddle::channel::Excitation::Zero,
        ).unwrap();
        let next = tvsaddle::channel::step_channel(&model, &ChannelState::at(DVector::from_vec(h.clone())), 0.01, &mut RngStream::new(1, 0)).unwrap();
        prop_assert_eq!(next.h, DVector::from_vec(h));
    }

    #[test]
    fn summary_stderr_is_scale_equivariant(v in prop::collection::vec(-5.0f64..5.0, 2..20), k in 0.1f64..10.0) {
        let s = summarize(&v);
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        let t = summarize(&scaled);
        prop_assert!((t.mean - k * s.mean).abs() <= 1e-9 * (1.0 + t.mean.abs()));
        prop_assert!((t.stderr - k * s.stderr).abs() <= 1e-9 * (1.0 + t.stderr));
    }
}

#[test]
fn identity_partition_is_valid() {
    let p = Partition::single(4);
    assert_eq!(p.groups(), &[vec![0, 1, 2, 3]]);
}
