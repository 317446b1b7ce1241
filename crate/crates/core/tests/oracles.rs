//! Closed-form and independent-computation oracles for the core library.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use tvsaddle::apps::{build_scenario, NumInstance, NumOptions, QuadToy, Topology};
use tvsaddle::channel::{ChannelModel, Excitation, RngStream};
use tvsaddle::flow::{pd_step, run_trajectory, HdotSource, IntegratorConfig, Mode, PhiSource};
use tvsaddle::oracle::{ift_jacobian, solve_saddle_frozen, SolveSettings};
use tvsaddle::problem::natural_residual;
use tvsaddle::{JointState, SaddleProblem};

fn six_node() -> Topology {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/topologies/six_node.toml");
    Topology::load(std::path::Path::new(path)).unwrap()
}

#[test]
fn quad_natural_residual_matches_hand_value() {
    let p = QuadToy::new();
    let f = natural_residual(&p, &JointState::zeros(1, 1), &DVector::from_element(1, 1.0)).unwrap();
    assert_relative_eq!(f, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-15);
}

#[test]
fn quad_solver_and_sensitivity_match_closed_form() {
    let p = QuadToy::new();
    for h in [-2.0, 0.0, 0.7, 3.5] {
        let hv = DVector::from_element(1, h);
        let eq = solve_saddle_frozen(&p, &hv, &SolveSettings::default(), None).unwrap();
        assert!(eq.converged);
        assert_relative_eq!(eq.x_star.to_vector(), QuadToy::saddle(h).to_vector(), epsilon = 1e-10);
        let phi = ift_jacobian(&p, &eq, &hv).unwrap().phi;
        assert_relative_eq!(phi, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), epsilon = 1e-12);
    }
}

#[test]
fn quad_primal_error_decays_at_rate_kappa() {
    let p = QuadToy::new();
    let h = DVector::from_element(1, 1.0);
    let (kappa, dt) = (1.0, 1e-4);
    let cfg = IntegratorConfig::new(kappa, dt, 1.0);
    let mut s = JointState::new(DVector::from_element(1, 0.0), DVector::zeros(1));
    for _ in 0..10_000 {
        s = pd_step(&p, &s, &h, &cfg).unwrap();
    }
    // x' = kappa (h - x) from x = 0 gives x(1) = 1 - e^{-1} up to O(dt).
    assert_relative_eq!(s.x[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-4);
}

#[test]
fn three_node_equilibrium_satisfies_kkt() {
    let num = NumInstance::three_node(&NumOptions::default()).unwrap();
    let mut rng = RngStream::new(5, 0);
    let channel = ChannelModel::real_fading(DVector::from_element(num.param_dim(), 1.0), 0.04).unwrap();
    for _ in 0..10 {
        let h = channel.sample_stationary(&mut rng);
        let eq = solve_saddle_frozen(&num, &h, &SolveSettings::default(), None).unwrap();
        assert!(eq.converged);
        assert!(num.kkt_residual(&eq.x_star, &h).amax() < 1e-8);
        assert!(eq.x_star.x.iter().all(|r| *r >= -1e-10));
    }
}

#[test]
fn three_node_capacities_at_unit_gain() {
    let num = NumInstance::three_node(&NumOptions::default()).unwrap();
    let h = DVector::from_element(2, 1.0);
    // P = 5 at 10 dB with unit mean and unit variance.
    assert_relative_eq!(num.link_capacity(1, &h), 6f64.ln(), epsilon = 1e-12);
}

#[test]
fn dependent_active_constraints_still_converge() {
    // A near-zero gain makes the receiver sum constraint and both of its
    // link constraints nearly coincide; the multipliers are then not unique.
    let sc = build_scenario("num-multinode", &NumOptions::default(), Some(&six_node())).unwrap();
    let h = DVector::from_vec(vec![
        1.4004052486136835,
        1.5860096661056269,
        1.2639923185412365,
        -0.06255410705222464,
        0.002820562138361793,
        -0.1534099793292263,
        0.10243667989394856,
        1.671127211068372,
    ]);
    let settings = SolveSettings {
        tol: 1e-12,
        ..SolveSettings::default()
    };
    let eq = solve_saddle_frozen(sc.problem(), &h, &settings, None).unwrap();
    assert!(eq.converged, "residual {}", eq.residual_norm);
    assert!(eq.iterations < 1000);
}

#[test]
fn exact_compensation_removes_quad_tracking_lag() {
    let p = QuadToy::new();
    let channel = ChannelModel::real_fading(DVector::from_element(1, 1.0), 0.04).unwrap();
    let run = |mode: Mode| {
        let mut cfg = IntegratorConfig::new(2.0, 0.005, 100.0);
        cfg.mode = mode;
        cfg.hdot = HdotSource::Oracle;
        cfg.phi = PhiSource::Exact;
        cfg.initial_state = tvsaddle::flow::InitialState::Saddle;
        let t = run_trajectory(&p, &channel, &cfg, RngStream::new(9, 0)).unwrap();
        t.err_joint.iter().sum::<f64>() / t.len() as f64
    };
    let plain = run(Mode::Plain);
    let comp = run(Mode::Compensated);
    assert!(comp < 1e-3 * plain, "plain {plain}, compensated {comp}");
}

#[test]
fn stationary_variance_matches_lyapunov_solution() {
    let a = 0.05;
    let m = ChannelModel::isotropic(DVector::zeros(3), a, Excitation::White { scale: (2.0 * a).sqrt() }).unwrap();
    assert_relative_eq!(m.stationary_covariance(), DMatrix::identity(3, 3), epsilon = 1e-12);
}
