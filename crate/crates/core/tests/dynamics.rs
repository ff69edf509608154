use forge_core::dynamics::{inverse, rollout, rollout_adjoint, step, DynamicsParams, KinematicState, StateGrad};
use forge_core::{Action, ActionLimits};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 0.1;

/// Weighted squared distance of every state to a target, heading included.
struct Quadratic {
    target: Vec<KinematicState>,
    w: [f64; 4],
}

impl Quadratic {
    fn value(&self, traj: &[KinematicState]) -> f64 {
        traj.iter()
            .zip(&self.target)
            .map(|(s, t)| {
                self.w[0] * (s.x - t.x).powi(2)
                    + self.w[1] * (s.y - t.y).powi(2)
                    + self.w[2] * (s.heading - t.heading).powi(2)
                    + self.w[3] * (s.speed - t.speed).powi(2)
            })
            .sum()
    }

    fn grad(&self, traj: &[KinematicState]) -> Vec<StateGrad> {
        traj.iter()
            .zip(&self.target)
            .map(|(s, t)| StateGrad {
                x: 2.0 * self.w[0] * (s.x - t.x),
                y: 2.0 * self.w[1] * (s.y - t.y),
                heading: 2.0 * self.w[2] * (s.heading - t.heading),
                speed: 2.0 * self.w[3] * (s.speed - t.speed),
            })
            .collect()
    }
}

/// Random instance that stays clear of every clamp and of the heading wrap.
fn instance(rng: &mut ChaCha8Rng, n: usize) -> (KinematicState, Vec<Action>, Quadratic) {
    let s0 = KinematicState::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-1.0..1.0), rng.random_range(4.0..12.0));
    let actions: Vec<Action> = (0..n).map(|_| Action::new(rng.random_range(-1.5..1.5), rng.random_range(-0.3..0.3))).collect();
    let target = (0..n)
        .map(|_| KinematicState::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..15.0)))
        .collect();
    let w = [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)];
    (s0, actions, Quadratic { target, w })
}

#[test]
fn adjoint_matches_finite_differences() {
    let p = DynamicsParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let n = rng.random_range(5..40);
        let (s0, actions, loss) = instance(&mut rng, n);
        let (traj, tape) = rollout(&s0, &actions, DT, &p).unwrap();
        let grad = rollout_adjoint(&actions, &loss.grad(&traj), &tape).unwrap();
        let f = |a: &[Action]| loss.value(&rollout(&s0, a, DT, &p).unwrap().0);
        let h = 1e-4;
        for t in 0..n {
            for comp in 0..2 {
                let mut up = actions.clone();
                let mut down = actions.clone();
                if comp == 0 {
                    up[t].accel += h;
                    down[t].accel -= h;
                } else {
                    up[t].yaw_rate += h;
                    down[t].yaw_rate -= h;
                }
                let fd = (f(&up) - f(&down)) / (2.0 * h);
                let an = if comp == 0 { grad[t].accel } else { grad[t].yaw_rate };
                let tol = 1e-4 * fd.abs().max(an.abs()).max(1e-2);
                assert!((fd - an).abs() < tol, "step {t} comp {comp}: fd {fd} vs {an}");
            }
        }
    }
}

#[test]
fn clamped_actions_carry_no_gradient() {
    let p = DynamicsParams::default();
    let s0 = KinematicState::new(0.0, 0.0, 0.0, 10.0);
    let actions = vec![Action::new(20.0, 0.1), Action::new(0.5, -3.0), Action::new(0.5, 0.1)];
    let (traj, tape) = rollout(&s0, &actions, DT, &p).unwrap();
    let ones = vec![StateGrad { x: 1.0, y: 1.0, heading: 1.0, speed: 1.0 }; traj.len()];
    let g = rollout_adjoint(&actions, &ones, &tape).unwrap();
    assert_eq!(g[0].accel, 0.0);
    assert_eq!(g[1].yaw_rate, 0.0);
    assert!(g[0].yaw_rate != 0.0 && g[1].accel != 0.0);
}

#[test]
fn step_uses_current_speed_for_position() {
    let p = DynamicsParams::default();
    let s = KinematicState::new(1.0, 2.0, std::f64::consts::FRAC_PI_2, 4.0);
    let n = step(&s, Action::new(2.0, 0.5), DT, &p).unwrap();
    assert!((n.x - 1.0).abs() < 1e-12);
    assert!((n.y - 2.4).abs() < 1e-12);
    assert!((n.speed - 4.2).abs() < 1e-12);
    assert!((n.heading - (std::f64::consts::FRAC_PI_2 + 0.05)).abs() < 1e-12);
    assert!(step(&s, Action::ZERO, 0.0, &p).is_err());
}

proptest! {
    #[test]
    fn inverse_recovers_interior_actions(
        v0 in 3.0f64..12.0,
        h0 in -3.0f64..3.0,
        raw in prop::collection::vec((-1.0f64..1.0, -1.2f64..1.2), 1..30),
    ) {
        let p = DynamicsParams::default();
        let actions: Vec<Action> = raw.iter().map(|&(a, w)| Action::new(a, w)).collect();
        let s0 = KinematicState::new(0.0, 0.0, h0, v0);
        let (traj, _) = rollout(&s0, &actions, DT, &p).unwrap();
        let mut full = vec![s0];
        full.extend(traj);
        let (back, warnings) = inverse(&full, DT, &ActionLimits::default()).unwrap();
        prop_assert!(warnings.is_empty());
        for (a, b) in actions.iter().zip(&back) {
            prop_assert!((a.accel - b.accel).abs() < 1e-9 && (a.yaw_rate - b.yaw_rate).abs() < 1e-9);
        }
    }

    #[test]
    fn speed_and_heading_stay_in_range(
        v0 in 0.0f64..20.0,
        raw in prop::collection::vec((-30.0f64..30.0, -5.0f64..5.0), 1..60),
    ) {
        let p = DynamicsParams::default();
        let actions: Vec<Action> = raw.iter().map(|&(a, w)| Action::new(a, w)).collect();
        let (traj, _) = rollout(&KinematicState::new(0.0, 0.0, 0.0, v0.min(p.v_max)), &actions, DT, &p).unwrap();
        for s in &traj {
            prop_assert!(s.speed >= 0.0 && s.speed <= p.v_max);
            prop_assert!(s.heading > -std::f64::consts::PI && s.heading <= std::f64::consts::PI);
        }
    }
}
