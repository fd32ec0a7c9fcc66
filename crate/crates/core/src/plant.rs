//! Remote system: a free-flying point behind a low-level velocity loop.

use crate::geometry::{RobotState, Vec3, VelocityCommand};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlantModel {
    /// The commanded velocity is applied exactly.
    Ideal,
    /// Force actuation with a PID on the velocity error.
    ForcePid {
        mass: f64,
        kp: f64,
        ki: f64,
        kd: f64,
        /// Anti-windup bound on each component of the error integral (m).
        integral_limit: f64,
    },
}

impl PlantModel {
    /// 1 kg body with kp = 10, ki = 2, kd = 0.
    pub fn force_pid_default() -> Self {
        PlantModel::ForcePid {
            mass: 1.0,
            kp: 10.0,
            ki: 2.0,
            kd: 0.0,
            integral_limit: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub robot: RobotState,
    /// Last applied force (N); zero for the ideal plant.
    pub force: Vec3,
}

#[derive(Debug, Clone)]
pub struct Plant {
    model: PlantModel,
    state: PlantState,
    command: Option<VelocityCommand>,
    integral: Vec3,
    prev_error: Option<Vec3>,
}

impl Plant {
    pub fn new(model: PlantModel, position: Vec3) -> Self {
        Self {
            model,
            state: PlantState {
                robot: RobotState::at_rest(position),
                force: Vec3::zeros(),
            },
            command: None,
            integral: Vec3::zeros(),
            prev_error: None,
        }
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    /// Newest command accepted so far.
    pub fn command(&self) -> Option<&VelocityCommand> {
        self.command.as_ref()
    }

    /// Accepts `cmd` unless a newer sequence number is already held.
    pub fn receive(&mut self, cmd: VelocityCommand) -> bool {
        match self.command {
            Some(c) if c.seq >= cmd.seq => false,
            _ => {
                self.command = Some(cmd);
                true
            }
        }
    }

    /// Advances by `dt` holding the latest received command.
    pub fn advance(&mut self, dt: f64) -> PlantState {
        debug_assert!(dt > 0.0);
        let target = self.command.map(|c| c.u).unwrap_or_else(Vec3::zeros);
        let s = &mut self.state;
        match self.model {
            PlantModel::Ideal => {
                s.robot.velocity = target;
                s.robot.position += dt * target;
            }
            PlantModel::ForcePid {
                mass,
                kp,
                ki,
                kd,
                integral_limit,
            } => {
                let error = target - s.robot.velocity;
                self.integral = (self.integral + dt * error)
                    .map(|v| v.clamp(-integral_limit, integral_limit));
                let derivative = self
                    .prev_error
                    .map(|p| (error - p) / dt)
                    .unwrap_or_else(Vec3::zeros);
                self.prev_error = Some(error);
                let force = kp * error + ki * self.integral + kd * derivative;
                s.force = force;
                s.robot.velocity += dt * force / mass;
                s.robot.position += dt * s.robot.velocity;
            }
        }
        s.robot.stamp += dt;
        *s
    }

    pub fn step(&mut self, cmd: VelocityCommand, dt: f64) -> PlantState {
        self.receive(cmd);
        self.advance(dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cmd(u: Vec3, seq: u64) -> VelocityCommand {
        VelocityCommand { u, stamp: 0.0, seq }
    }

    #[test]
    fn ideal_integrates_exactly() {
        let mut p = Plant::new(PlantModel::Ideal, Vec3::zeros());
        p.receive(cmd(Vec3::new(0.5, 0.0, 0.0), 1));
        for _ in 0..10 {
            p.advance(0.01);
        }
        assert_relative_eq!(p.state().robot.position, Vec3::new(0.05, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn ideal_matches_closed_form_on_scripted_stream() {
        let mut p = Plant::new(PlantModel::Ideal, Vec3::zeros());
        let script = [(0, Vec3::new(0.1, 0.0, 0.0)), (30, Vec3::new(0.0, -0.2, 0.0)), (55, Vec3::new(0.3, 0.3, 0.1))];
        let mut seq = 0;
        for k in 0..100 {
            if let Some((_, u)) = script.iter().find(|(at, _)| *at == k) {
                seq += 1;
                p.receive(cmd(*u, seq));
            }
            p.advance(0.01);
        }
        let expected = 0.30 * script[0].1 + 0.25 * script[1].1 + 0.45 * script[2].1;
        assert_relative_eq!(p.state().robot.position, expected, epsilon = 1e-12);
    }

    #[test]
    fn stale_commands_are_ignored() {
        let mut p = Plant::new(PlantModel::Ideal, Vec3::zeros());
        assert!(p.receive(cmd(Vec3::x(), 5)));
        assert!(!p.receive(cmd(Vec3::y(), 4)));
        assert_eq!(p.command().unwrap().seq, 5);
    }

    #[test]
    fn dead_pid_never_moves() {
        let model = PlantModel::ForcePid {
            mass: 1.0,
            kp: 0.0,
            ki: 0.0,
            kd: 0.0,
            integral_limit: 1.0,
        };
        let mut p = Plant::new(model, Vec3::zeros());
        for _ in 0..100 {
            p.step(cmd(Vec3::new(0.5, 0.0, 0.0), 1), 0.01);
        }
        assert_eq!(p.state().robot.velocity, Vec3::zeros());
    }

    #[test]
    fn pid_settles_within_one_second() {
        let mut p = Plant::new(PlantModel::force_pid_default(), Vec3::zeros());
        p.receive(cmd(Vec3::new(0.5, 0.0, 0.0), 1));
        let mut settled_at = None;
        for k in 1..=300 {
            let v = p.advance(0.01).robot.velocity.x;
            if (v - 0.5).abs() > 0.01 {
                settled_at = None;
            } else if settled_at.is_none() {
                settled_at = Some(k as f64 * 0.01);
            }
        }
        let t = settled_at.expect("never settled");
        assert!(t <= 1.0, "settled at {t}");
    }

    #[test]
    fn pid_bounded_under_random_commands() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = Plant::new(PlantModel::force_pid_default(), Vec3::zeros());
        for k in 0..10_000u64 {
            if k % 10 == 0 {
                let u = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                p.receive(cmd(u, k + 1));
            }
            let s = p.advance(0.01);
            assert!(s.robot.velocity.amax() < 2.0);
        }
    }

    #[test]
    fn deterministic_replay() {
        let run = || {
            let mut p = Plant::new(PlantModel::force_pid_default(), Vec3::zeros());
            for k in 0..500u64 {
                let u = Vec3::new((k as f64 * 0.1).sin(), 0.0, (k as f64 * 0.07).cos()) * 0.4;
                p.step(cmd(u, k + 1), 0.01);
            }
            *p.state()
        };
        assert_eq!(run(), run());
    }
}
