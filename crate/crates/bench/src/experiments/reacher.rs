//! A 2-D kinematic point reacher: the end effector moves by the clipped
//! action each step and is rewarded by its negative distance to the target.

use rand::Rng;

pub const MAX_ACTION: f64 = 0.05;
pub const EPISODE_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReacherState {
    pub position: [f64; 2],
    pub target: [f64; 2],
    pub step: usize,
}

impl ReacherState {
    pub fn new(position: [f64; 2], target: [f64; 2]) -> Self {
        ReacherState {
            position: position.map(|p| p.clamp(-1.0, 1.0)),
            target,
            step: 0,
        }
    }

    /// Uniform position and target in `[-1, 1]²`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut u = || rng.random_range(-1.0..=1.0);
        ReacherState::new([u(), u()], [u(), u()])
    }

    pub fn distance(&self) -> f64 {
        let dx = self.position[0] - self.target[0];
        let dy = self.position[1] - self.target[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// `[position, target − position]`.
    pub fn observation(&self) -> [f64; 4] {
        [
            self.position[0],
            self.position[1],
            self.target[0] - self.position[0],
            self.target[1] - self.position[1],
        ]
    }

    pub fn done(&self) -> bool {
        self.step >= EPISODE_STEPS
    }
}

/// Moves by `clip(action, ±0.05)`, keeps the position in `[-1, 1]²`, and
/// returns the new state with reward `−‖position − target‖`.
pub fn reacher_step(state: &ReacherState, action: [f64; 2]) -> (ReacherState, f64) {
    let mut next = *state;
    for (p, a) in next.position.iter_mut().zip(action) {
        let a = if a.is_nan() { 0.0 } else { a.clamp(-MAX_ACTION, MAX_ACTION) };
        *p = (*p + a).clamp(-1.0, 1.0);
    }
    next.step += 1;
    let reward = -next.distance();
    (next, reward)
}

/// Episode returns of the uniformly random policy over the action box.
pub fn random_policy_returns<R: Rng + ?Sized>(episodes: usize, rng: &mut R) -> Vec<f64> {
    (0..episodes)
        .map(|_| {
            let mut s = ReacherState::random(rng);
            let mut ret = 0.0;
            while !s.done() {
                let a = [
                    rng.random_range(-MAX_ACTION..=MAX_ACTION),
                    rng.random_range(-MAX_ACTION..=MAX_ACTION),
                ];
                let (n, r) = reacher_step(&s, a);
                ret += r;
                s = n;
            }
            ret
        })
        .collect()
}
