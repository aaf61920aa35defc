//! Random-waypoint movement in a square and range-based connectivity.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn random<R: Rng>(side: f64, rng: &mut R) -> Self {
        Position { x: rng.gen_range(0.0..=side), y: rng.gen_range(0.0..=side) }
    }
}

/// A node walking straight to a random target at a random speed, then
/// picking a new target, with no pause.
#[derive(Debug, Clone, PartialEq)]
pub struct Walker {
    pub position: Position,
    target: Position,
    speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityModel {
    /// Side of the square area, in meters.
    pub side: f64,
    pub tx_range: f64,
    /// Speed range in meters per second.
    pub min_speed: f64,
    pub max_speed: f64,
}

impl Default for MobilityModel {
    fn default() -> Self {
        MobilityModel { side: 100.0, tx_range: 50.0, min_speed: 0.5, max_speed: 2.0 }
    }
}

impl MobilityModel {
    pub fn spawn<R: Rng>(&self, rng: &mut R) -> Walker {
        Walker {
            position: Position::random(self.side, rng),
            target: Position::random(self.side, rng),
            speed: self.speed(rng),
        }
    }

    fn speed<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.max_speed > self.min_speed {
            rng.gen_range(self.min_speed..self.max_speed)
        } else {
            self.min_speed
        }
    }

    /// Moves a walker for `seconds`.
    pub fn advance<R: Rng>(&self, w: &mut Walker, mut seconds: f64, rng: &mut R) {
        if w.speed <= 0.0 {
            return;
        }
        while seconds > 0.0 {
            let remaining = w.position.distance(w.target);
            let reach = w.speed * seconds;
            if reach < remaining {
                let f = reach / remaining;
                w.position.x += (w.target.x - w.position.x) * f;
                w.position.y += (w.target.y - w.position.y) * f;
                return;
            }
            seconds -= remaining / w.speed;
            w.position = w.target;
            w.target = Position::random(self.side, rng);
            w.speed = self.speed(rng);
        }
    }

    /// Connected components of the nodes flagged in `present`, as lists of
    /// indices. Two nodes are linked when within transmission range.
    pub fn components(&self, positions: &[Position], present: &[bool]) -> Vec<Vec<usize>> {
        let mut seen = vec![false; positions.len()];
        let mut out = Vec::new();
        for start in 0..positions.len() {
            if seen[start] || !present[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut i = 0;
            while i < comp.len() {
                let a = comp[i];
                for b in 0..positions.len() {
                    if !seen[b] && present[b] && positions[a].distance(positions[b]) <= self.tx_range {
                        seen[b] = true;
                        comp.push(b);
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn connected(&self, positions: &[Position], present: &[bool]) -> bool {
        self.components(positions, present).len() <= 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn walkers_stay_in_the_square() {
        let m = MobilityModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = m.spawn(&mut rng);
        for _ in 0..200 {
            m.advance(&mut w, 300.0, &mut rng);
            assert!((0.0..=100.0).contains(&w.position.x));
            assert!((0.0..=100.0).contains(&w.position.y));
        }
    }

    #[test]
    fn short_step_moves_at_most_speed_times_time() {
        let m = MobilityModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = m.spawn(&mut rng);
        let before = w.position;
        m.advance(&mut w, 1.0, &mut rng);
        assert!(before.distance(w.position) <= m.max_speed + 1e-9);
    }

    #[test]
    fn components_follow_range() {
        let m = MobilityModel::default();
        let p = |x, y| Position { x, y };
        let pos = [p(0.0, 0.0), p(40.0, 0.0), p(80.0, 0.0), p(100.0, 100.0)];
        let comps = m.components(&pos, &[true; 4]);
        assert_eq!(comps, vec![vec![0, 1, 2], vec![3]]);
        // removing the bridge splits the chain
        let comps = m.components(&pos, &[true, false, true, true]);
        assert_eq!(comps.len(), 3);
        assert!(m.connected(&pos[..3], &[true; 3]));
    }
}
