use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::event::Micros;

/// One direction of a point-to-point link: fixed delay, uniform jitter and
/// independent loss, all drawn from the link's own RNG stream.
#[derive(Debug, Clone)]
pub struct Link {
    delay: Micros,
    jitter: Micros,
    loss: f64,
    rng: ChaCha8Rng,
    pub sent: u64,
    pub lost: u64,
}

impl Link {
    pub fn new(delay: Micros, jitter: Micros, loss: f64, rng: ChaCha8Rng) -> Self {
        Link {
            delay,
            jitter,
            loss,
            rng,
            sent: 0,
            lost: 0,
        }
    }

    /// Arrival time of a segment sent at `now`, or `None` if it is lost.
    pub fn transit(&mut self, now: Micros) -> Option<Micros> {
        self.sent += 1;
        if self.loss > 0.0 && self.rng.gen_bool(self.loss) {
            self.lost += 1;
            return None;
        }
        let mut at = now + self.delay;
        if self.jitter > 0 {
            let j = self.rng.gen_range(0..=2 * self.jitter);
            at = (at + j).saturating_sub(self.jitter).max(now);
        }
        Some(at)
    }
}
