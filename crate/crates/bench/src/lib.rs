//! Fixtures shared by the benchmarks.

use beatgan::toy::{toy_beat_window, ToyBeatConfig};
use beatgan::HeartbeatClass;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default preprocessing half-width, 250 samples around the peak.
pub const HALF_WIDTH: usize = 125;

/// `count` toy beat windows cycling through every class.
pub fn windows(count: usize, seed: u64) -> Vec<(HeartbeatClass, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ToyBeatConfig::default();
    HeartbeatClass::ALL
        .iter()
        .cycle()
        .take(count)
        .map(|&c| (c, toy_beat_window(c, HALF_WIDTH, &config, &mut rng)))
        .collect()
}
