//! Counter-based seed splitting: every (trial, grid cell) pair reads its
//! own disjoint segment of one ChaCha20 keystream family, so adding trials
//! or cells never changes the draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Words reserved per grid cell within a trial's stream.
const CELL_STRIDE_LOG2: u32 = 40;

pub fn cell_rng(master_seed: u64, trial_index: u64, cell_index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng.set_word_pos(u128::from(cell_index) << CELL_STRIDE_LOG2);
    rng
}
