use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Example order of one epoch, a pure function of `(seed, epoch)` so a
/// resumed run sees the same batches.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17));
    idx.shuffle(&mut rng);
    idx
}

/// Indices of the examples in the batch for global step `step`.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch_size: usize) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size) as u64;
    let epoch = step / per_epoch;
    let k = (step % per_epoch) as usize;
    let order = epoch_order(seed, epoch, n);
    order[k * batch_size..((k + 1) * batch_size).min(n)].to_vec()
}

/// Seed for the dropout masks of one step.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_add(step.wrapping_mul(0xd1b5_4a32_d192_ed03))
}
