use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Block resampling of a frame index range.
///
/// Frames are split into consecutive blocks of `block_size` (the last block
/// may be shorter). For a block of length `len`, `len` integers are drawn
/// uniformly from `[0, len)` with replacement and the frames whose offset was
/// drawn at least once are kept. The result is sorted and duplicate-free.
pub fn block_sample_frames(count: usize, block_size: usize, seed: u64) -> Vec<usize> {
    let block_size = block_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    let mut start = 0;
    while start < count {
        let len = block_size.min(count - start);
        let mut hit = vec![false; len];
        for _ in 0..len {
            hit[rng.random_range(0..len)] = true;
        }
        kept.extend((0..len).filter(|&i| hit[i]).map(|i| start + i));
        start += len;
    }
    kept
}
